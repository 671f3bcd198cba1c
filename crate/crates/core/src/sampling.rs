//! Seeded sampling of base points and jet points.
//!
//! Coordinates are drawn uniformly from boxes intersected with the structure
//! domains. Fibers shorter than [`MIN_FIBER_NORM`] are rejected so sampled
//! points stay clear of the zero section.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, GeometryResult};
use crate::finsler::{BasePoint, FinslerStructure};
use crate::jetspace::JetPoint;

/// Rejection threshold for `|s|` and `|y_a s^a|`.
pub const MIN_FIBER_NORM: f64 = 0.1;
pub const DEFAULT_BOX: (f64, f64) = (-1.0, 1.0);
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_BASE_COUNT: usize = 64;
pub const DEFAULT_JET_COUNT: usize = 100;
const MAX_ATTEMPTS_PER_POINT: usize = 10_000;

/// Sampling boxes. Missing entries fall back to [`DEFAULT_BOX`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub count: Option<usize>,
    /// Box for source positions `t` (one interval, or one per coordinate).
    #[serde(default)]
    pub t_box: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub s_box: Option<Vec<(f64, f64)>>,
    /// Box for target positions `x`.
    #[serde(default)]
    pub x_box: Option<Vec<(f64, f64)>>,
    /// Box for every `x^i_α` and `y^i_a` entry.
    #[serde(default)]
    pub jet_box: Option<(f64, f64)>,
}

impl SampleSpec {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }
}

fn expand(boxes: &Option<Vec<(f64, f64)>>, dim: usize) -> GeometryResult<Vec<(f64, f64)>> {
    match boxes {
        None => Ok(vec![DEFAULT_BOX; dim]),
        Some(b) if b.len() == 1 => Ok(vec![b[0]; dim]),
        Some(b) if b.len() == dim => Ok(b.clone()),
        Some(b) => Err(GeometryError::DimensionMismatch { expected: dim, got: b.len() }),
    }
}

/// Intersects boxes with the structure domain; fails on an empty intersection.
fn clip(boxes: Vec<(f64, f64)>, fs: &FinslerStructure) -> GeometryResult<Vec<(f64, f64)>> {
    let Some(dom) = fs.domain() else {
        return Ok(boxes);
    };
    boxes
        .into_iter()
        .zip(dom.iter())
        .enumerate()
        .map(|(i, ((lo, hi), (dlo, dhi)))| {
            let (a, b) = (lo.max(*dlo), hi.min(*dhi));
            if a > b {
                Err(GeometryError::OutsideDomain { coord: i, value: lo, lo: *dlo, hi: *dhi })
            } else {
                Ok((a, b))
            }
        })
        .collect()
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `count` base points for `fs` (defaults: seed 42, 64 points).
pub fn sample_base_points(fs: &FinslerStructure, spec: &SampleSpec) -> GeometryResult<Vec<BasePoint>> {
    let p = fs.dim();
    let count = spec.count.unwrap_or(DEFAULT_BASE_COUNT);
    let t_box = clip(expand(&spec.t_box, p)?, fs)?;
    let s_box = expand(&spec.s_box, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed());
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > MAX_ATTEMPTS_PER_POINT * count.max(1) {
            return Err(GeometryError::ZeroSection { norm: 0.0 });
        }
        let t: Vec<f64> = t_box.iter().map(|&b| draw(&mut rng, b)).collect();
        let s: Vec<f64> = s_box.iter().map(|&b| draw(&mut rng, b)).collect();
        if norm(&s) < MIN_FIBER_NORM {
            continue;
        }
        out.push(BasePoint::new(t, s));
    }
    Ok(out)
}

/// `count` jet points for the pair `(src, tgt)` (defaults: seed 42, 100 points).
pub fn sample_jet_points(src: &FinslerStructure, tgt: &FinslerStructure, spec: &SampleSpec) -> GeometryResult<Vec<JetPoint>> {
    let (p, n) = (src.dim(), tgt.dim());
    let count = spec.count.unwrap_or(DEFAULT_JET_COUNT);
    let t_box = clip(expand(&spec.t_box, p)?, src)?;
    let s_box = expand(&spec.s_box, p)?;
    let x_box = clip(expand(&spec.x_box, n)?, tgt)?;
    let jet_box = spec.jet_box.unwrap_or(DEFAULT_BOX);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed());
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > MAX_ATTEMPTS_PER_POINT * count.max(1) {
            return Err(GeometryError::ZeroSection { norm: 0.0 });
        }
        let t: Vec<f64> = t_box.iter().map(|&b| draw(&mut rng, b)).collect();
        let s: Vec<f64> = s_box.iter().map(|&b| draw(&mut rng, b)).collect();
        let x: Vec<f64> = x_box.iter().map(|&b| draw(&mut rng, b)).collect();
        let xa: Vec<f64> = (0..n * p).map(|_| draw(&mut rng, jet_box)).collect();
        let ya: Vec<f64> = (0..n * p).map(|_| draw(&mut rng, jet_box)).collect();
        let jp = JetPoint::from_flat(t, s, x, xa, ya)?;
        if norm(&jp.s) < MIN_FIBER_NORM || norm(&jp.pushed_fiber()) < MIN_FIBER_NORM {
            continue;
        }
        out.push(jp);
    }
    Ok(out)
}
