//! Berwald geometry on the 1-jet space `J¹(TM, N)`.
//!
//! Coordinates are `(t^α, s^a, x^i, x^i_α, y^i_a)`. Greek and latin source
//! indices both run over `0..p`; in the combined `2p` index space used by the
//! general formulas, greek indices occupy `0..p` and latin ones `p..2p`.
//! Target quantities (tilded) are evaluated at `(x, ŷ)` with `ŷ^i = y^i_a s^a`.
//!
//! Two independent evaluations are provided. The closed forms build the
//! fifteen torsion and thirty curvature blocks from base-manifold tensors.
//! The general path lifts the jet point to an order-1 Taylor expansion in all
//! `2p + n + 2np` jet coordinates, substitutes the connection series into it,
//! and assembles the blocks from adapted derivatives of the coefficient
//! fields. [`cross_validate`] compares both over seeded samples.

use ndarray::{Array2, Array3, Array4, ArrayD, Dimension, IxDyn};
use rayon::prelude::*;
use serde_json::{Map, Value};

use crate::connection::{BaseGeometry, DEFAULT_ORDER};
use crate::error::{GeometryError, GeometryResult};
use crate::finsler::{BasePoint, FinslerStructure, EPSILON_ZERO_SECTION};
use crate::jets::{JetError, TaylorValue};
use crate::maps::SmoothMap;
use crate::report::num;
use crate::sampling::{sample_jet_points, SampleSpec};

/// Closed-vs-general relative residual allowed per block.
pub const CROSS_TOL: f64 = 1e-7;
/// Absolute bound for entries that vanish structurally in the general path.
pub const STRUCTURAL_TOL: f64 = 1e-10;
/// Environment variable capping the worker count of [`cross_validate`].
pub const THREADS_ENV: &str = "FINSLERLAB_THREADS";

/// Torsion block labels with their index kinds.
///
/// `g` is a greek source index, `l` a latin source index, `n` a target index.
pub const TORSION_BLOCKS: [(&str, &str); 15] = [
    ("T1", "lgg"),
    ("T2", "nlgnn"),
    ("T3", "nllnn"),
    ("T4", "nggg"),
    ("T5", "nggl"),
    ("T6", "nglg"),
    ("T7", "nlgg"),
    ("T8", "nlgl"),
    ("T9", "nllg"),
    ("T10", "nggn"),
    ("T11", "ngln"),
    ("T12", "nlgn"),
    ("T13", "nlln"),
    ("T14", "ngnn"),
    ("T15", "nlnn"),
];

pub const CURVATURE_BLOCKS: [(&str, &str); 30] = [
    ("C1", "gggg"),
    ("C2", "lggg"),
    ("C3", "gggl"),
    ("C4", "lggl"),
    ("C5", "gglg"),
    ("C6", "lglg"),
    ("C7", "llgg"),
    ("C8", "llgl"),
    ("C9", "lllg"),
    ("C10", "nngn"),
    ("C11", "nnln"),
    ("C12", "nnnn"),
    ("C13", "nlnnn"),
    ("C14", "nggngg"),
    ("C15", "nggngl"),
    ("C16", "nggnlg"),
    ("C17", "nlgngg"),
    ("C18", "nlgngl"),
    ("C19", "nlgnlg"),
    ("C20", "nllngg"),
    ("C21", "nllngl"),
    ("C22", "nllnlg"),
    ("C23", "nggngn"),
    ("C24", "nggnln"),
    ("C25", "nllngn"),
    ("C26", "nllnln"),
    ("C27", "nggnnn"),
    ("C28", "nllnnn"),
    ("C29", "nglgnnn"),
    ("C30", "nlllnnn"),
];

fn kd(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

fn sum_n(n: usize, f: impl Fn(usize) -> f64) -> f64 {
    (0..n).map(f).sum()
}

fn dyn_from(shape: &[usize], f: impl Fn(&[usize]) -> f64) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |ix| f(ix.slice()))
}

fn kinds_shape(kinds: &str, p: usize, n: usize) -> Vec<usize> {
    kinds.chars().map(|c| if c == 'n' { n } else { p }).collect()
}

// ---------------------------------------------------------------------------
// Jet points

#[derive(Debug, Clone, PartialEq)]
pub struct JetPoint {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub x: Vec<f64>,
    /// `x^i_α` as `[[i, α]]`.
    pub x_alpha: Array2<f64>,
    /// `y^i_a` as `[[i, a]]`.
    pub y_a: Array2<f64>,
}

impl JetPoint {
    pub fn new(t: Vec<f64>, s: Vec<f64>, x: Vec<f64>, x_alpha: Array2<f64>, y_a: Array2<f64>) -> GeometryResult<JetPoint> {
        let (p, n) = (t.len(), x.len());
        if s.len() != p {
            return Err(GeometryError::DimensionMismatch { expected: p, got: s.len() });
        }
        for m in [&x_alpha, &y_a] {
            if m.dim() != (n, p) {
                return Err(GeometryError::DimensionMismatch { expected: n * p, got: m.len() });
            }
        }
        Ok(JetPoint { t, s, x, x_alpha, y_a })
    }

    /// Builds a point from row-major `n × p` entries of `x_α` and `y_a`.
    pub fn from_flat(t: Vec<f64>, s: Vec<f64>, x: Vec<f64>, x_alpha: Vec<f64>, y_a: Vec<f64>) -> GeometryResult<JetPoint> {
        let (p, n) = (t.len(), x.len());
        let shape = |v: Vec<f64>| {
            let len = v.len();
            Array2::from_shape_vec((n, p), v).map_err(|_| GeometryError::DimensionMismatch { expected: n * p, got: len })
        };
        JetPoint::new(t, s, x, shape(x_alpha)?, shape(y_a)?)
    }

    /// 1-jet prolongation of `map` at `(t, s)`: `x = φ(t)`, `x_α = y_a = ∂φ/∂t`.
    pub fn prolongation(map: &SmoothMap, t: &[f64], s: &[f64]) -> GeometryResult<JetPoint> {
        let jac = map.jacobian(t)?;
        JetPoint::new(t.to_vec(), s.to_vec(), map.eval(t)?, jac.clone(), jac)
    }

    pub fn source_dim(&self) -> usize {
        self.t.len()
    }

    pub fn target_dim(&self) -> usize {
        self.x.len()
    }

    pub fn base_point(&self) -> BasePoint {
        BasePoint::new(self.t.clone(), self.s.clone())
    }

    /// `ŷ^i = y^i_a s^a`.
    pub fn pushed_fiber(&self) -> Vec<f64> {
        (0..self.target_dim())
            .map(|i| sum_n(self.source_dim(), |a| self.y_a[[i, a]] * self.s[a]))
            .collect()
    }

    /// `(x, ŷ)` on the target tangent bundle.
    pub fn target_point(&self) -> GeometryResult<BasePoint> {
        let y = self.pushed_fiber();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < EPSILON_ZERO_SECTION {
            return Err(GeometryError::TargetZeroSection { norm });
        }
        Ok(BasePoint::new(self.x.clone(), y))
    }

    /// Jet coordinates in lift order: `t, s, x, x^i_α (row-major), y^i_a (row-major)`.
    pub fn coordinates(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.source_dim() + self.target_dim() * (1 + 2 * self.source_dim()));
        v.extend(&self.t);
        v.extend(&self.s);
        v.extend(&self.x);
        v.extend(self.x_alpha.iter());
        v.extend(self.y_a.iter());
        v
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("t".into(), crate::report::nums(&self.t));
        m.insert("s".into(), crate::report::nums(&self.s));
        m.insert("x".into(), crate::report::nums(&self.x));
        m.insert("x_alpha".into(), crate::report::nums(&self.x_alpha.iter().copied().collect::<Vec<_>>()));
        m.insert("y_a".into(), crate::report::nums(&self.y_a.iter().copied().collect::<Vec<_>>()));
        Value::Object(m)
    }
}

// ---------------------------------------------------------------------------
// Base tensors at the two evaluation points

#[derive(Debug, Clone)]
struct SourceTables {
    b: Array3<f64>,
    pp: Array4<f64>,
    bdt: Array4<f64>,
    nn: Array2<f64>,
    nc: Array3<f64>,
    ndt: Array4<f64>,
    nds: Array4<f64>,
    rr: Array4<f64>,
    tor: Array3<f64>,
}

impl SourceTables {
    fn new(g: &BaseGeometry) -> GeometryResult<SourceTables> {
        Ok(SourceTables {
            b: g.berwald()?,
            pp: g.berwald_p()?,
            bdt: g.berwald_dt()?,
            nn: g.nonlinear()?,
            nc: g.n_colon()?,
            ndt: g.n_colon_dt()?,
            nds: g.n_colon_ds()?,
            rr: g.berwald_curvature()?,
            tor: g.berwald_torsion()?,
        })
    }
}

#[derive(Debug, Clone)]
struct TargetTables {
    bt: Array3<f64>,
    pt: Array4<f64>,
    rt: Array4<f64>,
    nt: Array2<f64>,
}

impl TargetTables {
    fn new(g: &BaseGeometry) -> GeometryResult<TargetTables> {
        Ok(TargetTables { bt: g.berwald()?, pt: g.berwald_p()?, rt: g.berwald_curvature()?, nt: g.nonlinear()? })
    }
}

/// Source and target connection data at one jet point.
#[derive(Debug, Clone)]
pub struct JetGeometry {
    jp: JetPoint,
    p: usize,
    n: usize,
    yh: Vec<f64>,
    src: BaseGeometry,
    tgt: BaseGeometry,
    st: SourceTables,
    tt: TargetTables,
}

impl JetGeometry {
    pub fn new(src: &FinslerStructure, tgt: &FinslerStructure, jp: &JetPoint) -> GeometryResult<JetGeometry> {
        JetGeometry::with_order(src, tgt, jp, DEFAULT_ORDER)
    }

    /// `order` is the Taylor budget on `F²` and `F̃²`; the blocks need at least 6.
    pub fn with_order(src: &FinslerStructure, tgt: &FinslerStructure, jp: &JetPoint, order: usize) -> GeometryResult<JetGeometry> {
        let (p, n) = (src.dim(), tgt.dim());
        if jp.source_dim() != p {
            return Err(GeometryError::DimensionMismatch { expected: p, got: jp.source_dim() });
        }
        if jp.target_dim() != n {
            return Err(GeometryError::DimensionMismatch { expected: n, got: jp.target_dim() });
        }
        let src_geo = BaseGeometry::new(src, &jp.base_point(), order)?;
        let tgt_pt = jp.target_point()?;
        let tgt_geo = BaseGeometry::new(tgt, &tgt_pt, order)?;
        let st = SourceTables::new(&src_geo)?;
        let tt = TargetTables::new(&tgt_geo)?;
        Ok(JetGeometry { jp: jp.clone(), p, n, yh: tgt_pt.s, src: src_geo, tgt: tgt_geo, st, tt })
    }

    pub fn point(&self) -> &JetPoint {
        &self.jp
    }

    pub fn source(&self) -> &BaseGeometry {
        &self.src
    }

    pub fn target(&self) -> &BaseGeometry {
        &self.tgt
    }

    // ----- nonlinear connections and the d-connection

    pub fn temporal_nlc(&self) -> TemporalNlc {
        let (p, n) = (self.p, self.n);
        let st = &self.st;
        let xa = &self.jp.x_alpha;
        let ya = &self.jp.y_a;
        TemporalNlc {
            m1: Array3::from_shape_fn((n, p, p), |(j, be, al)| {
                -sum_n(p, |g| st.b[[g, al, be]] * xa[[j, g]]) - sum_n(p, |c| st.nc[[c, al, be]] * ya[[j, c]])
            }),
            m2: Array3::from_shape_fn((n, p, p), |(j, b, al)| -sum_n(p, |c| st.b[[c, al, b]] * ya[[j, c]])),
            m3: Array3::from_shape_fn((n, p, p), |(j, be, a)| -sum_n(p, |c| st.b[[c, a, be]] * ya[[j, c]])),
            m4: Array3::zeros((n, p, p)),
        }
    }

    /// Normal components `Γ^C_{AB}` of the source connection in the `2p` index space.
    pub fn normal_components(&self) -> Array3<f64> {
        let p = self.p;
        let st = &self.st;
        Array3::from_shape_fn((2 * p, 2 * p, 2 * p), |(c, a, b)| match (c < p, a < p, b < p) {
            (true, true, true) => st.b[[c, a, b]],
            (false, true, true) => st.nc[[c - p, a, b]],
            (false, false, true) => st.b[[c - p, a - p, b]],
            (false, true, false) => st.b[[c - p, a, b - p]],
            _ => 0.0,
        })
    }

    /// `max |M - (-Γ^C_{AB} X^j_C)|` over the four blocks.
    pub fn temporal_nlc_dual_residual(&self) -> f64 {
        let (p, n) = (self.p, self.n);
        let gam = self.normal_components();
        let m = self.temporal_nlc();
        let xc = |j: usize, c: usize| if c < p { self.jp.x_alpha[[j, c]] } else { self.jp.y_a[[j, c - p]] };
        let direct = |j: usize, bb: usize, aa: usize| -sum_n(2 * p, |c| gam[[c, aa, bb]] * xc(j, c));
        let mut worst = 0.0f64;
        for j in 0..n {
            for u in 0..p {
                for v in 0..p {
                    worst = worst
                        .max((m.m1[[j, u, v]] - direct(j, u, v)).abs())
                        .max((m.m2[[j, u, v]] - direct(j, p + u, v)).abs())
                        .max((m.m3[[j, u, v]] - direct(j, u, p + v)).abs())
                        .max((m.m4[[j, u, v]] - direct(j, p + u, p + v)).abs());
                }
            }
        }
        worst
    }

    pub fn spatial_nlc(&self) -> SpatialNlc {
        let (p, n) = (self.p, self.n);
        let bt = &self.tt.bt;
        let xa = &self.jp.x_alpha;
        let ya = &self.jp.y_a;
        SpatialNlc {
            n1: Array3::from_shape_fn((n, p, n), |(j, be, i)| sum_n(n, |k| bt[[j, i, k]] * xa[[k, be]])),
            n2: Array3::from_shape_fn((n, p, n), |(j, b, i)| sum_n(n, |k| bt[[j, i, k]] * ya[[k, b]])),
        }
    }

    pub fn dconnection(&self) -> JetDConnection {
        let (p, n) = (self.p, self.n);
        let st = &self.st;
        let bt = &self.tt.bt;
        let sh5 = [n, p, p, n, p];
        let shl = [n, p, p, n, n];
        JetDConnection {
            g_bar_1: st.b.clone(),
            g_bar_2: st.nc.clone(),
            g_bar_3: Array3::from_shape_fn((p, p, p), |(a, b, g)| st.b[[a, b, g]]),
            g_bar_4: Array3::from_shape_fn((p, p, p), |(a, be, c)| st.b[[a, be, c]]),
            g_1: dyn_from(&sh5, |ix| -kd(ix[0], ix[3]) * st.b[[ix[1], ix[4], ix[2]]]),
            g_2: dyn_from(&sh5, |ix| -kd(ix[0], ix[3]) * st.nc[[ix[1], ix[4], ix[2]]]),
            g_3: dyn_from(&sh5, |ix| -kd(ix[0], ix[3]) * st.b[[ix[1], ix[4], ix[2]]]),
            g_4: dyn_from(&sh5, |ix| -kd(ix[0], ix[3]) * st.b[[ix[1], ix[4], ix[2]]]),
            l: bt.clone(),
            l_greek: dyn_from(&shl, |ix| kd(ix[1], ix[2]) * bt[[ix[0], ix[3], ix[4]]]),
            l_latin: dyn_from(&shl, |ix| kd(ix[1], ix[2]) * bt[[ix[0], ix[3], ix[4]]]),
        }
    }

    // ----- closed forms

    fn w_bs(&self, be: usize, j: usize) -> f64 {
        // Σ_c (B^c_{βa} s^a) y^j_c
        let (p, st, s, ya) = (self.p, &self.st, &self.jp.s, &self.jp.y_a);
        sum_n(p, |c| sum_n(p, |a| st.b[[c, be, a]] * s[a]) * ya[[j, c]])
    }

    /// `P^e_{uvc} N^c_w` contracted over `c`.
    fn q(&self, e: usize, u: usize, v: usize, w: usize) -> f64 {
        sum_n(self.p, |c| self.st.pp[[e, u, v, c]] * self.st.nn[[c, w]])
    }

    fn c1v(&self, d: usize, a: usize, b: usize, g: usize) -> f64 {
        self.st.rr[[d, a, b, g]] + (self.q(d, a, b, g) - self.q(d, a, g, b))
    }

    fn c10v(&self, l: usize, i: usize, be: usize, k: usize) -> f64 {
        -sum_n(self.n, |j| self.tt.pt[[l, i, k, j]] * self.w_bs(be, j))
    }

    fn c11v(&self, l: usize, i: usize, b: usize, k: usize) -> f64 {
        -sum_n(self.n, |j| self.tt.pt[[l, i, k, j]] * self.jp.y_a[[j, b]])
    }

    fn c12v(&self, l: usize, i: usize, j: usize, k: usize) -> f64 {
        let (n, tt, yh) = (self.n, &self.tt, &self.yh);
        let u = |a: usize, b: usize| sum_n(n, |r| tt.pt[[l, i, a, r]] * tt.nt[[r, b]]);
        let v = |a: usize, b: usize| sum_n(n, |r| tt.pt[[l, i, a, r]] * sum_n(n, |q| tt.bt[[r, b, q]] * yh[q]));
        (tt.rt[[l, i, j, k]] + (u(j, k) - u(k, j))) + (v(k, j) - v(j, k))
    }

    fn c13v(&self, l: usize, c: usize, i: usize, j: usize, k: usize) -> f64 {
        self.tt.pt[[l, i, j, k]] * self.jp.s[c]
    }

    /// Bracket shared by T14 and T15 before contraction with `x^k_μ` or `y^k_c`.
    fn t14h(&self, m: usize, k: usize, i: usize, j: usize) -> f64 {
        let (n, tt, yh) = (self.n, &self.tt, &self.yh);
        let u = |a: usize, b: usize| sum_n(n, |l| tt.pt[[m, k, a, l]] * tt.nt[[l, b]]);
        let v = |a: usize, b: usize| sum_n(n, |l| tt.pt[[m, k, a, l]] * sum_n(n, |q| tt.bt[[l, b, q]] * yh[q]));
        (tt.rt[[m, k, i, j]] + (u(i, j) - u(j, i))) - (v(i, j) - v(j, i))
    }

    fn t_closed(&self, label: &str, ix: &[usize]) -> f64 {
        let (p, n) = (self.p, self.n);
        let st = &self.st;
        let pt = &self.tt.pt;
        let s = &self.jp.s;
        let xa = &self.jp.x_alpha;
        let ya = &self.jp.y_a;
        match label {
            "T1" => st.tor[[ix[0], ix[1], ix[2]]],
            "T2" => {
                let (m, b, mu, i, j) = (ix[0], ix[1], ix[2], ix[3], ix[4]);
                sum_n(n, |k| pt[[m, i, k, j]] * xa[[k, mu]]) * s[b]
            }
            "T3" => {
                let (m, b, c, i, j) = (ix[0], ix[1], ix[2], ix[3], ix[4]);
                sum_n(n, |k| pt[[m, i, k, j]] * ya[[k, c]]) * s[b]
            }
            "T4" => {
                let (m, mu, al, be) = (ix[0], ix[1], ix[2], ix[3]);
                let xpart = sum_n(p, |e| (st.rr[[e, mu, al, be]] + (self.q(e, mu, al, be) - self.q(e, mu, be, al))) * xa[[m, e]]);
                let f = |c: usize, a1: usize, b1: usize| {
                    st.ndt[[c, b1, mu, a1]] + sum_n(p, |d| st.nc[[d, b1, mu]] * st.b[[c, d, a1]])
                        - sum_n(p, |g| st.nc[[c, b1, g]] * st.b[[g, a1, mu]])
                };
                let ypart = sum_n(p, |c| (f(c, al, be) - f(c, be, al)) * ya[[m, c]]);
                -xpart + ypart
            }
            "T5" => {
                let (m, mu, al, b) = (ix[0], ix[1], ix[2], ix[3]);
                -sum_n(p, |e| st.pp[[e, mu, al, b]] * xa[[m, e]])
                    + sum_n(p, |c| {
                        (st.bdt[[c, b, mu, al]] - st.nds[[c, al, mu, b]] + sum_n(p, |d| st.b[[d, b, mu]] * st.b[[c, d, al]])
                            - sum_n(p, |g| st.b[[g, al, mu]] * st.b[[c, g, b]]))
                            * ya[[m, c]]
                    })
            }
            "T6" => {
                let (m, mu, a, be) = (ix[0], ix[1], ix[2], ix[3]);
                sum_n(p, |e| st.pp[[e, mu, a, be]] * xa[[m, e]])
                    - sum_n(p, |c| {
                        (st.bdt[[c, a, mu, be]] - st.nds[[c, be, mu, a]] + sum_n(p, |d| st.b[[d, a, mu]] * st.b[[c, d, be]])
                            - sum_n(p, |g| st.b[[g, be, mu]] * st.b[[c, g, a]]))
                            * ya[[m, c]]
                    })
            }
            "T7" => {
                let (m, c, al, be) = (ix[0], ix[1], ix[2], ix[3]);
                -sum_n(p, |d| (st.rr[[d, c, al, be]] + (self.q(d, c, al, be) - self.q(d, c, be, al))) * ya[[m, d]])
            }
            "T8" => {
                let (m, c, al, b) = (ix[0], ix[1], ix[2], ix[3]);
                -sum_n(p, |d| st.pp[[d, c, al, b]] * ya[[m, d]])
            }
            "T9" => {
                let (m, c, a, be) = (ix[0], ix[1], ix[2], ix[3]);
                sum_n(p, |d| st.pp[[d, c, a, be]] * ya[[m, d]])
            }
            "T10" => {
                let (m, mu, al, j) = (ix[0], ix[1], ix[2], ix[3]);
                -sum_n(n, |k| sum_n(n, |l| pt[[m, j, k, l]] * xa[[k, mu]] * self.w_bs(al, l)))
            }
            "T11" => {
                let (m, mu, a, j) = (ix[0], ix[1], ix[2], ix[3]);
                -sum_n(n, |k| sum_n(n, |l| pt[[m, j, k, l]] * xa[[k, mu]] * ya[[l, a]]))
            }
            "T12" => {
                let (m, c, al, j) = (ix[0], ix[1], ix[2], ix[3]);
                -sum_n(n, |k| sum_n(n, |l| pt[[m, j, k, l]] * ya[[k, c]] * self.w_bs(al, l)))
            }
            "T13" => {
                let (m, c, a, j) = (ix[0], ix[1], ix[2], ix[3]);
                -sum_n(n, |k| sum_n(n, |l| pt[[m, j, k, l]] * ya[[k, c]] * ya[[l, a]]))
            }
            "T14" => {
                let (m, mu, i, j) = (ix[0], ix[1], ix[2], ix[3]);
                sum_n(n, |k| self.t14h(m, k, i, j) * xa[[k, mu]])
            }
            "T15" => {
                let (m, c, i, j) = (ix[0], ix[1], ix[2], ix[3]);
                sum_n(n, |k| self.t14h(m, k, i, j) * ya[[k, c]])
            }
            _ => unreachable!("unknown torsion block {label}"),
        }
    }

    fn c_closed(&self, label: &str, ix: &[usize]) -> f64 {
        let p = self.p;
        let st = &self.st;
        match label {
            "C1" | "C7" => self.c1v(ix[0], ix[1], ix[2], ix[3]),
            "C2" => {
                let (d, al) = (ix[0], ix[1]);
                let f = |be: usize, ga: usize| {
                    st.ndt[[d, al, be, ga]] + sum_n(p, |c| st.nc[[c, al, be]] * st.b[[d, c, ga]])
                        - sum_n(p, |mu| st.nc[[d, mu, be]] * st.b[[mu, al, ga]])
                };
                f(ix[2], ix[3]) - f(ix[3], ix[2])
            }
            "C3" | "C8" => st.pp[[ix[0], ix[1], ix[2], ix[3]]],
            "C5" | "C9" => -st.pp[[ix[0], ix[1], ix[2], ix[3]]],
            "C4" => {
                let (d, al, be, c) = (ix[0], ix[1], ix[2], ix[3]);
                st.nds[[d, al, be, c]] - st.bdt[[d, al, c, be]] + sum_n(p, |mu| st.b[[mu, al, be]] * st.b[[d, mu, c]])
                    - sum_n(p, |f| st.b[[f, al, c]] * st.b[[d, f, be]])
            }
            "C6" => {
                let (d, al, b, ga) = (ix[0], ix[1], ix[2], ix[3]);
                st.bdt[[d, al, b, ga]] - st.nds[[d, al, ga, b]] + sum_n(p, |c| st.b[[c, al, b]] * st.b[[d, c, ga]])
                    - sum_n(p, |mu| st.b[[mu, al, ga]] * st.b[[d, mu, b]])
            }
            "C10" => self.c10v(ix[0], ix[1], ix[2], ix[3]),
            "C11" => self.c11v(ix[0], ix[1], ix[2], ix[3]),
            "C12" => self.c12v(ix[0], ix[1], ix[2], ix[3]),
            "C13" => self.c13v(ix[0], ix[1], ix[2], ix[3], ix[4]),
            "C14" | "C20" => {
                let (l, a, e, i, b, g) = (ix[0], ix[1], ix[2], ix[3], ix[4], ix[5]);
                -(kd(l, i) * self.c1v(a, e, b, g))
            }
            "C15" | "C21" => -(kd(ix[0], ix[3]) * st.pp[[ix[1], ix[2], ix[4], ix[5]]]),
            "C16" | "C22" => kd(ix[0], ix[3]) * st.pp[[ix[1], ix[2], ix[4], ix[5]]],
            "C17" => {
                let (l, a, e, i, be, ga) = (ix[0], ix[1], ix[2], ix[3], ix[4], ix[5]);
                let f = |b1: usize, g1: usize| {
                    st.ndt[[a, b1, e, g1]] + sum_n(p, |c| st.nc[[c, b1, e]] * st.b[[a, c, g1]])
                        - sum_n(p, |mu| st.nc[[a, b1, mu]] * st.b[[mu, e, g1]])
                };
                -(kd(l, i) * (f(be, ga) - f(ga, be)))
            }
            "C18" => {
                let (l, a, e, i, be, c) = (ix[0], ix[1], ix[2], ix[3], ix[4], ix[5]);
                -(kd(l, i)
                    * (st.nds[[a, be, e, c]] - st.bdt[[a, c, e, be]] + sum_n(p, |mu| st.b[[mu, be, e]] * st.b[[a, mu, c]])
                        - sum_n(p, |d| st.b[[d, c, e]] * st.b[[a, d, be]])))
            }
            "C19" => {
                let (l, a, e, i, b, ga) = (ix[0], ix[1], ix[2], ix[3], ix[4], ix[5]);
                -(kd(l, i)
                    * (st.bdt[[a, b, e, ga]] - st.nds[[a, ga, e, b]] + sum_n(p, |c| st.b[[c, b, e]] * st.b[[a, c, ga]])
                        - sum_n(p, |mu| st.b[[mu, ga, e]] * st.b[[a, mu, b]])))
            }
            "C23" | "C25" => kd(ix[1], ix[2]) * self.c10v(ix[0], ix[3], ix[4], ix[5]),
            "C24" | "C26" => kd(ix[1], ix[2]) * self.c11v(ix[0], ix[3], ix[4], ix[5]),
            "C27" | "C28" => kd(ix[1], ix[2]) * self.c12v(ix[0], ix[3], ix[4], ix[5]),
            "C29" | "C30" => kd(ix[1], ix[3]) * self.c13v(ix[0], ix[2], ix[4], ix[5], ix[6]),
            _ => unreachable!("unknown curvature block {label}"),
        }
    }

    pub fn torsions_closed(&self) -> BlockSet {
        BlockSet {
            blocks: TORSION_BLOCKS
                .iter()
                .map(|(label, kinds)| Block {
                    label: label.to_string(),
                    data: dyn_from(&kinds_shape(kinds, self.p, self.n), |ix| self.t_closed(label, ix)),
                })
                .collect(),
        }
    }

    pub fn curvatures_closed(&self) -> BlockSet {
        BlockSet {
            blocks: CURVATURE_BLOCKS
                .iter()
                .map(|(label, kinds)| Block {
                    label: label.to_string(),
                    data: dyn_from(&kinds_shape(kinds, self.p, self.n), |ix| self.c_closed(label, ix)),
                })
                .collect(),
        }
    }

    // ----- general formulas

    pub fn lift(&self) -> GeometryResult<JetLift> {
        JetLift::new(&self.src, &self.tgt, &self.jp)
    }

    pub fn general(&self) -> GeometryResult<GeneralSets> {
        Ok(self.lift()?.general())
    }
}

/// Temporal nonlinear connection blocks `M^{(j)}_{(B)A}`.
///
/// `m1 = M_{(β)α}` as `[[j, β, α]]`, `m2 = M_{(b)α}`, `m3 = M_{(β)a}`, `m4 = M_{(b)a}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalNlc {
    pub m1: Array3<f64>,
    pub m2: Array3<f64>,
    pub m3: Array3<f64>,
    pub m4: Array3<f64>,
}

/// Spatial nonlinear connection blocks `N^{(j)}_{(β)i}` and `N^{(j)}_{(b)i}` as `[[j, B, i]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialNlc {
    pub n1: Array3<f64>,
    pub n2: Array3<f64>,
}

/// The eleven coefficient blocks of the jet d-connection.
///
/// `g_bar_1..4` are `Ḡ^α_{βγ}`, `Ḡ^a_{βγ}`, `Ḡ^a_{bγ}`, `Ḡ^a_{βc}` (upper index
/// first). `g_1..4` are `G^{(i)(β)}_{(α)(j)γ}`, `G^{(i)(b)}_{(α)(j)γ}`,
/// `G^{(i)(b)}_{(α)(j)c}`, `G^{(i)(b)}_{(a)(j)γ}` laid out `[[i, B, A, j, C]]`.
/// `l` is `L^k_{ij}`; `l_greek`/`l_latin` are `L^{(i)(B)}_{(A)(j)k}` as
/// `[[i, B, A, j, k]]` for greek and latin `A, B`.
#[derive(Debug, Clone, PartialEq)]
pub struct JetDConnection {
    pub g_bar_1: Array3<f64>,
    pub g_bar_2: Array3<f64>,
    pub g_bar_3: Array3<f64>,
    pub g_bar_4: Array3<f64>,
    pub g_1: ArrayD<f64>,
    pub g_2: ArrayD<f64>,
    pub g_3: ArrayD<f64>,
    pub g_4: ArrayD<f64>,
    pub l: Array3<f64>,
    pub l_greek: ArrayD<f64>,
    pub l_latin: ArrayD<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub label: String,
    pub data: ArrayD<f64>,
}

/// Named blocks; used for both torsions (T1–T15) and curvatures (C1–C30).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlockSet {
    pub blocks: Vec<Block>,
}

pub type TorsionSet = BlockSet;
pub type CurvatureSet = BlockSet;

impl BlockSet {
    pub fn get(&self, label: &str) -> Option<&ArrayD<f64>> {
        self.blocks.iter().find(|b| b.label == label).map(|b| &b.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().flat_map(|b| b.data.iter()).fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// A combination of index kinds that the general formulas make vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralZero {
    pub label: String,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralSets {
    pub torsions: TorsionSet,
    pub curvatures: CurvatureSet,
    pub structural: Vec<StructuralZero>,
}

// ---------------------------------------------------------------------------
// Order-1 lift for the general formulas

/// Coefficient fields of the jet connection as order-1 expansions in the jet coordinates.
pub struct JetLift {
    p: usize,
    n: usize,
    /// Normal components `Γ^C_{AB}`, flat `[C][A][B]` over `2p`.
    gam: Vec<TaylorValue>,
    /// `M^{(j)}_{(B)A}`, flat `[j][B][A]`.
    m: Vec<TaylorValue>,
    /// `N^{(j)}_{(B)i}`, flat `[j][B][i]`.
    nsp: Vec<TaylorValue>,
    /// `B̃^l_{ik}`, flat `[l][i][k]`.
    bt: Vec<TaylorValue>,
}

impl JetLift {
    pub fn new(src: &BaseGeometry, tgt: &BaseGeometry, jp: &JetPoint) -> GeometryResult<JetLift> {
        let (p, n) = (src.dim(), tgt.dim());
        let q = 2 * p;
        let coords = jp.coordinates();
        let nv = coords.len();
        let lift = |v: usize| TaylorValue::variable(v, coords[v], nv, 1);
        let t_o: Vec<TaylorValue> = (0..p).map(lift).collect::<Result<_, _>>()?;
        let s_o: Vec<TaylorValue> = (p..q).map(lift).collect::<Result<_, _>>()?;
        let x_o: Vec<TaylorValue> = (q..q + n).map(lift).collect::<Result<_, _>>()?;
        let xx: Vec<Vec<TaylorValue>> = (0..n)
            .map(|j| (0..q).map(|c| lift(Self::xvar_of(p, n, j, c))).collect::<Result<_, _>>())
            .collect::<Result<_, _>>()?;
        let zero = TaylorValue::zero(nv, 1)?;
        let yhat: Vec<TaylorValue> = (0..n)
            .map(|i| (0..p).fold(zero.clone(), |acc, a| acc + &xx[i][p + a] * &s_o[a]))
            .collect();

        let inner: Vec<TaylorValue> = t_o.iter().chain(&s_o).cloned().collect();
        let outer_tgt: Vec<TaylorValue> = x_o.iter().chain(&yhat).cloned().collect();
        let compose = |f: &TaylorValue, args: &[TaylorValue]| -> GeometryResult<TaylorValue> {
            let out = f.compose(args)?;
            if out.order() < 1 {
                return Err(GeometryError::Jet(JetError::OrderExceeded { requested: 1, order: out.order() }));
            }
            Ok(out)
        };
        let bs = src.berwald_series()?;
        let ncs = src.n_colon_series()?;
        let bts = tgt.berwald_series()?;
        let mut b_o = Vec::with_capacity(p * p * p);
        let mut nc_o = Vec::with_capacity(p * p * p);
        for c in 0..p {
            for a in 0..p {
                for b in 0..p {
                    b_o.push(compose(&bs[c][a][b], &inner)?);
                    nc_o.push(compose(&ncs[c][a][b], &inner)?);
                }
            }
        }
        let i3 = |c: usize, a: usize, b: usize| (c * p + a) * p + b;
        let mut bt = Vec::with_capacity(n * n * n);
        for l in 0..n {
            for i in 0..n {
                for k in 0..n {
                    bt.push(compose(&bts[l][i][k], &outer_tgt)?);
                }
            }
        }

        let mut gam = Vec::with_capacity(q * q * q);
        for c in 0..q {
            for a in 0..q {
                for b in 0..q {
                    gam.push(match (c < p, a < p, b < p) {
                        (true, true, true) => b_o[i3(c, a, b)].clone(),
                        (false, true, true) => nc_o[i3(c - p, a, b)].clone(),
                        (false, false, true) => b_o[i3(c - p, a - p, b)].clone(),
                        (false, true, false) => b_o[i3(c - p, a, b - p)].clone(),
                        _ => zero.clone(),
                    });
                }
            }
        }
        let mut m = Vec::with_capacity(n * q * q);
        for j in 0..n {
            for bb in 0..q {
                for aa in 0..q {
                    let acc = (0..q).fold(zero.clone(), |acc, c| acc + &gam[(c * q + aa) * q + bb] * &xx[j][c]);
                    m.push(-acc);
                }
            }
        }
        let mut nsp = Vec::with_capacity(n * q * n);
        for j in 0..n {
            for bb in 0..q {
                for i in 0..n {
                    nsp.push((0..n).fold(zero.clone(), |acc, k| acc + &bt[(j * n + i) * n + k] * &xx[k][bb]));
                }
            }
        }
        Ok(JetLift { p, n, gam, m, nsp, bt })
    }

    fn xvar_of(p: usize, n: usize, j: usize, c: usize) -> usize {
        if c < p {
            2 * p + n + j * p + c
        } else {
            2 * p + n + n * p + j * p + (c - p)
        }
    }

    fn xvar(&self, j: usize, c: usize) -> usize {
        Self::xvar_of(self.p, self.n, j, c)
    }

    pub fn normal_component(&self, c: usize, a: usize, b: usize) -> &TaylorValue {
        let q = 2 * self.p;
        &self.gam[(c * q + a) * q + b]
    }

    /// `M^{(j)}_{(B)A}` over the `2p` index space.
    pub fn temporal(&self, j: usize, bb: usize, aa: usize) -> &TaylorValue {
        let q = 2 * self.p;
        &self.m[(j * q + bb) * q + aa]
    }

    /// `N^{(j)}_{(B)i}`.
    pub fn spatial(&self, j: usize, bb: usize, i: usize) -> &TaylorValue {
        &self.nsp[(j * 2 * self.p + bb) * self.n + i]
    }

    pub fn target_berwald(&self, l: usize, i: usize, k: usize) -> &TaylorValue {
        &self.bt[(l * self.n + i) * self.n + k]
    }

    /// `δ^J f / δT^A` (`A < p`: `t^α`, otherwise `s^a`).
    pub fn delta_t(&self, f: &TaylorValue, aa: usize) -> f64 {
        let q = 2 * self.p;
        let mut out = f.gradient(aa);
        for j in 0..self.n {
            for bb in 0..q {
                out -= self.temporal(j, bb, aa).value() * f.gradient(self.xvar(j, bb));
            }
        }
        out
    }

    /// `δ^J f / δx^i`.
    pub fn delta_x(&self, f: &TaylorValue, i: usize) -> f64 {
        let q = 2 * self.p;
        let mut out = f.gradient(q + i);
        for j in 0..self.n {
            for bb in 0..q {
                out -= self.spatial(j, bb, i).value() * f.gradient(self.xvar(j, bb));
            }
        }
        out
    }

    /// `∂f / ∂X^j_B` (`X^j_β = x^j_β`, `X^j_b = y^j_b`).
    pub fn partial_jet(&self, f: &TaylorValue, j: usize, bb: usize) -> f64 {
        f.gradient(self.xvar(j, bb))
    }

    /// All general-formula arrays, split into the named blocks and the vanishing remainder.
    pub fn general(&self) -> GeneralSets {
        let (p, n) = (self.p, self.n);
        let q = 2 * p;
        let gv = Array3::from_shape_fn((q, q, q), |(c, a, b)| self.normal_component(c, a, b).value());
        let gdt = Array4::from_shape_fn((q, q, q, q), |(c, a, b, e)| self.delta_t(self.normal_component(c, a, b), e));
        let gdx = Array4::from_shape_fn((q, q, q, n), |(c, a, b, i)| self.delta_x(self.normal_component(c, a, b), i));
        let btv = Array3::from_shape_fn((n, n, n), |(l, i, k)| self.target_berwald(l, i, k).value());
        let btdt = Array4::from_shape_fn((n, n, n, q), |(l, i, k, e)| self.delta_t(self.target_berwald(l, i, k), e));
        let btdx = Array4::from_shape_fn((n, n, n, n), |(l, i, k, j)| self.delta_x(self.target_berwald(l, i, k), j));
        let btdj = dyn_from(&[n, n, n, n, q], |ix| self.partial_jet(self.target_berwald(ix[0], ix[1], ix[2]), ix[3], ix[4]));

        // G^{(i)(B)}_{(A)(j)C} = -δ^i_j Γ^B_{CA};  L^{(i)(B)}_{(A)(j)k} = δ^B_A B̃^i_{jk}
        let g_v = |i: usize, bb: usize, aa: usize, j: usize, cc: usize| -(kd(i, j) * gv[[bb, cc, aa]]);
        let g_dt = |i: usize, bb: usize, aa: usize, j: usize, cc: usize, e: usize| -(kd(i, j) * gdt[[bb, cc, aa, e]]);
        let g_dx = |i: usize, bb: usize, aa: usize, j: usize, cc: usize, k: usize| -(kd(i, j) * gdx[[bb, cc, aa, k]]);
        let l_v = |i: usize, bb: usize, aa: usize, j: usize, k: usize| kd(bb, aa) * btv[[i, j, k]];
        let l_dt = |i: usize, bb: usize, aa: usize, j: usize, k: usize, e: usize| kd(bb, aa) * btdt[[i, j, k, e]];
        let l_dx = |i: usize, bb: usize, aa: usize, j: usize, k: usize, r: usize| kd(bb, aa) * btdx[[i, j, k, r]];

        let mut named: Vec<(&str, ArrayD<f64>)> = Vec::new();

        // torsions
        named.push((
            "T_MAB",
            dyn_from(&[q, q, q], |ix| gv[[ix[0], ix[1], ix[2]]] - gv[[ix[0], ix[2], ix[1]]]),
        ));
        named.push((
            "P_MAj",
            dyn_from(&[n, q, q, q, n], |ix| {
                let (m, bb, mm, aa, j) = (ix[0], ix[1], ix[2], ix[3], ix[4]);
                self.partial_jet(self.temporal(m, mm, aa), j, bb) - g_v(m, bb, mm, j, aa)
            }),
        ));
        named.push((
            "P_Mij",
            dyn_from(&[n, q, q, n, n], |ix| {
                let (m, bb, mm, i, j) = (ix[0], ix[1], ix[2], ix[3], ix[4]);
                self.partial_jet(self.spatial(m, mm, i), j, bb) - l_v(m, bb, mm, j, i)
            }),
        ));
        named.push((
            "R_MAB",
            dyn_from(&[n, q, q, q], |ix| {
                let (m, mm, aa, bb) = (ix[0], ix[1], ix[2], ix[3]);
                self.delta_t(self.temporal(m, mm, aa), bb) - self.delta_t(self.temporal(m, mm, bb), aa)
            }),
        ));
        named.push((
            "R_MAj",
            dyn_from(&[n, q, q, n], |ix| {
                let (m, mm, aa, j) = (ix[0], ix[1], ix[2], ix[3]);
                self.delta_x(self.temporal(m, mm, aa), j) - self.delta_t(self.spatial(m, mm, j), aa)
            }),
        ));
        named.push((
            "R_Mij",
            dyn_from(&[n, q, n, n], |ix| {
                let (m, mm, i, j) = (ix[0], ix[1], ix[2], ix[3]);
                self.delta_x(self.spatial(m, mm, i), j) - self.delta_x(self.spatial(m, mm, j), i)
            }),
        ));

        // curvatures
        named.push((
            "R_DABC",
            dyn_from(&[q, q, q, q], |ix| {
                let (d, a, b, c) = (ix[0], ix[1], ix[2], ix[3]);
                gdt[[d, a, b, c]] - gdt[[d, a, c, b]]
                    + sum_n(q, |mm| gv[[mm, a, b]] * gv[[d, mm, c]] - gv[[mm, a, c]] * gv[[d, mm, b]])
            }),
        ));
        named.push(("R_iBk", dyn_from(&[n, n, q, n], |ix| -btdt[[ix[0], ix[1], ix[3], ix[2]]])));
        named.push((
            "R_ijk",
            dyn_from(&[n, n, n, n], |ix| {
                let (l, i, j, k) = (ix[0], ix[1], ix[2], ix[3]);
                btdx[[l, i, j, k]] - btdx[[l, i, k, j]]
                    + sum_n(n, |m| btv[[m, i, j]] * btv[[l, m, k]] - btv[[m, i, k]] * btv[[l, m, j]])
            }),
        ));
        named.push(("P_Gijk", dyn_from(&[n, q, n, n, n], |ix| btdj[[ix[0], ix[2], ix[3], ix[4], ix[1]].as_slice()])));
        named.push((
            "R_ADiBC",
            dyn_from(&[n, q, q, n, q, q], |ix| {
                let (l, a, d, i, b, c) = (ix[0], ix[1], ix[2], ix[3], ix[4], ix[5]);
                let quad = sum_n(q, |mm| {
                    sum_n(n, |m| g_v(m, a, mm, i, b) * g_v(l, mm, d, m, c) - g_v(m, a, mm, i, c) * g_v(l, mm, d, m, b))
                });
                g_dt(l, a, d, i, b, c) - g_dt(l, a, d, i, c, b) + quad
            }),
        ));
        named.push((
            "R_ADiBk",
            dyn_from(&[n, q, q, n, q, n], |ix| {
                let (l, a, d, i, b, k) = (ix[0], ix[1], ix[2], ix[3], ix[4], ix[5]);
                let quad = sum_n(q, |mm| {
                    sum_n(n, |m| g_v(m, a, mm, i, b) * l_v(l, mm, d, m, k) - l_v(m, a, mm, i, k) * g_v(l, mm, d, m, b))
                });
                g_dx(l, a, d, i, b, k) - l_dt(l, a, d, i, k, b) + quad
            }),
        ));
        named.push((
            "R_ADijk",
            dyn_from(&[n, q, q, n, n, n], |ix| {
                let (l, a, d, i, j, k) = (ix[0], ix[1], ix[2], ix[3], ix[4], ix[5]);
                let quad = sum_n(q, |mm| {
                    sum_n(n, |m| l_v(m, a, mm, i, j) * l_v(l, mm, d, m, k) - l_v(m, a, mm, i, k) * l_v(l, mm, d, m, j))
                });
                l_dx(l, a, d, i, j, k) - l_dx(l, a, d, i, k, j) + quad
            }),
        ));
        named.push((
            "P_AGDijk",
            dyn_from(&[n, q, q, q, n, n, n], |ix| {
                let (l, a, g, d, i, j, k) = (ix[0], ix[1], ix[2], ix[3], ix[4], ix[5], ix[6]);
                kd(a, d) * btdj[[l, i, j, k, g].as_slice()]
            }),
        ));

        let arr = |name: &str| &named.iter().find(|(k, _)| *k == name).expect("array").1;
        let templates: [(&str, &str, &[&str]); 14] = [
            ("T_MAB", "GGG", &["T1"]),
            ("P_MAj", "nGGGn", &[]),
            ("P_Mij", "nGGnn", &["T2", "T3"]),
            ("R_MAB", "nGGG", &["T4", "T5", "T6", "T7", "T8", "T9"]),
            ("R_MAj", "nGGn", &["T10", "T11", "T12", "T13"]),
            ("R_Mij", "nGnn", &["T14", "T15"]),
            ("R_DABC", "GGGG", &["C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8", "C9"]),
            ("R_iBk", "nnGn", &["C10", "C11"]),
            ("R_ijk", "nnnn", &["C12"]),
            ("P_Gijk", "nGnnn", &["C13"]),
            ("R_ADiBC", "nGGnGG", &["C14", "C15", "C16", "C17", "C18", "C19", "C20", "C21", "C22"]),
            ("R_ADiBk", "nGGnGn", &["C23", "C24", "C25", "C26"]),
            ("R_ADijk", "nGGnnn", &["C27", "C28"]),
            ("P_AGDijk", "nGGGnnn", &["C29", "C30"]),
        ];
        let kinds_of = |label: &str| {
            TORSION_BLOCKS
                .iter()
                .chain(CURVATURE_BLOCKS.iter())
                .find(|(l, _)| *l == label)
                .map(|(_, k)| *k)
                .expect("known label")
        };

        let mut torsions = Vec::new();
        let mut curvatures = Vec::new();
        let mut structural = Vec::new();
        for (name, template, labels) in templates {
            let full = arr(name);
            let named_kinds: Vec<&str> = labels.iter().map(|l| kinds_of(l)).collect();
            for kinds in expand_template(template) {
                let region = extract(full, &kinds, p);
                if let Some(pos) = named_kinds.iter().position(|k| *k == kinds) {
                    let block = Block { label: labels[pos].to_string(), data: region };
                    if labels[pos].starts_with('T') {
                        torsions.push(block);
                    } else {
                        curvatures.push(block);
                    }
                } else {
                    let max_abs = region.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) });
                    structural.push(StructuralZero { label: format!("{}[{}]", name, kinds), max_abs });
                }
            }
        }
        let order = |set: &mut Vec<Block>, table: &[(&str, &str)]| {
            set.sort_by_key(|b| table.iter().position(|(l, _)| *l == b.label).expect("known label"));
        };
        order(&mut torsions, &TORSION_BLOCKS);
        order(&mut curvatures, &CURVATURE_BLOCKS);
        GeneralSets {
            torsions: BlockSet { blocks: torsions },
            curvatures: BlockSet { blocks: curvatures },
            structural,
        }
    }
}

/// Every lowercase instantiation of a template; `G` becomes `g` or `l`.
fn expand_template(template: &str) -> Vec<String> {
    let mut out = vec![String::new()];
    for c in template.chars() {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                let choices: Vec<char> = if c == 'G' { vec!['g', 'l'] } else { vec![c] };
                choices.into_iter().map(move |ch| format!("{prefix}{ch}"))
            })
            .collect();
    }
    out
}

/// Sub-array of a general `2p` array for one kind assignment.
fn extract(full: &ArrayD<f64>, kinds: &str, p: usize) -> ArrayD<f64> {
    let shape: Vec<usize> = kinds
        .chars()
        .zip(full.shape())
        .map(|(c, &len)| if c == 'n' { len } else { p })
        .collect();
    let offsets: Vec<usize> = kinds.chars().map(|c| if c == 'l' { p } else { 0 }).collect();
    let mut idx = vec![0usize; shape.len()];
    ArrayD::from_shape_fn(IxDyn(&shape), |ix| {
        for (k, (&i, &o)) in ix.slice().iter().zip(&offsets).enumerate() {
            idx[k] = i + o;
        }
        full[idx.as_slice()]
    })
}

// ---------------------------------------------------------------------------
// Free-function entry points

pub fn berwald_temporal_nlc(src: &FinslerStructure, jp: &JetPoint) -> GeometryResult<TemporalNlc> {
    let p = src.dim();
    if jp.source_dim() != p {
        return Err(GeometryError::DimensionMismatch { expected: p, got: jp.source_dim() });
    }
    let g = BaseGeometry::new(src, &jp.base_point(), 5)?;
    let (b, nc) = (g.berwald()?, g.n_colon()?);
    let n = jp.target_dim();
    let ya = &jp.y_a;
    let xa = &jp.x_alpha;
    Ok(TemporalNlc {
        m1: Array3::from_shape_fn((n, p, p), |(j, be, al)| {
            -sum_n(p, |g| b[[g, al, be]] * xa[[j, g]]) - sum_n(p, |c| nc[[c, al, be]] * ya[[j, c]])
        }),
        m2: Array3::from_shape_fn((n, p, p), |(j, bb, al)| -sum_n(p, |c| b[[c, al, bb]] * ya[[j, c]])),
        m3: Array3::from_shape_fn((n, p, p), |(j, be, a)| -sum_n(p, |c| b[[c, a, be]] * ya[[j, c]])),
        m4: Array3::zeros((n, p, p)),
    })
}

pub fn berwald_spatial_nlc(tgt: &FinslerStructure, jp: &JetPoint) -> GeometryResult<SpatialNlc> {
    let n = tgt.dim();
    if jp.target_dim() != n {
        return Err(GeometryError::DimensionMismatch { expected: n, got: jp.target_dim() });
    }
    let g = BaseGeometry::new(tgt, &jp.target_point()?, 5)?;
    let bt = g.berwald()?;
    let p = jp.source_dim();
    Ok(SpatialNlc {
        n1: Array3::from_shape_fn((n, p, n), |(j, be, i)| sum_n(n, |k| bt[[j, i, k]] * jp.x_alpha[[k, be]])),
        n2: Array3::from_shape_fn((n, p, n), |(j, b, i)| sum_n(n, |k| bt[[j, i, k]] * jp.y_a[[k, b]])),
    })
}

pub fn jet_dconnection(src: &FinslerStructure, tgt: &FinslerStructure, jp: &JetPoint) -> GeometryResult<JetDConnection> {
    Ok(JetGeometry::new(src, tgt, jp)?.dconnection())
}

pub fn dtorsions_closed(src: &FinslerStructure, tgt: &FinslerStructure, jp: &JetPoint) -> GeometryResult<TorsionSet> {
    Ok(JetGeometry::new(src, tgt, jp)?.torsions_closed())
}

pub fn dcurvatures_closed(src: &FinslerStructure, tgt: &FinslerStructure, jp: &JetPoint) -> GeometryResult<CurvatureSet> {
    Ok(JetGeometry::new(src, tgt, jp)?.curvatures_closed())
}

pub fn dtorsions_general(src: &FinslerStructure, tgt: &FinslerStructure, jp: &JetPoint) -> GeometryResult<TorsionSet> {
    Ok(JetGeometry::new(src, tgt, jp)?.general()?.torsions)
}

pub fn dcurvatures_general(src: &FinslerStructure, tgt: &FinslerStructure, jp: &JetPoint) -> GeometryResult<CurvatureSet> {
    Ok(JetGeometry::new(src, tgt, jp)?.general()?.curvatures)
}

// ---------------------------------------------------------------------------
// Structural identities on the closed blocks

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub name: String,
    /// Entries where the identity fails bitwise (`==` on `f64`).
    pub violations: usize,
}

fn antisym(name: &str, a: &ArrayD<f64>, ax1: usize, ax2: usize) -> IdentityCheck {
    let mut swapped = vec![0usize; a.ndim()];
    let violations = a
        .indexed_iter()
        .filter(|(ix, v)| {
            swapped.copy_from_slice(ix.slice());
            swapped.swap(ax1, ax2);
            **v != -a[swapped.as_slice()]
        })
        .count();
    IdentityCheck { name: name.to_string(), violations }
}

/// `big[ix] == factor * δ(ix[d1], ix[d2]) * small[sel(ix)]`.
fn delta_factor(name: &str, big: &ArrayD<f64>, small: &ArrayD<f64>, negate: bool, d: (usize, usize), sel: &[usize]) -> IdentityCheck {
    let mut sidx = vec![0usize; sel.len()];
    let violations = big
        .indexed_iter()
        .filter(|(ix, v)| {
            let ix = ix.slice();
            for (k, &axis) in sel.iter().enumerate() {
                sidx[k] = ix[axis];
            }
            let prod = kd(ix[d.0], ix[d.1]) * small[sidx.as_slice()];
            let expect = if negate { -prod } else { prod };
            **v != expect
        })
        .count();
    IdentityCheck { name: name.to_string(), violations }
}

/// δ-factorization and antisymmetry identities, checked bitwise.
pub fn structural_identities(tors: &TorsionSet, curv: &CurvatureSet) -> Vec<IdentityCheck> {
    let t = |l: &str| tors.get(l).expect("torsion block");
    let c = |l: &str| curv.get(l).expect("curvature block");
    let mut out = vec![
        antisym("T1 antisymmetric in its lower pair", t("T1"), 1, 2),
        antisym("T4 antisymmetric in its lower pair", t("T4"), 2, 3),
        antisym("T7 antisymmetric in its lower pair", t("T7"), 2, 3),
        antisym("T14 antisymmetric in i,j", t("T14"), 2, 3),
        antisym("T15 antisymmetric in i,j", t("T15"), 2, 3),
        antisym("C1 antisymmetric in its last pair", c("C1"), 2, 3),
        antisym("C2 antisymmetric in its last pair", c("C2"), 2, 3),
    ];
    let barred = [("C14", "C1"), ("C15", "C3"), ("C16", "C5"), ("C20", "C7"), ("C21", "C8"), ("C22", "C9")];
    for (big, small) in barred {
        out.push(delta_factor(&format!("{big} = -δ·{small}"), c(big), c(small), true, (0, 3), &[1, 2, 4, 5]));
    }
    for (big, small) in [("C23", "C10"), ("C24", "C11"), ("C25", "C10"), ("C26", "C11"), ("C27", "C12"), ("C28", "C12")] {
        out.push(delta_factor(&format!("{big} = δ·{small}"), c(big), c(small), false, (1, 2), &[0, 3, 4, 5]));
    }
    for big in ["C29", "C30"] {
        out.push(delta_factor(&format!("{big} = δ·C13"), c(big), c("C13"), false, (1, 3), &[0, 2, 4, 5, 6]));
    }
    out
}

// ---------------------------------------------------------------------------
// Cross-validation

#[derive(Debug, Clone, Default)]
pub struct CrossCheckOptions {
    /// Report label; defaults to `"<src>-><tgt>"`.
    pub scenario: Option<String>,
    /// Worker count; falls back to `FINSLERLAB_THREADS`, then rayon's default.
    pub threads: Option<usize>,
    pub tolerance: Option<f64>,
    /// Test hook: shifts one closed-form block so the comparison must fail.
    pub corrupt_block: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub label: String,
    pub shape: Vec<usize>,
    pub max_abs_closed: f64,
    pub max_abs_general: f64,
    pub max_rel_residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralCheck {
    pub label: String,
    pub max_abs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossCheckReport {
    pub scenario: String,
    pub seed: u64,
    pub samples: usize,
    pub tolerance: f64,
    pub blocks: Vec<BlockCheck>,
    pub structural: Vec<StructuralCheck>,
    /// Total bitwise violations per identity across all samples.
    pub identities: Vec<IdentityCheck>,
    /// Per-point evaluation errors.
    pub failures: Vec<String>,
    pub overall_pass: bool,
}

impl CrossCheckReport {
    pub fn block(&self, label: &str) -> Option<&BlockCheck> {
        self.blocks.iter().find(|b| b.label == label)
    }

    /// Labels of failing blocks, structural checks and identities.
    pub fn failing(&self) -> Vec<String> {
        self.blocks
            .iter()
            .filter(|b| !b.pass)
            .map(|b| b.label.clone())
            .chain(self.structural.iter().filter(|s| !s.pass).map(|s| s.label.clone()))
            .chain(self.identities.iter().filter(|i| i.violations > 0).map(|i| i.name.clone()))
            .collect()
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("scenario".into(), Value::String(self.scenario.clone()));
        m.insert("seed".into(), Value::from(self.seed));
        m.insert("samples".into(), Value::from(self.samples));
        m.insert("tolerance".into(), num(self.tolerance));
        m.insert(
            "blocks".into(),
            Value::Array(
                self.blocks
                    .iter()
                    .map(|b| {
                        let mut o = Map::new();
                        o.insert("label".into(), Value::String(b.label.clone()));
                        o.insert("shape".into(), Value::Array(b.shape.iter().map(|&d| Value::from(d)).collect()));
                        o.insert("max_abs_closed".into(), num(b.max_abs_closed));
                        o.insert("max_abs_general".into(), num(b.max_abs_general));
                        o.insert("max_rel_residual".into(), num(b.max_rel_residual));
                        o.insert("pass".into(), Value::Bool(b.pass));
                        Value::Object(o)
                    })
                    .collect(),
            ),
        );
        m.insert(
            "structural".into(),
            Value::Array(
                self.structural
                    .iter()
                    .map(|s| {
                        let mut o = Map::new();
                        o.insert("label".into(), Value::String(s.label.clone()));
                        o.insert("max_abs".into(), num(s.max_abs));
                        o.insert("pass".into(), Value::Bool(s.pass));
                        Value::Object(o)
                    })
                    .collect(),
            ),
        );
        m.insert(
            "identities".into(),
            Value::Array(
                self.identities
                    .iter()
                    .map(|i| {
                        let mut o = Map::new();
                        o.insert("name".into(), Value::String(i.name.clone()));
                        o.insert("violations".into(), Value::from(i.violations));
                        o.insert("pass".into(), Value::Bool(i.violations == 0));
                        Value::Object(o)
                    })
                    .collect(),
            ),
        );
        m.insert("failures".into(), Value::Array(self.failures.iter().cloned().map(Value::String).collect()));
        m.insert("overall_pass".into(), Value::Bool(self.overall_pass));
        Value::Object(m)
    }
}

struct PointOutcome {
    closed: Vec<ArrayD<f64>>,
    general: Vec<ArrayD<f64>>,
    structural: Vec<StructuralZero>,
    identities: Vec<IdentityCheck>,
}

fn evaluate_point(src: &FinslerStructure, tgt: &FinslerStructure, jp: &JetPoint, corrupt: Option<&str>) -> GeometryResult<PointOutcome> {
    let geo = JetGeometry::new(src, tgt, jp)?;
    let tors = geo.torsions_closed();
    let curv = geo.curvatures_closed();
    let identities = structural_identities(&tors, &curv);
    let gen = geo.general()?;
    let mut closed: Vec<ArrayD<f64>> = tors.blocks.into_iter().chain(curv.blocks).map(|b| b.data).collect();
    if let Some(label) = corrupt {
        let pos = all_labels().position(|l| l == label).expect("validated label");
        let block = &mut closed[pos];
        let shift = 1.0 + block.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if let Some(first) = block.iter_mut().next() {
            *first += shift;
        }
    }
    let general = gen.torsions.blocks.into_iter().chain(gen.curvatures.blocks).map(|b| b.data).collect();
    Ok(PointOutcome { closed, general, structural: gen.structural, identities })
}

fn all_labels() -> impl Iterator<Item = &'static str> {
    TORSION_BLOCKS.iter().chain(CURVATURE_BLOCKS.iter()).map(|(l, _)| *l)
}

fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

fn block_residual(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    let mut diff = 0.0f64;
    let mut scale = 1.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        if !x.is_finite() || !y.is_finite() {
            return f64::NAN;
        }
        diff = diff.max((x - y).abs());
        scale = scale.max(x.abs()).max(y.abs());
    }
    diff / scale
}

fn max_abs(a: &ArrayD<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, &x| nan_max(m, x.abs()))
}

/// Worker count from the options or `FINSLERLAB_THREADS`.
pub fn thread_count(opts: &CrossCheckOptions) -> Option<usize> {
    opts.threads
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()))
        .filter(|&k| k > 0)
}

/// Samples jet points and compares the closed and general blocks at each.
pub fn cross_validate(
    src: &FinslerStructure,
    tgt: &FinslerStructure,
    spec: &SampleSpec,
    opts: &CrossCheckOptions,
) -> GeometryResult<CrossCheckReport> {
    if let Some(label) = &opts.corrupt_block {
        if !all_labels().any(|l| l == label) {
            return Err(GeometryError::InvalidStructure(format!("unknown block label '{label}'")));
        }
    }
    let points = sample_jet_points(src, tgt, spec)?;
    let corrupt = opts.corrupt_block.as_deref();
    let run = || -> Vec<GeometryResult<PointOutcome>> {
        points.par_iter().map(|jp| evaluate_point(src, tgt, jp, corrupt)).collect()
    };
    let outcomes = match thread_count(opts) {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| GeometryError::InvalidStructure(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };

    let tol = opts.tolerance.unwrap_or(CROSS_TOL);
    let (p, n) = (src.dim(), tgt.dim());
    let mut blocks: Vec<BlockCheck> = TORSION_BLOCKS
        .iter()
        .chain(CURVATURE_BLOCKS.iter())
        .map(|(label, kinds)| BlockCheck {
            label: label.to_string(),
            shape: kinds_shape(kinds, p, n),
            max_abs_closed: 0.0,
            max_abs_general: 0.0,
            max_rel_residual: 0.0,
            pass: true,
        })
        .collect();
    let mut structural: Vec<StructuralCheck> = Vec::new();
    let mut identities: Vec<IdentityCheck> = Vec::new();
    let mut failures = Vec::new();
    for (k, outcome) in outcomes.into_iter().enumerate() {
        let o = match outcome {
            Ok(o) => o,
            Err(e) => {
                failures.push(format!("sample {k}: {e}"));
                continue;
            }
        };
        for (b, (c, g)) in blocks.iter_mut().zip(o.closed.iter().zip(&o.general)) {
            b.max_abs_closed = nan_max(b.max_abs_closed, max_abs(c));
            b.max_abs_general = nan_max(b.max_abs_general, max_abs(g));
            b.max_rel_residual = nan_max(b.max_rel_residual, block_residual(c, g));
        }
        if structural.is_empty() {
            structural = o.structural.iter().map(|s| StructuralCheck { label: s.label.clone(), max_abs: 0.0, pass: true }).collect();
        }
        for (acc, s) in structural.iter_mut().zip(&o.structural) {
            acc.max_abs = nan_max(acc.max_abs, s.max_abs);
        }
        if identities.is_empty() {
            identities = o.identities.iter().map(|i| IdentityCheck { name: i.name.clone(), violations: 0 }).collect();
        }
        for (acc, i) in identities.iter_mut().zip(&o.identities) {
            acc.violations += i.violations;
        }
    }
    for b in &mut blocks {
        b.pass = b.max_rel_residual <= tol;
    }
    for s in &mut structural {
        s.pass = s.max_abs <= STRUCTURAL_TOL;
    }
    let overall_pass = failures.is_empty()
        && blocks.iter().all(|b| b.pass)
        && structural.iter().all(|s| s.pass)
        && identities.iter().all(|i| i.violations == 0);
    Ok(CrossCheckReport {
        scenario: opts.scenario.clone().unwrap_or_else(|| format!("{}->{}", src.label(), tgt.label())),
        seed: spec.seed(),
        samples: points.len(),
        tolerance: tol,
        blocks,
        structural,
        identities,
        failures,
        overall_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::berwald_coeffs;

    fn randers() -> FinslerStructure {
        FinslerStructure::randers_standard(2, 0.3).unwrap()
    }

    fn sample_point(p: usize, n: usize) -> JetPoint {
        let t: Vec<f64> = (0..p).map(|a| 0.4 + 0.2 * a as f64).collect();
        let s: Vec<f64> = (0..p).map(|a| 0.7 - 0.5 * a as f64).collect();
        let x: Vec<f64> = (0..n).map(|i| 0.9 + 0.15 * i as f64).collect();
        let xa = Array2::from_shape_fn((n, p), |(i, a)| 0.3 * (i as f64 + 1.0) - 0.2 * a as f64);
        let ya = Array2::from_shape_fn((n, p), |(i, a)| 0.5 + 0.1 * i as f64 - 0.35 * a as f64 * (i as f64 - 0.5));
        JetPoint::new(t, s, x, xa, ya).unwrap()
    }

    #[test]
    fn euclidean_pair_has_zero_blocks() {
        let e = FinslerStructure::euclidean(2).unwrap();
        let geo = JetGeometry::new(&e, &e, &sample_point(2, 2)).unwrap();
        assert_eq!(geo.torsions_closed().max_abs(), 0.0);
        assert_eq!(geo.curvatures_closed().max_abs(), 0.0);
        let gen = geo.general().unwrap();
        assert!(gen.torsions.max_abs() <= 1e-12);
        assert!(gen.curvatures.max_abs() <= 1e-12);
        assert_eq!(gen.torsions.blocks.len(), 15);
        assert_eq!(gen.curvatures.blocks.len(), 30);
    }

    #[test]
    fn closed_matches_general_randers_to_sphere() {
        let sphere = FinslerStructure::round_sphere().unwrap();
        let geo = JetGeometry::new(&randers(), &sphere, &sample_point(2, 2)).unwrap();
        let gen = geo.general().unwrap();
        for (c, g) in geo.torsions_closed().blocks.iter().chain(&geo.curvatures_closed().blocks).zip(
            gen.torsions.blocks.iter().chain(&gen.curvatures.blocks),
        ) {
            assert_eq!(c.label, g.label);
            assert_eq!(c.data.shape(), g.data.shape(), "{}", c.label);
            let r = block_residual(&c.data, &g.data);
            assert!(r <= 1e-9, "{}: {r:e}", c.label);
        }
        for s in &gen.structural {
            assert!(s.max_abs <= 1e-10, "{}: {:e}", s.label, s.max_abs);
        }
    }

    #[test]
    fn temporal_blocks_match_table_contraction() {
        let geo = JetGeometry::new(&randers(), &randers(), &sample_point(2, 2)).unwrap();
        assert!(geo.temporal_nlc_dual_residual() <= 1e-12);
        let m = berwald_temporal_nlc(&randers(), geo.point()).unwrap();
        assert!(m.m4.iter().all(|&v| v == 0.0));
        let diff = (&m.m1 - &geo.temporal_nlc().m1).iter().fold(0.0f64, |a, x| a.max(x.abs()));
        assert!(diff <= 1e-12);
    }

    #[test]
    fn dconnection_delta_structure() {
        let r = randers();
        let jp = sample_point(2, 2);
        let d = jet_dconnection(&r, &r, &jp).unwrap();
        let b = berwald_coeffs(&r, &jp.base_point()).unwrap();
        for i in 0..2 {
            for be in 0..2 {
                for al in 0..2 {
                    for j in 0..2 {
                        for ga in 0..2 {
                            let expect = if i == j { -b[[be, ga, al]] } else { 0.0 };
                            assert_eq!(d.g_1[[i, be, al, j, ga].as_slice()], expect);
                        }
                    }
                }
            }
        }
        let nsp = berwald_spatial_nlc(&r, &jp).unwrap();
        let bt = berwald_coeffs(&r, &jp.target_point().unwrap()).unwrap();
        for j in 0..2 {
            for be in 0..2 {
                for i in 0..2 {
                    let direct: f64 = (0..2).map(|k| bt[[j, i, k]] * jp.x_alpha[[k, be]]).sum();
                    assert!((nsp.n1[[j, be, i]] - direct).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn delta_t_matches_finite_differences() {
        let r = randers();
        let sphere = FinslerStructure::round_sphere().unwrap();
        let jp = sample_point(2, 2);
        let geo = JetGeometry::new(&r, &sphere, &jp).unwrap();
        let lift = geo.lift().unwrap();
        let (j, mu, al, be) = (1, 0, 1, 0);
        let taylor = lift.delta_t(lift.temporal(j, mu, al), be);

        let m1 = |pt: &JetPoint| berwald_temporal_nlc(&r, pt).unwrap().m1[[j, mu, al]];
        let h = 1e-5;
        let mut plus = jp.clone();
        let mut minus = jp.clone();
        plus.t[be] += h;
        minus.t[be] -= h;
        let mut fd = (m1(&plus) - m1(&minus)) / (2.0 * h);
        let m = geo.temporal_nlc();
        for k in 0..2 {
            for g in 0..2 {
                let mut a = jp.clone();
                let mut b = jp.clone();
                a.x_alpha[[k, g]] += h;
                b.x_alpha[[k, g]] -= h;
                fd -= m.m1[[k, g, be]] * (m1(&a) - m1(&b)) / (2.0 * h);
                let mut a = jp.clone();
                let mut b = jp.clone();
                a.y_a[[k, g]] += h;
                b.y_a[[k, g]] -= h;
                fd -= m.m2[[k, g, be]] * (m1(&a) - m1(&b)) / (2.0 * h);
            }
        }
        assert!((taylor - fd).abs() <= 1e-5 * taylor.abs().max(1.0), "{taylor} vs {fd}");
    }

    #[test]
    fn low_order_is_rejected() {
        let r = randers();
        let err = JetGeometry::with_order(&r, &r, &sample_point(2, 2), 5).unwrap_err();
        assert!(matches!(err, GeometryError::Jet(JetError::OrderExceeded { .. })));
    }

    #[test]
    fn template_expansion_counts() {
        assert_eq!(expand_template("nGGnGG").len(), 16);
        assert_eq!(expand_template("nnnn"), vec!["nnnn".to_string()]);
    }
}
