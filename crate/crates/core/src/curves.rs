//! Autoparallel curves `d²t/dt² + N(t, ṫ)·ṫ = 0` and the energy functional.
//!
//! Integration uses the Dormand–Prince 5(4) pair with PI step control and the
//! standard fourth-order continuous extension for output at evenly spaced
//! sample times.

use crate::connection::BaseGeometry;
use crate::error::{GeometryError, GeometryResult};
use crate::finsler::{BasePoint, FinslerStructure, EPSILON_ZERO_SECTION};
use crate::report::relative_residual;

/// Default local error tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default number of output samples (including both ends).
pub const DEFAULT_SAMPLES: usize = 201;
/// Agreement required between `-N·v` and `-2G`.
pub const RHS_CROSS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CurveState {
    pub time: f64,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl CurveState {
    pub fn new(time: f64, position: Vec<f64>, velocity: Vec<f64>) -> CurveState {
        CurveState { time, position, velocity }
    }

    pub fn point(&self) -> BasePoint {
        BasePoint::new(self.position.clone(), self.velocity.clone())
    }

    fn speed_norm(&self) -> f64 {
        self.velocity.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct GeodesicTrace {
    pub samples: Vec<CurveState>,
    /// `F(c, ċ)` at each sample.
    pub speed: Vec<f64>,
    pub stats: IntegratorStats,
}

impl GeodesicTrace {
    /// Wraps externally produced samples (e.g. a perturbed comparison curve).
    pub fn from_samples(fs: &FinslerStructure, samples: Vec<CurveState>) -> GeometryResult<GeodesicTrace> {
        let speed = samples.iter().map(|s| fs.f(&s.point())).collect::<GeometryResult<Vec<_>>>()?;
        Ok(GeodesicTrace { samples, speed, stats: IntegratorStats::default() })
    }

    pub fn endpoint(&self) -> &CurveState {
        self.samples.last().expect("trace has samples")
    }

    /// `max |F - F₀| / F₀` over the trace.
    pub fn speed_drift(&self) -> f64 {
        let f0 = self.speed[0];
        self.speed.iter().map(|f| (f - f0).abs() / f0).fold(0.0, f64::max)
    }

    /// CSV with columns `time, t1..tp, v1..vp, speed_F`.
    pub fn to_csv(&self) -> String {
        let p = self.samples.first().map_or(0, |s| s.position.len());
        let mut head = vec!["time".to_string()];
        head.extend((1..=p).map(|i| format!("t{}", i)));
        head.extend((1..=p).map(|i| format!("v{}", i)));
        head.push("speed_F".into());
        let mut out = head.join(",");
        out.push('\n');
        for (s, f) in self.samples.iter().zip(&self.speed) {
            let mut row = vec![format!("{:.16e}", s.time)];
            row.extend(s.position.iter().map(|x| format!("{:.16e}", x)));
            row.extend(s.velocity.iter().map(|x| format!("{:.16e}", x)));
            row.push(format!("{:.16e}", f));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// `-N^a_b(t, ṫ) ṫ^b`, checked against `-2G^a`.
pub fn autoparallel_rhs(fs: &FinslerStructure, state: &CurveState) -> GeometryResult<Vec<f64>> {
    if state.speed_norm() < EPSILON_ZERO_SECTION {
        return Err(GeometryError::ZeroVelocity);
    }
    let geo = BaseGeometry::new(fs, &state.point(), 4)?;
    let n = geo.nonlinear()?;
    let g = geo.spray();
    let p = fs.dim();
    let acc: Vec<f64> = (0..p).map(|a| -(0..p).map(|b| n[[a, b]] * state.velocity[b]).sum::<f64>()).collect();
    let two_g: Vec<f64> = g.iter().map(|x| -2.0 * x).collect();
    let residual = relative_residual(acc.iter().zip(two_g.iter()));
    if residual > RHS_CROSS_TOL {
        return Err(GeometryError::CrossCheckFailure { what: "-N·v = -2G".into(), residual });
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorOptions {
    pub tol: f64,
    pub samples: usize,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions { tol: DEFAULT_TOL, samples: DEFAULT_SAMPLES, max_steps: 1_000_000 }
    }
}

// Dormand–Prince 5(4) tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (c, k) in terms {
        for (o, x) in out.iter_mut().zip(k.iter()) {
            *o += h * c * x;
        }
    }
    out
}

struct System<'a> {
    fs: &'a FinslerStructure,
    p: usize,
    evals: usize,
}

impl System<'_> {
    fn eval(&mut self, time: f64, y: &[f64]) -> GeometryResult<Vec<f64>> {
        self.evals += 1;
        let state = CurveState::new(time, y[..self.p].to_vec(), y[self.p..].to_vec());
        let acc = autoparallel_rhs(self.fs, &state).map_err(|e| match e {
            GeometryError::ZeroVelocity => GeometryError::ZeroVelocityEncountered { time },
            other => other,
        })?;
        let mut out = y[self.p..].to_vec();
        out.extend(acc);
        Ok(out)
    }
}

/// Integrates with the default options and tolerance `tol`.
pub fn integrate_autoparallel(
    fs: &FinslerStructure,
    initial: &CurveState,
    t_final: f64,
    tol: f64,
) -> GeometryResult<GeodesicTrace> {
    integrate_with(fs, initial, t_final, IntegratorOptions { tol, ..Default::default() })
}

pub fn integrate_with(
    fs: &FinslerStructure,
    initial: &CurveState,
    t_final: f64,
    opts: IntegratorOptions,
) -> GeometryResult<GeodesicTrace> {
    let p = fs.dim();
    if initial.position.len() != p {
        return Err(GeometryError::DimensionMismatch { expected: p, got: initial.position.len() });
    }
    if initial.velocity.len() != p {
        return Err(GeometryError::DimensionMismatch { expected: p, got: initial.velocity.len() });
    }
    if initial.speed_norm() < EPSILON_ZERO_SECTION {
        return Err(GeometryError::ZeroVelocity);
    }
    if !(opts.tol > 0.0) {
        return Err(GeometryError::InvalidStructure(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let samples = opts.samples.max(2);
    let t0 = initial.time;
    let span = t_final - t0;
    let sample_times: Vec<f64> = (0..samples)
        .map(|k| if k + 1 == samples { t_final } else { t0 + span * k as f64 / (samples - 1) as f64 })
        .collect();

    let mut sys = System { fs, p, evals: 0 };
    let mut y: Vec<f64> = initial.position.iter().chain(&initial.velocity).copied().collect();
    let mut out = vec![CurveState::new(t0, initial.position.clone(), initial.velocity.clone())];
    let mut next_sample = 1;
    let mut stats = IntegratorStats::default();
    if span == 0.0 {
        return GeodesicTrace::from_samples(fs, out);
    }

    let dir = span.signum();
    let mut t = t0;
    let mut k1 = sys.eval(t, &y)?;
    let mut h = dir * (0.01 * span.abs()).min(0.1).max(1e-6_f64.min(span.abs()));
    let mut fac_old = 1e-4f64;
    let beta = 0.04;
    let expo = 0.2 - beta * 0.75;
    let safe = 0.9;
    let mut last_rejected = false;

    while next_sample < samples {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(GeometryError::StepSizeUnderflow { time: t, step: h });
        }
        if h.abs() < 1e-14 * t.abs().max(1.0) {
            return Err(GeometryError::StepSizeUnderflow { time: t, step: h });
        }
        let mut last = false;
        if (t + h - t_final) * dir >= 0.0 {
            h = t_final - t;
            last = true;
        }
        let k2 = sys.eval(t + C2 * h, &axpy(&y, h, &[(A21, &k1)]))?;
        let k3 = sys.eval(t + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]))?;
        let k4 = sys.eval(t + C4 * h, &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
        let k5 = sys.eval(t + C5 * h, &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]))?;
        let k6 = sys.eval(t + h, &axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]))?;
        let y_new = axpy(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = sys.eval(t + h, &y_new)?;

        let mut err = 0.0;
        for i in 0..y.len() {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sk = opts.tol + opts.tol * y[i].abs().max(y_new[i].abs());
            err += (e / sk) * (e / sk);
        }
        let err = (err / y.len() as f64).sqrt();

        let fac11 = err.powf(expo);
        let fac = (fac11 / fac_old.powf(beta) / safe).clamp(0.1, 5.0);
        if err <= 1.0 {
            stats.accepted += 1;
            fac_old = err.max(1e-4);
            let t_new = if last { t_final } else { t + h };
            // continuous extension coefficients
            let r2: Vec<f64> = y_new.iter().zip(&y).map(|(a, b)| a - b).collect();
            let r3: Vec<f64> = (0..y.len()).map(|i| h * k1[i] - r2[i]).collect();
            let r4: Vec<f64> = (0..y.len()).map(|i| r2[i] - h * k7[i] - r3[i]).collect();
            let r5: Vec<f64> = (0..y.len())
                .map(|i| h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]))
                .collect();
            while next_sample < samples && (sample_times[next_sample] - t_new) * dir <= 0.0 {
                let ts = sample_times[next_sample];
                let ys: Vec<f64> = if next_sample + 1 == samples && last {
                    y_new.clone()
                } else {
                    let th = (ts - t) / h;
                    let th1 = 1.0 - th;
                    (0..y.len()).map(|i| y[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])))).collect()
                };
                let st = CurveState::new(ts, ys[..p].to_vec(), ys[p..].to_vec());
                if st.speed_norm() < EPSILON_ZERO_SECTION {
                    return Err(GeometryError::ZeroVelocityEncountered { time: ts });
                }
                out.push(st);
                next_sample += 1;
            }
            t = t_new;
            y = y_new;
            k1 = k7;
            let mut h_new = h / fac;
            if last_rejected {
                h_new = if dir > 0.0 { h_new.min(h) } else { h_new.max(h) };
            }
            last_rejected = false;
            h = h_new;
        } else {
            stats.rejected += 1;
            last_rejected = true;
            h /= (fac11 / safe).min(10.0);
        }
    }
    stats.rhs_evaluations = sys.evals;
    let mut trace = GeodesicTrace::from_samples(fs, out)?;
    trace.stats = stats;
    Ok(trace)
}

/// Composite trapezoid rule for `∫ F²(c, ċ) dt`.
pub fn energy(fs: &FinslerStructure, trace: &GeodesicTrace) -> GeometryResult<f64> {
    let vals = trace
        .samples
        .iter()
        .map(|s| fs.f_squared(&s.point()))
        .collect::<GeometryResult<Vec<_>>>()?;
    Ok(trace
        .samples
        .windows(2)
        .zip(vals.windows(2))
        .map(|(s, v)| 0.5 * (s[1].time - s[0].time) * (v[0] + v[1]))
        .sum())
}

/// Worst pointwise residuals of the acceleration `-N·v` substituted into the
/// `Γ`-form and the `γ`-form of the autoparallel equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoparallelResiduals {
    pub gamma_rund: f64,
    pub gamma_formal: f64,
}

pub fn autoparallel_residuals(fs: &FinslerStructure, trace: &GeodesicTrace) -> GeometryResult<AutoparallelResiduals> {
    let p = fs.dim();
    let mut worst = AutoparallelResiduals { gamma_rund: 0.0, gamma_formal: 0.0 };
    for st in &trace.samples {
        let geo = BaseGeometry::new(fs, &st.point(), 4)?;
        let n = geo.nonlinear()?;
        let big = geo.rund_christoffel()?;
        let small = geo.formal_christoffel();
        let v = &st.velocity;
        let scale = v.iter().map(|x| x * x).sum::<f64>().max(1.0);
        for a in 0..p {
            let acc = -(0..p).map(|b| n[[a, b]] * v[b]).sum::<f64>();
            let mut rund = acc;
            let mut formal = acc;
            for b in 0..p {
                for c in 0..p {
                    rund += big[[a, b, c]] * v[b] * v[c];
                    formal += small[[a, b, c]] * v[b] * v[c];
                }
            }
            worst.gamma_rund = worst.gamma_rund.max(rund.abs() / scale);
            worst.gamma_formal = worst.gamma_formal.max(formal.abs() / scale);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn euclidean_line() {
        let fs = FinslerStructure::euclidean(2).unwrap();
        let init = CurveState::new(0.0, vec![0.0, 0.0], vec![1.0, 1.0]);
        assert_eq!(autoparallel_rhs(&fs, &init).unwrap(), vec![0.0, 0.0]);
        let tr = integrate_autoparallel(&fs, &init, 1.0, 1e-8).unwrap();
        let end = tr.endpoint();
        assert!((end.position[0] - 1.0).abs() <= 1e-9 && (end.position[1] - 1.0).abs() <= 1e-9);
        assert!((energy(&fs, &tr).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_velocity_is_rejected() {
        let fs = FinslerStructure::euclidean(2).unwrap();
        let init = CurveState::new(0.0, vec![0.0, 0.0], vec![0.0, 0.0]);
        assert_eq!(autoparallel_rhs(&fs, &init), Err(GeometryError::ZeroVelocity));
        assert!(matches!(integrate_autoparallel(&fs, &init, 1.0, 1e-8), Err(GeometryError::ZeroVelocity)));
    }

    #[test]
    fn equator_is_a_great_circle() {
        let fs = FinslerStructure::round_sphere().unwrap();
        let init = CurveState::new(0.0, vec![PI / 2.0, 0.0], vec![0.0, 1.0]);
        let acc = autoparallel_rhs(&fs, &init).unwrap();
        assert!(acc[0].abs() < 1e-15 && acc[1].abs() < 1e-15);
        let tr = integrate_autoparallel(&fs, &init, 2.0 * PI, 1e-8).unwrap();
        let drift = tr.samples.iter().map(|s| (s.position[0] - PI / 2.0).abs()).fold(0.0, f64::max);
        assert!(drift <= 1e-6, "{}", drift);
    }

    #[test]
    fn randers_speed_is_constant() {
        let fs = FinslerStructure::randers_standard(2, 0.3).unwrap();
        let init = CurveState::new(0.0, vec![0.1, 0.2], vec![1.0, 0.2]);
        let tr = integrate_autoparallel(&fs, &init, 2.0, 1e-8).unwrap();
        assert!(tr.speed_drift() <= 1e-7, "{}", tr.speed_drift());
        let r = autoparallel_residuals(&fs, &tr).unwrap();
        assert!(r.gamma_rund <= 1e-7 && r.gamma_formal <= 1e-7, "{:?}", r);
    }

    #[test]
    fn csv_has_expected_header() {
        let fs = FinslerStructure::euclidean(2).unwrap();
        let init = CurveState::new(0.0, vec![0.0, 0.0], vec![1.0, 0.0]);
        let tr = integrate_with(&fs, &init, 1.0, IntegratorOptions { samples: 3, ..Default::default() }).unwrap();
        let csv = tr.to_csv();
        assert!(csv.starts_with("time,t1,t2,v1,v2,speed_F\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
