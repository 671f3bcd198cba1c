//! Smooth maps `φ: (M, F) → (N, F̃)` given by component expressions in `t`.
//!
//! Target objects are evaluated at the pushed point `(x, y) = (φ(t), φ_α s^α)`.
//! Array layouts: `jacobian[[i, a]] = φ^i_a`, `hessian[[i, a, b]] = φ^i_{ab}`,
//! `tau[[i, a, b]] = τ^i_{ab}`.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Array3};

use crate::connection::BaseGeometry;
use crate::curves::{autoparallel_rhs, integrate_autoparallel, CurveState};
use crate::error::{GeometryError, GeometryResult};
use crate::expr::{parse_with, Expr};
use crate::finsler::{position_vars, BasePoint, FinslerStructure, EPSILON_ZERO_SECTION};
use crate::jets::TaylorValue;
use crate::report::relative_residual;

/// Smallest admissible singular value of `dφ`.
pub const SIGMA_MIN: f64 = 1e-8;
/// Default sup-norm threshold for declaring a map affine.
pub const AFFINE_TOL: f64 = 1e-8;
/// Agreement required between the two tension-field forms.
pub const TENSION_CROSS_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SmoothMap {
    source_dim: usize,
    target_dim: usize,
    components: Vec<Expr>,
    texts: Vec<String>,
}

impl SmoothMap {
    /// Components are expressions in `t1..tp` (aliases `x1..xp`).
    pub fn new<S: AsRef<str>>(source_dim: usize, components: &[S]) -> GeometryResult<SmoothMap> {
        if source_dim == 0 || components.is_empty() {
            return Err(GeometryError::InvalidStructure("map needs positive source and target dimensions".into()));
        }
        let vars = position_vars(source_dim);
        let exprs = components
            .iter()
            .map(|c| parse_with(c.as_ref(), &vars))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SmoothMap {
            source_dim,
            target_dim: exprs.len(),
            components: exprs,
            texts: components.iter().map(|c| c.as_ref().to_string()).collect(),
        })
    }

    pub fn identity(p: usize) -> GeometryResult<SmoothMap> {
        let comps: Vec<String> = (1..=p).map(|i| format!("t{}", i)).collect();
        SmoothMap::new(p, &comps)
    }

    /// `φ(t) = A t` with `A` given row by row (`n` rows of length `p`).
    pub fn linear(a: &[Vec<f64>]) -> GeometryResult<SmoothMap> {
        let p = a.first().map_or(0, |r| r.len());
        let comps: Vec<String> = a
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(j, c)| format!("({:?})*t{}", c, j + 1))
                    .collect::<Vec<_>>()
                    .join(" + ")
            })
            .collect();
        if a.iter().any(|r| r.len() != p) {
            return Err(GeometryError::InvalidStructure("ragged linear map matrix".into()));
        }
        SmoothMap::new(p, &comps)
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn component_texts(&self) -> &[String] {
        &self.texts
    }

    fn check_t(&self, t: &[f64]) -> GeometryResult<()> {
        if t.len() != self.source_dim {
            return Err(GeometryError::DimensionMismatch { expected: self.source_dim, got: t.len() });
        }
        Ok(())
    }

    pub fn eval(&self, t: &[f64]) -> GeometryResult<Vec<f64>> {
        self.check_t(t)?;
        Ok(self.components.iter().map(|c| c.eval(t)).collect::<Result<Vec<_>, _>>()?)
    }

    /// Taylor series of each component in the `p` source coordinates.
    pub fn series(&self, t: &[f64], order: usize) -> GeometryResult<Vec<TaylorValue>> {
        self.check_t(t)?;
        let vars = (0..self.source_dim)
            .map(|i| TaylorValue::variable(i, t[i], self.source_dim, order))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.components.iter().map(|c| c.eval_series(&vars)).collect::<Result<Vec<_>, _>>()?)
    }

    pub fn jacobian(&self, t: &[f64]) -> GeometryResult<Array2<f64>> {
        let ser = self.series(t, 1)?;
        Ok(Array2::from_shape_fn((self.target_dim, self.source_dim), |(i, a)| ser[i].gradient(a)))
    }
}

#[derive(Debug, Clone)]
pub struct MapDifferentials {
    pub value: Vec<f64>,
    pub jacobian: Array2<f64>,
    pub hessian: Array3<f64>,
    /// `(φ(t), dφ(s))` on the target tangent bundle.
    pub pushed: BasePoint,
}

pub fn map_differentials(m: &SmoothMap, pt: &BasePoint) -> GeometryResult<MapDifferentials> {
    let p = m.source_dim;
    let n = m.target_dim;
    if pt.s.len() != p {
        return Err(GeometryError::DimensionMismatch { expected: p, got: pt.s.len() });
    }
    let ser = m.series(&pt.t, 2)?;
    let jac = Array2::from_shape_fn((n, p), |(i, a)| ser[i].gradient(a));
    let mut hess = Array3::zeros((n, p, p));
    let mut idx = vec![0usize; p];
    for i in 0..n {
        for a in 0..p {
            for b in a..p {
                idx.iter_mut().for_each(|x| *x = 0);
                idx[a] += 1;
                idx[b] += 1;
                let v = ser[i].partial_coeff(&idx)?;
                hess[[i, a, b]] = v;
                hess[[i, b, a]] = v;
            }
        }
    }
    let value: Vec<f64> = ser.iter().map(|s| s.value()).collect();
    let y: Vec<f64> = (0..n).map(|i| (0..p).map(|a| jac[[i, a]] * pt.s[a]).sum()).collect();
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < EPSILON_ZERO_SECTION {
        return Err(GeometryError::TargetZeroSection { norm });
    }
    Ok(MapDifferentials { value: value.clone(), jacobian: jac, hessian: hess, pushed: BasePoint::new(value, y) })
}

fn singular_values(j: &Array2<f64>) -> Vec<f64> {
    let m = DMatrix::from_fn(j.nrows(), j.ncols(), |r, c| j[[r, c]]);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

#[derive(Debug, Clone)]
pub struct NondegeneracyReport {
    /// Singular values of `dφ` per point, descending.
    pub singular_values: Vec<Vec<f64>>,
    pub min_sigma: f64,
    pub threshold: f64,
    /// First point whose smallest singular value is below the threshold.
    pub witness: Option<usize>,
    pub pass: bool,
}

/// `Ker dφ = {0}` at each point, measured by the smallest singular value.
pub fn nondegeneracy_check(m: &SmoothMap, pts: &[Vec<f64>]) -> GeometryResult<NondegeneracyReport> {
    if m.source_dim > m.target_dim {
        return Err(GeometryError::DimensionMismatch { expected: m.target_dim, got: m.source_dim });
    }
    let mut all = Vec::with_capacity(pts.len());
    let mut min_sigma = f64::INFINITY;
    let mut witness = None;
    for (k, t) in pts.iter().enumerate() {
        let sv = singular_values(&m.jacobian(t)?);
        let lo = *sv.last().expect("p >= 1");
        if lo < SIGMA_MIN && witness.is_none() {
            witness = Some(k);
        }
        min_sigma = min_sigma.min(lo);
        all.push(sv);
    }
    Ok(NondegeneracyReport {
        singular_values: all,
        min_sigma,
        threshold: SIGMA_MIN,
        witness,
        pass: witness.is_none(),
    })
}

fn check_dims(src: &FinslerStructure, tgt: &FinslerStructure, m: &SmoothMap) -> GeometryResult<()> {
    if src.dim() != m.source_dim {
        return Err(GeometryError::DimensionMismatch { expected: src.dim(), got: m.source_dim });
    }
    if tgt.dim() != m.target_dim {
        return Err(GeometryError::DimensionMismatch { expected: tgt.dim(), got: m.target_dim });
    }
    Ok(())
}

/// Source and target geometry plus map derivatives at one point.
struct MapPoint {
    diff: MapDifferentials,
    src: BaseGeometry,
    tgt: BaseGeometry,
    tau: Array3<f64>,
}

impl MapPoint {
    fn new(src: &FinslerStructure, tgt: &FinslerStructure, m: &SmoothMap, pt: &BasePoint) -> GeometryResult<MapPoint> {
        check_dims(src, tgt, m)?;
        let diff = map_differentials(m, pt)?;
        let sg = BaseGeometry::new(src, pt, 5)?;
        let tg = BaseGeometry::new(tgt, &diff.pushed, 5)?;
        let (p, n) = (m.source_dim, m.target_dim);
        let b = sg.berwald()?;
        let bt = tg.berwald()?;
        let jac = &diff.jacobian;
        let mut tau = Array3::zeros((n, p, p));
        for i in 0..n {
            for a in 0..p {
                for c in a..p {
                    let mut v = diff.hessian[[i, a, c]];
                    for g in 0..p {
                        v -= b[[g, a, c]] * jac[[i, g]];
                    }
                    for j in 0..n {
                        for k in 0..n {
                            v += bt[[i, j, k]] * jac[[j, a]] * jac[[k, c]];
                        }
                    }
                    tau[[i, a, c]] = v;
                    tau[[i, c, a]] = v;
                }
            }
        }
        Ok(MapPoint { diff, src: sg, tgt: tg, tau })
    }
}

#[derive(Debug, Clone)]
pub struct AffineResidual {
    pub tau: Array3<f64>,
    pub sup: f64,
}

impl AffineResidual {
    pub fn is_affine(&self, eps: f64) -> bool {
        self.sup <= eps
    }
}

/// `τ^i_{ab} = φ^i_{ab} - B^g_{ab} φ^i_g + B̃^i_{jk} φ^j_a φ^k_b`.
pub fn affine_residual(
    src: &FinslerStructure,
    tgt: &FinslerStructure,
    m: &SmoothMap,
    pt: &BasePoint,
) -> GeometryResult<AffineResidual> {
    let mp = MapPoint::new(src, tgt, m, pt)?;
    let sup = mp.tau.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    Ok(AffineResidual { tau: mp.tau, sup })
}

#[derive(Debug, Clone)]
pub struct IsometryReport {
    /// `max |F(t, s) - F̃(φ(t), dφ(s))| / max(1, F)`
    pub scalar_residual: f64,
    /// `max |g_{ab} - g̃_{ij} φ^i_a φ^j_b| / max(1, |g|)`
    pub tensor_residual: f64,
}

impl IsometryReport {
    pub fn pass(&self, tol: f64) -> bool {
        self.scalar_residual <= tol && self.tensor_residual <= tol
    }
}

pub fn isometry_check(
    src: &FinslerStructure,
    tgt: &FinslerStructure,
    m: &SmoothMap,
    pts: &[BasePoint],
) -> GeometryResult<IsometryReport> {
    check_dims(src, tgt, m)?;
    if m.source_dim != m.target_dim {
        return Err(GeometryError::DimensionMismatch { expected: m.source_dim, got: m.target_dim });
    }
    let p = m.source_dim;
    let mut rep = IsometryReport { scalar_residual: 0.0, tensor_residual: 0.0 };
    for pt in pts {
        let d = map_differentials(m, pt)?;
        let sigma = *singular_values(&d.jacobian).last().expect("p >= 1");
        if sigma < SIGMA_MIN {
            return Err(GeometryError::SingularJacobian { sigma_min: sigma });
        }
        let f = src.f(pt)?;
        let ft = tgt.f(&d.pushed)?;
        rep.scalar_residual = rep.scalar_residual.max((f - ft).abs() / f.max(1.0));
        let g = crate::finsler::metric_tensor(src, pt)?;
        let gt = crate::finsler::metric_tensor(tgt, &d.pushed)?;
        let pulled = Array2::from_shape_fn((p, p), |(a, b)| {
            let mut acc = 0.0;
            for i in 0..p {
                for j in 0..p {
                    acc += gt[[i, j]] * d.jacobian[[i, a]] * d.jacobian[[j, b]];
                }
            }
            acc
        });
        rep.tensor_residual = rep.tensor_residual.max(relative_residual(g.iter().zip(pulled.iter())));
    }
    Ok(rep)
}

/// Both forms of the tension field at one point.
#[derive(Debug, Clone)]
pub struct TensionForms {
    /// Form written through `τ^i_{ab}`.
    pub tau_form: Array1<f64>,
    /// Three-brace form with `B` in the first brace and `Γ`, `Γ̃` in the others.
    pub full_form: Array1<f64>,
}

impl TensionForms {
    pub fn residual(&self) -> f64 {
        relative_residual(self.tau_form.iter().zip(self.full_form.iter()))
    }
}

pub fn tension_forms(
    src: &FinslerStructure,
    tgt: &FinslerStructure,
    m: &SmoothMap,
    pt: &BasePoint,
) -> GeometryResult<TensionForms> {
    let mp = MapPoint::new(src, tgt, m, pt)?;
    let (p, n) = (m.source_dim, m.target_dim);
    let s = &pt.s;
    let gi = mp.src.metric_inv();
    let jac = &mp.diff.jacobian;
    let hess = &mp.diff.hessian;
    let gam = mp.src.rund_christoffel()?;
    let gam_t = mp.tgt.rund_christoffel()?;
    let git = mp.tgt.metric_inv();
    let c2 = mp.tgt.cartan_mixed();
    let cl = mp.tgt.cartan_series();
    // C̃^i_{jkl} = g̃^{im} ∂C̃_{jkl}/∂y^m
    let c3 = ndarray::Array4::from_shape_fn((n, n, n, n), |(i, j, k, l)| {
        (0..n).map(|mm| git[[i, mm]] * cl[j][k][l].gradient(n + mm)).sum::<f64>()
    });
    // brace with Γ and Γ̃
    let mut brace = Array3::<f64>::zeros((n, p, p));
    for j in 0..n {
        for b in 0..p {
            for c in 0..p {
                let mut v = hess[[j, b, c]];
                for mu in 0..p {
                    v -= gam[[mu, b, c]] * jac[[j, mu]];
                }
                for q1 in 0..n {
                    for q2 in 0..n {
                        v += gam_t[[j, q1, q2]] * jac[[q1, b]] * jac[[q2, c]];
                    }
                }
                brace[[j, b, c]] = v;
            }
        }
    }
    let assemble = |first: &Array3<f64>, second: &Array3<f64>| -> Array1<f64> {
        // second contracted once and twice with s
        let once = Array2::from_shape_fn((n, p), |(j, b)| (0..p).map(|c| second[[j, b, c]] * s[c]).sum::<f64>());
        let twice: Vec<f64> = (0..n).map(|j| (0..p).map(|b| once[[j, b]] * s[b]).sum()).collect();
        Array1::from_shape_fn(n, |i| {
            let mut acc = 0.0;
            for a in 0..p {
                for b in 0..p {
                    let w = gi[[a, b]];
                    acc += w * first[[i, a, b]];
                    for j in 0..n {
                        for k in 0..n {
                            acc += 4.0 * w * c2[[i, j, k]] * jac[[k, a]] * once[[j, b]];
                            for l in 0..n {
                                acc += w * c3[[i, j, k, l]] * jac[[k, a]] * jac[[l, b]] * twice[j];
                            }
                        }
                    }
                }
            }
            acc
        })
    };
    Ok(TensionForms { tau_form: assemble(&mp.tau, &mp.tau), full_form: assemble(&mp.tau, &brace) })
}

/// Tension field through `τ^i_{ab}`, cross-checked against the three-brace form.
pub fn tension_field(
    src: &FinslerStructure,
    tgt: &FinslerStructure,
    m: &SmoothMap,
    pt: &BasePoint,
) -> GeometryResult<Array1<f64>> {
    let forms = tension_forms(src, tgt, m, pt)?;
    let residual = forms.residual();
    if residual > TENSION_CROSS_TOL {
        return Err(GeometryError::CrossCheckFailure { what: "tension field forms".into(), residual });
    }
    Ok(forms.tau_form)
}

#[derive(Debug, Clone)]
pub struct TransportReport {
    /// `max |ẍ + Ñ(x, ẋ) ẋ|` along the image curve
    pub sup_residual: f64,
    pub samples: usize,
    /// Time of the worst residual.
    pub worst_time: f64,
}

/// Integrates a source autoparallel, maps it through `φ` and measures the
/// target autoparallel residual along the image.
pub fn autoparallel_transport_test(
    src: &FinslerStructure,
    tgt: &FinslerStructure,
    m: &SmoothMap,
    initial: &CurveState,
    t_final: f64,
    tol: f64,
) -> GeometryResult<TransportReport> {
    check_dims(src, tgt, m)?;
    let trace = integrate_autoparallel(src, initial, t_final, tol)?;
    let (p, n) = (m.source_dim, m.target_dim);
    let mut rep = TransportReport { sup_residual: 0.0, samples: trace.samples.len(), worst_time: initial.time };
    for st in &trace.samples {
        let acc = autoparallel_rhs(src, st)?;
        let d = map_differentials(m, &st.point())?;
        let tg = BaseGeometry::new(tgt, &d.pushed, 4)?;
        let nt = tg.nonlinear()?;
        let y = &d.pushed.s;
        for i in 0..n {
            let mut xdd = 0.0;
            for a in 0..p {
                xdd += d.jacobian[[i, a]] * acc[a];
                for b in 0..p {
                    xdd += d.hessian[[i, a, b]] * st.velocity[a] * st.velocity[b];
                }
            }
            let r = xdd + (0..n).map(|j| nt[[i, j]] * y[j]).sum::<f64>();
            if r.abs() > rep.sup_residual {
                rep.sup_residual = r.abs();
                rep.worst_time = st.time;
            }
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityCriterion {
    /// Worst sup norm of `τ` for the identity map `(N, F₁) → (N, F₂)`.
    pub affine_sup: f64,
    /// Worst `|G₁^i - G₂^i|`.
    pub spray_diff: f64,
}

/// Compares the identity-map affine residual with the spray difference of two
/// structures on the same manifold.
pub fn identity_criterion(a: &FinslerStructure, b: &FinslerStructure, pts: &[BasePoint]) -> GeometryResult<IdentityCriterion> {
    if a.dim() != b.dim() {
        return Err(GeometryError::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let id = SmoothMap::identity(a.dim())?;
    let mut out = IdentityCriterion { affine_sup: 0.0, spray_diff: 0.0 };
    for pt in pts {
        out.affine_sup = out.affine_sup.max(affine_residual(a, b, &id, pt)?.sup);
        let ga = BaseGeometry::new(a, pt, 3)?.spray();
        let gb = BaseGeometry::new(b, pt, 3)?.spray();
        for (x, y) in ga.iter().zip(gb.iter()) {
            out.spray_diff = out.spray_diff.max((x - y).abs());
        }
    }
    Ok(out)
}
