//! Finsler structures, evaluation points and the level-0 tensors.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Array3};

use crate::error::{GeometryError, GeometryResult};
use crate::expr::{parse_with, Expr, VarTable};
use crate::jets::{lift_variable, taylor_matrix_inverse, TaylorValue};
use crate::report::CheckOutcome;

/// Fiber vectors shorter than this are treated as the zero section.
pub const EPSILON_ZERO_SECTION: f64 = 1e-8;
/// Positive-definiteness threshold on the smallest eigenvalue of `g`.
pub const MIN_EIGENVALUE: f64 = 1e-10;

/// A point `(t, s)` of the slit tangent bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct BasePoint {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
}

impl BasePoint {
    pub fn new(t: Vec<f64>, s: Vec<f64>) -> BasePoint {
        BasePoint { t, s }
    }

    pub fn dim(&self) -> usize {
        self.t.len()
    }

    pub fn s_norm(&self) -> f64 {
        self.s.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Same position, fiber scaled by `lambda`.
    pub fn scaled(&self, lambda: f64) -> BasePoint {
        BasePoint {
            t: self.t.clone(),
            s: self.s.iter().map(|x| x * lambda).collect(),
        }
    }

    /// Positional value vector `[t.., s..]`.
    pub fn values(&self) -> Vec<f64> {
        self.t.iter().chain(self.s.iter()).copied().collect()
    }
}

#[derive(Debug, Clone)]
struct RandersParts {
    alpha: Vec<Vec<Expr>>,
    beta: Vec<Expr>,
}

/// A Finsler structure given by an expression for `F²` in `(t1..tp, s1..sp)`.
///
/// The names `x1..xp`, `y1..yp` are accepted as aliases of `t`, `s`, so the
/// same structure serves as a source or as a target.
#[derive(Debug, Clone)]
pub struct FinslerStructure {
    dim: usize,
    f_squared: Expr,
    text: String,
    domain: Option<Vec<(f64, f64)>>,
    label: String,
    randers: Option<RandersParts>,
}

/// Variable table for a `p`-dimensional structure.
pub fn structure_vars(p: usize) -> VarTable {
    let mut names: Vec<String> = (1..=p).map(|i| format!("t{}", i)).collect();
    names.extend((1..=p).map(|i| format!("s{}", i)));
    let mut table = VarTable::new(&names);
    for i in 0..p {
        table = table.alias(&format!("x{}", i + 1), i).alias(&format!("y{}", i + 1), p + i);
    }
    table
}

/// Variable table for position-only expressions (metric entries, maps).
pub fn position_vars(p: usize) -> VarTable {
    let names: Vec<String> = (1..=p).map(|i| format!("t{}", i)).collect();
    let mut table = VarTable::new(&names);
    for i in 0..p {
        table = table.alias(&format!("x{}", i + 1), i);
    }
    table
}

impl FinslerStructure {
    pub fn new(dim: usize, f_squared: &str, label: &str) -> GeometryResult<FinslerStructure> {
        if dim == 0 {
            return Err(GeometryError::InvalidStructure("dimension must be at least 1".into()));
        }
        let e = parse_with(f_squared, &structure_vars(dim))?;
        Ok(FinslerStructure {
            dim,
            f_squared: e,
            text: f_squared.to_string(),
            domain: None,
            label: label.to_string(),
            randers: None,
        })
    }

    /// Wraps an already-built `F²` tree over the `(t, s)` slots.
    pub fn from_expr(dim: usize, f_squared: Expr, label: &str) -> GeometryResult<FinslerStructure> {
        if f_squared.arity() > 2 * dim {
            return Err(GeometryError::DimensionMismatch { expected: 2 * dim, got: f_squared.arity() });
        }
        Ok(FinslerStructure {
            dim,
            text: f_squared.to_string(),
            f_squared,
            domain: None,
            label: label.to_string(),
            randers: None,
        })
    }

    /// Restricts the position coordinates to a box (one `(lo, hi)` per coordinate).
    pub fn with_domain(mut self, domain: Vec<(f64, f64)>) -> GeometryResult<FinslerStructure> {
        if domain.len() != self.dim {
            return Err(GeometryError::DimensionMismatch { expected: self.dim, got: domain.len() });
        }
        self.domain = Some(domain);
        Ok(self)
    }

    pub fn euclidean(p: usize) -> GeometryResult<FinslerStructure> {
        let text = (1..=p).map(|i| format!("s{}^2", i)).collect::<Vec<_>>().join(" + ");
        FinslerStructure::new(p, &text, &format!("euclidean({})", p))
    }

    /// `F² = g_ij(t) s^i s^j` from a symmetric matrix of position expressions.
    pub fn riemannian(matrix: &[Vec<String>]) -> GeometryResult<FinslerStructure> {
        let p = matrix.len();
        if matrix.iter().any(|r| r.len() != p) {
            return Err(GeometryError::InvalidStructure("metric matrix must be square".into()));
        }
        let pos = position_vars(p);
        for row in matrix {
            for entry in row {
                parse_with(entry, &pos)?;
            }
        }
        let mut terms = Vec::new();
        for i in 0..p {
            for j in 0..p {
                if i <= j {
                    let coeff = if i == j { String::new() } else { "2*".to_string() };
                    terms.push(format!("{}({})*s{}*s{}", coeff, matrix[i][j], i + 1, j + 1));
                }
            }
        }
        FinslerStructure::new(p, &terms.join(" + "), "riemannian")
    }

    /// `F = sqrt(a_ij(t) s^i s^j) + b_i(t) s^i`.
    pub fn randers(alpha: &[Vec<String>], beta: &[String]) -> GeometryResult<FinslerStructure> {
        let p = alpha.len();
        if alpha.iter().any(|r| r.len() != p) || beta.len() != p {
            return Err(GeometryError::InvalidStructure("Randers data must be p×p and p".into()));
        }
        let pos = position_vars(p);
        let alpha_e = alpha
            .iter()
            .map(|r| r.iter().map(|x| parse_with(x, &pos)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let beta_e = beta.iter().map(|x| parse_with(x, &pos)).collect::<Result<Vec<_>, _>>()?;
        let mut quad = Vec::new();
        for i in 0..p {
            for j in i..p {
                let coeff = if i == j { "" } else { "2*" };
                quad.push(format!("{}({})*s{}*s{}", coeff, alpha[i][j], i + 1, j + 1));
            }
        }
        let lin: Vec<String> = (0..p).map(|i| format!("({})*s{}", beta[i], i + 1)).collect();
        let text = format!("(sqrt({}) + {})^2", quad.join(" + "), lin.join(" + "));
        let mut fs = FinslerStructure::new(p, &text, "randers")?;
        fs.randers = Some(RandersParts { alpha: alpha_e, beta: beta_e });
        Ok(fs)
    }

    /// Euclidean `α` with the rotating covector `β = b (cos t2, sin t2, 0, …)`
    /// (`β = b` when `p = 1`).
    pub fn randers_standard(p: usize, b: f64) -> GeometryResult<FinslerStructure> {
        let alpha: Vec<Vec<String>> = (0..p)
            .map(|i| (0..p).map(|j| if i == j { "1".into() } else { "0".into() }).collect())
            .collect();
        let beta: Vec<String> = if p == 1 {
            vec![format!("{:?}", b)]
        } else {
            (0..p)
                .map(|i| match i {
                    0 => format!("{:?}*cos(t2)", b),
                    1 => format!("{:?}*sin(t2)", b),
                    _ => "0".into(),
                })
                .collect()
        };
        let mut fs = FinslerStructure::randers(&alpha, &beta)?;
        fs.label = format!("randers(b={})", b);
        Ok(fs)
    }

    /// Structure whose `F²` depends on the fiber only.
    pub fn locally_minkowski(p: usize, f_squared: &str) -> GeometryResult<FinslerStructure> {
        let fs = FinslerStructure::new(p, f_squared, "locally_minkowski")?;
        let t_names: Vec<String> = (1..=p).flat_map(|i| [format!("t{}", i), format!("x{}", i)]).collect();
        if fs.f_squared.variables().iter().any(|v| t_names.contains(v)) {
            return Err(GeometryError::InvalidStructure(
                "locally Minkowski F² must not depend on position".into(),
            ));
        }
        Ok(fs)
    }

    /// `F² = sqrt(Σ s_i⁴) + Σ s_i²`.
    pub fn quartic_minkowski(p: usize) -> GeometryResult<FinslerStructure> {
        let quartic = (1..=p).map(|i| format!("s{}^4", i)).collect::<Vec<_>>().join(" + ");
        let quad = (1..=p).map(|i| format!("s{}^2", i)).collect::<Vec<_>>().join(" + ");
        let mut fs = FinslerStructure::locally_minkowski(p, &format!("sqrt({}) + {}", quartic, quad))?;
        fs.label = format!("quartic_minkowski({})", p);
        Ok(fs)
    }

    /// Unit sphere in polar coordinates, `g = diag(1, sin² t1)`, `t1 ∈ [0.3, π - 0.3]`.
    pub fn round_sphere() -> GeometryResult<FinslerStructure> {
        let mut fs = FinslerStructure::new(2, "s1^2 + sin(t1)^2*s2^2", "round_sphere")?
            .with_domain(vec![(0.3, std::f64::consts::PI - 0.3), (-1e9, 1e9)])?;
        fs.label = "round_sphere".into();
        Ok(fs)
    }

    pub fn with_label(mut self, label: &str) -> FinslerStructure {
        self.label = label.to_string();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn f_squared_expr(&self) -> &Expr {
        &self.f_squared
    }

    pub fn f_squared_text(&self) -> &str {
        &self.text
    }

    pub fn domain(&self) -> Option<&[(f64, f64)]> {
        self.domain.as_deref()
    }

    pub fn is_randers(&self) -> bool {
        self.randers.is_some()
    }

    /// Dimension, domain and zero-section checks.
    pub fn check_point(&self, pt: &BasePoint) -> GeometryResult<()> {
        if pt.t.len() != self.dim || pt.s.len() != self.dim {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim,
                got: if pt.t.len() != self.dim { pt.t.len() } else { pt.s.len() },
            });
        }
        let norm = pt.s_norm();
        if !(norm >= EPSILON_ZERO_SECTION) {
            return Err(GeometryError::ZeroSection { norm });
        }
        if let Some(d) = &self.domain {
            for (i, (&x, &(lo, hi))) in pt.t.iter().zip(d).enumerate() {
                if !(x >= lo && x <= hi) {
                    return Err(GeometryError::OutsideDomain { coord: i, value: x, lo, hi });
                }
            }
        }
        Ok(())
    }

    /// Taylor expansion of `F²` at `pt` in the `2p` variables `(t, s)`.
    pub fn series(&self, pt: &BasePoint, order: usize) -> GeometryResult<TaylorValue> {
        self.check_point(pt)?;
        let n = 2 * self.dim;
        let vals = pt.values();
        let vars = (0..n)
            .map(|i| lift_variable(i, vals[i], n, order))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.f_squared.eval_series(&vars)?)
    }

    pub fn f_squared(&self, pt: &BasePoint) -> GeometryResult<f64> {
        self.check_point(pt)?;
        Ok(self.f_squared.eval(&pt.values())?)
    }

    /// `F = sqrt(F²)`.
    pub fn f(&self, pt: &BasePoint) -> GeometryResult<f64> {
        Ok(self.f_squared(pt)?.max(0.0).sqrt())
    }

    /// `‖β‖_α` at position `t` for Randers structures.
    pub fn randers_beta_norm(&self, t: &[f64]) -> GeometryResult<Option<f64>> {
        let Some(parts) = &self.randers else { return Ok(None) };
        let p = self.dim;
        let a = DMatrix::from_fn(p, p, |i, j| parts.alpha[i][j].eval(t).unwrap_or(f64::NAN));
        let b = nalgebra::DVector::from_fn(p, |i, _| parts.beta[i].eval(t).unwrap_or(f64::NAN));
        let ainv = a
            .try_inverse()
            .ok_or(GeometryError::SingularMetric { condition: f64::INFINITY })?;
        let q = (b.transpose() * ainv * b)[(0, 0)];
        Ok(Some(q.max(0.0).sqrt()))
    }
}

/// Fundamental tensor `g_ab = ½ ∂²F²/∂s^a∂s^b`.
pub fn metric_tensor(fs: &FinslerStructure, pt: &BasePoint) -> GeometryResult<Array2<f64>> {
    let f2 = fs.series(pt, 2)?;
    Ok(metric_from_series(&f2, fs.dim()))
}

pub(crate) fn metric_from_series(f2: &TaylorValue, p: usize) -> Array2<f64> {
    let mut g = Array2::zeros((p, p));
    let mut idx = vec![0usize; 2 * p];
    for a in 0..p {
        for b in a..p {
            idx.iter_mut().for_each(|x| *x = 0);
            idx[p + a] += 1;
            idx[p + b] += 1;
            let v = 0.5 * f2.partial_coeff(&idx).expect("order >= 2");
            g[[a, b]] = v;
            g[[b, a]] = v;
        }
    }
    g
}

/// Cartan tensor in lower and mixed (`C^b_{ae} = g^{bl} C_{lae}`) forms.
#[derive(Debug, Clone)]
pub struct CartanTensor {
    pub lower: Array3<f64>,
    pub mixed: Array3<f64>,
}

pub fn cartan_tensor(fs: &FinslerStructure, pt: &BasePoint) -> GeometryResult<CartanTensor> {
    let p = fs.dim();
    let f2 = fs.series(pt, 3)?;
    let g = metric_from_series(&f2, p);
    let ginv = invert(&g)?;
    let lower = cartan_from_series(&f2, p);
    let mixed = raise_first(&ginv, &lower);
    Ok(CartanTensor { lower, mixed })
}

pub(crate) fn cartan_from_series(f2: &TaylorValue, p: usize) -> Array3<f64> {
    let mut c = Array3::zeros((p, p, p));
    let mut idx = vec![0usize; 2 * p];
    for a in 0..p {
        for b in a..p {
            for d in b..p {
                idx.iter_mut().for_each(|x| *x = 0);
                idx[p + a] += 1;
                idx[p + b] += 1;
                idx[p + d] += 1;
                let v = 0.25 * f2.partial_coeff(&idx).expect("order >= 3");
                for (i, j, k) in [(a, b, d), (a, d, b), (b, a, d), (b, d, a), (d, a, b), (d, b, a)] {
                    c[[i, j, k]] = v;
                }
            }
        }
    }
    c
}

/// `out[i][j][k] = Σ_l m[i][l] t[l][j][k]`.
pub(crate) fn raise_first(m: &Array2<f64>, t: &Array3<f64>) -> Array3<f64> {
    let p = m.nrows();
    let (_, q, r) = t.dim();
    Array3::from_shape_fn((p, q, r), |(i, j, k)| (0..p).map(|l| m[[i, l]] * t[[l, j, k]]).sum())
}

pub(crate) fn invert(g: &Array2<f64>) -> GeometryResult<Array2<f64>> {
    let p = g.nrows();
    let m = DMatrix::from_fn(p, p, |i, j| g[[i, j]]);
    let sv = m.clone().svd(false, false).singular_values;
    let condition = if sv.min() > 0.0 { sv.max() / sv.min() } else { f64::INFINITY };
    if !(condition <= crate::jets::MAX_CONDITION) {
        return Err(GeometryError::SingularMetric { condition });
    }
    let inv = m.try_inverse().ok_or(GeometryError::SingularMetric { condition })?;
    Ok(Array2::from_shape_fn((p, p), |(i, j)| inv[(i, j)]))
}

pub fn min_eigenvalue(g: &Array2<f64>) -> f64 {
    let p = g.nrows();
    let m = DMatrix::from_fn(p, p, |i, j| g[[i, j]]);
    SymmetricEigen::new(m).eigenvalues.min()
}

/// Series-valued metric `g_ab(t, s)` and its inverse, truncated at `order - 2`.
pub(crate) fn metric_series(f2: &TaylorValue, p: usize) -> GeometryResult<(Vec<Vec<TaylorValue>>, Vec<Vec<TaylorValue>>)> {
    let ds: Vec<TaylorValue> = (0..p).map(|a| f2.derivative(p + a)).collect::<Result<_, _>>()?;
    let mut g: Vec<Vec<Option<TaylorValue>>> = vec![vec![None; p]; p];
    for a in 0..p {
        for b in a..p {
            let v = ds[a].derivative(p + b)?.scale(0.5);
            g[b][a] = Some(v.clone());
            g[a][b] = Some(v);
        }
    }
    let g: Vec<Vec<TaylorValue>> = g
        .into_iter()
        .map(|r| r.into_iter().map(|x| x.expect("filled")).collect())
        .collect();
    let ginv = taylor_matrix_inverse(&g).map_err(GeometryError::from_metric_inverse)?;
    Ok((g, ginv))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationTolerances {
    pub identity: f64,
    pub min_eigenvalue: f64,
}

impl Default for ValidationTolerances {
    fn default() -> Self {
        ValidationTolerances { identity: 1e-10, min_eigenvalue: MIN_EIGENVALUE }
    }
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub structure: String,
    pub samples: usize,
    pub checks: Vec<CheckOutcome>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Homogeneity, Euler identity, Cartan contractions, positive definiteness,
/// 0-homogeneity of `g` and (for Randers data) `‖β‖_α < 1` over the samples.
pub fn validate_structure(fs: &FinslerStructure, points: &[BasePoint], tol: ValidationTolerances) -> ValidationReport {
    let p = fs.dim();
    let lambdas = [0.5, 2.0, 7.0];
    let mut homog = 0.0f64;
    let mut euler = 0.0f64;
    let mut contraction = 0.0f64;
    let mut min_eig = f64::INFINITY;
    let mut g_homog = 0.0f64;
    let mut beta_norm: Option<f64> = None;
    let mut witness: Option<String> = None;
    let mut errors = Vec::new();

    for (k, pt) in points.iter().enumerate() {
        let mut run = || -> GeometryResult<()> {
            let f2s = fs.series(pt, 3)?;
            let f2 = f2s.value();
            for &l in &lambdas {
                let scaled = fs.f_squared(&pt.scaled(l))?;
                homog = homog.max((scaled - l * l * f2).abs() / f2.abs().max(1.0));
                let gl = metric_tensor(fs, &pt.scaled(l))?;
                let g0 = metric_from_series(&f2s, p);
                for (a, b) in gl.iter().zip(g0.iter()) {
                    g_homog = g_homog.max((a - b).abs() / b.abs().max(1.0));
                }
            }
            let g = metric_from_series(&f2s, p);
            let mut gss = 0.0;
            for a in 0..p {
                for b in 0..p {
                    gss += g[[a, b]] * pt.s[a] * pt.s[b];
                }
            }
            euler = euler.max(rel(f2, gss));
            let c = cartan_from_series(&f2s, p);
            let scale = c.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            for a in 0..p {
                for b in 0..p {
                    let cs: f64 = (0..p).map(|m| c[[a, b, m]] * pt.s[m]).sum();
                    contraction = contraction.max(cs.abs() / scale);
                }
            }
            let e = min_eigenvalue(&g);
            if e < min_eig {
                min_eig = e;
                if e < tol.min_eigenvalue {
                    witness = Some(format!("sample {} t={:?} s={:?}", k, pt.t, pt.s));
                }
            }
            if let Some(n) = fs.randers_beta_norm(&pt.t)? {
                beta_norm = Some(beta_norm.map_or(n, |m: f64| m.max(n)));
            }
            Ok(())
        };
        if let Err(e) = run() {
            errors.push(format!("sample {}: {}", k, e));
        }
    }

    let mut checks = vec![
        CheckOutcome::at_most("f2_homogeneity", homog, tol.identity),
        CheckOutcome::at_most("euler_identity", euler, tol.identity),
        CheckOutcome::at_most("cartan_contraction", contraction, tol.identity),
        CheckOutcome::at_most("metric_homogeneity", g_homog, tol.identity),
    ];
    let mut pd = CheckOutcome::at_least("positive_definite", min_eig, tol.min_eigenvalue);
    if let Some(w) = witness {
        pd = pd.with_note(format!("NotPositiveDefinite at {}", w));
    }
    checks.push(pd);
    if let Some(n) = beta_norm {
        let mut c = CheckOutcome::at_most("randers_beta_norm", n, 1.0);
        c.pass = n < 1.0;
        checks.push(c);
    }
    if !errors.is_empty() {
        checks.push(CheckOutcome::failed("evaluation", errors.join("; ")));
    }
    ValidationReport { structure: fs.label().to_string(), samples: points.len(), checks }
}

/// `Σ_b g_ab s^b`.
pub fn lower_index(g: &Array2<f64>, s: &[f64]) -> Array1<f64> {
    Array1::from_shape_fn(g.nrows(), |a| (0..s.len()).map(|b| g[[a, b]] * s[b]).sum())
}
