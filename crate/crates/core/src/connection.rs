//! Connection objects on the slit tangent bundle.
//!
//! [`BaseGeometry`] expands `F²` once at a point and derives every object by
//! series arithmetic:
//!
//! | object | formula | series order |
//! |---|---|---|
//! | `g`, `g⁻¹` | `½ ∂s∂s F²` | K-2 |
//! | `C_{abc}` | `½ ∂g_ab/∂s^c` | K-3 |
//! | `γ^m_{ab}` | formal Christoffel symbols | K-3 |
//! | `G^m` | `½ γ^m_{ab} s^a s^b` | K-3 |
//! | `N^c_a` | `∂G^c/∂s^a` | K-4 |
//! | `B^c_{ab}` | `∂N^c_a/∂s^b` | K-5 |
//! | `N^c_{a:b}` | `∂N^c_a/∂t^b + N^d_a B^c_{db} - N^c_g B^g_{ab}` | K-5 |
//!
//! Array layouts put the upper index first: `n[[c, a]] = N^c_a`,
//! `b[[c, a, b]] = B^c_{ab}`, `p[[a, b, g, e]] = P^a_{bge}`.

use ndarray::{Array1, Array2, Array3, Array4, ArrayD, IxDyn};

use crate::error::{GeometryError, GeometryResult};
use crate::expr::Expr;
use crate::finsler::{metric_series, BasePoint, FinslerStructure};
use crate::jets::{JetError, TaylorValue};
use crate::report::relative_residual;

/// Default truncation order for base-manifold expansions.
pub const DEFAULT_ORDER: usize = 6;

/// Relative agreement required between the spray formulas.
pub const SPRAY_TOLERANCE: f64 = 1e-8;
/// Relative agreement required for `N` and `Γ·s`.
pub const NLC_TOLERANCE: f64 = 1e-9;
/// Relative agreement required between the two Berwald formulas.
pub const BERWALD_TOLERANCE: f64 = 1e-8;

type S1 = Vec<TaylorValue>;
type S2 = Vec<Vec<TaylorValue>>;
type S3 = Vec<Vec<Vec<TaylorValue>>>;

fn sum(items: impl IntoIterator<Item = TaylorValue>) -> TaylorValue {
    let mut it = items.into_iter();
    let first = it.next().expect("non-empty sum");
    it.fold(first, |acc, x| acc + x)
}

fn need(order: usize, required: usize) -> GeometryResult<()> {
    if order < required {
        Err(GeometryError::Jet(JetError::OrderExceeded { requested: required, order }))
    } else {
        Ok(())
    }
}

/// Connection data at one point of the slit tangent bundle.
#[derive(Debug, Clone)]
pub struct BaseGeometry {
    p: usize,
    order: usize,
    point: BasePoint,
    f2: TaylorValue,
    g: S2,
    ginv: S2,
    cartan: S3,
    dg_dt: S3,
    gamma: S3,
    spray: S1,
    n: Option<S2>,
    b: Option<S3>,
    n_colon: Option<S3>,
}

impl BaseGeometry {
    /// Expands `F²` at `pt` to `order` (at least 3) and derives the
    /// connection tables that fit in that budget.
    pub fn new(fs: &FinslerStructure, pt: &BasePoint, order: usize) -> GeometryResult<BaseGeometry> {
        need(order, 3)?;
        let p = fs.dim();
        let f2 = fs.series(pt, order)?;
        let (g, ginv) = metric_series(&f2, p)?;
        let k3 = order - 3;

        let mut cartan: S3 = vec![vec![Vec::with_capacity(p); p]; p];
        let mut dg_dt: S3 = vec![vec![Vec::with_capacity(p); p]; p];
        let dg_ds: S3 = (0..p)
            .map(|a| (0..p).map(|b| (0..p).map(|c| g[a][b].derivative(p + c)).collect::<Result<Vec<_>, _>>()).collect::<Result<Vec<_>, _>>())
            .collect::<Result<_, _>>()?;
        for a in 0..p {
            for b in 0..p {
                for c in 0..p {
                    // C is totally symmetric; read it from the sorted index triple
                    let mut idx = [a, b, c];
                    idx.sort_unstable();
                    cartan[a][b].push(dg_ds[idx[0]][idx[1]][idx[2]].scale(0.5));
                }
            }
        }
        for e in 0..p {
            for a in 0..p {
                for b in 0..p {
                    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                    dg_dt[e][a].push(g[lo][hi].derivative(e)?);
                }
            }
        }
        let ginv3: S2 = ginv.iter().map(|r| r.iter().map(|x| x.truncate(k3)).collect()).collect();
        let mut gamma: S3 = vec![vec![Vec::new(); p]; p];
        for m in 0..p {
            let mut tab: Vec<Vec<Option<TaylorValue>>> = vec![vec![None; p]; p];
            for a in 0..p {
                for b in a..p {
                    let v = sum((0..p).map(|e| {
                        let bracket = &(&dg_dt[b][e][a] + &dg_dt[a][e][b]) - &dg_dt[e][a][b];
                        &ginv3[m][e] * &bracket
                    }))
                    .scale(0.5);
                    tab[b][a] = Some(v.clone());
                    tab[a][b] = Some(v);
                }
            }
            gamma[m] = tab.into_iter().map(|r| r.into_iter().map(|x| x.expect("filled")).collect()).collect();
        }
        let s_series: S1 = (0..p)
            .map(|c| TaylorValue::variable(p + c, pt.s[c], 2 * p, k3))
            .collect::<Result<_, _>>()?;
        let spray: S1 = (0..p)
            .map(|m| {
                sum((0..p).flat_map(|a| {
                    let gamma = &gamma;
                    let s_series = &s_series;
                    (0..p).map(move |b| &(&gamma[m][a][b] * &s_series[a]) * &s_series[b])
                }))
                .scale(0.5)
            })
            .collect();

        let n: Option<S2> = if order >= 4 {
            Some(
                (0..p)
                    .map(|c| (0..p).map(|a| spray[c].derivative(p + a)).collect::<Result<Vec<_>, _>>())
                    .collect::<Result<_, _>>()?,
            )
        } else {
            None
        };
        let (b, n_colon) = if order >= 5 {
            let nn = n.as_ref().expect("order >= 4");
            let mut b: S3 = Vec::with_capacity(p);
            for c in 0..p {
                let mut tab: Vec<Vec<Option<TaylorValue>>> = vec![vec![None; p]; p];
                for a in 0..p {
                    for bb in a..p {
                        let v = nn[c][a].derivative(p + bb)?;
                        tab[bb][a] = Some(v.clone());
                        tab[a][bb] = Some(v);
                    }
                }
                b.push(tab.into_iter().map(|r| r.into_iter().map(|x| x.expect("filled")).collect()).collect());
            }
            let k5 = order - 5;
            let n5: S2 = nn.iter().map(|r| r.iter().map(|x| x.truncate(k5)).collect()).collect();
            let mut ncol: S3 = Vec::with_capacity(p);
            for c in 0..p {
                let mut rows = Vec::with_capacity(p);
                for a in 0..p {
                    let mut row = Vec::with_capacity(p);
                    for bb in 0..p {
                        let dt = nn[c][a].derivative(bb)?;
                        let plus = sum((0..p).map(|d| &n5[d][a] * &b[c][d][bb]));
                        let minus = sum((0..p).map(|gm| &n5[c][gm] * &b[gm][a][bb]));
                        row.push(&(&dt + &plus) - &minus);
                    }
                    rows.push(row);
                }
                ncol.push(rows);
            }
            (Some(b), Some(ncol))
        } else {
            (None, None)
        };

        Ok(BaseGeometry {
            p,
            order,
            point: pt.clone(),
            f2,
            g,
            ginv,
            cartan,
            dg_dt,
            gamma,
            spray,
            n,
            b,
            n_colon,
        })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn point(&self) -> &BasePoint {
        &self.point
    }

    pub fn f_squared_series(&self) -> &TaylorValue {
        &self.f2
    }

    fn v2(&self, t: &S2) -> Array2<f64> {
        Array2::from_shape_fn((self.p, self.p), |(i, j)| t[i][j].value())
    }

    fn v3(&self, t: &S3) -> Array3<f64> {
        Array3::from_shape_fn((self.p, self.p, self.p), |(i, j, k)| t[i][j][k].value())
    }

    /// `out[[i, j, k, v]] = ∂t[i][j][k]/∂x_v` with `v` a `t` slot (`fiber = false`) or `s` slot.
    fn grad3(&self, t: &S3, fiber: bool) -> Array4<f64> {
        let off = if fiber { self.p } else { 0 };
        Array4::from_shape_fn((self.p, self.p, self.p, self.p), |(i, j, k, v)| t[i][j][k].gradient(off + v))
    }

    pub fn metric(&self) -> Array2<f64> {
        self.v2(&self.g)
    }

    pub fn metric_inv(&self) -> Array2<f64> {
        self.v2(&self.ginv)
    }

    pub fn metric_series(&self) -> &[Vec<TaylorValue>] {
        &self.g
    }

    pub fn metric_inv_series(&self) -> &[Vec<TaylorValue>] {
        &self.ginv
    }

    /// Lower Cartan tensor `C_{abc}`.
    pub fn cartan(&self) -> Array3<f64> {
        self.v3(&self.cartan)
    }

    pub fn cartan_series(&self) -> &[Vec<Vec<TaylorValue>>] {
        &self.cartan
    }

    /// `C^b_{ae} = g^{bl} C_{lae}`.
    pub fn cartan_mixed(&self) -> Array3<f64> {
        let gi = self.metric_inv();
        let c = self.cartan();
        crate::finsler::raise_first(&gi, &c)
    }

    /// `∂g_{ab}/∂t^e` as `[[e, a, b]]`.
    pub fn metric_dt(&self) -> Array3<f64> {
        self.v3(&self.dg_dt)
    }

    pub fn formal_christoffel(&self) -> Array3<f64> {
        self.v3(&self.gamma)
    }

    pub fn spray(&self) -> Array1<f64> {
        Array1::from_shape_fn(self.p, |m| self.spray[m].value())
    }

    pub fn spray_series(&self) -> &[TaylorValue] {
        &self.spray
    }

    fn n_series(&self) -> GeometryResult<&S2> {
        need(self.order, 4)?;
        Ok(self.n.as_ref().expect("order >= 4"))
    }

    fn b_series(&self) -> GeometryResult<&S3> {
        need(self.order, 5)?;
        Ok(self.b.as_ref().expect("order >= 5"))
    }

    fn ncol_series(&self) -> GeometryResult<&S3> {
        need(self.order, 5)?;
        Ok(self.n_colon.as_ref().expect("order >= 5"))
    }

    pub fn nonlinear_series(&self) -> GeometryResult<&[Vec<TaylorValue>]> {
        Ok(self.n_series()?)
    }

    pub fn berwald_series(&self) -> GeometryResult<&[Vec<Vec<TaylorValue>>]> {
        Ok(self.b_series()?)
    }

    pub fn n_colon_series(&self) -> GeometryResult<&[Vec<Vec<TaylorValue>>]> {
        Ok(self.ncol_series()?)
    }

    /// Nonlinear connection `N^c_a = ∂G^c/∂s^a`.
    pub fn nonlinear(&self) -> GeometryResult<Array2<f64>> {
        Ok(self.v2(self.n_series()?))
    }

    /// `∂N^c_a/∂t^e` as `[[c, a, e]]`.
    pub fn nonlinear_dt(&self) -> GeometryResult<Array3<f64>> {
        let n = self.n_series()?;
        need(self.order, 5)?;
        Ok(Array3::from_shape_fn((self.p, self.p, self.p), |(c, a, e)| n[c][a].gradient(e)))
    }

    /// Berwald coefficients `B^c_{ab} = ∂²G^c/∂s^a∂s^b`.
    pub fn berwald(&self) -> GeometryResult<Array3<f64>> {
        Ok(self.v3(self.b_series()?))
    }

    /// `∂B^c_{ab}/∂t^e`.
    pub fn berwald_dt(&self) -> GeometryResult<Array4<f64>> {
        need(self.order, 6)?;
        Ok(self.grad3(self.b_series()?, false))
    }

    /// Berwald curvature `P^c_{abe} = ∂B^c_{ab}/∂s^e`.
    pub fn berwald_p(&self) -> GeometryResult<Array4<f64>> {
        need(self.order, 6)?;
        Ok(self.grad3(self.b_series()?, true))
    }

    pub fn n_colon(&self) -> GeometryResult<Array3<f64>> {
        Ok(self.v3(self.ncol_series()?))
    }

    /// `∂N^c_{a:b}/∂t^e`.
    pub fn n_colon_dt(&self) -> GeometryResult<Array4<f64>> {
        need(self.order, 6)?;
        Ok(self.grad3(self.ncol_series()?, false))
    }

    /// `∂N^c_{a:b}/∂s^e`.
    pub fn n_colon_ds(&self) -> GeometryResult<Array4<f64>> {
        need(self.order, 6)?;
        Ok(self.grad3(self.ncol_series()?, true))
    }

    /// Spray from the Euler–Lagrange form `g^{cm}/4 (∂²F²/∂s^m∂t^v s^v - ∂F²/∂t^m)`.
    pub fn spray_euler(&self) -> Array1<f64> {
        let p = self.p;
        let gi = self.metric_inv();
        let s = &self.point.s;
        let mut idx = vec![0usize; 2 * p];
        let mut bracket = vec![0.0; p];
        for (m, slot) in bracket.iter_mut().enumerate() {
            let mut acc = 0.0;
            for v in 0..p {
                idx.iter_mut().for_each(|x| *x = 0);
                idx[p + m] = 1;
                idx[v] += 1;
                acc += self.f2.partial_coeff(&idx).expect("order >= 2") * s[v];
            }
            idx.iter_mut().for_each(|x| *x = 0);
            idx[m] = 1;
            *slot = acc - self.f2.partial_coeff(&idx).expect("order >= 1");
        }
        Array1::from_shape_fn(p, |c| 0.25 * (0..p).map(|m| gi[[c, m]] * bracket[m]).sum::<f64>())
    }

    /// `N^b_a = γ^b_{ae} s^e - C^b_{ae} γ^e_{mn} s^m s^n`.
    pub fn cartan_nlc(&self) -> Array2<f64> {
        let p = self.p;
        let s = &self.point.s;
        let gam = self.formal_christoffel();
        let cm = self.cartan_mixed();
        let gss: Vec<f64> = (0..p)
            .map(|e| (0..p).flat_map(|m| (0..p).map(move |n| (m, n))).map(|(m, n)| gam[[e, m, n]] * s[m] * s[n]).sum())
            .collect();
        Array2::from_shape_fn((p, p), |(b, a)| {
            let first: f64 = (0..p).map(|e| gam[[b, a, e]] * s[e]).sum();
            let second: f64 = (0..p).map(|e| cm[[b, a, e]] * gss[e]).sum();
            first - second
        })
    }

    /// `δg_{ab}/δt^c` as `[[a, b, c]]`.
    fn metric_delta(&self) -> GeometryResult<Array3<f64>> {
        let p = self.p;
        let n = self.nonlinear()?;
        let dgt = self.metric_dt();
        let c = self.cartan();
        Ok(Array3::from_shape_fn((p, p, p), |(a, b, g)| {
            dgt[[g, a, b]] - (0..p).map(|e| n[[e, g]] * 2.0 * c[[a, b, e]]).sum::<f64>()
        }))
    }

    /// Generalized (Rund) Christoffel symbols from `δg/δt`.
    pub fn rund_christoffel(&self) -> GeometryResult<Array3<f64>> {
        let p = self.p;
        let dg = self.metric_delta()?;
        let gi = self.metric_inv();
        let mut out = Array3::zeros((p, p, p));
        for c in 0..p {
            for a in 0..p {
                for b in a..p {
                    let v = 0.5
                        * (0..p)
                            .map(|m| gi[[c, m]] * (dg[[m, a, b]] + dg[[m, b, a]] - dg[[a, b, m]]))
                            .sum::<f64>();
                    out[[c, a, b]] = v;
                    out[[c, b, a]] = v;
                }
            }
        }
        Ok(out)
    }

    /// `C^c_{ab|m}` as `[[c, a, b, m]]`.
    pub fn cartan_h_derivative(&self) -> GeometryResult<Array4<f64>> {
        need(self.order, 4)?;
        let p = self.p;
        let k3 = self.order - 3;
        let n = self.nonlinear()?;
        let gam = self.rund_christoffel()?;
        let mixed: S3 = (0..p)
            .map(|c| {
                (0..p)
                    .map(|a| {
                        (0..p)
                            .map(|b| sum((0..p).map(|l| &self.ginv[c][l].truncate(k3) * &self.cartan[l][a][b])))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let cm = self.v3(&mixed);
        Ok(Array4::from_shape_fn((p, p, p, p), |(c, a, b, m)| {
            let delta = mixed[c][a][b].gradient(m) - (0..p).map(|e| n[[e, m]] * mixed[c][a][b].gradient(p + e)).sum::<f64>();
            let mut acc = delta;
            for e in 0..p {
                acc += cm[[e, a, b]] * gam[[c, e, m]] - cm[[c, e, b]] * gam[[e, a, m]] - cm[[c, a, e]] * gam[[e, b, m]];
            }
            acc
        }))
    }

    /// Berwald coefficients from `Γ + C_{|0}`.
    pub fn berwald_eq_b(&self) -> GeometryResult<Array3<f64>> {
        let p = self.p;
        let gam = self.rund_christoffel()?;
        let ch = self.cartan_h_derivative()?;
        let s = &self.point.s;
        Ok(Array3::from_shape_fn((p, p, p), |(c, a, b)| {
            gam[[c, a, b]] + (0..p).map(|m| ch[[c, a, b, m]] * s[m]).sum::<f64>()
        }))
    }

    /// Berwald torsion `R^a_{bg} = δN^a_b/δt^g - δN^a_g/δt^b`.
    pub fn berwald_torsion(&self) -> GeometryResult<Array3<f64>> {
        let p = self.p;
        let ndt = self.nonlinear_dt()?;
        let n = self.nonlinear()?;
        let b = self.berwald()?;
        let delta = Array3::from_shape_fn((p, p, p), |(a, bb, g)| {
            ndt[[a, bb, g]] - (0..p).map(|d| n[[d, g]] * b[[a, bb, d]]).sum::<f64>()
        });
        Ok(Array3::from_shape_fn((p, p, p), |(a, bb, g)| delta[[a, bb, g]] - delta[[a, g, bb]]))
    }

    /// `δB^a_{bg}/δt^e` as `[[a, b, g, e]]`.
    pub fn berwald_delta(&self) -> GeometryResult<Array4<f64>> {
        let p = self.p;
        let bdt = self.berwald_dt()?;
        let pp = self.berwald_p()?;
        let n = self.nonlinear()?;
        Ok(Array4::from_shape_fn((p, p, p, p), |(a, b, g, e)| {
            bdt[[a, b, g, e]] - (0..p).map(|c| n[[c, e]] * pp[[a, b, g, c]]).sum::<f64>()
        }))
    }

    /// Berwald curvature `R^a_{bge}`.
    pub fn berwald_curvature(&self) -> GeometryResult<Array4<f64>> {
        let p = self.p;
        let db = self.berwald_delta()?;
        let b = self.berwald()?;
        let h = Array4::from_shape_fn((p, p, p, p), |(a, bb, g, e)| {
            db[[a, bb, g, e]] + (0..p).map(|m| b[[m, bb, g]] * b[[a, m, e]]).sum::<f64>()
        });
        Ok(Array4::from_shape_fn((p, p, p, p), |(a, bb, g, e)| h[[a, bb, g, e]] - h[[a, bb, e, g]]))
    }

    /// Relative residuals of the dual-formula identities.
    pub fn dual_checks(&self) -> GeometryResult<DualChecks> {
        let p = self.p;
        let s = &self.point.s;
        let g_spray = self.spray();
        let g_euler = self.spray_euler();
        let n = self.nonlinear()?;
        let n_cartan = self.cartan_nlc();
        let gam = self.rund_christoffel()?;
        let gs = Array2::from_shape_fn((p, p), |(c, a)| (0..p).map(|m| gam[[c, a, m]] * s[m]).sum::<f64>());
        let two_g: Vec<f64> = g_spray.iter().map(|x| 2.0 * x).collect();
        let ns: Vec<f64> = (0..p).map(|c| (0..p).map(|a| n[[c, a]] * s[a]).sum()).collect();
        let berwald = if self.order >= 5 {
            let b = self.berwald()?;
            let b_eq = self.berwald_eq_b()?;
            Some(relative_residual(b.iter().zip(b_eq.iter())))
        } else {
            None
        };
        Ok(DualChecks {
            spray: relative_residual(g_spray.iter().zip(g_euler.iter())),
            cartan_nlc: relative_residual(n.iter().zip(n_cartan.iter())),
            n_gamma_s: relative_residual(n.iter().zip(gs.iter())),
            two_g_ns: relative_residual(two_g.iter().zip(ns.iter())),
            berwald,
        })
    }
}

/// Relative residuals: spray formulas, `N` vs the Cartan form, `N` vs `Γ·s`,
/// `2G` vs `N·s`, and the two Berwald formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualChecks {
    pub spray: f64,
    pub cartan_nlc: f64,
    pub n_gamma_s: f64,
    pub two_g_ns: f64,
    pub berwald: Option<f64>,
}

impl DualChecks {
    pub fn max(&self) -> f64 {
        [self.spray, self.cartan_nlc, self.n_gamma_s, self.two_g_ns, self.berwald.unwrap_or(0.0)]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

pub fn formal_christoffel(fs: &FinslerStructure, pt: &BasePoint) -> GeometryResult<Array3<f64>> {
    Ok(BaseGeometry::new(fs, pt, 3)?.formal_christoffel())
}

/// Spray `G^m = ½ γ^m_{ab} s^a s^b`, checked against the Euler–Lagrange form.
pub fn spray(fs: &FinslerStructure, pt: &BasePoint) -> GeometryResult<Array1<f64>> {
    let geo = BaseGeometry::new(fs, pt, 3)?;
    let g = geo.spray();
    let residual = relative_residual(g.iter().zip(geo.spray_euler().iter()));
    if residual > SPRAY_TOLERANCE {
        return Err(GeometryError::SprayMismatch { residual });
    }
    Ok(g)
}

/// Nonlinear Cartan connection, checked against `∂G/∂s`.
pub fn nonlinear_cartan(fs: &FinslerStructure, pt: &BasePoint) -> GeometryResult<Array2<f64>> {
    let geo = BaseGeometry::new(fs, pt, 4)?;
    let n = geo.cartan_nlc();
    let residual = relative_residual(n.iter().zip(geo.nonlinear()?.iter()));
    if residual > NLC_TOLERANCE {
        return Err(GeometryError::CrossCheckFailure { what: "nonlinear connection".into(), residual });
    }
    Ok(n)
}

/// Generalized Christoffel symbols, checked against `N = Γ·s`.
pub fn generalized_christoffel(fs: &FinslerStructure, pt: &BasePoint) -> GeometryResult<Array3<f64>> {
    let geo = BaseGeometry::new(fs, pt, 4)?;
    let residual = geo.dual_checks()?.n_gamma_s;
    if residual > NLC_TOLERANCE {
        return Err(GeometryError::CrossCheckFailure { what: "N = Γ·s".into(), residual });
    }
    geo.rund_christoffel()
}

/// Berwald coefficients from `∂²G/∂s∂s`, checked against `Γ + C_{|0}`.
pub fn berwald_coeffs(fs: &FinslerStructure, pt: &BasePoint) -> GeometryResult<Array3<f64>> {
    let geo = BaseGeometry::new(fs, pt, 5)?;
    let b = geo.berwald()?;
    let residual = relative_residual(b.iter().zip(geo.berwald_eq_b()?.iter()));
    if residual > BERWALD_TOLERANCE {
        return Err(GeometryError::CrossCheckFailure { what: "Berwald coefficients".into(), residual });
    }
    Ok(b)
}

#[derive(Debug, Clone)]
pub struct BerwaldTensors {
    /// `R^a_{bg}`
    pub torsion: Array3<f64>,
    /// `R^a_{bge}`
    pub curvature: Array4<f64>,
    /// `P^a_{bge}`
    pub p: Array4<f64>,
}

pub fn berwald_torsion_curvature(fs: &FinslerStructure, pt: &BasePoint) -> GeometryResult<BerwaldTensors> {
    let geo = BaseGeometry::new(fs, pt, DEFAULT_ORDER)?;
    Ok(BerwaldTensors {
        torsion: geo.berwald_torsion()?,
        curvature: geo.berwald_curvature()?,
        p: geo.berwald_p()?,
    })
}

/// Fields accepted by [`rund_h_covariant`].
#[derive(Debug, Clone)]
pub enum TensorField {
    /// `g_{ab|c}`, layout `[[a, b, c]]`
    Metric,
    /// `s^a_{|c}`, layout `[[a, c]]`
    Fiber,
    /// `F_{|c}`, layout `[[c]]`
    Norm,
    /// `C^c_{ab|m}`, layout `[[c, a, b, m]]`
    CartanMixed,
    /// `f_{|c}` for a scalar expression in `(t, s)`
    Scalar(Expr),
}

impl TensorField {
    pub fn from_name(name: &str) -> GeometryResult<TensorField> {
        match name {
            "g" | "metric" => Ok(TensorField::Metric),
            "s" | "fiber" => Ok(TensorField::Fiber),
            "F" | "norm" => Ok(TensorField::Norm),
            "C" | "cartan" => Ok(TensorField::CartanMixed),
            other => Err(GeometryError::UnsupportedVariance(other.to_string())),
        }
    }
}

/// Horizontal covariant derivative of the Rund connection.
pub fn rund_h_covariant(fs: &FinslerStructure, pt: &BasePoint, field: &TensorField) -> GeometryResult<ArrayD<f64>> {
    let geo = BaseGeometry::new(fs, pt, 4)?;
    let p = geo.dim();
    let n = geo.nonlinear()?;
    let gam = geo.rund_christoffel()?;
    let delta_scalar = |f: &TaylorValue| -> Vec<f64> {
        (0..p)
            .map(|c| f.gradient(c) - (0..p).map(|e| n[[e, c]] * f.gradient(p + e)).sum::<f64>())
            .collect()
    };
    Ok(match field {
        TensorField::Metric => {
            let dg = geo.metric_delta()?;
            let g = geo.metric();
            let out = Array3::from_shape_fn((p, p, p), |(a, b, c)| {
                dg[[a, b, c]]
                    - (0..p).map(|e| g[[e, b]] * gam[[e, a, c]] + g[[a, e]] * gam[[e, b, c]]).sum::<f64>()
            });
            out.into_dyn()
        }
        TensorField::Fiber => {
            let s = &pt.s;
            Array2::from_shape_fn((p, p), |(a, c)| -n[[a, c]] + (0..p).map(|e| gam[[a, e, c]] * s[e]).sum::<f64>())
                .into_dyn()
        }
        TensorField::Norm => {
            let f = geo.f_squared_series().truncate(1).sqrt()?;
            ArrayD::from_shape_vec(IxDyn(&[p]), delta_scalar(&f)).expect("shape")
        }
        TensorField::CartanMixed => geo.cartan_h_derivative()?.into_dyn(),
        TensorField::Scalar(e) => {
            let vals = pt.values();
            let vars = (0..2 * p)
                .map(|i| TaylorValue::variable(i, vals[i], 2 * p, 1))
                .collect::<Result<Vec<_>, _>>()?;
            let f = e.eval_series(&vars)?;
            ArrayD::from_shape_vec(IxDyn(&[p]), delta_scalar(&f)).expect("shape")
        }
    })
}
