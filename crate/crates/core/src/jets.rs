//! Truncated multivariate Taylor arithmetic.
//!
//! A [`TaylorValue`] stores the Taylor coefficients `∂^m f / m!` of a scalar
//! function at a base point, for every multi-index `m` of total degree at most
//! the truncation order. Coefficients live in a dense array ranked by
//! [`Layout`]: monomials are sorted by total degree, so the layout of order
//! `k - 1` is a prefix of the layout of order `k` and truncation is a slice.
//!
//! Layouts (monomial tables, product triples, derivative maps) are built once
//! per `(num_vars, order)` and shared through a process-wide cache.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use thiserror::Error;

/// Constant terms smaller than this are rejected by division and fractional powers.
pub const EPSILON_DIV: f64 = 1e-12;

/// Condition-number ceiling for [`taylor_matrix_inverse`].
pub const MAX_CONDITION: f64 = 1e12;

const MAX_MONOMIALS: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JetError {
    #[error("variable index {index} out of range for {num_vars} variables")]
    IndexOutOfRange { index: usize, num_vars: usize },
    #[error("operand mismatch: {left_vars} vars / order {left_order} vs {right_vars} vars / order {right_order}")]
    ShapeMismatch {
        left_vars: usize,
        left_order: usize,
        right_vars: usize,
        right_order: usize,
    },
    #[error("division by near-zero constant term {0:e}")]
    DivisionNearZero(f64),
    #[error("{function} is not defined for constant term {value}")]
    Domain { function: &'static str, value: f64 },
    #[error("derivative of total order {requested} exceeds truncation order {order}")]
    OrderExceeded { requested: usize, order: usize },
    #[error("singular matrix (condition number {condition:e})")]
    SingularMatrix { condition: f64 },
    #[error("multi-index of length {got} does not match {expected} variables")]
    MultiIndexLength { got: usize, expected: usize },
    #[error("{monomials} coefficients exceed the dense storage limit")]
    TooLarge { monomials: usize },
}

pub type JetResult<T> = Result<T, JetError>;

/// Ranked monomial table for a given variable count and truncation order.
#[derive(Debug)]
pub struct Layout {
    num_vars: usize,
    order: usize,
    monomials: Vec<Vec<u8>>,
    degree_start: Vec<usize>,
    index: HashMap<Vec<u8>, usize>,
    // (i, j, k) with m_i + m_j = m_k, sorted by k.
    products: Vec<(u32, u32, u32)>,
    product_start: Vec<usize>,
    // per variable: (source, target, factor) for the shifted derivative.
    derivatives: Vec<Vec<(u32, u32, f64)>>,
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

fn monomials_of_degree(num_vars: usize, degree: usize, out: &mut Vec<Vec<u8>>) {
    fn rec(prefix: &mut Vec<u8>, remaining: usize, slots: usize, out: &mut Vec<Vec<u8>>) {
        if slots == 1 {
            prefix.push(remaining as u8);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e as u8);
            rec(prefix, remaining - e, slots - 1, out);
            prefix.pop();
        }
    }
    if num_vars == 0 {
        if degree == 0 {
            out.push(Vec::new());
        }
        return;
    }
    rec(&mut Vec::with_capacity(num_vars), degree, num_vars, out);
}

impl Layout {
    fn build(num_vars: usize, order: usize) -> JetResult<Layout> {
        let count = binomial(num_vars + order, order);
        if count > MAX_MONOMIALS as f64 {
            return Err(JetError::TooLarge { monomials: count as usize });
        }
        let mut monomials = Vec::with_capacity(count as usize);
        let mut degree_start = Vec::with_capacity(order + 2);
        for d in 0..=order {
            degree_start.push(monomials.len());
            monomials_of_degree(num_vars, d, &mut monomials);
        }
        degree_start.push(monomials.len());
        let index: HashMap<Vec<u8>, usize> = monomials
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();

        let degree_of = |i: usize| -> usize { monomials[i].iter().map(|&e| e as usize).sum() };
        let mut products = Vec::new();
        let mut sum = vec![0u8; num_vars];
        for i in 0..monomials.len() {
            let di = degree_of(i);
            let limit = degree_start[order - di + 1];
            for j in 0..limit {
                for v in 0..num_vars {
                    sum[v] = monomials[i][v] + monomials[j][v];
                }
                let k = index[&sum];
                products.push((i as u32, j as u32, k as u32));
            }
        }
        products.sort_by_key(|&(i, j, k)| (k, i, j));
        let mut product_start = vec![0usize; monomials.len() + 1];
        for &(_, _, k) in &products {
            product_start[k as usize + 1] += 1;
        }
        for k in 0..monomials.len() {
            product_start[k + 1] += product_start[k];
        }

        let mut derivatives = vec![Vec::new(); num_vars];
        for (src, m) in monomials.iter().enumerate() {
            for (v, table) in derivatives.iter_mut().enumerate() {
                if m[v] == 0 {
                    continue;
                }
                let mut lowered = m.clone();
                lowered[v] -= 1;
                let dst = index[&lowered];
                table.push((src as u32, dst as u32, m[v] as f64));
            }
        }

        Ok(Layout {
            num_vars,
            order,
            monomials,
            degree_start,
            index,
            products,
            product_start,
            derivatives,
        })
    }

    /// Shared layout for `(num_vars, order)`.
    pub fn get(num_vars: usize, order: usize) -> JetResult<Arc<Layout>> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Layout>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(l) = cache.lock().expect("layout cache poisoned").get(&(num_vars, order)) {
            return Ok(l.clone());
        }
        let built = Arc::new(Layout::build(num_vars, order)?);
        let mut guard = cache.lock().expect("layout cache poisoned");
        Ok(guard.entry((num_vars, order)).or_insert(built).clone())
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn monomial(&self, i: usize) -> &[u8] {
        &self.monomials[i]
    }

    /// Number of monomials of total degree `<= degree`.
    pub fn prefix_len(&self, degree: usize) -> usize {
        self.degree_start[degree.min(self.order) + 1]
    }

    pub fn position(&self, multi_index: &[u8]) -> Option<usize> {
        self.index.get(multi_index).copied()
    }
}

/// Exact rational exponent for [`TaylorValue::pow_rational`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rational {
    num: i64,
    den: i64,
}

impl Rational {
    pub fn new(num: i64, den: i64) -> Rational {
        assert!(den != 0, "zero denominator");
        fn gcd(a: i64, b: i64) -> i64 {
            if b == 0 {
                a.abs()
            } else {
                gcd(b, a % b)
            }
        }
        let g = gcd(num, den).max(1);
        let sign = if den < 0 { -1 } else { 1 };
        Rational {
            num: sign * num / g,
            den: sign * den / g,
        }
    }

    pub fn integer(n: i64) -> Rational {
        Rational { num: n, den: 1 }
    }

    pub fn num(&self) -> i64 {
        self.num
    }

    pub fn den(&self) -> i64 {
        self.den
    }

    pub fn is_integer(&self) -> bool {
        self.den == 1
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Truncated Taylor expansion of a scalar function at a base point.
#[derive(Clone)]
pub struct TaylorValue {
    layout: Arc<Layout>,
    coeffs: Vec<f64>,
}

impl fmt::Debug for TaylorValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<_> = self
            .terms()
            .map(|(m, c)| format!("{:?}:{}", m, c))
            .collect();
        write!(
            f,
            "TaylorValue(vars={}, order={}, {{{}}})",
            self.num_vars(),
            self.order(),
            terms.join(", ")
        )
    }
}

impl PartialEq for TaylorValue {
    fn eq(&self, other: &Self) -> bool {
        self.num_vars() == other.num_vars()
            && self.order() == other.order()
            && self.coeffs == other.coeffs
    }
}

impl TaylorValue {
    pub fn constant(value: f64, num_vars: usize, order: usize) -> JetResult<TaylorValue> {
        let layout = Layout::get(num_vars, order)?;
        let mut coeffs = vec![0.0; layout.len()];
        coeffs[0] = value;
        Ok(TaylorValue { layout, coeffs })
    }

    pub fn zero(num_vars: usize, order: usize) -> JetResult<TaylorValue> {
        TaylorValue::constant(0.0, num_vars, order)
    }

    /// Expansion of the coordinate function `x_var` around `value`.
    pub fn variable(var: usize, value: f64, num_vars: usize, order: usize) -> JetResult<TaylorValue> {
        if var >= num_vars {
            return Err(JetError::IndexOutOfRange { index: var, num_vars });
        }
        let mut out = TaylorValue::constant(value, num_vars, order)?;
        if order >= 1 {
            // degree-1 monomials are ranked with the highest exponent in the first slot
            out.coeffs[1 + var] = 1.0;
        }
        Ok(out)
    }

    /// Builds a series from explicit `(multi-index, coefficient)` pairs.
    pub fn from_terms<I>(num_vars: usize, order: usize, terms: I) -> JetResult<TaylorValue>
    where
        I: IntoIterator<Item = (Vec<u8>, f64)>,
    {
        let mut out = TaylorValue::zero(num_vars, order)?;
        for (m, c) in terms {
            if m.len() != num_vars {
                return Err(JetError::MultiIndexLength { got: m.len(), expected: num_vars });
            }
            let deg: usize = m.iter().map(|&e| e as usize).sum();
            if deg > order {
                return Err(JetError::OrderExceeded { requested: deg, order });
            }
            let pos = out.layout.position(&m).expect("multi-index within order");
            out.coeffs[pos] += c;
        }
        Ok(out)
    }

    fn with_layout(&self, coeffs: Vec<f64>) -> TaylorValue {
        TaylorValue { layout: self.layout.clone(), coeffs }
    }

    pub fn num_vars(&self) -> usize {
        self.layout.num_vars
    }

    pub fn order(&self) -> usize {
        self.layout.order
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    /// Value at the base point.
    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Stored (Taylor-scaled) coefficient of a monomial; zero when beyond the order.
    pub fn coefficient(&self, multi_index: &[u8]) -> f64 {
        self.layout
            .position(multi_index)
            .map(|p| self.coeffs[p])
            .unwrap_or(0.0)
    }

    /// Non-zero `(multi-index, coefficient)` pairs in rank order.
    pub fn terms(&self) -> impl Iterator<Item = (&[u8], f64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(move |(i, c)| (self.layout.monomial(i), *c))
    }

    /// First partial derivative with respect to `var` at the base point.
    pub fn gradient(&self, var: usize) -> f64 {
        if self.order() == 0 || var >= self.num_vars() {
            0.0
        } else {
            self.coeffs[1 + var]
        }
    }

    fn check_same(&self, other: &TaylorValue) -> JetResult<()> {
        if Arc::ptr_eq(&self.layout, &other.layout)
            || (self.num_vars() == other.num_vars() && self.order() == other.order())
        {
            Ok(())
        } else {
            Err(JetError::ShapeMismatch {
                left_vars: self.num_vars(),
                left_order: self.order(),
                right_vars: other.num_vars(),
                right_order: other.order(),
            })
        }
    }

    pub fn try_add(&self, other: &TaylorValue) -> JetResult<TaylorValue> {
        self.check_same(other)?;
        Ok(self.with_layout(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect()))
    }

    pub fn try_sub(&self, other: &TaylorValue) -> JetResult<TaylorValue> {
        self.check_same(other)?;
        Ok(self.with_layout(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect()))
    }

    pub fn try_mul(&self, other: &TaylorValue) -> JetResult<TaylorValue> {
        self.check_same(other)?;
        let l = &self.layout;
        let mut out = vec![0.0; l.len()];
        for (k, slot) in out.iter_mut().enumerate() {
            // -0.0 is the exact additive identity, so signed zeros survive
            let mut acc = -0.0;
            for &(i, j, _) in &l.products[l.product_start[k]..l.product_start[k + 1]] {
                acc += self.coeffs[i as usize] * other.coeffs[j as usize];
            }
            *slot = acc;
        }
        Ok(self.with_layout(out))
    }

    /// Quotient solved degree by degree: `b0 q_k = a_k - Σ_{i≠0} b_i q_j`.
    pub fn try_div(&self, other: &TaylorValue) -> JetResult<TaylorValue> {
        self.check_same(other)?;
        let b0 = other.coeffs[0];
        if b0.abs() < EPSILON_DIV {
            return Err(JetError::DivisionNearZero(b0));
        }
        let l = &self.layout;
        let mut q = vec![0.0; l.len()];
        for k in 0..l.len() {
            let mut acc = self.coeffs[k];
            for &(i, j, _) in &l.products[l.product_start[k]..l.product_start[k + 1]] {
                if i != 0 {
                    acc -= other.coeffs[i as usize] * q[j as usize];
                }
            }
            q[k] = acc / b0;
        }
        Ok(self.with_layout(q))
    }

    pub fn scale(&self, factor: f64) -> TaylorValue {
        self.with_layout(self.coeffs.iter().map(|c| c * factor).collect())
    }

    pub fn add_scalar(&self, value: f64) -> TaylorValue {
        let mut out = self.clone();
        out.coeffs[0] += value;
        out
    }

    /// Series with the constant term removed.
    fn displacement(&self) -> TaylorValue {
        let mut out = self.clone();
        out.coeffs[0] = 0.0;
        out
    }

    /// `[d, d², …, d^order]` for the displacement `d` of `self`.
    fn displacement_powers(&self) -> Vec<TaylorValue> {
        let d = self.displacement();
        let mut powers = Vec::with_capacity(self.order());
        if self.order() == 0 {
            return powers;
        }
        powers.push(d.clone());
        for _ in 1..self.order() {
            let next = powers.last().expect("non-empty") * &d;
            powers.push(next);
        }
        powers
    }

    /// `Σ_k weights[k] d^k` with `weights[0]` the constant term.
    fn power_series(&self, weights: &[f64]) -> TaylorValue {
        let mut out = self.with_layout(vec![0.0; self.coeffs.len()]);
        out.coeffs[0] = weights[0];
        for (k, p) in self.displacement_powers().iter().enumerate() {
            let w = weights[k + 1];
            if w != 0.0 {
                for (o, c) in out.coeffs.iter_mut().zip(&p.coeffs) {
                    *o += w * c;
                }
            }
        }
        out
    }

    pub fn exp(&self) -> TaylorValue {
        let a0 = self.value().exp();
        let mut w = Vec::with_capacity(self.order() + 1);
        let mut fact = 1.0;
        for k in 0..=self.order() {
            if k > 0 {
                fact *= k as f64;
            }
            w.push(a0 / fact);
        }
        self.power_series(&w)
    }

    pub fn sin(&self) -> TaylorValue {
        let (s0, c0) = self.value().sin_cos();
        self.power_series(&trig_weights(s0, c0, self.order()))
    }

    pub fn cos(&self) -> TaylorValue {
        // cos(a0 + d) = sin(a0 + π/2 + d)
        let (s0, c0) = self.value().sin_cos();
        self.power_series(&trig_weights(c0, -s0, self.order()))
    }

    pub fn sqrt(&self) -> JetResult<TaylorValue> {
        self.pow_rational(Rational::new(1, 2)).map_err(|e| match e {
            JetError::Domain { value, .. } => JetError::Domain { function: "sqrt", value },
            other => other,
        })
    }

    /// Non-negative integer powers by repeated multiplication (valid for any sign of the base).
    pub fn powu(&self, n: u32) -> TaylorValue {
        let mut result = self.with_layout(vec![0.0; self.coeffs.len()]);
        result.coeffs[0] = 1.0;
        let mut base = self.clone();
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                result = &result * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        result
    }

    /// `self^r` via the binomial series `a0^r Σ C(r,k) (d/a0)^k`.
    pub fn pow_rational(&self, r: Rational) -> JetResult<TaylorValue> {
        if r.is_integer() && r.num() >= 0 {
            return Ok(self.powu(r.num() as u32));
        }
        let a0 = self.value();
        if r.is_integer() {
            if a0.abs() < EPSILON_DIV {
                return Err(JetError::DivisionNearZero(a0));
            }
        } else if a0 < EPSILON_DIV {
            return Err(JetError::Domain { function: "fractional power", value: a0 });
        }
        let exponent = r.to_f64();
        let lead = if r.is_integer() {
            a0.powi(r.num() as i32)
        } else if r == Rational::new(1, 2) {
            a0.sqrt()
        } else {
            a0.powf(exponent)
        };
        let mut w = Vec::with_capacity(self.order() + 1);
        let mut binom = 1.0;
        let mut inv_pow = 1.0;
        for k in 0..=self.order() {
            if k > 0 {
                binom *= (exponent - (k - 1) as f64) / k as f64;
                inv_pow /= a0;
            }
            w.push(lead * binom * inv_pow);
        }
        Ok(self.power_series(&w))
    }

    /// True partial derivative `∂^m f` at the base point.
    pub fn partial_coeff(&self, multi_index: &[usize]) -> JetResult<f64> {
        if multi_index.len() != self.num_vars() {
            return Err(JetError::MultiIndexLength {
                got: multi_index.len(),
                expected: self.num_vars(),
            });
        }
        let deg: usize = multi_index.iter().sum();
        if deg > self.order() {
            return Err(JetError::OrderExceeded { requested: deg, order: self.order() });
        }
        let key: Vec<u8> = multi_index.iter().map(|&m| m as u8).collect();
        let factorials: f64 = multi_index
            .iter()
            .map(|&m| (1..=m).map(|x| x as f64).product::<f64>())
            .product();
        Ok(self.coefficient(&key) * factorials)
    }

    /// Series of `∂f/∂x_var`, truncated one order lower.
    pub fn derivative(&self, var: usize) -> JetResult<TaylorValue> {
        if var >= self.num_vars() {
            return Err(JetError::IndexOutOfRange { index: var, num_vars: self.num_vars() });
        }
        if self.order() == 0 {
            return Err(JetError::OrderExceeded { requested: 1, order: 0 });
        }
        let layout = Layout::get(self.num_vars(), self.order() - 1)?;
        let mut coeffs = vec![0.0; layout.len()];
        for &(src, dst, factor) in &self.layout.derivatives[var] {
            let dst = dst as usize;
            if dst < coeffs.len() {
                coeffs[dst] += factor * self.coeffs[src as usize];
            }
        }
        Ok(TaylorValue { layout, coeffs })
    }

    /// Drops every term above `order` (no-op when `order >= self.order()`).
    pub fn truncate(&self, order: usize) -> TaylorValue {
        if order >= self.order() {
            return self.clone();
        }
        let layout = Layout::get(self.num_vars(), order).expect("smaller layout always fits");
        let coeffs = self.coeffs[..layout.len()].to_vec();
        TaylorValue { layout, coeffs }
    }

    /// Substitutes series arguments into `self`.
    ///
    /// `self` is an expansion in `args.len()` variables around the constant
    /// terms of `args`; only the displacements `arg - arg(0)` enter. The result
    /// lives in the argument space with order `min(self.order, args.order)`.
    pub fn compose(&self, args: &[TaylorValue]) -> JetResult<TaylorValue> {
        if args.len() != self.num_vars() {
            return Err(JetError::MultiIndexLength { got: args.len(), expected: self.num_vars() });
        }
        let first = args.first().ok_or(JetError::MultiIndexLength { got: 0, expected: 0 })?;
        for a in args {
            first.check_same(a)?;
        }
        let order = self.order().min(first.order());
        let displacements: Vec<TaylorValue> =
            args.iter().map(|a| a.truncate(order).displacement()).collect();
        let powers: Vec<Vec<TaylorValue>> = displacements
            .iter()
            .map(|d| {
                let mut p = vec![d.clone()];
                for _ in 1..order {
                    let next = p.last().expect("non-empty") * d;
                    p.push(next);
                }
                p
            })
            .collect();
        let mut out = TaylorValue::zero(first.num_vars(), order)?;
        let n = self.layout.prefix_len(order);
        for idx in 0..n {
            let c = self.coeffs[idx];
            if c == 0.0 {
                continue;
            }
            let mono = self.layout.monomial(idx);
            let mut term: Option<TaylorValue> = None;
            for (v, &e) in mono.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let factor = &powers[v][e as usize - 1];
                term = Some(match term {
                    None => factor.clone(),
                    Some(t) => &t * factor,
                });
            }
            match term {
                None => out.coeffs[0] += c,
                Some(t) => {
                    for (o, x) in out.coeffs.iter_mut().zip(&t.coeffs) {
                        *o += c * x;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn trig_weights(s0: f64, c0: f64, order: usize) -> Vec<f64> {
    // derivatives of sin at a0 cycle through s0, c0, -s0, -c0
    let cycle = [s0, c0, -s0, -c0];
    let mut fact = 1.0;
    (0..=order)
        .map(|k| {
            if k > 0 {
                fact *= k as f64;
            }
            cycle[k % 4] / fact
        })
        .collect()
}

macro_rules! binary_op {
    ($trait:ident, $method:ident, $checked:ident) => {
        impl $trait<&TaylorValue> for &TaylorValue {
            type Output = TaylorValue;
            /// Panics when the operands have different shapes.
            fn $method(self, rhs: &TaylorValue) -> TaylorValue {
                self.$checked(rhs).expect("TaylorValue operands must share shape")
            }
        }
        impl $trait<TaylorValue> for TaylorValue {
            type Output = TaylorValue;
            fn $method(self, rhs: TaylorValue) -> TaylorValue {
                (&self).$method(&rhs)
            }
        }
        impl $trait<&TaylorValue> for TaylorValue {
            type Output = TaylorValue;
            fn $method(self, rhs: &TaylorValue) -> TaylorValue {
                (&self).$method(rhs)
            }
        }
    };
}

binary_op!(Add, add, try_add);
binary_op!(Sub, sub, try_sub);
binary_op!(Mul, mul, try_mul);

impl Neg for &TaylorValue {
    type Output = TaylorValue;
    fn neg(self) -> TaylorValue {
        self.scale(-1.0)
    }
}

impl Neg for TaylorValue {
    type Output = TaylorValue;
    fn neg(self) -> TaylorValue {
        self.scale(-1.0)
    }
}

// ---------------------------------------------------------------------------
// Operation-level entry points.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithKind {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementaryKind {
    Sqrt,
    Sin,
    Cos,
    Exp,
    PowRational,
}

pub fn lift_variable(var_index: usize, value: f64, num_vars: usize, order: usize) -> JetResult<TaylorValue> {
    TaylorValue::variable(var_index, value, num_vars, order)
}

pub fn arith(kind: ArithKind, a: &TaylorValue, b: Option<&TaylorValue>) -> JetResult<TaylorValue> {
    let rhs = || b.ok_or(JetError::MultiIndexLength { got: 1, expected: 2 });
    match kind {
        ArithKind::Add => a.try_add(rhs()?),
        ArithKind::Sub => a.try_sub(rhs()?),
        ArithKind::Mul => a.try_mul(rhs()?),
        ArithKind::Div => a.try_div(rhs()?),
        ArithKind::Neg => Ok(-a),
    }
}

pub fn elementary(kind: ElementaryKind, a: &TaylorValue, exponent: Option<Rational>) -> JetResult<TaylorValue> {
    match kind {
        ElementaryKind::Sqrt => a.sqrt(),
        ElementaryKind::Sin => Ok(a.sin()),
        ElementaryKind::Cos => Ok(a.cos()),
        ElementaryKind::Exp => Ok(a.exp()),
        ElementaryKind::PowRational => a.pow_rational(exponent.unwrap_or(Rational::integer(1))),
    }
}

pub fn partial_coeff(a: &TaylorValue, multi_index: &[usize]) -> JetResult<f64> {
    a.partial_coeff(multi_index)
}

pub fn series_derivative(a: &TaylorValue, var_index: usize) -> JetResult<TaylorValue> {
    a.derivative(var_index)
}

/// Row-major square matrix of series.
pub type SeriesMatrix = Vec<Vec<TaylorValue>>;

pub fn matmul(a: &SeriesMatrix, b: &SeriesMatrix) -> SeriesMatrix {
    let n = a.len();
    let m = b[0].len();
    let inner = b.len();
    (0..n)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let mut acc = &a[i][0] * &b[0][j];
                    for k in 1..inner {
                        acc = acc + &a[i][k] * &b[k][j];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Inverse of a series-valued matrix.
///
/// The constant-term matrix is inverted directly, then Newton steps
/// `X ← X (2I − M X)` double the number of correct orders each pass.
pub fn taylor_matrix_inverse(m: &SeriesMatrix) -> JetResult<SeriesMatrix> {
    let n = m.len();
    if n == 0 || m.iter().any(|row| row.len() != n) {
        return Err(JetError::MultiIndexLength { got: m.len(), expected: n });
    }
    let proto = &m[0][0];
    for row in m {
        for e in row {
            proto.check_same(e)?;
        }
    }
    let (num_vars, order) = (proto.num_vars(), proto.order());
    let c0 = DMatrix::from_fn(n, n, |i, j| m[i][j].value());
    let sv = c0.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(JetError::SingularMatrix { condition });
    }
    let c0_inv = c0
        .try_inverse()
        .ok_or(JetError::SingularMatrix { condition })?;
    let mut x: SeriesMatrix = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| TaylorValue::constant(c0_inv[(i, j)], num_vars, order))
                .collect::<JetResult<Vec<_>>>()
        })
        .collect::<JetResult<_>>()?;
    let mut correct = 0usize;
    while correct < order {
        let mx = matmul(m, &x);
        let mut two_minus: SeriesMatrix = mx.iter().map(|row| row.iter().map(|e| -e).collect()).collect();
        for (i, row) in two_minus.iter_mut().enumerate() {
            row[i] = row[i].add_scalar(2.0);
        }
        x = matmul(&x, &two_minus);
        correct = 2 * correct + 1;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn lift_variable_examples() {
        let x = lift_variable(0, 3.0, 2, 2).unwrap();
        assert_eq!(x.coefficient(&[0, 0]), 3.0);
        assert_eq!(x.coefficient(&[1, 0]), 1.0);
        assert_eq!(x.terms().count(), 2);

        let y = lift_variable(1, 0.0, 2, 0).unwrap();
        assert_eq!(y.coeffs(), &[0.0]);

        let z = lift_variable(0, 1.5, 1, 3).unwrap();
        assert_eq!(z.coefficient(&[0]), 1.5);
        assert_eq!(z.coefficient(&[1]), 1.0);
        assert_eq!(z.terms().count(), 2);

        assert!(matches!(
            lift_variable(2, 0.0, 2, 1),
            Err(JetError::IndexOutOfRange { index: 2, num_vars: 2 })
        ));
    }

    #[test]
    fn arithmetic_examples() {
        let one_plus_x = lift_variable(0, 0.0, 1, 2).unwrap().add_scalar(1.0);
        let sq = arith(ArithKind::Mul, &one_plus_x, Some(&one_plus_x)).unwrap();
        assert_eq!(sq.coeffs(), &[1.0, 2.0, 1.0]);

        let one = TaylorValue::constant(1.0, 1, 2).unwrap();
        let q = arith(ArithKind::Div, &one, Some(&one_plus_x)).unwrap();
        // geometric series 1 - x + x²
        assert_eq!(q.coeffs(), &[1.0, -1.0, 1.0]);

        let x = lift_variable(0, 0.0, 1, 2).unwrap();
        let neg = arith(ArithKind::Neg, &x, None).unwrap();
        let z = arith(ArithKind::Add, &x, Some(&neg)).unwrap();
        assert!(z.coeffs().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn division_near_zero_is_rejected() {
        let x = lift_variable(0, 1e-14, 1, 2).unwrap();
        let one = TaylorValue::constant(1.0, 1, 2).unwrap();
        assert!(matches!(one.try_div(&x), Err(JetError::DivisionNearZero(_))));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = TaylorValue::constant(1.0, 1, 2).unwrap();
        let b = TaylorValue::constant(1.0, 1, 3).unwrap();
        assert!(matches!(a.try_add(&b), Err(JetError::ShapeMismatch { .. })));
    }

    #[test]
    fn elementary_examples() {
        let one_plus_x = lift_variable(0, 0.0, 1, 2).unwrap().add_scalar(1.0);
        let r = elementary(ElementaryKind::Sqrt, &one_plus_x, None).unwrap();
        // binomial series (1+x)^(1/2) = 1 + x/2 - x²/8
        assert_eq!(r.coeffs(), &[1.0, 0.5, -0.125]);

        let x = lift_variable(0, 0.0, 1, 3).unwrap();
        let s = elementary(ElementaryKind::Sin, &x, None).unwrap();
        assert_eq!(s.coeffs()[0], 0.0);
        assert_eq!(s.coeffs()[1], 1.0);
        assert_eq!(s.coeffs()[2], 0.0);
        assert!(approx(s.coeffs()[3], -1.0 / 6.0, 1e-16));

        let four = TaylorValue::constant(4.0, 2, 3).unwrap();
        let two = four.sqrt().unwrap();
        assert_eq!(two.value(), 2.0);
        assert_eq!(two.terms().count(), 1);
    }

    #[test]
    fn sqrt_of_non_positive_is_domain_error() {
        let x = lift_variable(0, -1.0, 1, 2).unwrap();
        assert!(matches!(x.sqrt(), Err(JetError::Domain { function: "sqrt", .. })));
        let zero = TaylorValue::zero(1, 2).unwrap();
        assert!(zero.sqrt().is_err());
    }

    #[test]
    fn integer_power_of_negative_base() {
        let x = lift_variable(0, -2.0, 1, 3).unwrap();
        let c = x.pow_rational(Rational::integer(3)).unwrap();
        // x³ expanded at -2
        assert_eq!(c.coeffs(), &[-8.0, 12.0, -6.0, 1.0]);
        let inv = x.pow_rational(Rational::integer(-1)).unwrap();
        // 1/x at -2: -1/2, -1/4, -1/8, -1/16
        for (got, want) in inv.coeffs().iter().zip([-0.5, -0.25, -0.125, -0.0625]) {
            assert!(approx(*got, want, 1e-15));
        }
    }

    #[test]
    fn partial_coeff_examples() {
        let one_plus_x = lift_variable(0, 0.0, 1, 2).unwrap().add_scalar(1.0);
        let sq = &one_plus_x * &one_plus_x;
        assert_eq!(partial_coeff(&sq, &[2]).unwrap(), 2.0);

        let x = lift_variable(0, 0.0, 2, 2).unwrap();
        let y = lift_variable(1, 0.0, 2, 2).unwrap();
        assert_eq!(partial_coeff(&(&x * &y), &[1, 1]).unwrap(), 1.0);

        let t = lift_variable(0, 0.0, 1, 3).unwrap();
        let s = t.sin();
        assert!(approx(partial_coeff(&s, &[3]).unwrap(), -1.0, 1e-15));

        assert!(matches!(
            partial_coeff(&sq, &[3]),
            Err(JetError::OrderExceeded { requested: 3, order: 2 })
        ));
    }

    #[test]
    fn series_derivative_examples() {
        let one_plus_x = lift_variable(0, 0.0, 1, 2).unwrap().add_scalar(1.0);
        let d = series_derivative(&(&one_plus_x * &one_plus_x), 0).unwrap();
        assert_eq!(d.order(), 1);
        assert_eq!(d.coeffs(), &[2.0, 2.0]);

        let c = TaylorValue::constant(5.0, 2, 3).unwrap();
        assert!(c.derivative(1).unwrap().coeffs().iter().all(|&v| v == 0.0));

        let x = lift_variable(0, 0.7, 2, 2).unwrap();
        let y = lift_variable(1, -0.3, 2, 2).unwrap();
        let dy = (&x * &y).derivative(1).unwrap();
        assert_eq!(dy, x.truncate(1));

        let z = TaylorValue::constant(1.0, 1, 0).unwrap();
        assert!(matches!(z.derivative(0), Err(JetError::OrderExceeded { .. })));
    }

    #[test]
    fn matrix_inverse_examples() {
        let one = TaylorValue::constant(1.0, 1, 3).unwrap();
        let zero = TaylorValue::zero(1, 3).unwrap();
        let id = vec![vec![one.clone(), zero.clone()], vec![zero.clone(), one.clone()]];
        let inv = taylor_matrix_inverse(&id).unwrap();
        assert_eq!(inv, id);

        let x = lift_variable(0, 0.0, 1, 3).unwrap();
        let m = vec![
            vec![x.add_scalar(1.0), zero.clone()],
            vec![zero.clone(), one.scale(2.0)],
        ];
        let inv = taylor_matrix_inverse(&m).unwrap();
        let expect = [1.0, -1.0, 1.0, -1.0];
        for (g, w) in inv[0][0].coeffs().iter().zip(expect) {
            assert!(approx(*g, w, 1e-14));
        }
        assert!(approx(inv[1][1].value(), 0.5, 1e-15));
        assert!(inv[0][1].coeffs().iter().all(|c| c.abs() < 1e-15));

        let singular = vec![vec![one.clone(), one.clone()], vec![one.clone(), one.clone()]];
        assert!(matches!(taylor_matrix_inverse(&singular), Err(JetError::SingularMatrix { .. })));
    }

    #[test]
    fn compose_first_order_is_chain_rule() {
        // f(u, v) = u² v around (1, 2); substitute u = 1 + a, v = 2 + 3a + b
        let u = lift_variable(0, 1.0, 2, 3).unwrap();
        let v = lift_variable(1, 2.0, 2, 3).unwrap();
        let f = &(&u * &u) * &v;
        let a = lift_variable(0, 0.0, 2, 1).unwrap();
        let b = lift_variable(1, 0.0, 2, 1).unwrap();
        let args = vec![a.add_scalar(1.0), (a.scale(3.0) + b).add_scalar(2.0)];
        let g = f.compose(&args).unwrap();
        assert_eq!(g.order(), 1);
        // df = 2uv du + u² dv = 4 da + (3 da + db)
        assert!(approx(g.value(), 2.0, 1e-15));
        assert!(approx(g.gradient(0), 7.0, 1e-15));
        assert!(approx(g.gradient(1), 1.0, 1e-15));
    }

    #[test]
    fn truncation_is_a_prefix() {
        let l6 = Layout::get(3, 6).unwrap();
        let l4 = Layout::get(3, 4).unwrap();
        for i in 0..l4.len() {
            assert_eq!(l4.monomial(i), l6.monomial(i));
        }
    }
}
