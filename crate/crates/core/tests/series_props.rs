use std::collections::HashMap;

use finslerlab::expr::parse;
use finslerlab::expr::eval_taylor;
use finslerlab::jets::{lift_variable, matmul, partial_coeff, series_derivative, taylor_matrix_inverse, TaylorValue};
use proptest::prelude::*;

const VARS: [&str; 2] = ["x", "y"];

/// Random smooth expressions in `x`, `y`, kept bounded on `[-1, 1]²`.
fn smooth_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("x".to_string()),
        Just("y".to_string()),
        (-20i32..=20).prop_map(|k| format!("({})", k as f64 / 10.0)),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} / (2 + ({b})^2))")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("exp(0.5*sin({a}))")),
            inner.clone().prop_map(|a| format!("sqrt(1 + ({a})^2)")),
            inner.clone().prop_map(|a| format!("({a})^3")),
            inner.prop_map(|a| format!("(-({a}))")),
        ]
    })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

fn random_series(coeffs: &[f64], num_vars: usize, order: usize) -> TaylorValue {
    let layout = TaylorValue::zero(num_vars, order).unwrap().layout().clone();
    let terms: Vec<(Vec<u8>, f64)> = (0..layout.len()).map(|i| (layout.monomial(i).to_vec(), coeffs[i % coeffs.len()])).collect();
    TaylorValue::from_terms(num_vars, order, terms).unwrap()
}

/// Fourth-order central difference in one coordinate.
fn d1(g: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-g(x + 2.0 * h) + 8.0 * g(x + h) - 8.0 * g(x - h) + g(x - 2.0 * h)) / (12.0 * h)
}

fn d2(g: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-g(x + 2.0 * h) + 16.0 * g(x + h) - 30.0 * g(x) + 16.0 * g(x - h) - g(x - 2.0 * h)) / (12.0 * h * h)
}

/// Finite-difference partials of total order up to two.
fn fd_partial(f: &dyn Fn(f64, f64) -> f64, x: f64, y: f64, m: [usize; 2]) -> f64 {
    let h = 1e-3;
    match m {
        [0, 0] => f(x, y),
        [1, 0] => d1(&|u| f(u, y), x, h),
        [0, 1] => d1(&|v| f(x, v), y, h),
        [2, 0] => d2(&|u| f(u, y), x, h),
        [0, 2] => d2(&|v| f(x, v), y, h),
        [1, 1] => d1(&|u| d1(&|v| f(u, v), y, h), x, h),
        _ => unreachable!(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partial_coeff_matches_finite_differences(text in smooth_expr(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let e = parse(&text, &VARS).unwrap();
        let f = |a: f64, b: f64| e.eval(&[a, b]).unwrap();
        let series = e.eval_series(&[lift_variable(0, x, 2, 4).unwrap(), lift_variable(1, y, 2, 4).unwrap()]).unwrap();
        for m in [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]] {
            let exact = partial_coeff(&series, &m).unwrap();
            let fd = fd_partial(&f, x, y, m);
            prop_assert!(close(exact, fd, 1e-5), "{text} m={m:?}: {exact} vs {fd}");
        }
    }

    #[test]
    fn ring_axioms(a in prop::collection::vec(-1.0f64..1.0, 15),
                   b in prop::collection::vec(-1.0f64..1.0, 15),
                   c in prop::collection::vec(-1.0f64..1.0, 15)) {
        let (a, b, c) = (random_series(&a, 2, 4), random_series(&b, 2, 4), random_series(&c, 2, 4));
        let pairs = [
            (&(&a * &b) * &c, &a * &(&b * &c)),
            (&a * &b, &b * &a),
            (&(&a + &b) + &c, &a + &(&b + &c)),
            (&a + &b, &b + &a),
            (&a * &(&b + &c), &(&a * &b) + &(&a * &c)),
        ];
        for (l, r) in pairs.iter() {
            for (x, y) in l.coeffs().iter().zip(r.coeffs()) {
                prop_assert!((x - y).abs() <= 1e-13, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn derivative_then_extract_commutes(text in smooth_expr(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let e = parse(&text, &VARS).unwrap();
        let s = e.eval_series(&[lift_variable(0, x, 2, 5).unwrap(), lift_variable(1, y, 2, 5).unwrap()]).unwrap();
        for var in 0..2 {
            let d = series_derivative(&s, var).unwrap();
            for i in 0..=3usize {
                for j in 0..=(3 - i) {
                    let mut raised = [i, j];
                    raised[var] += 1;
                    let lhs = partial_coeff(&d, &[i, j]).unwrap();
                    let rhs = partial_coeff(&s, &raised).unwrap();
                    prop_assert_eq!(lhs, rhs);
                }
            }
        }
    }

    #[test]
    fn matrix_inverse_is_exact_at_every_order(entries in prop::collection::vec(prop::collection::vec(-0.3f64..0.3, 10), 9)) {
        let n = 3;
        let m: Vec<Vec<TaylorValue>> = (0..n)
            .map(|i| (0..n).map(|j| {
                let s = random_series(&entries[i * n + j], 2, 3);
                if i == j { s.add_scalar(2.0) } else { s }
            }).collect())
            .collect();
        let inv = taylor_matrix_inverse(&m).unwrap();
        let prod = matmul(&m, &inv);
        for (i, row) in prod.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                for (k, c) in v.coeffs().iter().enumerate() {
                    let want = if i == j && k == 0 { 1.0 } else { 0.0 };
                    prop_assert!((c - want).abs() <= 1e-12, "({i},{j}) coefficient {k}: {c}");
                }
            }
        }
    }

    #[test]
    fn display_round_trips(text in smooth_expr()) {
        let e = parse(&text, &VARS).unwrap();
        let again = parse(&e.to_string(), &VARS).unwrap();
        prop_assert_eq!(e, again);
    }

    #[test]
    fn order_zero_taylor_equals_plain_eval(text in smooth_expr(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let e = parse(&text, &VARS).unwrap();
        let mut b = HashMap::new();
        b.insert("x".to_string(), TaylorValue::constant(x, 2, 0).unwrap());
        b.insert("y".to_string(), TaylorValue::constant(y, 2, 0).unwrap());
        let t = eval_taylor(&e, &b).unwrap();
        prop_assert_eq!(t.value().to_bits(), e.eval(&[x, y]).unwrap().to_bits());
    }
}
