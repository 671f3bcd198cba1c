//! Acceptance criteria 1–11. Runs without the libtest harness so every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use finslerlab::connection::{berwald_torsion_curvature, rund_h_covariant, BaseGeometry, TensorField};
use finslerlab::curves::{integrate_autoparallel, CurveState};
use finslerlab::finsler::{validate_structure, BasePoint, FinslerStructure, ValidationTolerances};
use finslerlab::jetspace::{cross_validate, structural_identities, CrossCheckOptions, JetGeometry};
use finslerlab::maps::{affine_residual, autoparallel_transport_test, identity_criterion, isometry_check, tension_field, SmoothMap};
use finslerlab::report::to_canonical_json;
use finslerlab::sampling::{sample_base_points, sample_jet_points, SampleSpec};
use finslerlab::scenario::{run_jet_report, Scenario};
use ndarray::Array4;

/// Collected checks for one criterion.
#[derive(Default)]
struct Checks {
    failures: Vec<String>,
    count: usize,
}

impl Checks {
    fn at_most(&mut self, what: &str, value: f64, bound: f64) {
        self.count += 1;
        if !(value <= bound) {
            self.failures.push(format!("{what}: {value:e} > {bound:e}"));
        }
    }

    fn at_least(&mut self, what: &str, value: f64, bound: f64) {
        self.count += 1;
        if !(value >= bound) {
            self.failures.push(format!("{what}: {value:e} < {bound:e}"));
        }
    }

    fn holds(&mut self, what: &str, ok: bool) {
        self.count += 1;
        if !ok {
            self.failures.push(what.to_string());
        }
    }

    fn error(&mut self, what: &str, e: impl std::fmt::Display) {
        self.count += 1;
        self.failures.push(format!("{what}: {e}"));
    }
}

fn max_abs<'a>(it: impl IntoIterator<Item = &'a f64>) -> f64 {
    it.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn samples(fs: &FinslerStructure, count: usize) -> Vec<BasePoint> {
    sample_base_points(fs, &SampleSpec { count: Some(count), ..Default::default() }).expect("sampling")
}

fn euclid(p: usize) -> FinslerStructure {
    FinslerStructure::euclidean(p).unwrap()
}

fn sphere() -> FinslerStructure {
    FinslerStructure::round_sphere().unwrap()
}

fn randers() -> FinslerStructure {
    FinslerStructure::randers_standard(2, 0.3).unwrap()
}

fn quartic() -> FinslerStructure {
    FinslerStructure::quartic_minkowski(2).unwrap()
}

fn riemannian() -> FinslerStructure {
    let m = vec![
        vec!["1 + t2^2".to_string(), "0.3*t1".to_string()],
        vec!["0.3*t1".to_string(), "2 + sin(t1)".to_string()],
    ];
    FinslerStructure::riemannian(&m).unwrap()
}

fn structure_identities(c: &mut Checks) {
    for fs in [euclid(2), sphere(), randers(), quartic()] {
        let pts = samples(&fs, 64);
        let rep = validate_structure(&fs, &pts, ValidationTolerances::default());
        for name in ["euler_identity", "f2_homogeneity", "cartan_contraction", "metric_homogeneity"] {
            match rep.check(name) {
                Some(chk) => c.at_most(&format!("{} {name}", fs.label()), chk.value, 1e-10),
                None => c.holds(&format!("{} {name} missing", fs.label()), false),
            }
        }
        c.holds(&format!("{} positive definite", fs.label()), rep.check("positive_definite").is_some_and(|x| x.pass));
    }
}

fn dual_formulas(c: &mut Checks) {
    for fs in [euclid(2), sphere(), randers(), quartic(), riemannian()] {
        let mut worst = [0.0f64; 5];
        for pt in samples(&fs, 64) {
            match BaseGeometry::new(&fs, &pt, 6).and_then(|g| g.dual_checks()) {
                Ok(d) => {
                    let v = [d.spray, d.cartan_nlc, d.berwald.unwrap_or(f64::NAN), d.n_gamma_s, d.two_g_ns];
                    for (w, x) in worst.iter_mut().zip(v) {
                        *w = if x.is_nan() { f64::NAN } else { w.max(x) };
                    }
                }
                Err(e) => c.error(fs.label(), e),
            }
        }
        for (name, w) in ["G vs Euler-Lagrange", "N vs dG/ds", "B vs d2G/ds2", "N vs Γs", "2G vs Ns"].iter().zip(worst) {
            c.at_most(&format!("{} {name}", fs.label()), w, 1e-8);
        }
    }
}

fn rund_compatibility(c: &mut Checks) {
    for fs in [randers(), sphere()] {
        for (name, field) in [("g|", TensorField::Metric), ("s|", TensorField::Fiber), ("F|", TensorField::Norm)] {
            let mut worst = 0.0f64;
            for pt in samples(&fs, 64) {
                match rund_h_covariant(&fs, &pt, &field) {
                    Ok(r) => worst = worst.max(max_abs(r.iter())),
                    Err(e) => c.error(fs.label(), e),
                }
            }
            c.at_most(&format!("{} {name}", fs.label()), worst, 1e-8);
        }
    }
}

/// Riemann tensor of `dθ² + sin²θ dφ²` from the analytic Christoffel symbols,
/// laid out `[[a, b, g, e]] = ∂_e Γ^a_{bg} - ∂_g Γ^a_{be} + Γ^m_{bg} Γ^a_{me} - Γ^m_{be} Γ^a_{mg}`.
fn sphere_riemann(theta: f64) -> Array4<f64> {
    let (s, co) = (theta.sin(), theta.cos());
    let mut gam = [[[0.0; 2]; 2]; 2];
    let mut dgam = [[[0.0; 2]; 2]; 2]; // θ-derivative; nothing depends on φ
    gam[0][1][1] = -s * co;
    dgam[0][1][1] = -(co * co - s * s);
    gam[1][0][1] = co / s;
    gam[1][1][0] = co / s;
    dgam[1][0][1] = -1.0 / (s * s);
    dgam[1][1][0] = -1.0 / (s * s);
    let d = |a: usize, b: usize, g: usize, e: usize| if e == 0 { dgam[a][b][g] } else { 0.0 };
    Array4::from_shape_fn((2, 2, 2, 2), |(a, b, g, e)| {
        let mut r = d(a, b, g, e) - d(a, b, e, g);
        for m in 0..2 {
            r += gam[m][b][g] * gam[a][m][e] - gam[m][b][e] * gam[a][m][g];
        }
        r
    })
}

fn riemannian_reduction(c: &mut Checks) {
    let fs = sphere();
    let (mut b_gamma, mut p_max, mut r_err) = (0.0f64, 0.0f64, 0.0f64);
    for pt in samples(&fs, 64) {
        let geo = match BaseGeometry::new(&fs, &pt, 6) {
            Ok(g) => g,
            Err(e) => return c.error("sphere geometry", e),
        };
        let gamma = geo.formal_christoffel();
        match geo.berwald() {
            Ok(b) => b_gamma = b_gamma.max(b.iter().zip(gamma.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))),
            Err(e) => c.error("sphere B", e),
        }
        match berwald_torsion_curvature(&fs, &pt) {
            Ok(t) => {
                p_max = p_max.max(max_abs(t.p.iter()));
                let want = sphere_riemann(pt.t[0]);
                r_err = r_err.max(t.curvature.iter().zip(want.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())));
            }
            Err(e) => c.error("sphere curvature", e),
        }
    }
    c.at_most("sphere |B - γ|", b_gamma, 1e-10);
    c.at_most("sphere |P|", p_max, 1e-10);
    c.at_most("sphere R vs hand Riemann", r_err, 1e-8);
}

fn berwald_symmetry(c: &mut Checks) {
    let fs = randers();
    let mut worst = 0.0f64;
    let mut largest = 0.0f64;
    for pt in samples(&fs, 64) {
        let p = match berwald_torsion_curvature(&fs, &pt) {
            Ok(t) => t.p,
            Err(e) => return c.error("randers P", e),
        };
        let scale = max_abs(p.iter()).max(1.0);
        largest = largest.max(max_abs(p.iter()));
        for ((a, b, g, e), v) in p.indexed_iter() {
            for (x, y, z) in [(b, e, g), (g, b, e), (g, e, b), (e, b, g), (e, g, b)] {
                worst = worst.max((v - p[[a, x, y, z]]).abs() / scale);
            }
        }
    }
    c.at_most("randers P symmetry", worst, 1e-9);
    // a vacuous pass on a Berwald-flat sample would prove nothing
    c.at_least("randers max |P|", largest, 1e-3);
}

fn geodesics(c: &mut Checks) {
    let tol = 1e-8;
    match integrate_autoparallel(&euclid(2), &CurveState::new(0.0, vec![0.2, -0.4], vec![1.3, 0.6]), 2.5, tol) {
        Ok(tr) => {
            let want = [0.2 + 1.3 * 2.5, -0.4 + 0.6 * 2.5];
            let err = tr.endpoint().position.iter().zip(want).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            c.at_most("euclidean endpoint", err, 1e-9);
        }
        Err(e) => c.error("euclidean line", e),
    }
    match integrate_autoparallel(&sphere(), &CurveState::new(0.0, vec![FRAC_PI_2, 0.0], vec![0.0, 1.0]), 2.0 * PI, tol) {
        Ok(tr) => {
            let drift = tr.samples.iter().fold(0.0f64, |m, s| m.max((s.position[0] - FRAC_PI_2).abs()));
            c.at_most("equator latitude drift", drift, 1e-6);
        }
        Err(e) => c.error("equator", e),
    }
    match integrate_autoparallel(&randers(), &CurveState::new(0.0, vec![0.1, 0.2], vec![0.8, -0.5]), 3.0, tol) {
        Ok(tr) => c.at_most("randers speed drift", tr.speed_drift(), 1e-5),
        Err(e) => c.error("randers curve", e),
    }
}

fn affine_theorems(c: &mut Checks) {
    let e2 = euclid(2);
    let pts = samples(&e2, 32);
    let rotation = SmoothMap::new(2, &["0.6*t1 - 0.8*t2 + 0.3", "0.8*t1 + 0.6*t2 - 0.1"]).unwrap();
    match isometry_check(&e2, &e2, &rotation, &pts) {
        Ok(r) => {
            c.at_most("rotation isometry scalar", r.scalar_residual, 1e-10);
            c.at_most("rotation isometry tensor", r.tensor_residual, 1e-10);
        }
        Err(e) => c.error("rotation isometry", e),
    }
    let sup = |src: &FinslerStructure, tgt: &FinslerStructure, m: &SmoothMap, pts: &[BasePoint]| -> Result<f64, String> {
        pts.iter().try_fold(0.0f64, |acc, pt| Ok(acc.max(affine_residual(src, tgt, m, pt).map_err(|e| e.to_string())?.sup)))
    };
    match sup(&e2, &e2, &rotation, &pts) {
        Ok(v) => c.at_most("rotation τ sup", v, 1e-8),
        Err(e) => c.error("rotation τ", e),
    }

    let mink = quartic();
    let id = SmoothMap::identity(2).unwrap();
    match sup(&e2, &mink, &id, &pts) {
        Ok(v) => c.at_most("flat -> Minkowski τ sup", v, 1e-10),
        Err(e) => c.error("flat -> Minkowski τ", e),
    }
    let tension = pts.iter().try_fold(0.0f64, |acc, pt| tension_field(&e2, &mink, &id, pt).map(|t| acc.max(max_abs(t.iter()))));
    match tension {
        Ok(v) => c.at_most("flat -> Minkowski tension", v, 1e-8),
        Err(e) => c.error("flat -> Minkowski tension", e),
    }

    let quad = SmoothMap::new(2, &["t1 + t1^2", "t2"]).unwrap();
    match affine_residual(&e2, &e2, &quad, &BasePoint::new(vec![0.3, -0.2], vec![1.0, 0.0])) {
        Ok(r) => c.holds(&format!("quadratic τ¹₁₁ = 2 (got {:e})", r.tau[[0, 0, 0]]), r.tau[[0, 0, 0]] == 2.0),
        Err(e) => c.error("quadratic τ", e),
    }
    let unit = CurveState::new(0.0, vec![0.3, -0.2], vec![1.0, 0.0]);
    match autoparallel_transport_test(&e2, &e2, &quad, &unit, 1.0, 1e-10) {
        Ok(r) => c.at_least("quadratic transport residual", r.sup_residual, 1e-2),
        Err(e) => c.error("quadratic transport", e),
    }

    let r = randers();
    let s = sphere();
    let t1_shift = SmoothMap::new(2, &["t1 + 0.4", "t2"]).unwrap();
    let t2_shift = SmoothMap::new(2, &["t1", "t2 - 0.7"]).unwrap();
    let affine_cases: [(&str, &FinslerStructure, &FinslerStructure, &SmoothMap, CurveState); 4] = [
        ("rotation", &e2, &e2, &rotation, CurveState::new(0.0, vec![0.1, 0.2], vec![0.6, 0.8])),
        ("flat -> Minkowski", &e2, &mink, &id, CurveState::new(0.0, vec![-0.3, 0.5], vec![0.8, -0.6])),
        ("randers translation", &r, &r, &t1_shift, CurveState::new(0.0, vec![0.1, 0.2], vec![0.7, 0.3])),
        ("sphere rotation", &s, &s, &t2_shift, CurveState::new(0.0, vec![1.0, 0.2], vec![0.4, 0.9])),
    ];
    for (name, src, tgt, m, init) in affine_cases {
        match autoparallel_transport_test(src, tgt, m, &init, 1.0, 1e-10) {
            Ok(rep) => c.at_most(&format!("{name} transport residual"), rep.sup_residual, 1e-5),
            Err(e) => c.error(name, e),
        }
    }
}

fn identity_map_criterion(c: &mut Checks) {
    let a = riemannian();
    let b = FinslerStructure::new(2, "(1 + t2^2)*s1^2 + 0.6*t1*s1*s2 + (2 + sin(t1))*s2^2", "raw riemannian").unwrap();
    let pts = samples(&a, 32);
    match identity_criterion(&a, &b, &pts) {
        Ok(r) => {
            c.at_most("equal sprays: identity τ", r.affine_sup, 1e-8);
            c.at_most("equal sprays: |G - G'|", r.spray_diff, 1e-8);
        }
        Err(e) => c.error("equal sprays", e),
    }
    let (e, r) = (euclid(2), randers());
    for (x, y, name) in [(&e, &r, "euclidean -> randers"), (&r, &e, "randers -> euclidean")] {
        match identity_criterion(x, y, &pts) {
            Ok(rep) => c.at_least(&format!("{name} identity τ"), rep.affine_sup, 1e-2),
            Err(err) => c.error(name, err),
        }
    }
}

fn pairs() -> Vec<(FinslerStructure, FinslerStructure)> {
    vec![(euclid(2), euclid(2)), (sphere(), euclid(2)), (randers(), sphere()), (randers(), randers())]
}

fn jet_cross_validation(c: &mut Checks) {
    let spec = SampleSpec { count: Some(100), ..Default::default() };
    for (src, tgt) in pairs() {
        let name = format!("{} -> {}", src.label(), tgt.label());
        match cross_validate(&src, &tgt, &spec, &CrossCheckOptions::default()) {
            Ok(rep) => {
                c.holds(&format!("{name}: {} samples", rep.samples), rep.samples == 100 && rep.failures.is_empty());
                c.holds(&format!("{name}: 45 blocks"), rep.blocks.len() == 45);
                let worst = rep.blocks.iter().fold(0.0f64, |m, b| m.max(b.max_rel_residual));
                c.at_most(&format!("{name} worst block residual"), worst, 1e-7);
                if src.label() == tgt.label() && src.label().starts_with("euclidean") {
                    let mag = rep.blocks.iter().fold(0.0f64, |m, b| m.max(b.max_abs_closed).max(b.max_abs_general));
                    c.at_most(&format!("{name} block magnitude"), mag, 1e-12);
                }
            }
            Err(e) => c.error(&name, e),
        }
    }
}

fn structural(c: &mut Checks) {
    let spec = SampleSpec { count: Some(100), ..Default::default() };
    for (src, tgt) in pairs() {
        let name = format!("{} -> {}", src.label(), tgt.label());
        let jps = match sample_jet_points(&src, &tgt, &spec) {
            Ok(j) => j,
            Err(e) => return c.error(&name, e),
        };
        let mut violations = 0usize;
        let mut nonzero_structural = 0usize;
        for jp in &jps {
            match JetGeometry::new(&src, &tgt, jp) {
                Ok(geo) => {
                    violations += structural_identities(&geo.torsions_closed(), &geo.curvatures_closed())
                        .iter()
                        .map(|i| i.violations)
                        .sum::<usize>();
                    match geo.general() {
                        Ok(g) => nonzero_structural += g.structural.iter().filter(|z| z.max_abs != 0.0).count(),
                        Err(e) => c.error(&name, e),
                    }
                    nonzero_structural += geo.temporal_nlc().m4.iter().filter(|&&x| x != 0.0).count();
                }
                Err(e) => c.error(&name, e),
            }
        }
        c.holds(&format!("{name}: {violations} identity violations"), violations == 0);
        c.holds(&format!("{name}: {nonzero_structural} nonzero structural entries"), nonzero_structural == 0);
    }
}

fn determinism(c: &mut Checks) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/jet_randers_sphere.json");
    let sc = match Scenario::from_path(&path) {
        Ok(s) => s,
        Err(e) => return c.error("scenario", e),
    };
    let a = run_jet_report(&sc).map(|o| to_canonical_json(&o.report));
    let b = run_jet_report(&sc).map(|o| to_canonical_json(&o.report));
    match (a, b) {
        (Ok(a), Ok(b)) => c.holds("repeated jet reports identical", a.as_bytes() == b.as_bytes()),
        _ => c.holds("jet report runs", false),
    }
    let (src, tgt) = (randers(), sphere());
    let spec = SampleSpec { count: Some(100), ..Default::default() };
    let single = cross_validate(&src, &tgt, &spec, &CrossCheckOptions { threads: Some(1), ..Default::default() });
    let multi = cross_validate(&src, &tgt, &spec, &CrossCheckOptions { threads: Some(4), ..Default::default() });
    match (single, multi) {
        (Ok(x), Ok(y)) => c.holds(
            "1 vs 4 threads identical",
            to_canonical_json(&x.to_json()).as_bytes() == to_canonical_json(&y.to_json()).as_bytes(),
        ),
        _ => c.holds("threaded cross-validation runs", false),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn(&mut Checks)); 11] = [
        ("structure identities", structure_identities),
        ("dual-formula identities", dual_formulas),
        ("Rund compatibility", rund_compatibility),
        ("Riemannian reduction", riemannian_reduction),
        ("Berwald symmetry", berwald_symmetry),
        ("geodesics", geodesics),
        ("affine maps", affine_theorems),
        ("identity-map criterion", identity_map_criterion),
        ("jet cross-validation", jet_cross_validation),
        ("structural identities", structural),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let mut checks = Checks::default();
        run(&mut checks);
        let secs = started.elapsed().as_secs_f64();
        if checks.failures.is_empty() {
            println!("criterion {:>2} {name:<26} PASS ({} checks, {secs:.1}s)", k + 1, checks.count);
        } else {
            failed += 1;
            println!("criterion {:>2} {name:<26} FAIL ({} of {} checks)", k + 1, checks.failures.len(), checks.count);
            for f in &checks.failures {
                println!("    {f}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
