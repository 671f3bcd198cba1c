//! Scenario files and the four report commands behind the CLI.
//!
//! A scenario is a JSON object naming a source structure, an optional target
//! structure and map, sampling boxes and tolerance overrides. Each command
//! returns an [`Outcome`]: a JSON report plus an overall pass flag. Reports
//! carry no timestamps or host data, so equal inputs give equal bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::connection::{BaseGeometry, DEFAULT_ORDER, SPRAY_TOLERANCE};
use crate::curves::{integrate_with, CurveState, IntegratorOptions, DEFAULT_SAMPLES, DEFAULT_TOL};
use crate::error::GeometryError;
use crate::finsler::{validate_structure, BasePoint, FinslerStructure, ValidationTolerances, MIN_EIGENVALUE};
use crate::jetspace::{cross_validate, CrossCheckOptions, CROSS_TOL};
use crate::maps::{
    affine_residual, autoparallel_transport_test, isometry_check, nondegeneracy_check, tension_field, SmoothMap, AFFINE_TOL,
};
use crate::report::{num, nums, CheckOutcome};
use crate::sampling::{sample_base_points, SampleSpec};

pub const SCENARIO_VERSION: u32 = 1;
pub const REPORT_VERSION: u32 = 1;

pub const DEFAULT_ISOMETRY_TOL: f64 = 1e-10;
pub const DEFAULT_TENSION_TOL: f64 = 1e-8;
pub const DEFAULT_TRANSPORT_TOL: f64 = 1e-5;
pub const DEFAULT_TRANSPORT_TMAX: f64 = 1.0;
pub const DEFAULT_TRANSPORT_INTEGRATOR_TOL: f64 = 1e-10;
pub const DEFAULT_GEODESIC_TMAX: f64 = 1.0;

const AFFINE_CHECKS: [&str; 5] = ["nondegeneracy", "affine", "isometry", "tension", "transport"];
const DEFAULT_AFFINE_CHECKS: [&str; 4] = ["nondegeneracy", "affine", "tension", "transport"];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read '{path}': {message}")]
    Io { path: String, message: String },
    #[error("invalid scenario JSON at line {line}, column {column}: {message}")]
    Json { line: usize, column: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type ScenarioResult<T> = Result<T, ScenarioError>;

/// Catalog entry or raw `F²` text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StructureSpec {
    Euclidean { dim: usize },
    /// Matrix entries are expressions in `t1..tp`.
    Riemannian { metric: Vec<Vec<String>> },
    Randers { alpha: Vec<Vec<String>>, beta: Vec<String> },
    /// Euclidean `α` with `β = b (cos t2, sin t2, 0, …)`.
    RandersStandard { dim: usize, b: f64 },
    LocallyMinkowski { dim: usize, f_squared: String },
    QuarticMinkowski { dim: usize },
    RoundSphere,
    /// `F²` in `t1..tp`, `s1..sp`.
    Custom { dim: usize, f_squared: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureDef {
    #[serde(flatten)]
    pub spec: StructureSpec,
    #[serde(default)]
    pub domain: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub label: Option<String>,
}

impl StructureDef {
    pub fn build(&self) -> ScenarioResult<FinslerStructure> {
        let fs = match &self.spec {
            StructureSpec::Euclidean { dim } => FinslerStructure::euclidean(positive(*dim)?)?,
            StructureSpec::Riemannian { metric } => FinslerStructure::riemannian(metric)?,
            StructureSpec::Randers { alpha, beta } => FinslerStructure::randers(alpha, beta)?,
            StructureSpec::RandersStandard { dim, b } => FinslerStructure::randers_standard(positive(*dim)?, *b)?,
            StructureSpec::LocallyMinkowski { dim, f_squared } => FinslerStructure::locally_minkowski(positive(*dim)?, f_squared)?,
            StructureSpec::QuarticMinkowski { dim } => FinslerStructure::quartic_minkowski(positive(*dim)?)?,
            StructureSpec::RoundSphere => FinslerStructure::round_sphere()?,
            StructureSpec::Custom { dim, f_squared } => FinslerStructure::new(positive(*dim)?, f_squared, "custom")?,
        };
        let fs = match &self.domain {
            Some(d) => fs.with_domain(d.clone())?,
            None => fs,
        };
        Ok(match &self.label {
            Some(l) => fs.with_label(l),
            None => fs,
        })
    }
}

fn positive(dim: usize) -> ScenarioResult<usize> {
    if dim == 0 {
        Err(ScenarioError::Invalid("dimension must be positive".into()))
    } else {
        Ok(dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDef {
    /// Component expressions in `t1..tp`.
    pub components: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default)]
    pub identity: Option<f64>,
    #[serde(default)]
    pub min_eigenvalue: Option<f64>,
    #[serde(default)]
    pub dual: Option<f64>,
    #[serde(default)]
    pub affine: Option<f64>,
    #[serde(default)]
    pub isometry: Option<f64>,
    #[serde(default)]
    pub tension: Option<f64>,
    #[serde(default)]
    pub transport: Option<f64>,
    #[serde(default)]
    pub jet_cross: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    #[serde(default)]
    pub t0: Option<Vec<f64>>,
    #[serde(default)]
    pub v0: Option<Vec<f64>>,
    #[serde(default)]
    pub tmax: Option<f64>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub samples: Option<usize>,
}

impl CurveSpec {
    /// Fields of `over` take precedence.
    pub fn merged(&self, over: &CurveSpec) -> CurveSpec {
        CurveSpec {
            t0: over.t0.clone().or_else(|| self.t0.clone()),
            v0: over.v0.clone().or_else(|| self.v0.clone()),
            tmax: over.tmax.or(self.tmax),
            tol: over.tol.or(self.tol),
            samples: over.samples.or(self.samples),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub source: StructureDef,
    #[serde(default)]
    pub target: Option<StructureDef>,
    #[serde(default)]
    pub map: Option<MapDef>,
    #[serde(default)]
    pub sampling: SampleSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Checks run by the affine command.
    #[serde(default)]
    pub checks: Option<Vec<String>>,
    #[serde(default)]
    pub geodesic: CurveSpec,
    /// Source autoparallel used by the transport check.
    #[serde(default)]
    pub transport: CurveSpec,
    /// Test hook: corrupts the named closed-form block in `jet-report`.
    #[serde(default)]
    pub corrupt_block: Option<String>,
}

fn default_version() -> u32 {
    SCENARIO_VERSION
}

impl Scenario {
    pub fn from_json_str(text: &str) -> ScenarioResult<Scenario> {
        let sc: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if sc.version != SCENARIO_VERSION {
            return Err(ScenarioError::Invalid(format!("unsupported scenario version {}", sc.version)));
        }
        Ok(sc)
    }

    pub fn from_path(path: &Path) -> ScenarioResult<Scenario> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Scenario::from_json_str(&text)
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| "unnamed".into())
    }

    pub fn source_structure(&self) -> ScenarioResult<FinslerStructure> {
        self.source.build()
    }

    /// The target structure; defaults to the source.
    pub fn target_structure(&self) -> ScenarioResult<FinslerStructure> {
        match &self.target {
            Some(t) => t.build(),
            None => self.source.build(),
        }
    }

    pub fn smooth_map(&self, src: &FinslerStructure, tgt: &FinslerStructure) -> ScenarioResult<SmoothMap> {
        let def = self.map.as_ref().ok_or_else(|| ScenarioError::Invalid("scenario has no map".into()))?;
        let m = SmoothMap::new(src.dim(), &def.components)?;
        if m.target_dim() != tgt.dim() {
            return Err(ScenarioError::Invalid(format!(
                "map has {} components but the target has dimension {}",
                m.target_dim(),
                tgt.dim()
            )));
        }
        Ok(m)
    }
}

/// A command result: the report and whether every check passed.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Value,
    pub pass: bool,
    /// Names of failed checks, for diagnostics.
    pub failing: Vec<String>,
    /// CSV trace produced by the geodesic command.
    pub csv: Option<String>,
}

fn header(command: &str, sc: &Scenario) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("report_version".into(), Value::from(REPORT_VERSION));
    m.insert("command".into(), Value::String(command.into()));
    m.insert("scenario".into(), Value::String(sc.name()));
    m
}

fn checks_json(checks: &[CheckOutcome]) -> Value {
    Value::Array(checks.iter().map(CheckOutcome::to_json).collect())
}

// ---------------------------------------------------------------------------

/// Structure identities and dual-formula residuals over seeded samples.
pub fn run_validate(sc: &Scenario) -> ScenarioResult<Outcome> {
    let mut structures = vec![sc.source_structure()?];
    if let Some(t) = &sc.target {
        structures.push(t.build()?);
    }
    let tol = ValidationTolerances {
        identity: sc.tolerances.identity.unwrap_or(ValidationTolerances::default().identity),
        min_eigenvalue: sc.tolerances.min_eigenvalue.unwrap_or(MIN_EIGENVALUE),
    };
    let dual_tol = sc.tolerances.dual.unwrap_or(SPRAY_TOLERANCE);
    let mut out = header("validate", sc);
    out.insert("seed".into(), Value::from(sc.sampling.seed()));
    let mut pass = true;
    let mut failing = Vec::new();
    let mut entries = Vec::new();
    for fs in &structures {
        let pts = sample_base_points(fs, &sc.sampling)?;
        let rep = validate_structure(fs, &pts, tol);
        let mut checks = rep.checks.clone();
        let mut worst = 0.0f64;
        let mut errors = Vec::new();
        for (k, pt) in pts.iter().enumerate() {
            match BaseGeometry::new(fs, pt, DEFAULT_ORDER).and_then(|g| g.dual_checks()) {
                Ok(d) => worst = worst.max(d.max()),
                Err(e) => errors.push(format!("sample {k}: {e}")),
            }
        }
        checks.push(if errors.is_empty() {
            CheckOutcome::at_most("dual_formulas", worst, dual_tol)
        } else {
            CheckOutcome::failed("dual_formulas", errors.join("; "))
        });
        let ok = checks.iter().all(|c| c.pass);
        failing.extend(checks.iter().filter(|c| !c.pass).map(|c| format!("{}: {}", fs.label(), c.name)));
        pass &= ok;
        entries.push(json!({
            "structure": fs.label(),
            "f_squared": fs.f_squared_text(),
            "samples": pts.len(),
            "checks": checks_json(&checks),
            "pass": ok,
        }));
    }
    out.insert("structures".into(), Value::Array(entries));
    out.insert("overall_pass".into(), Value::Bool(pass));
    Ok(Outcome { report: Value::Object(out), pass, failing, csv: None })
}

/// Autoparallel of the source structure. `over` holds command-line overrides.
pub fn run_geodesic(sc: &Scenario, over: &CurveSpec) -> ScenarioResult<Outcome> {
    let fs = sc.source_structure()?;
    let spec = sc.geodesic.merged(over);
    let t0 = spec.t0.clone().ok_or_else(|| ScenarioError::Invalid("geodesic needs t0".into()))?;
    let v0 = spec.v0.clone().ok_or_else(|| ScenarioError::Invalid("geodesic needs v0".into()))?;
    for (name, v) in [("t0", &t0), ("v0", &v0)] {
        if v.len() != fs.dim() {
            return Err(ScenarioError::Invalid(format!("{name} has {} entries, expected {}", v.len(), fs.dim())));
        }
    }
    let opts = IntegratorOptions {
        tol: spec.tol.unwrap_or(DEFAULT_TOL),
        samples: spec.samples.unwrap_or(DEFAULT_SAMPLES),
        ..Default::default()
    };
    let tmax = spec.tmax.unwrap_or(DEFAULT_GEODESIC_TMAX);
    let init = CurveState::new(0.0, t0.clone(), v0.clone());
    let mut out = header("geodesic", sc);
    out.insert("structure".into(), Value::String(fs.label().into()));
    out.insert("t0".into(), nums(&t0));
    out.insert("v0".into(), nums(&v0));
    out.insert("tmax".into(), num(tmax));
    out.insert("tol".into(), num(opts.tol));
    match integrate_with(&fs, &init, tmax, opts) {
        Ok(trace) => {
            let end = trace.endpoint();
            out.insert("samples".into(), Value::from(trace.samples.len()));
            out.insert("endpoint".into(), json!({ "time": num(end.time), "position": nums(&end.position), "velocity": nums(&end.velocity) }));
            out.insert("speed_drift".into(), num(trace.speed_drift()));
            out.insert(
                "stats".into(),
                json!({ "accepted": trace.stats.accepted, "rejected": trace.stats.rejected, "rhs_evaluations": trace.stats.rhs_evaluations }),
            );
            out.insert("overall_pass".into(), Value::Bool(true));
            Ok(Outcome { report: Value::Object(out), pass: true, failing: Vec::new(), csv: Some(trace.to_csv()) })
        }
        Err(GeometryError::ZeroVelocity) => Err(GeometryError::ZeroVelocity.into()),
        Err(e) => {
            out.insert("error".into(), Value::String(e.to_string()));
            out.insert("overall_pass".into(), Value::Bool(false));
            Ok(Outcome { report: Value::Object(out), pass: false, failing: vec!["integration".into()], csv: None })
        }
    }
}

fn point_json(pt: &BasePoint) -> Value {
    json!({ "t": nums(&pt.t), "s": nums(&pt.s) })
}

/// Affine-map checks for the scenario map.
pub fn run_affine(sc: &Scenario) -> ScenarioResult<Outcome> {
    let src = sc.source_structure()?;
    let tgt = sc.target_structure()?;
    let m = sc.smooth_map(&src, &tgt)?;
    let checks: Vec<String> = match &sc.checks {
        Some(c) => {
            if let Some(bad) = c.iter().find(|x| !AFFINE_CHECKS.contains(&x.as_str())) {
                return Err(ScenarioError::Invalid(format!("unknown check '{bad}'")));
            }
            c.clone()
        }
        None => DEFAULT_AFFINE_CHECKS.iter().map(|s| s.to_string()).collect(),
    };
    let wants = |name: &str| checks.iter().any(|c| c == name);
    let pts = sample_base_points(&src, &sc.sampling)?;
    let mut out = header("affine", sc);
    out.insert("seed".into(), Value::from(sc.sampling.seed()));
    out.insert("samples".into(), Value::from(pts.len()));
    out.insert("map".into(), Value::Array(m.component_texts().iter().cloned().map(Value::String).collect()));
    let mut failing = Vec::new();

    if wants("nondegeneracy") {
        let ts: Vec<Vec<f64>> = pts.iter().map(|p| p.t.clone()).collect();
        let v = match nondegeneracy_check(&m, &ts) {
            Ok(r) => {
                if !r.pass {
                    failing.push("nondegeneracy".into());
                }
                json!({ "min_sigma": num(r.min_sigma), "threshold": num(r.threshold), "witness": r.witness, "pass": r.pass })
            }
            Err(e) => {
                failing.push("nondegeneracy".into());
                json!({ "error": e.to_string(), "pass": false })
            }
        };
        out.insert("nondegeneracy".into(), v);
    }

    if wants("affine") {
        let eps = sc.tolerances.affine.unwrap_or(AFFINE_TOL);
        let mut sup = 0.0f64;
        let mut witness: Option<&BasePoint> = None;
        let mut errors = Vec::new();
        for (k, pt) in pts.iter().enumerate() {
            match affine_residual(&src, &tgt, &m, pt) {
                Ok(r) => {
                    if r.sup > sup || witness.is_none() {
                        sup = sup.max(r.sup);
                        witness = Some(pt);
                    }
                }
                Err(e) => errors.push(format!("sample {k}: {e}")),
            }
        }
        let ok = errors.is_empty() && sup <= eps;
        if !ok {
            failing.push("affine".into());
        }
        let mut a = Map::new();
        a.insert("tau_sup".into(), num(sup));
        a.insert("threshold".into(), num(eps));
        a.insert("verdict".into(), Value::String(if ok { "affine" } else { "not-affine" }.into()));
        if let (false, Some(w)) = (ok, witness) {
            a.insert("witness".into(), point_json(w));
        }
        if !errors.is_empty() {
            a.insert("errors".into(), Value::Array(errors.into_iter().map(Value::String).collect()));
        }
        a.insert("pass".into(), Value::Bool(ok));
        out.insert("affine".into(), Value::Object(a));
    }

    if wants("isometry") {
        let tol = sc.tolerances.isometry.unwrap_or(DEFAULT_ISOMETRY_TOL);
        let v = match isometry_check(&src, &tgt, &m, &pts) {
            Ok(r) => {
                let ok = r.pass(tol);
                if !ok {
                    failing.push("isometry".into());
                }
                json!({ "scalar_residual": num(r.scalar_residual), "tensor_residual": num(r.tensor_residual), "threshold": num(tol), "pass": ok })
            }
            Err(e) => {
                failing.push("isometry".into());
                json!({ "error": e.to_string(), "pass": false })
            }
        };
        out.insert("isometry".into(), v);
    }

    if wants("tension") {
        let tol = sc.tolerances.tension.unwrap_or(DEFAULT_TENSION_TOL);
        let mut worst = 0.0f64;
        let mut at: Option<Vec<f64>> = None;
        let mut errors = Vec::new();
        for (k, pt) in pts.iter().enumerate() {
            match tension_field(&src, &tgt, &m, pt) {
                Ok(tau) => {
                    let mx = tau.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                    if mx >= worst || at.is_none() {
                        worst = worst.max(mx);
                        at = Some(tau.to_vec());
                    }
                }
                Err(e) => errors.push(format!("sample {k}: {e}")),
            }
        }
        let ok = errors.is_empty() && worst <= tol;
        if !ok {
            failing.push("tension".into());
        }
        let mut t = Map::new();
        t.insert("max_abs".into(), num(worst));
        t.insert("threshold".into(), num(tol));
        if let Some(v) = at {
            t.insert("worst_components".into(), nums(&v));
        }
        if !errors.is_empty() {
            t.insert("errors".into(), Value::Array(errors.into_iter().map(Value::String).collect()));
        }
        t.insert("pass".into(), Value::Bool(ok));
        out.insert("tension".into(), Value::Object(t));
    }

    if wants("transport") {
        let tol = sc.tolerances.transport.unwrap_or(DEFAULT_TRANSPORT_TOL);
        let first = pts.first().ok_or_else(|| ScenarioError::Invalid("sampling produced no points".into()))?;
        let t0 = sc.transport.t0.clone().unwrap_or_else(|| first.t.clone());
        let v0 = match &sc.transport.v0 {
            Some(v) => v.clone(),
            None => {
                // unit F-speed along the first sampled direction
                let f = src.f(first)?;
                first.s.iter().map(|x| x / f).collect()
            }
        };
        let tmax = sc.transport.tmax.unwrap_or(DEFAULT_TRANSPORT_TMAX);
        let itol = sc.transport.tol.unwrap_or(DEFAULT_TRANSPORT_INTEGRATOR_TOL);
        let init = CurveState::new(0.0, t0.clone(), v0.clone());
        let v = match autoparallel_transport_test(&src, &tgt, &m, &init, tmax, itol) {
            Ok(r) => {
                let ok = r.sup_residual <= tol;
                if !ok {
                    failing.push("transport".into());
                }
                json!({ "t0": nums(&t0), "v0": nums(&v0), "tmax": num(tmax), "sup_residual": num(r.sup_residual),
                        "worst_time": num(r.worst_time), "samples": r.samples, "threshold": num(tol), "pass": ok })
            }
            Err(e) => {
                failing.push("transport".into());
                json!({ "error": e.to_string(), "pass": false })
            }
        };
        out.insert("transport".into(), v);
    }

    let pass = failing.is_empty();
    out.insert("overall_pass".into(), Value::Bool(pass));
    Ok(Outcome { report: Value::Object(out), pass, failing, csv: None })
}

/// Closed-form versus general-formula comparison on the jet space.
pub fn run_jet_report(sc: &Scenario) -> ScenarioResult<Outcome> {
    let src = sc.source_structure()?;
    let tgt = sc.target_structure()?;
    let opts = CrossCheckOptions {
        scenario: Some(sc.name()),
        threads: None,
        tolerance: Some(sc.tolerances.jet_cross.unwrap_or(CROSS_TOL)),
        corrupt_block: sc.corrupt_block.clone(),
    };
    let rep = cross_validate(&src, &tgt, &sc.sampling, &opts)?;
    let mut report = match rep.to_json() {
        Value::Object(m) => m,
        _ => unreachable!("report is an object"),
    };
    for (k, v) in header("jet-report", sc) {
        report.insert(k, v);
    }
    report.insert("source".into(), Value::String(src.label().into()));
    report.insert("target".into(), Value::String(tgt.label().into()));
    Ok(Outcome { report: Value::Object(report), pass: rep.overall_pass, failing: rep.failing(), csv: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_catalog_entries() {
        let sc = Scenario::from_json_str(
            r#"{"name": "x", "source": {"kind": "randers_standard", "dim": 2, "b": 0.3},
                "target": {"kind": "round_sphere"}, "sampling": {"seed": 3, "count": 4}}"#,
        )
        .unwrap();
        assert_eq!(sc.sampling.seed(), 3);
        assert_eq!(sc.target_structure().unwrap().label(), "round_sphere");
    }

    #[test]
    fn json_errors_carry_position() {
        match Scenario::from_json_str("{\n  \"source\": ") {
            Err(ScenarioError::Json { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let r = Scenario::from_json_str(r#"{"source": {"kind": "euclidean", "dim": 2}, "sampling": {"sed": 1}}"#);
        assert!(matches!(r, Err(ScenarioError::Json { .. })));
    }

    #[test]
    fn overrides_take_precedence() {
        let base = CurveSpec { t0: Some(vec![1.0]), tmax: Some(2.0), ..Default::default() };
        let m = base.merged(&CurveSpec { tmax: Some(5.0), ..Default::default() });
        assert_eq!(m.t0, Some(vec![1.0]));
        assert_eq!(m.tmax, Some(5.0));
    }
}
