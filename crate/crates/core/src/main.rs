use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use finslerlab::report::to_canonical_json;
use finslerlab::scenario::{run_affine, run_geodesic, run_jet_report, run_validate, CurveSpec, Outcome, Scenario, ScenarioError};

#[derive(Parser)]
#[command(name = "finslerlab", version, about = "Finsler geometry checks driven by JSON scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Structure identities, positivity and dual-formula residuals.
    Validate {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate an autoparallel of the source structure.
    Geodesic {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Start position, comma separated (overrides the scenario).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        t0: Option<Vec<f64>>,
        /// Start velocity, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        v0: Option<Vec<f64>>,
        /// Final curve parameter.
        #[arg(long)]
        tmax: Option<f64>,
        /// Integrator error tolerance.
        #[arg(long)]
        tol: Option<f64>,
        /// Number of evenly spaced output samples.
        #[arg(long)]
        samples: Option<usize>,
        /// Write the sampled trace as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Affine, tension, isometry and transport checks for the scenario map.
    Affine {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare closed-form jet-space torsions and curvatures with the general formulas.
    JetReport {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_text(path: &Path, text: &str) -> Result<(), ScenarioError> {
    std::fs::write(path, text).map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })
}

fn run(cli: Cli) -> Result<(Outcome, Option<PathBuf>), ScenarioError> {
    match cli.command {
        Command::Validate { scenario, out } => Ok((run_validate(&Scenario::from_path(&scenario)?)?, out)),
        Command::Affine { scenario, out } => Ok((run_affine(&Scenario::from_path(&scenario)?)?, out)),
        Command::JetReport { scenario, out } => Ok((run_jet_report(&Scenario::from_path(&scenario)?)?, out)),
        Command::Geodesic { scenario, t0, v0, tmax, tol, samples, csv, out } => {
            let sc = Scenario::from_path(&scenario)?;
            let mut outcome = run_geodesic(&sc, &CurveSpec { t0, v0, tmax, tol, samples })?;
            if let (Some(path), Some(text)) = (&csv, &outcome.csv) {
                write_text(path, text)?;
                if let Some(obj) = outcome.report.as_object_mut() {
                    obj.insert("csv".into(), path.display().to_string().into());
                }
            }
            Ok((outcome, out))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok((outcome, out)) => {
            let text = to_canonical_json(&outcome.report);
            match out {
                Some(path) => {
                    if let Err(e) = write_text(&path, &text) {
                        eprintln!("error: {e}");
                        return ExitCode::from(2);
                    }
                }
                None => print!("{text}"),
            }
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("failed: {}", outcome.failing.join(", "));
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
