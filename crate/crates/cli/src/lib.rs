//! Commands behind the `linprobit` binary.
//!
//! Exit codes: 0 success, 1 some datasets failed, 2 configuration error,
//! 3 runtime failure, 4 verification failure.

pub mod config;
pub mod output;
pub mod verify;

use config::{BenchConfig, EstimateConfig, SweepConfig, VerifyConfig};
use linprobit::analysis::{lmmse_mse_closed_form, ls_mse_closed_form, snr_sweep};
use linprobit::bench::{load_dataset, run_benchmark, IngestionSpec};
use linprobit::estimators::{EstimatorId, EstimatorReport, PreparedEstimator};
use linprobit::model::{ObservationVector, ProbitProblem, SyntheticConfig};
use linprobit::rng::{mix_seed, substream};
use linprobit::linearize;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::fmt;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }

    pub fn runtime(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn validate_sweep(cfg: &SweepConfig) -> Result<(), CliError> {
    if cfg.sizes.is_empty() {
        return Err(CliError::config("no (M, N) sizes given"));
    }
    if cfg.snr_grid_db.is_empty() {
        return Err(CliError::config("SNR grid is empty"));
    }
    if cfg.estimators.is_empty() {
        return Err(CliError::config("no estimators selected"));
    }
    if cfg.trials < 2 {
        return Err(CliError::config(format!("trials must be at least 2, got {}", cfg.trials)));
    }
    cfg.solver.validate().map_err(CliError::config)?;
    for &[m, n] in &cfg.sizes {
        for &snr_db in &cfg.snr_grid_db {
            SyntheticConfig {
                m,
                n,
                sigma_x_sq: cfg.sigma_x_sq,
                snr_db,
                seed: cfg.seed,
            }
            .validate()
            .map_err(CliError::config)?;
        }
    }
    Ok(())
}

/// Runs the SNR sweep for every configured `(M, N)` and writes one row per
/// `(M, N, snr_db, estimator)`. Each size draws its design from a seed mixed
/// with `(M, N)`, so sizes can be run separately with identical results.
pub fn cmd_sweep(cfg: &SweepConfig) -> Result<(), CliError> {
    validate_sweep(cfg)?;
    let mut rows = Vec::new();
    for &[m, n] in &cfg.sizes {
        let base = SyntheticConfig {
            m,
            n,
            sigma_x_sq: cfg.sigma_x_sq,
            snr_db: 0.0,
            seed: mix_seed(cfg.seed, &[m as u64, n as u64]),
        };
        let part = snr_sweep(&base, &cfg.snr_grid_db, &cfg.estimators, cfg.trials, &cfg.solver)
            .map_err(|e| CliError::runtime(format!("sweep M={m} N={n}: {e}")))?;
        rows.extend(part);
    }
    let bytes = output::render_sweep(&rows, cfg.format)?;
    output::emit(cfg.output.as_deref(), &bytes)
}

fn sidecar_spec(path: &Path) -> Option<PathBuf> {
    let side = path.with_extension("json");
    (side != path && side.exists()).then_some(side)
}

fn resolve_spec(entry: &config::DatasetEntry, fallback: Option<&IngestionSpec>) -> Result<IngestionSpec, String> {
    if let Some(spec) = &entry.spec {
        return Ok(spec.clone());
    }
    if let Some(side) = sidecar_spec(&entry.path) {
        let text = std::fs::read_to_string(&side).map_err(|e| format!("cannot read {}: {e}", side.display()))?;
        return serde_json::from_str(&text).map_err(|e| format!("ingestion spec {}: {e}", side.display()));
    }
    fallback
        .cloned()
        .ok_or_else(|| "no ingestion spec (give --label-column, --spec, or a sidecar .json)".into())
}

/// Runs the cross-validated benchmark on every dataset.
///
/// A dataset that fails to load or run is reported on stderr and skipped;
/// the remaining rows are still written and the exit code is 1.
pub fn cmd_bench(cfg: &BenchConfig) -> Result<i32, CliError> {
    if cfg.datasets.is_empty() {
        return Err(CliError::config("no datasets given"));
    }
    if cfg.estimators.is_empty() {
        return Err(CliError::config("no estimators selected"));
    }
    cfg.plan.validate().map_err(CliError::config)?;
    cfg.solver.validate().map_err(CliError::config)?;
    if cfg.grid.is_empty() || cfg.grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(CliError::config("sigma_x^2 grid must be nonempty and positive"));
    }
    let mut rows = Vec::new();
    let mut failed = 0;
    for entry in &cfg.datasets {
        let spec = if !entry.path.exists() {
            Err("file not found".to_string())
        } else {
            resolve_spec(entry, cfg.spec.as_ref())
        };
        let result = spec.and_then(|spec| {
            let ds = load_dataset(&entry.path, &spec).map_err(|e| e.to_string())?;
            run_benchmark(&ds, &cfg.estimators, &cfg.plan, &cfg.grid, &cfg.solver).map_err(|e| e.to_string())
        });
        match result {
            Ok(part) => {
                for r in part.iter().filter(|r| r.note.is_some()) {
                    eprintln!(
                        "note: {} on {}: {}",
                        r.estimator,
                        r.dataset,
                        r.note.as_deref().unwrap_or_default()
                    );
                }
                rows.extend(part);
            }
            Err(e) => {
                failed += 1;
                eprintln!("error: dataset {}: {e}", entry.path.display());
            }
        }
    }
    let bytes = output::render_bench(&rows, cfg.format)?;
    output::emit(cfg.output.as_deref(), &bytes)?;
    Ok(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

/// Reads every numeric cell of a headerless CSV, row by row.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(CliError::config(format!("{}: row {} has a different width", path.display(), i + 1)));
        }
        for cell in rec.iter() {
            values.push(cell.parse::<f64>().map_err(|_| {
                CliError::config(format!("{}: row {}: `{cell}` is not a number", path.display(), i + 1))
            })?);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| CliError::config(format!("{} is empty", path.display())))?;
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

#[derive(Serialize)]
struct EstimateOutput {
    #[serde(flatten)]
    report: EstimatorReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    mse_closed_form: Option<f64>,
}

/// Fits one estimator to a design and observation loaded from CSV files.
pub fn cmd_estimate(cfg: &EstimateConfig, design: &Path, observations: &Path) -> Result<(), CliError> {
    cfg.solver.validate().map_err(CliError::config)?;
    let d = read_matrix(design)?;
    let y = read_matrix(observations)?;
    let y = DVector::from_iterator(y.len(), y.transpose().iter().copied());
    let problem = ProbitProblem::isotropic(d, cfg.sigma_x_sq, cfg.sigma_w_sq, cfg.smoothing).map_err(CliError::config)?;
    let obs = if cfg.smoothing == 0.0 {
        ObservationVector::binary(y)
    } else {
        ObservationVector::smoothed(y)
    }
    .map_err(CliError::config)?;
    let lin = linearize(&problem).map_err(CliError::runtime)?;
    let est = PreparedEstimator::with_linearization(cfg.estimator, &problem, &lin, &cfg.solver).map_err(CliError::runtime)?;
    let report = est.fit(&obs, &mut substream(cfg.seed, 0)).map_err(CliError::runtime)?;
    let mse_closed_form = match cfg.estimator {
        EstimatorId::Lmmse => lmmse_mse_closed_form(&lin, problem.prior_cov()).ok(),
        EstimatorId::Ls => ls_mse_closed_form(&lin, problem.prior_cov()).ok(),
        _ => None,
    };
    let mut bytes = serde_json::to_vec_pretty(&EstimateOutput { report, mse_closed_form }).map_err(CliError::runtime)?;
    bytes.push(b'\n');
    output::emit(cfg.output.as_deref(), &bytes)
}

/// Runs the verification suite, prints a table, and returns 0 or 4.
pub fn cmd_verify(cfg: &VerifyConfig) -> i32 {
    let checks = verify::run_checks(cfg);
    print!("{}", verify::render_table(&checks));
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        EXIT_OK
    } else {
        eprintln!("failed properties: {}", failed.join(", "));
        EXIT_VERIFY
    }
}
