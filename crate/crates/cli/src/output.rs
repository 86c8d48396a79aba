//! Tabular output in CSV or JSON.
//!
//! Absent values are empty CSV cells and JSON `null`. Files are written to a
//! temporary sibling and renamed, so a failed run never leaves partial output.

use linprobit::analysis::SweepResult;
use linprobit::bench::BenchResult;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

use crate::config::Format;
use crate::CliError;

pub const SWEEP_COLUMNS: [&str; 9] = [
    "m",
    "n",
    "snr_db",
    "estimator",
    "mse_emp_mean",
    "mse_emp_stderr",
    "mse_closed_form",
    "trials",
    "failures",
];

pub const BENCH_COLUMNS: [&str; 7] = [
    "dataset",
    "estimator",
    "acc_mean",
    "acc_std",
    "auc_mean",
    "auc_std",
    "sigma_x_sq_mode",
];

#[derive(Serialize)]
struct SweepRow<'a> {
    m: usize,
    n: usize,
    snr_db: f64,
    estimator: &'a str,
    mse_emp_mean: Option<f64>,
    mse_emp_stderr: Option<f64>,
    mse_closed_form: Option<f64>,
    trials: usize,
    failures: usize,
}

#[derive(Serialize)]
struct BenchRow<'a> {
    dataset: &'a str,
    estimator: &'a str,
    acc_mean: Option<f64>,
    acc_std: Option<f64>,
    auc_mean: Option<f64>,
    auc_std: Option<f64>,
    sigma_x_sq_mode: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Three decimals, as a value that prints identically in CSV and JSON.
fn three(v: Option<f64>) -> Option<f64> {
    v.map(|x| format!("{x:.3}").parse().expect("formatted float parses"))
}

fn three_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(CliError::runtime)?;
    for r in rows {
        w.write_record(&r).map_err(CliError::runtime)?;
    }
    w.into_inner().map_err(|e| CliError::runtime(e.to_string()))
}

fn json_bytes<T: Serialize>(rows: &T) -> Result<Vec<u8>, CliError> {
    let mut out = serde_json::to_vec_pretty(rows).map_err(CliError::runtime)?;
    out.push(b'\n');
    Ok(out)
}

pub fn render_sweep(rows: &[SweepResult], format: Format) -> Result<Vec<u8>, CliError> {
    match format {
        Format::Csv => csv_bytes(
            &SWEEP_COLUMNS,
            rows.iter().map(|r| {
                vec![
                    r.m.to_string(),
                    r.n.to_string(),
                    r.snr_db.to_string(),
                    r.estimator.name().to_string(),
                    cell(r.mse_empirical_mean),
                    cell(r.mse_empirical_stderr),
                    cell(r.mse_closed_form),
                    r.trials.to_string(),
                    r.failures.to_string(),
                ]
            }),
        ),
        Format::Json => json_bytes(
            &rows
                .iter()
                .map(|r| SweepRow {
                    m: r.m,
                    n: r.n,
                    snr_db: r.snr_db,
                    estimator: r.estimator.name(),
                    mse_emp_mean: r.mse_empirical_mean,
                    mse_emp_stderr: r.mse_empirical_stderr,
                    mse_closed_form: r.mse_closed_form,
                    trials: r.trials,
                    failures: r.failures,
                })
                .collect::<Vec<_>>(),
        ),
    }
}

pub fn render_bench(rows: &[BenchResult], format: Format) -> Result<Vec<u8>, CliError> {
    match format {
        Format::Csv => csv_bytes(
            &BENCH_COLUMNS,
            rows.iter().map(|r| {
                vec![
                    r.dataset.clone(),
                    r.estimator.name().to_string(),
                    three_cell(r.acc_mean),
                    three_cell(r.acc_std),
                    three_cell(r.auc_mean),
                    three_cell(r.auc_std),
                    three_cell(r.sigma_x_sq_mode),
                ]
            }),
        ),
        Format::Json => json_bytes(
            &rows
                .iter()
                .map(|r| BenchRow {
                    dataset: &r.dataset,
                    estimator: r.estimator.name(),
                    acc_mean: three(r.acc_mean),
                    acc_std: three(r.acc_std),
                    auc_mean: three(r.auc_mean),
                    auc_std: three(r.auc_std),
                    sigma_x_sq_mode: three(r.sigma_x_sq_mode),
                })
                .collect::<Vec<_>>(),
        ),
    }
}

/// Writes `bytes` to `path` atomically, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    let Some(path) = path else {
        let mut out = std::io::stdout().lock();
        return out.write_all(bytes).and_then(|_| out.flush()).map_err(CliError::runtime);
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.partial"));
    let result = std::fs::write(&tmp, bytes).and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(CliError::runtime(format!("cannot write {}: {e}", path.display())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use linprobit::estimators::EstimatorId;

    #[test]
    fn absent_values_are_empty_or_null() {
        let rows = vec![SweepResult {
            m: 10,
            n: 20,
            snr_db: -5.0,
            estimator: EstimatorId::Ls,
            mse_empirical_mean: None,
            mse_empirical_stderr: None,
            mse_closed_form: None,
            trials: 100,
            failures: 0,
        }];
        let csv = String::from_utf8(render_sweep(&rows, Format::Csv).unwrap()).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "10,20,-5,LS,,,,100,0");
        let json: serde_json::Value = serde_json::from_slice(&render_sweep(&rows, Format::Json).unwrap()).unwrap();
        assert!(json[0]["mse_emp_mean"].is_null());
        assert_eq!(json[0]["estimator"], "LS");
    }

    #[test]
    fn bench_values_use_three_decimals_in_both_formats() {
        let rows = vec![BenchResult {
            dataset: "toy".into(),
            estimator: EstimatorId::Lmmse,
            acc_mean: Some(0.72719),
            acc_std: Some(0.0415),
            auc_mean: Some(0.76851),
            auc_std: Some(0.049),
            sigma_x_sq_mode: Some(0.031_622_776_6),
            note: None,
        }];
        let csv = String::from_utf8(render_bench(&rows, Format::Csv).unwrap()).unwrap();
        let fields: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(fields[2], "0.727");
        let json: serde_json::Value = serde_json::from_slice(&render_bench(&rows, Format::Json).unwrap()).unwrap();
        for (k, col) in BENCH_COLUMNS.iter().enumerate().skip(2) {
            assert_eq!(json[0][col].as_f64().unwrap(), fields[k].parse::<f64>().unwrap());
        }
    }

    #[test]
    fn failed_write_leaves_nothing() {
        let dir = std::env::temp_dir().join("linprobit-no-such-dir-for-test");
        let path = dir.join("out.csv");
        assert!(emit(Some(&path), b"x").is_err());
        assert!(!path.exists());
    }
}
