//! Cross-validated benchmark on labelled datasets.
//!
//! Each (estimator, partition) cell runs k-fold cross validation: features are
//! standardized with training-fold statistics, `sigma_x^2` is grid-searched
//! on an inner validation split of the training fold with `sigma_w^2 = 1`,
//! and the refit estimate scores the test fold by `d^T x_hat`. A partition's
//! ACC and AUC are means over its folds; reported values are the mean and
//! standard deviation over partitions.

mod cv;
mod data;
mod metrics;

pub use cv::{inner_split, kfold_split, CvPlan, Fold, VALIDATION_FRACTION};
pub use data::{load_dataset, parse_dataset, Dataset, DatasetError, IngestionSpec};
pub use metrics::{evaluate_acc, evaluate_auc, MetricError};

use crate::analysis::mean_std;
use crate::estimators::{EstimatorError, EstimatorId, EstimatorReport, PreparedEstimator, SolverConfig};
use crate::model::{ModelError, ObservationVector, ProbitProblem};
use crate::rng::{mix_seed, substream};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

/// Noise variance used for every fit.
pub const BENCH_NOISE_VARIANCE: f64 = 1.0;

/// Estimators in table order.
pub const BENCH_ESTIMATORS: [EstimatorId; 5] = [
    EstimatorId::Lmmse,
    EstimatorId::Ls,
    EstimatorId::Map,
    EstimatorId::Pm,
    EstimatorId::LogitMap,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("invalid CV plan: {0}")]
    InvalidPlan(String),
    #[error("{samples} samples cannot fill {folds} folds")]
    TooFewSamples { samples: usize, folds: usize },
    #[error("sigma_x^2 grid is empty")]
    EmptyGrid,
    #[error("sigma_x^2 grid value {0} is not positive and finite")]
    InvalidGrid(f64),
    #[error("{estimator} failed at every grid value; last error: {reason}")]
    NoUsableGridPoint { estimator: EstimatorId, reason: String },
    #[error("{estimator} returned an unusable estimate: {reason}")]
    Unusable { estimator: EstimatorId, reason: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl BenchError {
    /// Errors that make an estimator inapplicable rather than the run invalid.
    fn is_inapplicable(&self) -> bool {
        matches!(
            self,
            BenchError::Estimator(EstimatorError::LsDoesNotExist { .. })
                | BenchError::NoUsableGridPoint { .. }
                | BenchError::Unusable { .. }
        )
    }
}

/// Nine values log-spaced over `[1e-2, 1e2]`.
pub fn default_sigma_grid() -> Vec<f64> {
    (0..9).map(|k| 10f64.powf(-2.0 + 0.5 * k as f64)).collect()
}

/// Column means and standard deviations of the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    /// Sample standard deviation, with constant columns left unscaled.
    pub scale: DVector<f64>,
}

impl Standardizer {
    pub fn fit(features: &DMatrix<f64>, rows: &[usize]) -> Self {
        let n = features.ncols();
        let k = rows.len() as f64;
        let mut mean = DVector::zeros(n);
        let mut scale = DVector::zeros(n);
        for j in 0..n {
            let col = features.column(j);
            let mu = rows.iter().map(|&i| col[i]).sum::<f64>() / k;
            let var = rows.iter().map(|&i| (col[i] - mu) * (col[i] - mu)).sum::<f64>() / (k - 1.0).max(1.0);
            mean[j] = mu;
            scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Self { mean, scale }
    }

    /// Standardized copy of `rows`, with a trailing ones column if `intercept`.
    pub fn apply(&self, features: &DMatrix<f64>, rows: &[usize], intercept: bool) -> DMatrix<f64> {
        let n = features.ncols();
        let mut out = DMatrix::from_element(rows.len(), n + usize::from(intercept), 1.0);
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..n {
                out[(r, j)] = (features[(i, j)] - self.mean[j]) / self.scale[j];
            }
        }
        out
    }
}

fn select(labels: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|&i| labels[i]))
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    x.select_rows(rows)
}

/// Fits `id` with `C_x = sigma_x^2 I` and `C_w = I` on a standardized design.
pub fn fit_at(
    id: EstimatorId,
    design: &DMatrix<f64>,
    labels: &DVector<f64>,
    sigma_x_sq: f64,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<EstimatorReport, BenchError> {
    let problem = ProbitProblem::isotropic(design.clone(), sigma_x_sq, BENCH_NOISE_VARIANCE, 0.0)?;
    let obs = ObservationVector::binary(labels.clone())?;
    let report = PreparedEstimator::new(id, &problem, cfg)?.fit(&obs, &mut substream(seed, 0))?;
    if !report.is_usable() {
        return Err(BenchError::Unusable {
            estimator: id,
            reason: report.diagnostics.warnings.join("; "),
        });
    }
    Ok(report)
}

fn scores(design: &DMatrix<f64>, estimate: &DVector<f64>) -> Vec<f64> {
    (design * estimate).iter().copied().collect()
}

/// Sorted, deduplicated, validated grid.
fn normalize_grid(grid: &[f64]) -> Result<Vec<f64>, BenchError> {
    if grid.is_empty() {
        return Err(BenchError::EmptyGrid);
    }
    if let Some(&g) = grid.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(BenchError::InvalidGrid(g));
    }
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    Ok(g)
}

/// Picks the grid value with the best validation ACC; ties go to the smaller value.
///
/// The validation split is the last quarter of a shuffle seeded by `seed`.
/// A grid value whose fit fails is skipped.
pub fn grid_search_sigma_x(
    design: &DMatrix<f64>,
    labels: &DVector<f64>,
    id: EstimatorId,
    grid: &[f64],
    cfg: &SolverConfig,
    seed: u64,
) -> Result<f64, BenchError> {
    let grid = normalize_grid(grid)?;
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let (fit_rows, val_rows) = inner_split(labels.len(), seed);
    let fit_x = select_rows(design, &fit_rows);
    let fit_y = select(labels, &fit_rows);
    let val_x = select_rows(design, &val_rows);
    let val_y: Vec<f64> = val_rows.iter().map(|&i| labels[i]).collect();
    let mut best: Option<(f64, f64)> = None;
    let mut last_err = None;
    for (g, &sx2) in grid.iter().enumerate() {
        match fit_at(id, &fit_x, &fit_y, sx2, cfg, mix_seed(seed, &[g as u64])) {
            Ok(report) => {
                let acc = evaluate_acc(&scores(&val_x, &report.estimate), &val_y)?;
                if best.is_none_or(|(_, b)| acc > b) {
                    best = Some((sx2, acc));
                }
            }
            Err(e) if e.is_inapplicable() || matches!(e, BenchError::Estimator(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    best.map(|(sx2, _)| sx2).ok_or_else(|| BenchError::NoUsableGridPoint {
        estimator: id,
        reason: last_err.map(|e| e.to_string()).unwrap_or_default(),
    })
}

/// Result of one cross-validation fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub estimate: DVector<f64>,
    pub sigma_x_sq: f64,
    pub acc: f64,
    /// Absent when the test fold holds a single class.
    pub auc: Option<f64>,
}

/// Standardize, grid-search, refit on the training fold, and score the test fold.
pub fn evaluate_fold(
    dataset: &Dataset,
    fold: &Fold,
    id: EstimatorId,
    grid: &[f64],
    cfg: &SolverConfig,
    seed: u64,
) -> Result<FoldOutcome, BenchError> {
    let std = Standardizer::fit(&dataset.features, &fold.train);
    let train_x = std.apply(&dataset.features, &fold.train, dataset.intercept);
    let train_y = select(&dataset.labels, &fold.train);
    let test_x = std.apply(&dataset.features, &fold.test, dataset.intercept);
    let test_y: Vec<f64> = fold.test.iter().map(|&i| dataset.labels[i]).collect();
    let sigma_x_sq = grid_search_sigma_x(&train_x, &train_y, id, grid, cfg, seed)?;
    let report = fit_at(id, &train_x, &train_y, sigma_x_sq, cfg, mix_seed(seed, &[u64::MAX]))?;
    let s = scores(&test_x, &report.estimate);
    let acc = evaluate_acc(&s, &test_y)?;
    let auc = match evaluate_auc(&s, &test_y) {
        Ok(v) => Some(v),
        Err(MetricError::SingleClass) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(FoldOutcome {
        estimate: report.estimate,
        sigma_x_sq,
        acc,
        auc,
    })
}

/// Aggregated performance of one estimator on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub dataset: String,
    pub estimator: EstimatorId,
    /// The metric fields are absent when the estimator is inapplicable.
    pub acc_mean: Option<f64>,
    pub acc_std: Option<f64>,
    pub auc_mean: Option<f64>,
    pub auc_std: Option<f64>,
    /// Most frequently selected `sigma_x^2`, smaller value on ties.
    pub sigma_x_sq_mode: Option<f64>,
    /// Why the estimator is absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

struct CellOutcome {
    acc: f64,
    auc: Option<f64>,
    chosen: Vec<f64>,
}

fn cell_seed(plan: &CvPlan, id: EstimatorId, partition: usize, fold: usize) -> u64 {
    let rank = EstimatorId::ALL.iter().position(|&e| e == id).unwrap_or(0) as u64;
    mix_seed(plan.seed, &[rank, partition as u64, fold as u64])
}

fn mode(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, usize)> = None;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        if best.is_none_or(|(_, c)| j > c) {
            best = Some((sorted[i], j));
        }
        i += j;
    }
    best.map(|(v, _)| v)
}

/// Runs the cross-validated benchmark for each estimator.
///
/// Cells run in parallel and are reduced in index order, so results do not
/// depend on the thread count. An estimator that is inapplicable to the
/// dataset (LS with fewer training rows than features, or every fit
/// unusable) gets a row with absent metrics and a note.
pub fn run_benchmark(
    dataset: &Dataset,
    estimators: &[EstimatorId],
    plan: &CvPlan,
    grid: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<BenchResult>, BenchError> {
    normalize_grid(grid)?;
    cfg.validate()?;
    let splits = kfold_split(dataset.len(), plan)?;
    let cells: Vec<(usize, usize)> = (0..estimators.len())
        .flat_map(|k| (0..splits.len()).map(move |p| (k, p)))
        .collect();
    let outcomes: Vec<Result<CellOutcome, BenchError>> = cells
        .par_iter()
        .map(|&(k, p)| {
            let id = estimators[k];
            let mut accs = Vec::with_capacity(plan.folds);
            let mut aucs = Vec::with_capacity(plan.folds);
            let mut chosen = Vec::with_capacity(plan.folds);
            for (f, fold) in splits[p].iter().enumerate() {
                let out = evaluate_fold(dataset, fold, id, grid, cfg, cell_seed(plan, id, p, f))?;
                accs.push(out.acc);
                aucs.extend(out.auc);
                chosen.push(out.sigma_x_sq);
            }
            Ok(CellOutcome {
                acc: mean_std(&accs).0,
                auc: (!aucs.is_empty()).then(|| mean_std(&aucs).0),
                chosen,
            })
        })
        .collect();

    let mut rows = Vec::with_capacity(estimators.len());
    for (k, &id) in estimators.iter().enumerate() {
        let mut row = BenchResult {
            dataset: dataset.name.clone(),
            estimator: id,
            acc_mean: None,
            acc_std: None,
            auc_mean: None,
            auc_std: None,
            sigma_x_sq_mode: None,
            note: None,
        };
        let mut accs = Vec::new();
        let mut aucs = Vec::new();
        let mut chosen = Vec::new();
        for (c, outcome) in cells.iter().zip(&outcomes) {
            if c.0 != k {
                continue;
            }
            match outcome {
                Ok(o) => {
                    accs.push(o.acc);
                    aucs.extend(o.auc);
                    chosen.extend_from_slice(&o.chosen);
                }
                Err(e) if e.is_inapplicable() => {
                    row.note = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(e.clone()),
            }
        }
        if row.note.is_none() {
            let (am, asd) = mean_std(&accs);
            row.acc_mean = Some(am);
            row.acc_std = Some(asd);
            if !aucs.is_empty() {
                let (um, usd) = mean_std(&aucs);
                row.auc_mean = Some(um);
                row.auc_std = Some(usd);
            }
            row.sigma_x_sq_mode = mode(&chosen);
        }
        rows.push(row);
    }
    Ok(rows)
}
