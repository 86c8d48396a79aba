//! Closed-form and Monte-Carlo MSE, and the synthetic SNR sweep.
//!
//! For the linearized model the MSE of both linear estimators is exact:
//!
//! ```text
//! L-MMSE: tr(C_x - E^T C_y^-1 E)
//! LS:     tr(C_x E^+ C_y E^+^T C_x - C_x)
//! ```

use crate::estimators::{ls_existence, EstimatorError, EstimatorId, EstimatorReport, PreparedEstimator, SolverConfig};
use crate::linearization::{linearize, Linearization, LinearizationError};
use crate::model::{generate_design, sample_instance, ModelError, ObservationVector, ProbitProblem, SyntheticConfig};
use crate::rng::{mix_seed, stream_id, substream, StreamRng, DESIGN_STREAM};
use nalgebra::{Cholesky, DMatrix};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

/// Slack allowed outside `[0, tr(C_x)]` before the L-MMSE MSE is rejected.
const CLOSED_FORM_SLACK: f64 = 1e-8;

/// Largest tolerated fraction of failed trials.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("closed-form MSE {value} lies outside [0, {upper}]")]
    Inconsistent { value: f64, upper: f64 },
    #[error("prior covariance has shape {got:?}, expected {expected} x {expected}")]
    PriorShape { expected: usize, got: (usize, usize) },
    #[error("at least 2 trials are required, got {0}")]
    TooFewTrials(usize),
    #[error("{failures} of {trials} trials failed; first failure: {first}")]
    TooManyFailures { failures: usize, trials: usize, first: String },
    #[error("SNR grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Linearization(#[from] LinearizationError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn check_prior(lin: &Linearization, prior_cov: &DMatrix<f64>) -> Result<(), AnalysisError> {
    let n = lin.n();
    if prior_cov.shape() != (n, n) {
        return Err(AnalysisError::PriorShape {
            expected: n,
            got: prior_cov.shape(),
        });
    }
    Ok(())
}

/// `tr(C_x - E^T C_y^-1 E)` via a Cholesky solve of `C_y` against `E`.
pub fn lmmse_mse_closed_form(lin: &Linearization, prior_cov: &DMatrix<f64>) -> Result<f64, AnalysisError> {
    check_prior(lin, prior_cov)?;
    let chol = Cholesky::new(lin.obs_cov.clone()).ok_or(EstimatorError::Factorization("C_y"))?;
    let solved = chol.solve(&lin.e_matrix);
    let explained = lin.e_matrix.dot(&solved);
    let upper = prior_cov.trace();
    let value = upper - explained;
    if !(value >= -CLOSED_FORM_SLACK && value <= upper + CLOSED_FORM_SLACK) {
        return Err(AnalysisError::Inconsistent { value, upper });
    }
    Ok(value.max(0.0))
}

/// `tr(C_x E^+ C_y E^+^T C_x) - tr(C_x)` with `E^+` from a thin QR of `E`.
///
/// Can exceed `tr(C_x)`.
pub fn ls_mse_closed_form(lin: &Linearization, prior_cov: &DMatrix<f64>) -> Result<f64, AnalysisError> {
    check_prior(lin, prior_cov)?;
    ls_existence(lin)?;
    let qr = lin.e_matrix.clone().qr();
    let e_pinv = qr
        .r()
        .solve_upper_triangular(&qr.q().transpose())
        .ok_or(EstimatorError::Factorization("the R factor of E"))?;
    let w = prior_cov * e_pinv;
    let spread = (&w * &lin.obs_cov).dot(&w);
    Ok((spread - prior_cov.trace()).max(0.0))
}

/// Sample mean and sample standard deviation (`n - 1` denominator).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Monte-Carlo MSE over the successful trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MseEstimate {
    pub mean: f64,
    /// Sample standard deviation of the squared errors over `sqrt(successes)`.
    pub stderr: f64,
    pub successes: usize,
    pub failures: usize,
}

fn summarize(errors: &[Result<f64, String>]) -> Result<MseEstimate, AnalysisError> {
    let ok: Vec<f64> = errors.iter().filter_map(|e| e.as_ref().ok().copied()).collect();
    let failures = errors.len() - ok.len();
    if failures as f64 > MAX_FAILURE_FRACTION * errors.len() as f64 || ok.len() < 2 {
        let first = errors
            .iter()
            .find_map(|e| e.as_ref().err().cloned())
            .unwrap_or_default();
        return Err(AnalysisError::TooManyFailures {
            failures,
            trials: errors.len(),
            first,
        });
    }
    let (mean, std) = mean_std(&ok);
    Ok(MseEstimate {
        mean,
        stderr: std / (ok.len() as f64).sqrt(),
        successes: ok.len(),
        failures,
    })
}

fn squared_error(
    x: &nalgebra::DVector<f64>,
    report: Result<EstimatorReport, EstimatorError>,
) -> Result<f64, String> {
    match report {
        Ok(r) if r.is_usable() => Ok((x - &r.estimate).norm_squared()),
        Ok(r) => Err(r.diagnostics.warnings.first().cloned().unwrap_or_else(|| "unusable estimate".into())),
        Err(e) => Err(e.to_string()),
    }
}

/// Averages `||x - x_hat||^2` over `trials` draws of `(x, y)` from `problem`.
///
/// Trial `t` draws from `substream(seed, t)`; the estimator continues on the
/// same stream after `(x, y)` has been sampled. Trials that error or return
/// an unusable estimate count as failures.
pub fn empirical_mse<F>(problem: &ProbitProblem, estimator: F, trials: usize, seed: u64) -> Result<MseEstimate, AnalysisError>
where
    F: Fn(&ObservationVector, &mut StreamRng) -> Result<EstimatorReport, EstimatorError> + Sync,
{
    if trials < 2 {
        return Err(AnalysisError::TooFewTrials(trials));
    }
    let errors: Vec<Result<f64, String>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(seed, t);
            let (x, y) = sample_instance(problem, &mut rng);
            squared_error(&x, estimator(&y, &mut rng))
        })
        .collect();
    summarize(&errors)
}

/// One row of an SNR sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub m: usize,
    pub n: usize,
    pub snr_db: f64,
    pub estimator: EstimatorId,
    /// Absent when the estimator does not exist or too many trials failed.
    pub mse_empirical_mean: Option<f64>,
    pub mse_empirical_stderr: Option<f64>,
    /// Present for the linear estimators only.
    pub mse_closed_form: Option<f64>,
    pub trials: usize,
    pub failures: usize,
}

/// `-20, -15, ..., 20` dB.
pub fn default_snr_grid() -> Vec<f64> {
    (-4..=4).map(|k| 5.0 * k as f64).collect()
}

/// The fixed design of a synthetic configuration, drawn from its reserved stream.
pub fn sweep_design(base: &SyntheticConfig) -> DMatrix<f64> {
    generate_design(base.m, base.n, &mut substream(base.seed, DESIGN_STREAM))
}

fn estimator_rank(id: EstimatorId) -> u64 {
    EstimatorId::ALL.iter().position(|&e| e == id).unwrap_or(0) as u64
}

/// MSE versus SNR for one `(M, N)` configuration.
///
/// One design `D` is drawn per configuration and kept across the grid; the
/// SNR is varied through `sigma_w^2`. Within a trial every estimator sees the
/// same `(x, y)`. Trial `t` at grid index `p` samples from stream
/// `stream_id(p, t)`; stochastic estimators draw from a separate stream keyed
/// by the estimator, so adding or removing estimators leaves the others'
/// numbers unchanged. Output is independent of the thread count.
pub fn snr_sweep(
    base: &SyntheticConfig,
    snr_grid_db: &[f64],
    estimators: &[EstimatorId],
    trials: usize,
    cfg: &SolverConfig,
) -> Result<Vec<SweepResult>, AnalysisError> {
    if snr_grid_db.is_empty() {
        return Err(AnalysisError::EmptyGrid);
    }
    if trials < 2 {
        return Err(AnalysisError::TooFewTrials(trials));
    }
    cfg.validate()?;
    let design = sweep_design(base);
    let mut out = Vec::with_capacity(snr_grid_db.len() * estimators.len());
    for (p, &snr_db) in snr_grid_db.iter().enumerate() {
        let point = SyntheticConfig { snr_db, ..*base };
        point.validate()?;
        let problem = ProbitProblem::isotropic(design.clone(), point.sigma_x_sq, point.noise_variance(), 0.0)?;
        let lin = linearize(&problem)?;
        let mut prepared = Vec::with_capacity(estimators.len());
        for &id in estimators {
            match PreparedEstimator::with_linearization(id, &problem, &lin, cfg) {
                Ok(est) => prepared.push(Some(est)),
                Err(EstimatorError::LsDoesNotExist { .. }) => prepared.push(None),
                Err(e) => return Err(e.into()),
            }
        }

        let per_trial: Vec<Vec<Result<f64, String>>> = (0..trials as u32)
            .into_par_iter()
            .map(|t| {
                let stream = stream_id(p as u32, t);
                let (x, y) = sample_instance(&problem, &mut substream(base.seed, stream));
                prepared
                    .iter()
                    .flatten()
                    .map(|est| {
                        let mut rng = substream(mix_seed(base.seed, &[1 + estimator_rank(est.id())]), stream);
                        squared_error(&x, est.fit(&y, &mut rng))
                    })
                    .collect()
            })
            .collect();

        let mut column = 0;
        for (k, &id) in estimators.iter().enumerate() {
            let mut row = SweepResult {
                m: base.m,
                n: base.n,
                snr_db,
                estimator: id,
                mse_empirical_mean: None,
                mse_empirical_stderr: None,
                mse_closed_form: None,
                trials,
                failures: 0,
            };
            if prepared[k].is_none() {
                out.push(row);
                continue;
            }
            let errors: Vec<Result<f64, String>> = per_trial.iter().map(|r| r[column].clone()).collect();
            column += 1;
            row.failures = errors.iter().filter(|e| e.is_err()).count();
            if let Ok(est) = summarize(&errors) {
                row.mse_empirical_mean = Some(est.mean);
                row.mse_empirical_stderr = Some(est.stderr);
            }
            row.mse_closed_form = match id {
                EstimatorId::Lmmse => Some(lmmse_mse_closed_form(&lin, problem.prior_cov())?),
                EstimatorId::Ls => Some(ls_mse_closed_form(&lin, problem.prior_cov())?),
                _ => None,
            };
            out.push(row);
        }
    }
    Ok(out)
}
