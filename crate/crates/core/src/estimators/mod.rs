//! Estimators for `x` given probit observations.
//!
//! Linear estimators ([`lmmse_estimate`], [`ls_estimate`]) work from a
//! [`Linearization`]. The nonlinear baselines ([`map_probit`], [`ml_probit`],
//! [`map_logit`], [`pm_gibbs`]) work from the [`ProbitProblem`] on the
//! noise-whitened design. [`PreparedEstimator`] caches the per-problem setup
//! when one problem is fitted against many observations.

mod cg;
mod gibbs;
mod linear;
mod map;
mod truncnorm;

pub use cg::{cg_solve, CgError, CgOutcome};
pub use gibbs::{pm_gibbs, GibbsSampler};
pub use linear::{lmmse_estimate, lmmse_estimate_with, ls_estimate, LinearMap};
pub(crate) use linear::ls_existence;
pub use map::{map_logit, map_probit, ml_probit, Loss, MapSolver};
pub use truncnorm::sample_truncated_normal;

use crate::linearization::{linearize, Linearization, LinearizationError};
use crate::model::{ModelError, ObservationVector, ProbitProblem};
use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorId {
    #[serde(rename = "LMMSE")]
    Lmmse,
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "MAP")]
    Map,
    #[serde(rename = "ML")]
    Ml,
    #[serde(rename = "LogitMAP")]
    LogitMap,
    #[serde(rename = "PM")]
    Pm,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 6] = [
        EstimatorId::Lmmse,
        EstimatorId::Ls,
        EstimatorId::Map,
        EstimatorId::Ml,
        EstimatorId::LogitMap,
        EstimatorId::Pm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorId::Lmmse => "LMMSE",
            EstimatorId::Ls => "LS",
            EstimatorId::Map => "MAP",
            EstimatorId::Ml => "ML",
            EstimatorId::LogitMap => "LogitMAP",
            EstimatorId::Pm => "PM",
        }
    }

    /// Whether the estimator has a closed-form MSE.
    pub fn is_linear(self) -> bool {
        matches!(self, EstimatorId::Lmmse | EstimatorId::Ls)
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "lmmse" => Ok(EstimatorId::Lmmse),
            "ls" => Ok(EstimatorId::Ls),
            "map" => Ok(EstimatorId::Map),
            "ml" => Ok(EstimatorId::Ml),
            "logitmap" | "logit" => Ok(EstimatorId::LogitMap),
            "pm" => Ok(EstimatorId::Pm),
            _ => Err(format!(
                "unknown estimator `{s}` (expected one of LMMSE, LS, MAP, ML, LogitMAP, PM)"
            )),
        }
    }
}

/// Solver diagnostics; fields are set as applicable to the estimator.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples_kept: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    pub converged: bool,
    /// Set when no finite minimizer exists (ML on separable data).
    pub diverged: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorReport {
    #[serde(serialize_with = "serialize_vector")]
    pub estimate: DVector<f64>,
    pub estimator: EstimatorId,
    pub diagnostics: Diagnostics,
}

fn serialize_vector<S: serde::Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

impl EstimatorReport {
    /// Finite and not diverged.
    pub fn is_usable(&self) -> bool {
        !self.diagnostics.diverged && self.estimate.iter().all(|v| v.is_finite())
    }
}

/// Iteration limits and tolerances shared by the iterative estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Relative residual (CG) or gradient-norm (AGD) threshold.
    pub tol: f64,
    pub gibbs_samples: usize,
    pub gibbs_burn_in: usize,
    /// ML estimates with a larger norm are flagged as diverged.
    pub divergence_bound: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            tol: 1e-10,
            gibbs_samples: 50_000,
            gibbs_burn_in: 20_000,
            divergence_bound: 1e6,
        }
    }
}

impl SolverConfig {
    /// Shortened Gibbs chains (5000 kept, 2000 burn-in).
    pub fn desk() -> Self {
        Self {
            gibbs_samples: 5_000,
            gibbs_burn_in: 2_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.tol > 0.0) {
            return Err(EstimatorError::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.gibbs_samples == 0 {
            return Err(EstimatorError::InvalidConfig("gibbs_samples must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(EstimatorError::InvalidConfig("max_iter must be positive".into()));
        }
        if !(self.divergence_bound > 0.0) {
            return Err(EstimatorError::InvalidConfig("divergence_bound must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("LS estimator does not exist: {reason}")]
    LsDoesNotExist { reason: String },
    #[error("observation has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0} requires binary observations")]
    RequiresBinary(EstimatorId),
    #[error("{0} requires a diagonal noise covariance")]
    NonDiagonalNoise(EstimatorId),
    #[error("factorization of {0} failed")]
    Factorization(&'static str),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Cg(#[from] CgError),
    #[error(transparent)]
    Linearization(#[from] LinearizationError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub(crate) fn check_len(expected: usize, obs: &ObservationVector) -> Result<(), EstimatorError> {
    if obs.len() != expected {
        return Err(EstimatorError::DimensionMismatch { expected, got: obs.len() });
    }
    Ok(())
}

#[derive(Debug, Clone)]
enum Prepared {
    Linear(LinearMap),
    Optimizer(MapSolver),
    Gibbs(GibbsSampler),
}

/// An estimator with its per-problem setup precomputed.
///
/// Linear estimators collapse to a fixed `N x M` weight matrix factored once
/// from `C_y` (or `F`); iterative estimators keep the whitened design and
/// prior factors.
#[derive(Debug, Clone)]
pub struct PreparedEstimator {
    id: EstimatorId,
    inner: Prepared,
}

impl PreparedEstimator {
    pub fn new(id: EstimatorId, problem: &ProbitProblem, cfg: &SolverConfig) -> Result<Self, EstimatorError> {
        cfg.validate()?;
        let inner = match id {
            EstimatorId::Lmmse => Prepared::Linear(LinearMap::lmmse(&linearize(problem)?)?),
            EstimatorId::Ls => Prepared::Linear(LinearMap::ls(&linearize(problem)?)?),
            EstimatorId::Map => Prepared::Optimizer(MapSolver::new(problem, Loss::Probit, true, cfg)?),
            EstimatorId::Ml => Prepared::Optimizer(MapSolver::new(problem, Loss::Probit, false, cfg)?),
            EstimatorId::LogitMap => Prepared::Optimizer(MapSolver::new(problem, Loss::Logistic, true, cfg)?),
            EstimatorId::Pm => Prepared::Gibbs(GibbsSampler::new(problem, cfg)?),
        };
        Ok(Self { id, inner })
    }

    /// Like [`PreparedEstimator::new`] but reuses an existing linearization.
    pub fn with_linearization(
        id: EstimatorId,
        problem: &ProbitProblem,
        lin: &Linearization,
        cfg: &SolverConfig,
    ) -> Result<Self, EstimatorError> {
        match id {
            EstimatorId::Lmmse => Ok(Self {
                id,
                inner: Prepared::Linear(LinearMap::lmmse(lin)?),
            }),
            EstimatorId::Ls => Ok(Self {
                id,
                inner: Prepared::Linear(LinearMap::ls(lin)?),
            }),
            _ => Self::new(id, problem, cfg),
        }
    }

    pub fn id(&self) -> EstimatorId {
        self.id
    }

    /// Fits one observation. Only the Gibbs sampler draws from `rng`.
    pub fn fit<R: Rng + ?Sized>(&self, obs: &ObservationVector, rng: &mut R) -> Result<EstimatorReport, EstimatorError> {
        match &self.inner {
            Prepared::Linear(map) => map.estimate(self.id, obs),
            Prepared::Optimizer(solver) => solver.solve(obs),
            Prepared::Gibbs(sampler) => sampler.run(obs, rng),
        }
    }
}
