//! Linearized probit regression.
//!
//! The measurement model is `y = sign(D x + w)` with Gaussian `x` and `w`.
//! [`linearization`] rewrites it as `y = F x + e` with `e` uncorrelated with
//! `x`, which yields the L-MMSE and LS estimators together with their exact
//! MSE. The nonlinear baselines (probit MAP and ML, logistic MAP, Gibbs
//! posterior mean) live in [`estimators`].

pub mod analysis;
pub mod bench;
pub mod estimators;
pub mod linearization;
pub mod model;
pub mod rng;
pub mod special;

pub use estimators::{EstimatorError, EstimatorId, EstimatorReport, PreparedEstimator, SolverConfig};
pub use linearization::{linearize, Linearization, LinearizationError};
pub use model::{ModelError, ObservationKind, ObservationVector, ProbitProblem, SyntheticConfig};
