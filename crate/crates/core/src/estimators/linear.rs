//! L-MMSE and LS estimators of the linearized model.

use super::cg::cg_solve;
use super::{check_len, Diagnostics, EstimatorError, EstimatorId, EstimatorReport, SolverConfig};
use crate::linearization::Linearization;
use crate::model::ObservationVector;
use nalgebra::{Cholesky, DMatrix};

/// Smallest admissible singular-value ratio of `E` for the LS estimator.
const LS_RANK_TOL: f64 = 1e-10;

/// `x = E^T q` with `C_y q = y` solved by conjugate gradients.
pub fn lmmse_estimate(lin: &Linearization, obs: &ObservationVector) -> Result<EstimatorReport, EstimatorError> {
    let cfg = SolverConfig::default();
    lmmse_estimate_with(lin, obs, cfg.tol, cfg.max_iter)
}

pub fn lmmse_estimate_with(
    lin: &Linearization,
    obs: &ObservationVector,
    tol: f64,
    max_iter: usize,
) -> Result<EstimatorReport, EstimatorError> {
    check_len(lin.m(), obs)?;
    let cy = &lin.obs_cov;
    let out = cg_solve(|v| cy * v, obs.values(), tol, max_iter)?;
    let mut diagnostics = Diagnostics {
        iterations: Some(out.iterations),
        final_residual: Some(out.residual),
        converged: out.converged,
        ..Default::default()
    };
    if !out.converged {
        diagnostics.warnings.push(format!(
            "CG stopped after {} iterations at relative residual {:e}",
            out.iterations, out.residual
        ));
    }
    Ok(EstimatorReport {
        estimate: lin.e_matrix.tr_mul(&out.solution),
        estimator: EstimatorId::Lmmse,
        diagnostics,
    })
}

pub(crate) fn ls_existence(lin: &Linearization) -> Result<(), EstimatorError> {
    let (m, n) = (lin.m(), lin.n());
    if m < n {
        return Err(EstimatorError::LsDoesNotExist {
            reason: format!("M = {m} < N = {n}"),
        });
    }
    let sv = lin.e_matrix.clone().singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if !(lo > LS_RANK_TOL * hi) {
        return Err(EstimatorError::LsDoesNotExist {
            reason: format!("E is rank deficient (singular value ratio {:e})", lo / hi),
        });
    }
    Ok(())
}

/// Left pseudo-inverse of `F` by thin QR; equals `C_x E^+` because `F = E C_x^-1`.
fn f_pseudo_inverse(lin: &Linearization) -> Result<DMatrix<f64>, EstimatorError> {
    ls_existence(lin)?;
    let qr = lin.f_matrix.clone().qr();
    let r = qr.r();
    let qt = qr.q().transpose();
    r.solve_upper_triangular(&qt)
        .ok_or(EstimatorError::Factorization("the R factor of F"))
}

/// `x = C_x E^+ y`, the least-squares inverse of `y = F x`.
pub fn ls_estimate(lin: &Linearization, obs: &ObservationVector) -> Result<EstimatorReport, EstimatorError> {
    check_len(lin.m(), obs)?;
    LinearMap::ls(lin)?.estimate(EstimatorId::Ls, obs)
}

/// A linear estimator `x = W y` with the weights formed once.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    weights: DMatrix<f64>,
}

impl LinearMap {
    /// `W = E^T C_y^-1` from a Cholesky factor of `C_y`.
    pub fn lmmse(lin: &Linearization) -> Result<Self, EstimatorError> {
        let chol = Cholesky::new(lin.obs_cov.clone()).ok_or(EstimatorError::Factorization("C_y"))?;
        Ok(Self {
            weights: chol.solve(&lin.e_matrix).transpose(),
        })
    }

    /// `W = C_x E^+`.
    pub fn ls(lin: &Linearization) -> Result<Self, EstimatorError> {
        Ok(Self {
            weights: f_pseudo_inverse(lin)?,
        })
    }

    /// The `N x M` weight matrix.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn estimate(&self, id: EstimatorId, obs: &ObservationVector) -> Result<EstimatorReport, EstimatorError> {
        check_len(self.weights.ncols(), obs)?;
        Ok(EstimatorReport {
            estimate: &self.weights * obs.values(),
            estimator: id,
            diagnostics: Diagnostics {
                converged: true,
                ..Default::default()
            },
        })
    }
}
