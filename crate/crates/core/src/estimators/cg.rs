//! Conjugate gradients for symmetric positive-definite operators.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CgError {
    #[error("operator is not positive definite: p^T A p = {curvature:e} at iteration {iteration}")]
    NotPositiveDefinite { iteration: usize, curvature: f64 },
    #[error("operator returned a vector of length {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub solution: DVector<f64>,
    pub iterations: usize,
    /// Final relative residual `||A x - b|| / ||b||`.
    pub residual: f64,
    pub converged: bool,
}

/// Solves `A x = b` from a zero start, with `apply(v)` computing `A v`.
///
/// Stops once the relative residual is at most `tol`, or after `max_iter`
/// iterations with `converged = false`.
pub fn cg_solve<F>(apply: F, b: &DVector<f64>, tol: f64, max_iter: usize) -> Result<CgOutcome, CgError>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = b.len();
    let b_norm = b.norm();
    let mut x = DVector::<f64>::zeros(n);
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            solution: x,
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.norm_squared();
    let mut iterations = 0;
    let mut residual = 1.0;
    while iterations < max_iter {
        let ap = apply(&p);
        if ap.len() != n {
            return Err(CgError::Dimension { got: ap.len(), expected: n });
        }
        let curvature = p.dot(&ap);
        iterations += 1;
        if !(curvature > 0.0) {
            return Err(CgError::NotPositiveDefinite { iteration: iterations, curvature });
        }
        let alpha = rs / curvature;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rs_new = r.norm_squared();
        residual = rs_new.sqrt() / b_norm;
        if residual <= tol {
            break;
        }
        p.axpy(1.0, &r, rs_new / rs);
        rs = rs_new;
    }
    Ok(CgOutcome {
        solution: x,
        iterations,
        residual,
        converged: residual <= tol,
    })
}
