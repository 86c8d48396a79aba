//! Bussgang linearization of the (smoothed) probit model.
//!
//! With `z = Dx + w` and `gamma_m = [C_z]_mm`, the linear model
//! `y = F x + e` with `F = E C_x^-1` leaves the residual `e` uncorrelated
//! with `x`. The cross-covariance `E = E[y x^T]` follows from Brillinger's
//! identity and Stein's lemma, and the observation covariance `C_y` from the
//! arcsine law:
//!
//! ```text
//! [E]_mn    = sqrt(2/pi) * (d_m^T c_n) / sqrt(sigma^2 + gamma_m)
//! [C_y]_ij  = (2/pi) * asin([C_z]_ij / sqrt((sigma^2 + gamma_i)(sigma^2 + gamma_j)))
//! ```

use crate::model::{observe, sample_latent, ModelError, ProbitProblem};
use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use std::f64::consts::FRAC_2_PI;
use thiserror::Error;

/// Arcsine arguments within this distance outside `[-1, 1]` are clamped.
const ASIN_CLAMP_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearizationError {
    #[error("arcsine argument {value} at ({row}, {col}) lies outside [-1, 1]; the z covariance is inconsistent")]
    InconsistentCovariance { row: usize, col: usize, value: f64 },
    #[error("prior covariance could not be factorized")]
    PriorFactorization,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Matrices of the linearized model `y = F x + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    /// `E = E[y x^T]`, M x N.
    pub e_matrix: DMatrix<f64>,
    /// `C_y = E[y y^T]`, M x M.
    pub obs_cov: DMatrix<f64>,
    /// `F = E C_x^-1`, M x N.
    pub f_matrix: DMatrix<f64>,
    /// `C_z = D C_x D^T + C_w`, M x M.
    pub z_cov: DMatrix<f64>,
}

impl Linearization {
    pub fn m(&self) -> usize {
        self.e_matrix.nrows()
    }

    pub fn n(&self) -> usize {
        self.e_matrix.ncols()
    }
}

/// `D C_x D^T + C_w` from raw matrices, symmetrized.
pub fn z_covariance_of(design: &DMatrix<f64>, prior_cov: &DMatrix<f64>, noise_cov: &DMatrix<f64>) -> DMatrix<f64> {
    let dc = design * prior_cov;
    let mut cz = &dc * design.transpose() + noise_cov;
    symmetrize(&mut cz);
    cz
}

pub fn z_covariance(problem: &ProbitProblem) -> DMatrix<f64> {
    z_covariance_of(problem.design(), problem.prior_cov(), problem.noise_cov())
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// `1 / sqrt(sigma^2 + gamma_m)` for every row.
fn inverse_scales(z_cov: &DMatrix<f64>, sigma: f64) -> Vec<f64> {
    (0..z_cov.nrows())
        .map(|m| 1.0 / (sigma * sigma + z_cov[(m, m)]).sqrt())
        .collect()
}

fn e_from_parts(problem: &ProbitProblem, z_cov: &DMatrix<f64>) -> DMatrix<f64> {
    let scales = inverse_scales(z_cov, problem.smoothing());
    let gain = FRAC_2_PI.sqrt();
    let mut e = problem.design() * problem.prior_cov();
    for (m, s) in scales.iter().enumerate() {
        e.row_mut(m).scale_mut(gain * s);
    }
    e
}

/// Cross-covariance `E = E[y x^T]`.
pub fn e_matrix(problem: &ProbitProblem) -> DMatrix<f64> {
    e_from_parts(problem, &z_covariance(problem))
}

/// Arcsine-law covariance of the observations, given `C_z`.
pub fn observation_covariance_from_z(z_cov: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>, LinearizationError> {
    let m = z_cov.nrows();
    let scales = inverse_scales(z_cov, sigma);
    let mut cy = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        for i in j..m {
            let v = if i == j && sigma == 0.0 {
                1.0
            } else {
                let arg = z_cov[(i, j)] * scales[i] * scales[j];
                if !(arg.abs() <= 1.0 + ASIN_CLAMP_TOL) {
                    return Err(LinearizationError::InconsistentCovariance { row: i, col: j, value: arg });
                }
                FRAC_2_PI * arg.clamp(-1.0, 1.0).asin()
            };
            cy[(i, j)] = v;
            cy[(j, i)] = v;
        }
    }
    Ok(cy)
}

/// Observation covariance `C_y = E[y y^T]`.
pub fn observation_covariance(problem: &ProbitProblem) -> Result<DMatrix<f64>, LinearizationError> {
    observation_covariance_from_z(&z_covariance(problem), problem.smoothing())
}

/// Computes `E`, `C_y`, `F` and `C_z` for `problem`.
pub fn linearize(problem: &ProbitProblem) -> Result<Linearization, LinearizationError> {
    let z_cov = z_covariance(problem);
    let e_matrix = e_from_parts(problem, &z_cov);
    let obs_cov = observation_covariance_from_z(&z_cov, problem.smoothing())?;
    let chol = Cholesky::new(problem.prior_cov().clone()).ok_or(LinearizationError::PriorFactorization)?;
    // F^T = C_x^-1 E^T since C_x is symmetric
    let f_matrix = chol.solve(&e_matrix.transpose()).transpose();
    Ok(Linearization {
        e_matrix,
        obs_cov,
        f_matrix,
        z_cov,
    })
}

/// Monte-Carlo estimate of `E[x e^T]` with `e = y - F x`.
///
/// Zero in expectation; large entries indicate that `lin` does not belong to
/// `problem` or was corrupted.
pub fn residual_check<R: Rng + ?Sized>(
    problem: &ProbitProblem,
    lin: &Linearization,
    trials: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let mut acc = DMatrix::<f64>::zeros(problem.n(), problem.m());
    for _ in 0..trials {
        let (x, z) = sample_latent(problem, rng);
        let y = observe(&z, problem.smoothing());
        let e = y.values() - &lin.f_matrix * &x;
        acc.ger(1.0, &x, &e, 1.0);
    }
    acc / trials as f64
}

/// Sample mean and per-entry sample standard deviation of `x e^T`.
#[derive(Debug, Clone)]
pub struct ResidualMoments {
    /// N x M.
    pub mean: DMatrix<f64>,
    /// N x M.
    pub std: DMatrix<f64>,
    pub trials: usize,
}

impl ResidualMoments {
    /// `max |mean|` in units of `max std / sqrt(trials)`.
    pub fn max_abs_in_stderr(&self) -> f64 {
        self.mean.amax() / (self.std.amax() / (self.trials as f64).sqrt())
    }
}

/// Like [`residual_check`] but also returns the spread of each entry.
pub fn residual_moments<R: Rng + ?Sized>(
    problem: &ProbitProblem,
    lin: &Linearization,
    trials: usize,
    rng: &mut R,
) -> ResidualMoments {
    let (n, m) = (problem.n(), problem.m());
    let mut sum = DMatrix::<f64>::zeros(n, m);
    let mut sq = DMatrix::<f64>::zeros(n, m);
    for _ in 0..trials {
        let (x, z) = sample_latent(problem, rng);
        let y = observe(&z, problem.smoothing());
        let e = y.values() - &lin.f_matrix * &x;
        for j in 0..m {
            for i in 0..n {
                let v = x[i] * e[j];
                sum[(i, j)] += v;
                sq[(i, j)] += v * v;
            }
        }
    }
    let t = trials as f64;
    let mean = sum / t;
    let std = sq.zip_map(&mean, |q, mu| ((q / t - mu * mu) * t / (t - 1.0).max(1.0)).max(0.0).sqrt());
    ResidualMoments { mean, std, trials }
}

/// Sample means and standard errors of `y x^T` and `y y^T`.
#[derive(Debug, Clone)]
pub struct MomentEstimate {
    pub cross: DMatrix<f64>,
    pub cross_stderr: DMatrix<f64>,
    pub obs: DMatrix<f64>,
    pub obs_stderr: DMatrix<f64>,
    pub trials: usize,
}

/// Estimates `E[y x^T]` and `E[y y^T]` by direct simulation of the model.
pub fn monte_carlo_moments<R: Rng + ?Sized>(problem: &ProbitProblem, trials: usize, rng: &mut R) -> MomentEstimate {
    let (m, n) = (problem.m(), problem.n());
    let mut cross = DMatrix::<f64>::zeros(m, n);
    let mut cross_sq = DMatrix::<f64>::zeros(m, n);
    let mut obs = DMatrix::<f64>::zeros(m, m);
    let mut obs_sq = DMatrix::<f64>::zeros(m, m);
    for _ in 0..trials {
        let (x, y) = {
            let (x, z) = sample_latent(problem, rng);
            (x, observe(&z, problem.smoothing()))
        };
        let y = y.values();
        for j in 0..n {
            for i in 0..m {
                let v = y[i] * x[j];
                cross[(i, j)] += v;
                cross_sq[(i, j)] += v * v;
            }
        }
        for j in 0..m {
            for i in 0..m {
                let v = y[i] * y[j];
                obs[(i, j)] += v;
                obs_sq[(i, j)] += v * v;
            }
        }
    }
    let t = trials as f64;
    let stderr = |sum: &DMatrix<f64>, sq: &DMatrix<f64>| {
        sum.zip_map(sq, |s, q| {
            let mean = s / t;
            let var = ((q / t - mean * mean) * t / (t - 1.0)).max(0.0);
            (var / t).sqrt()
        })
    };
    MomentEstimate {
        cross_stderr: stderr(&cross, &cross_sq),
        obs_stderr: stderr(&obs, &obs_sq),
        cross: cross / t,
        obs: obs / t,
        trials,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_design;
    use crate::rng::substream;
    use nalgebra::{dmatrix, SymmetricEigen};
    use std::f64::consts::PI;

    fn scalar(sigma: f64) -> ProbitProblem {
        ProbitProblem::new(dmatrix![1.0], dmatrix![1.0], dmatrix![1.0], sigma).unwrap()
    }

    fn two_rows() -> ProbitProblem {
        ProbitProblem::new(dmatrix![1.0; 1.0], dmatrix![1.0], DMatrix::identity(2, 2), 0.0).unwrap()
    }

    #[test]
    fn z_covariance_examples() {
        assert_eq!(z_covariance(&scalar(0.0)), dmatrix![2.0]);
        assert_eq!(z_covariance(&two_rows()), dmatrix![2.0, 1.0; 1.0, 2.0]);
        let cw = dmatrix![1.5, 0.2; 0.2, 0.9];
        assert_eq!(z_covariance_of(&DMatrix::zeros(2, 3), &DMatrix::identity(3, 3), &cw), cw);
    }

    #[test]
    fn e_matrix_examples() {
        let inv_sqrt_pi = 1.0 / PI.sqrt();
        assert!((e_matrix(&scalar(0.0))[(0, 0)] - inv_sqrt_pi).abs() < 1e-15);
        assert!(e_matrix(&scalar(1e8))[(0, 0)] < 1e-8);
        let e = e_matrix(&two_rows());
        assert!((e[(0, 0)] - inv_sqrt_pi).abs() < 1e-15);
        assert!((e[(1, 0)] - inv_sqrt_pi).abs() < 1e-15);
    }

    #[test]
    fn observation_covariance_examples() {
        assert_eq!(observation_covariance(&scalar(0.0)).unwrap(), dmatrix![1.0]);
        let cy = observation_covariance(&two_rows()).unwrap();
        assert_eq!(cy[(0, 0)], 1.0);
        assert!((cy[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(cy[(0, 1)], cy[(1, 0)]);
        let cz = dmatrix![2.0, 0.0; 0.0, 3.0];
        assert_eq!(observation_covariance_from_z(&cz, 0.5).unwrap()[(0, 1)], 0.0);
    }

    #[test]
    fn inconsistent_covariance_is_rejected() {
        let cz = dmatrix![1.0, 1.5; 1.5, 1.0];
        assert!(matches!(
            observation_covariance_from_z(&cz, 0.0),
            Err(LinearizationError::InconsistentCovariance { row: 1, col: 0, .. })
        ));
        let barely = dmatrix![1.0, 1.0 + 1e-12; 1.0 + 1e-12, 1.0];
        let cy = observation_covariance_from_z(&barely, 0.0).unwrap();
        assert_eq!(cy[(0, 1)], 1.0);
    }

    #[test]
    fn linearize_scalar_and_continuity() {
        let lin = linearize(&scalar(0.0)).unwrap();
        assert!((lin.f_matrix[(0, 0)] - 1.0 / PI.sqrt()).abs() < 1e-15);
        let p = ProbitProblem::isotropic(generate_design(8, 3, &mut substream(4, 0)), 1.3, 0.7, 0.0).unwrap();
        let a = linearize(&p).unwrap();
        let b = linearize(&p.with_smoothing(1e-8).unwrap()).unwrap();
        assert!((a.e_matrix - b.e_matrix).amax() < 1e-6);
        assert!((a.obs_cov - b.obs_cov).amax() < 1e-6);
        assert!((a.f_matrix - b.f_matrix).amax() < 1e-6);
        assert!((a.z_cov - b.z_cov).amax() < 1e-6);
    }

    #[test]
    fn equal_row_norms_for_orthonormal_rows() {
        let d = dmatrix![1.0, 0.0, 0.0; 0.0, 1.0, 0.0; 0.0, 0.0, 1.0];
        let p = ProbitProblem::isotropic(d, 2.5, 1.0, 0.3).unwrap();
        let e = e_matrix(&p);
        let norms: Vec<f64> = (0..3).map(|m| e.row(m).norm()).collect();
        assert!(norms.iter().all(|r| (r - norms[0]).abs() < 1e-14));
    }

    #[test]
    fn obs_cov_invariants_on_random_problems() {
        for seed in 0..5 {
            let mut rng = substream(seed, 0);
            let d = generate_design(12, 4, &mut rng);
            for &sigma in &[0.0, 0.5, 2.0] {
                let p = ProbitProblem::isotropic(d.clone(), 1.0 + seed as f64, 0.3, sigma).unwrap();
                let lin = linearize(&p).unwrap();
                let cy = &lin.obs_cov;
                for m in 0..12 {
                    let gamma = lin.z_cov[(m, m)];
                    let want = FRAC_2_PI * (gamma / (sigma * sigma + gamma)).asin();
                    assert!((cy[(m, m)] - want).abs() < 1e-12);
                }
                assert!(cy.amax() <= 1.0);
                assert_eq!(cy, &cy.transpose());
                let eig = SymmetricEigen::new(cy.clone()).eigenvalues;
                assert!(eig.min() >= -1e-10);
            }
        }
    }

    #[test]
    fn scale_equivariance() {
        let d = generate_design(7, 3, &mut substream(8, 0));
        let cx = dmatrix![1.0, 0.3, 0.0; 0.3, 2.0, 0.1; 0.0, 0.1, 0.5];
        let cw = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]));
        let sigma = 0.7;
        let alpha: f64 = 3.7;
        let base = linearize(&ProbitProblem::new(d.clone(), cx.clone(), cw.clone(), sigma).unwrap()).unwrap();
        let scaled =
            linearize(&ProbitProblem::new(d, cx * alpha, cw * alpha, sigma * alpha.sqrt()).unwrap()).unwrap();
        assert!((&base.obs_cov - &scaled.obs_cov).amax() < 1e-10);
        assert!((base.e_matrix * alpha.sqrt() - scaled.e_matrix).amax() < 1e-10);
    }

    #[test]
    fn e_shrinks_with_smoothing() {
        let p = ProbitProblem::isotropic(generate_design(6, 3, &mut substream(2, 0)), 1.0, 0.5, 0.0).unwrap();
        let mut prev = e_matrix(&p).abs();
        for &s in &[0.1, 0.5, 1.0, 3.0] {
            let cur = e_matrix(&p.with_smoothing(s).unwrap()).abs();
            assert!(cur.iter().zip(prev.iter()).all(|(c, p)| c < p));
            prev = cur;
        }
    }

    #[test]
    fn residual_check_scalar() {
        let p = scalar(0.0);
        let lin = linearize(&p).unwrap();
        let r = residual_check(&p, &lin, 1_000_000, &mut substream(21, 0));
        assert!(r[(0, 0)].abs() < 0.005, "{}", r[(0, 0)]);
        let mut bad = lin.clone();
        bad.f_matrix *= 2.0;
        let r = residual_check(&p, &bad, 1_000_000, &mut substream(21, 0));
        assert!(r[(0, 0)] < -0.2);
        assert!((r[(0, 0)] + 1.0 / PI.sqrt()).abs() < 0.01);
    }

    #[test]
    fn residual_check_shrinks_with_trials() {
        let p = ProbitProblem::isotropic(generate_design(4, 2, &mut substream(2, 0)), 1.0, 0.5, 0.0).unwrap();
        let lin = linearize(&p).unwrap();
        let small = residual_check(&p, &lin, 10_000, &mut substream(3, 0)).amax();
        let large = residual_check(&p, &lin, 1_000_000, &mut substream(3, 1)).amax();
        assert!(large < small);
        assert!(large < 5.0 / 1000.0 * 2.0);
    }

    #[test]
    fn residual_moments_agree_with_mean_only_check() {
        let p = ProbitProblem::isotropic(generate_design(3, 2, &mut substream(4, 0)), 1.0, 0.5, 0.0).unwrap();
        let lin = linearize(&p).unwrap();
        let a = residual_check(&p, &lin, 20_000, &mut substream(4, 1));
        let b = residual_moments(&p, &lin, 20_000, &mut substream(4, 1));
        assert!((a - &b.mean).amax() < 1e-12);
        assert!(b.std.iter().all(|&s| s > 0.0));
        assert!(b.max_abs_in_stderr() < 5.0);
    }
}
