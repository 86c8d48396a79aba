//! Posterior mean by Gibbs sampling with latent-variable augmentation.
//!
//! Each sweep draws `z_m | x, y_m ~ N(d~_m^T x, 1)` restricted to the
//! half-line matching `y_m`, then `x | z ~ N(Q^-1 D~^T z, Q^-1)` with
//! `Q = C_x^-1 + D~^T D~`.

use super::truncnorm::sample_truncated_normal;
use super::{check_len, Diagnostics, EstimatorError, EstimatorId, EstimatorReport, SolverConfig};
use crate::model::{ObservationKind, ObservationVector, ProbitProblem};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

const LOW_SAMPLE_WARNING: usize = 100;

/// Whitened design and the Cholesky factor of the posterior precision.
#[derive(Debug, Clone)]
pub struct GibbsSampler {
    design: DMatrix<f64>,
    precision_l: DMatrix<f64>,
    samples: usize,
    burn_in: usize,
}

impl GibbsSampler {
    pub fn new(problem: &ProbitProblem, cfg: &SolverConfig) -> Result<Self, EstimatorError> {
        cfg.validate()?;
        if !problem.has_diagonal_noise() {
            return Err(EstimatorError::NonDiagonalNoise(EstimatorId::Pm));
        }
        let mut design = problem.design().clone();
        for m in 0..problem.m() {
            design.row_mut(m).unscale_mut(problem.noise_cov()[(m, m)].sqrt());
        }
        let prior_inv = Cholesky::new(problem.prior_cov().clone())
            .ok_or(EstimatorError::Factorization("C_x"))?
            .inverse();
        let q = prior_inv + design.tr_mul(&design);
        let chol = Cholesky::new(q).ok_or(EstimatorError::Factorization("the posterior precision"))?;
        Ok(Self {
            design,
            precision_l: chol.l(),
            samples: cfg.gibbs_samples,
            burn_in: cfg.gibbs_burn_in,
        })
    }

    /// Runs one chain from `x = 0` and returns the mean of the kept samples.
    pub fn run<R: Rng + ?Sized>(&self, obs: &ObservationVector, rng: &mut R) -> Result<EstimatorReport, EstimatorError> {
        check_len(self.design.nrows(), obs)?;
        if obs.kind() != ObservationKind::Binary {
            return Err(EstimatorError::RequiresBinary(EstimatorId::Pm));
        }
        let y = obs.values();
        let (m, n) = self.design.shape();
        let l = &self.precision_l;
        let mut x = DVector::<f64>::zeros(n);
        let mut z = DVector::<f64>::zeros(m);
        let mut mean_z = DVector::<f64>::zeros(m);
        let mut u = DVector::<f64>::zeros(n);
        let mut sum = DVector::<f64>::zeros(n);

        for sweep in 0..self.burn_in + self.samples {
            mean_z.gemv(1.0, &self.design, &x, 0.0);
            for i in 0..m {
                z[i] = sample_truncated_normal(mean_z[i], y[i] < 0.0, rng);
            }
            u.gemv_tr(1.0, &self.design, &z, 0.0);
            l.solve_lower_triangular_mut(&mut u);
            for j in 0..n {
                u[j] += rng.sample::<f64, _>(StandardNormal);
            }
            l.tr_solve_lower_triangular_mut(&mut u);
            x.copy_from(&u);
            if sweep >= self.burn_in {
                sum += &x;
            }
        }

        let mut diagnostics = Diagnostics {
            iterations: Some(self.burn_in + self.samples),
            samples_kept: Some(self.samples),
            burn_in: Some(self.burn_in),
            converged: true,
            ..Default::default()
        };
        if self.samples < LOW_SAMPLE_WARNING {
            diagnostics.warnings.push(format!(
                "only {} Gibbs samples kept; the posterior-mean estimate is noisy",
                self.samples
            ));
        }
        Ok(EstimatorReport {
            estimate: sum / self.samples as f64,
            estimator: EstimatorId::Pm,
            diagnostics,
        })
    }
}

/// Posterior-mean estimate `E[x | y]` by Gibbs sampling.
pub fn pm_gibbs<R: Rng + ?Sized>(
    problem: &ProbitProblem,
    obs: &ObservationVector,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<EstimatorReport, EstimatorError> {
    GibbsSampler::new(problem, cfg)?.run(obs, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_design;
    use crate::rng::substream;
    use crate::special::{norm_cdf, norm_pdf};
    use nalgebra::dmatrix;

    fn binary(v: Vec<f64>) -> ObservationVector {
        ObservationVector::binary(DVector::from_vec(v)).unwrap()
    }

    fn scalar() -> ProbitProblem {
        ProbitProblem::new(dmatrix![1.0], dmatrix![1.0], dmatrix![1.0], 0.0).unwrap()
    }

    /// `int x phi(x) Phi(x) dx / int phi(x) Phi(x) dx` by the composite Simpson rule.
    fn scalar_posterior_mean() -> f64 {
        let (a, b, k) = (-12.0, 12.0, 24_000);
        let h = (b - a) / k as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=k {
            let x = a + i as f64 * h;
            let w = if i == 0 || i == k { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let p = norm_pdf(x) * norm_cdf(x);
            num += w * x * p;
            den += w * p;
        }
        num / den
    }

    #[test]
    fn scalar_posterior_mean_matches_quadrature() {
        let cfg = SolverConfig::default();
        let r = pm_gibbs(&scalar(), &binary(vec![1.0]), &cfg, &mut substream(11, 0)).unwrap();
        let want = scalar_posterior_mean();
        // closed form: E[x | x + w > 0] = 1 / sqrt(pi)
        assert!((want - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-9);
        assert!((r.estimate[0] - want).abs() < 0.01, "{} vs {want}", r.estimate[0]);
        assert_eq!(r.diagnostics.samples_kept, Some(50_000));
        assert_eq!(r.diagnostics.burn_in, Some(20_000));
        assert!(r.diagnostics.warnings.is_empty());
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let p = ProbitProblem::isotropic(generate_design(20, 3, &mut substream(1, 0)), 1.0, 0.5, 0.0).unwrap();
        let y = binary((0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect());
        let cfg = SolverConfig::desk();
        let a = pm_gibbs(&p, &y, &cfg, &mut substream(5, 3)).unwrap();
        let b = pm_gibbs(&p, &y, &cfg, &mut substream(5, 3)).unwrap();
        assert_eq!(a.estimate, b.estimate);
    }

    #[test]
    fn independent_seeds_agree() {
        let p = ProbitProblem::isotropic(generate_design(15, 3, &mut substream(2, 0)), 1.0, 1.0, 0.0).unwrap();
        let y = binary((0..15).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 }).collect());
        let cfg = SolverConfig::default();
        let a = pm_gibbs(&p, &y, &cfg, &mut substream(21, 0)).unwrap().estimate;
        let b = pm_gibbs(&p, &y, &cfg, &mut substream(22, 0)).unwrap().estimate;
        assert!((a - b).amax() < 0.02);
    }

    #[test]
    fn sign_flip_negates_estimate() {
        let cfg = SolverConfig::default();
        let y = binary(vec![1.0]);
        let a = pm_gibbs(&scalar(), &y, &cfg, &mut substream(31, 0)).unwrap().estimate;
        let b = pm_gibbs(&scalar(), &y.negated(), &cfg, &mut substream(32, 0)).unwrap().estimate;
        assert!((a + b).amax() < 0.02);
    }

    #[test]
    fn short_chains_warn() {
        let cfg = SolverConfig {
            gibbs_samples: 50,
            gibbs_burn_in: 10,
            ..SolverConfig::default()
        };
        let r = pm_gibbs(&scalar(), &binary(vec![-1.0]), &cfg, &mut substream(1, 1)).unwrap();
        assert_eq!(r.diagnostics.warnings.len(), 1);
        assert!(r.estimate[0].is_finite());
    }

    #[test]
    fn preconditions() {
        let cfg = SolverConfig::desk();
        let p = ProbitProblem::new(dmatrix![1.0], dmatrix![1.0], dmatrix![1.0], 0.3).unwrap();
        let y = ObservationVector::smoothed(DVector::from_vec(vec![0.2])).unwrap();
        assert!(matches!(
            pm_gibbs(&p, &y, &cfg, &mut substream(0, 0)),
            Err(EstimatorError::RequiresBinary(EstimatorId::Pm))
        ));
        let p = ProbitProblem::new(dmatrix![1.0; 1.0], dmatrix![1.0], dmatrix![1.0, 0.5; 0.5, 1.0], 0.0).unwrap();
        assert!(matches!(
            GibbsSampler::new(&p, &cfg),
            Err(EstimatorError::NonDiagonalNoise(EstimatorId::Pm))
        ));
    }
}
