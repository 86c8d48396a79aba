//! MAP and ML estimation by accelerated gradient descent.
//!
//! Objective on the noise-whitened design `D~` (row `m` scaled by
//! `1 / sqrt([C_w]_mm)`), with margins `t_m = y_m d~_m^T x`:
//!
//! ```text
//! probit:   sum_m -log Phi(t_m)        + 1/2 x^T C_x^-1 x
//! logistic: sum_m log(1 + exp(-t_m))   + 1/2 x^T C_x^-1 x
//! ```
//!
//! The ML variant drops the prior term.

use super::{check_len, Diagnostics, EstimatorError, EstimatorId, EstimatorReport, SolverConfig};
use crate::model::{ObservationKind, ObservationVector, ProbitProblem};
use crate::special::{log1p_exp_neg, log_norm_cdf, mills_ratio, sigmoid};
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

/// Relative size of objective changes treated as rounding error.
const ROUNDING_SLACK: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Probit,
    Logistic,
}

impl Loss {
    #[inline]
    fn value(self, t: f64) -> f64 {
        match self {
            Loss::Probit => -log_norm_cdf(t),
            Loss::Logistic => log1p_exp_neg(t),
        }
    }

    #[inline]
    fn derivative(self, t: f64) -> f64 {
        match self {
            Loss::Probit => -mills_ratio(t),
            Loss::Logistic => -sigmoid(-t),
        }
    }

    /// Upper bound on the second derivative.
    fn curvature_bound(self) -> f64 {
        match self {
            Loss::Probit => 1.0,
            Loss::Logistic => 0.25,
        }
    }
}

/// Whitened design with every row signed by its observation.
fn signed_design(design: &DMatrix<f64>, y: &DVector<f64>) -> DMatrix<f64> {
    let mut a = design.clone();
    for (m, &ym) in y.iter().enumerate() {
        if ym < 0.0 {
            a.row_mut(m).neg_mut();
        }
    }
    a
}

/// Per-problem setup for the MAP, ML, and logistic-MAP estimators.
#[derive(Debug, Clone)]
pub struct MapSolver {
    design: DMatrix<f64>,
    precision: Option<DMatrix<f64>>,
    loss: Loss,
    lipschitz: f64,
    cfg: SolverConfig,
    id: EstimatorId,
}

/// Objective bound to one observation.
struct Bound<'a> {
    solver: &'a MapSolver,
    signed: DMatrix<f64>,
}

impl Bound<'_> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let t = &self.signed * x;
        let data: f64 = t.iter().map(|&ti| self.solver.loss.value(ti)).sum();
        match &self.solver.precision {
            Some(p) => data + 0.5 * x.dot(&(p * x)),
            None => data,
        }
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let t = &self.signed * x;
        let w = t.map(|ti| self.solver.loss.derivative(ti));
        let g = self.signed.tr_mul(&w);
        match &self.solver.precision {
            Some(p) => g + p * x,
            None => g,
        }
    }

    fn margins(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.signed * x
    }
}

impl MapSolver {
    /// `with_prior = false` gives the ML estimator.
    pub fn new(problem: &ProbitProblem, loss: Loss, with_prior: bool, cfg: &SolverConfig) -> Result<Self, EstimatorError> {
        cfg.validate()?;
        let id = match (loss, with_prior) {
            (Loss::Probit, true) => EstimatorId::Map,
            (Loss::Probit, false) => EstimatorId::Ml,
            (Loss::Logistic, _) => EstimatorId::LogitMap,
        };
        if !problem.has_diagonal_noise() {
            return Err(EstimatorError::NonDiagonalNoise(id));
        }
        let mut design = problem.design().clone();
        for m in 0..problem.m() {
            let s = problem.noise_cov()[(m, m)].sqrt();
            design.row_mut(m).unscale_mut(s);
        }
        let precision = if with_prior {
            let chol = Cholesky::new(problem.prior_cov().clone()).ok_or(EstimatorError::Factorization("C_x"))?;
            Some(chol.inverse())
        } else {
            None
        };
        let gram = design.tr_mul(&design);
        let mut lipschitz = loss.curvature_bound() * SymmetricEigen::new(gram).eigenvalues.max();
        if let Some(p) = &precision {
            lipschitz += SymmetricEigen::new(p.clone()).eigenvalues.max();
        }
        Ok(Self {
            design,
            precision,
            loss,
            lipschitz: lipschitz.max(f64::MIN_POSITIVE),
            cfg: *cfg,
            id,
        })
    }

    pub fn id(&self) -> EstimatorId {
        self.id
    }

    fn bind(&self, obs: &ObservationVector) -> Result<Bound<'_>, EstimatorError> {
        check_len(self.design.nrows(), obs)?;
        if obs.kind() != ObservationKind::Binary {
            return Err(EstimatorError::RequiresBinary(self.id));
        }
        Ok(Bound {
            solver: self,
            signed: signed_design(&self.design, obs.values()),
        })
    }

    pub fn objective(&self, obs: &ObservationVector, x: &DVector<f64>) -> Result<f64, EstimatorError> {
        Ok(self.bind(obs)?.value(x))
    }

    pub fn gradient(&self, obs: &ObservationVector, x: &DVector<f64>) -> Result<DVector<f64>, EstimatorError> {
        Ok(self.bind(obs)?.gradient(x))
    }

    /// Minimizes the objective from `x = 0`.
    pub fn solve(&self, obs: &ObservationVector) -> Result<EstimatorReport, EstimatorError> {
        let f = self.bind(obs)?;
        let n = self.design.ncols();
        let tol = self.cfg.tol;
        let bound = self.cfg.divergence_bound;
        let l_max = self.lipschitz;

        let mut x = DVector::<f64>::zeros(n);
        let mut fx = f.value(&x);
        let mut gx = f.gradient(&x);
        let mut y = x.clone();
        let mut momentum = 1.0f64;
        let mut step_l = l_max;
        let mut iterations = 0;
        let mut converged = false;
        let mut stalled = false;
        let mut escaped = false;

        // One backtracking gradient step from `point`; never exceeds the global Lipschitz bound.
        let step = |point: &DVector<f64>, f_point: f64, g_point: &DVector<f64>, l0: f64| {
            let g2 = g_point.norm_squared();
            let mut l = l0;
            loop {
                let cand = point - g_point / l;
                let fc = f.value(&cand);
                if fc <= f_point - 0.5 * g2 / l || l >= l_max {
                    return (cand, fc, l);
                }
                l = (2.0 * l).min(l_max);
            }
        };

        while iterations < self.cfg.max_iter {
            iterations += 1;
            // objective differences below this are rounding noise
            let noise = ROUNDING_SLACK * fx.abs().max(1.0);
            let (fy, gy) = if momentum == 1.0 { (fx, gx.clone()) } else { (f.value(&y), f.gradient(&y)) };
            let (mut x_new, mut f_new, l_used) = step(&y, fy, &gy, (0.5 * step_l).max(l_max * 1e-6));
            step_l = l_used;
            if f_new > fx + noise {
                // function-value restart: drop momentum and step from the current iterate
                momentum = 1.0;
                let (xr, fr, lr) = step(&x, fx, &gx, l_max);
                step_l = lr;
                if fr > fx + noise {
                    stalled = true;
                    break;
                }
                x_new = xr;
                f_new = fr;
            }
            let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            y = &x_new + (&x_new - &x) * ((momentum - 1.0) / next);
            momentum = next;
            x = x_new;
            fx = f_new;
            gx = f.gradient(&x);
            if gx.norm() <= tol * x.norm().max(1.0) {
                converged = true;
                break;
            }
            if self.precision.is_none() && x.norm() > bound {
                escaped = true;
                break;
            }
        }

        let grad_norm = gx.norm();
        let mut diagnostics = Diagnostics {
            iterations: Some(iterations),
            final_residual: Some(grad_norm),
            converged,
            ..Default::default()
        };
        if self.precision.is_none() {
            // a point with all margins positive separates the data, so the likelihood has no finite maximizer
            let separating = f.margins(&x).iter().all(|&t| t > 0.0);
            if escaped || separating || x.norm() > bound {
                diagnostics.diverged = true;
                diagnostics.converged = false;
                diagnostics
                    .warnings
                    .push("data are separable; the ML estimate does not exist".into());
            }
        }
        if stalled && !converged {
            diagnostics.warnings.push(format!(
                "objective stalled at rounding level with gradient norm {grad_norm:e}"
            ));
        } else if !converged && !diagnostics.diverged {
            diagnostics
                .warnings
                .push(format!("reached {iterations} iterations with gradient norm {grad_norm:e}"));
        }
        Ok(EstimatorReport {
            estimate: x,
            estimator: self.id,
            diagnostics,
        })
    }
}

/// Probit MAP estimate: `argmin -sum log Phi(y_m d~_m^T x) + 1/2 x^T C_x^-1 x`.
pub fn map_probit(
    problem: &ProbitProblem,
    obs: &ObservationVector,
    cfg: &SolverConfig,
) -> Result<EstimatorReport, EstimatorError> {
    MapSolver::new(problem, Loss::Probit, true, cfg)?.solve(obs)
}

/// Probit ML estimate; flagged as diverged when the data are separable.
pub fn ml_probit(
    problem: &ProbitProblem,
    obs: &ObservationVector,
    cfg: &SolverConfig,
) -> Result<EstimatorReport, EstimatorError> {
    MapSolver::new(problem, Loss::Probit, false, cfg)?.solve(obs)
}

/// MAP estimate under the logistic noise model.
pub fn map_logit(
    problem: &ProbitProblem,
    obs: &ObservationVector,
    cfg: &SolverConfig,
) -> Result<EstimatorReport, EstimatorError> {
    MapSolver::new(problem, Loss::Logistic, true, cfg)?.solve(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearization::linearize;
    use crate::model::{generate_design, sample_instance};
    use crate::rng::substream;
    use crate::special::{norm_cdf, norm_pdf};
    use nalgebra::dmatrix;

    fn binary(v: Vec<f64>) -> ObservationVector {
        ObservationVector::binary(DVector::from_vec(v)).unwrap()
    }

    /// Root of a monotone increasing function on [lo, hi] by bisection.
    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn scalar_probit_map_matches_bisection() {
        let p = ProbitProblem::new(dmatrix![1.0], dmatrix![1.0], dmatrix![1.0], 0.0).unwrap();
        let r = map_probit(&p, &binary(vec![1.0]), &SolverConfig::default()).unwrap();
        // d/dx [-log Phi(x) + x^2/2] = -phi(x)/Phi(x) + x
        let root = bisect(|x| x - norm_pdf(x) / norm_cdf(x), -5.0, 5.0);
        assert!((r.estimate[0] - root).abs() < 1e-8);
        assert!(r.diagnostics.converged);
    }

    #[test]
    fn scalar_logit_map_matches_bisection() {
        let p = ProbitProblem::new(dmatrix![2.0], dmatrix![0.7], dmatrix![1.0], 0.0).unwrap();
        let r = map_logit(&p, &binary(vec![-1.0]), &SolverConfig::default()).unwrap();
        // d/dx [log(1 + exp(2x)) + x^2 / 1.4] = 2 sigmoid(2x) + x / 0.7
        let root = bisect(|x| 2.0 * sigmoid(2.0 * x) + x / 0.7, -5.0, 5.0);
        assert!((r.estimate[0] - root).abs() < 1e-8);
    }

    #[test]
    fn strong_prior_pins_estimate_to_zero() {
        let p = ProbitProblem::isotropic(DMatrix::identity(4, 4), 1e-8, 1.0, 0.0).unwrap();
        let y = binary(vec![1.0; 4]);
        let cfg = SolverConfig::default();
        for r in [map_probit(&p, &y, &cfg).unwrap(), map_logit(&p, &y, &cfg).unwrap()] {
            assert!(r.estimate.amax() < 1e-7);
        }
    }

    #[test]
    fn stopping_contract_on_random_instances() {
        let cfg = SolverConfig::default();
        for seed in 0..20 {
            let mut rng = substream(seed, 0);
            let p = ProbitProblem::isotropic(generate_design(50, 5, &mut rng), 1.0, 0.3, 0.0).unwrap();
            let (_, y) = sample_instance(&p, &mut rng);
            for loss in [Loss::Probit, Loss::Logistic] {
                let solver = MapSolver::new(&p, loss, true, &cfg).unwrap();
                let r = solver.solve(&y).unwrap();
                let g = solver.gradient(&y, &r.estimate).unwrap().norm();
                assert!(r.diagnostics.converged, "seed {seed}: {:?}", r.diagnostics);
                assert!(g <= cfg.tol * r.estimate.norm().max(1.0));
                assert!(r.diagnostics.iterations.unwrap() >= 1);
            }
        }
    }

    #[test]
    fn map_beats_linear_estimates_on_its_own_objective() {
        let cfg = SolverConfig::default();
        for seed in 0..10 {
            let mut rng = substream(100 + seed, 0);
            let p = ProbitProblem::isotropic(generate_design(30, 4, &mut rng), 1.0, 0.2, 0.0).unwrap();
            let (_, y) = sample_instance(&p, &mut rng);
            let lin = linearize(&p).unwrap();
            let solver = MapSolver::new(&p, Loss::Probit, true, &cfg).unwrap();
            let best = solver.objective(&y, &solver.solve(&y).unwrap().estimate).unwrap();
            let others = [
                crate::estimators::lmmse_estimate(&lin, &y).unwrap().estimate,
                crate::estimators::ls_estimate(&lin, &y).unwrap().estimate,
                DVector::zeros(4),
            ];
            for x in &others {
                assert!(best <= solver.objective(&y, x).unwrap() + 1e-6);
            }
        }
    }

    #[test]
    fn ml_flags_separable_data() {
        let p = ProbitProblem::new(dmatrix![1.0], dmatrix![1.0], dmatrix![1.0], 0.0).unwrap();
        let r = ml_probit(&p, &binary(vec![1.0]), &SolverConfig::default()).unwrap();
        assert!(r.diagnostics.diverged);
        assert!(!r.is_usable());
    }

    #[test]
    fn ml_symmetric_instance() {
        let p = ProbitProblem::new(dmatrix![1.0; 1.0], dmatrix![1.0], DMatrix::identity(2, 2), 0.0).unwrap();
        let r = ml_probit(&p, &binary(vec![1.0, -1.0]), &SolverConfig::default()).unwrap();
        assert!(!r.diagnostics.diverged);
        assert!(r.estimate[0].abs() < 1e-12);
    }

    #[test]
    fn weak_prior_map_approaches_ml() {
        let cfg = SolverConfig::default();
        let mut found = 0;
        for seed in 0..20 {
            let mut rng = substream(200 + seed, 0);
            let d = generate_design(40, 3, &mut rng);
            let p = ProbitProblem::isotropic(d.clone(), 1.0, 1.0, 0.0).unwrap();
            let (_, y) = sample_instance(&p, &mut rng);
            let ml = ml_probit(&p, &y, &cfg).unwrap();
            if ml.diagnostics.diverged {
                continue;
            }
            found += 1;
            let weak = ProbitProblem::isotropic(d, 1e6, 1.0, 0.0).unwrap();
            let map = map_probit(&weak, &y, &cfg).unwrap();
            assert!((ml.estimate - map.estimate).amax() < 1e-3);
        }
        assert!(found >= 10);
    }

    #[test]
    fn sign_flip_negates_optimizers() {
        let cfg = SolverConfig::default();
        let mut rng = substream(7, 0);
        let p = ProbitProblem::isotropic(generate_design(25, 4, &mut rng), 1.0, 0.5, 0.0).unwrap();
        let (_, y) = sample_instance(&p, &mut rng);
        for loss in [Loss::Probit, Loss::Logistic] {
            let s = MapSolver::new(&p, loss, true, &cfg).unwrap();
            let a = s.solve(&y).unwrap().estimate;
            let b = s.solve(&y.negated()).unwrap().estimate;
            assert!((a + b).amax() < 1e-8);
        }
    }

    #[test]
    fn whitening_matches_rescaled_design() {
        let cfg = SolverConfig::default();
        let d = generate_design(10, 3, &mut substream(8, 0));
        let cw = DMatrix::from_diagonal(&DVector::from_fn(10, |i, _| 0.5 + 0.1 * i as f64));
        let p = ProbitProblem::new(d.clone(), DMatrix::identity(3, 3), cw.clone(), 0.0).unwrap();
        let mut scaled = d.clone();
        for m in 0..10 {
            scaled.row_mut(m).unscale_mut(cw[(m, m)].sqrt());
        }
        let q = ProbitProblem::isotropic(scaled, 1.0, 1.0, 0.0).unwrap();
        let y = binary((0..10).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 }).collect());
        let a = map_probit(&p, &y, &cfg).unwrap().estimate;
        let b = map_probit(&q, &y, &cfg).unwrap().estimate;
        assert!((a - b).amax() < 1e-10);
    }

    #[test]
    fn preconditions() {
        let cfg = SolverConfig::default();
        let cw = dmatrix![1.0, 0.3; 0.3, 1.0];
        let p = ProbitProblem::new(dmatrix![1.0; 1.0], dmatrix![1.0], cw, 0.0).unwrap();
        assert!(matches!(
            map_probit(&p, &binary(vec![1.0, 1.0]), &cfg),
            Err(EstimatorError::NonDiagonalNoise(EstimatorId::Map))
        ));
        let p = ProbitProblem::new(dmatrix![1.0], dmatrix![1.0], dmatrix![1.0], 0.5).unwrap();
        let y = ObservationVector::smoothed(DVector::from_vec(vec![0.3])).unwrap();
        assert!(matches!(map_logit(&p, &y, &cfg), Err(EstimatorError::RequiresBinary(_))));
    }
}
