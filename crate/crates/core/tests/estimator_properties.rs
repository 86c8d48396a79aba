//! Cross-estimator properties: gradients, sign symmetry, and minimality.

use linprobit::estimators::{
    lmmse_estimate, ls_estimate, map_probit, pm_gibbs, EstimatorId, Loss, MapSolver, PreparedEstimator, SolverConfig,
};
use linprobit::model::{generate_design, sample_instance, ObservationVector, ProbitProblem};
use linprobit::rng::substream;
use linprobit::linearize;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

fn instance(m: usize, n: usize, seed: u64, noise: f64) -> (ProbitProblem, ObservationVector) {
    let mut rng = substream(seed, 0);
    let p = ProbitProblem::isotropic(generate_design(m, n, &mut rng), 1.0, noise, 0.0).unwrap();
    let (_, y) = sample_instance(&p, &mut rng);
    (p, y)
}

#[test]
fn gradients_match_central_differences() {
    let h = 1e-5;
    let cfg = SolverConfig::default();
    for loss in [Loss::Probit, Loss::Logistic] {
        for k in 0..50u64 {
            let (p, y) = instance(30, 4, 500 + k, 0.3);
            let solver = MapSolver::new(&p, loss, true, &cfg).unwrap();
            let mut rng = substream(600 + k, 1);
            let x = DVector::from_fn(4, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
            let g = solver.gradient(&y, &x).unwrap();
            let fd = DVector::from_fn(4, |j, _| {
                let mut a = x.clone();
                let mut b = x.clone();
                a[j] += h;
                b[j] -= h;
                (solver.objective(&y, &a).unwrap() - solver.objective(&y, &b).unwrap()) / (2.0 * h)
            });
            let rel = (&g - &fd).norm() / g.norm().max(1e-12);
            assert!(rel < 1e-4, "{loss:?} point {k}: relative error {rel}");
        }
    }
}

#[test]
fn flipping_observations_flips_every_estimate() {
    let cfg = SolverConfig::default();
    for seed in 0..3 {
        let (p, y) = instance(20, 3, 40 + seed, 0.5);
        let lin = linearize(&p).unwrap();
        for id in EstimatorId::ALL {
            let est = PreparedEstimator::with_linearization(id, &p, &lin, &cfg).unwrap();
            let a = est.fit(&y, &mut substream(1, seed)).unwrap();
            let b = est.fit(&y.negated(), &mut substream(2, seed)).unwrap();
            if id == EstimatorId::Ml && a.diagnostics.diverged {
                assert!(b.diagnostics.diverged);
                continue;
            }
            let gap = (&a.estimate + &b.estimate).amax();
            let tol = match id {
                EstimatorId::Lmmse | EstimatorId::Ls => 0.0,
                EstimatorId::Pm => 0.05,
                _ => 1e-8,
            };
            assert!(gap <= tol, "{id}: {gap}");
        }
    }
}

#[test]
fn map_objective_is_minimal_among_candidates() {
    let cfg = SolverConfig::default();
    for seed in 0..25 {
        let (p, y) = instance(40, 5, 900 + seed, 0.5);
        let lin = linearize(&p).unwrap();
        let solver = MapSolver::new(&p, Loss::Probit, true, &cfg).unwrap();
        let best = solver.objective(&y, &map_probit(&p, &y, &cfg).unwrap().estimate).unwrap();
        let mut rng = substream(seed, 1);
        let pm = pm_gibbs(&p, &y, &SolverConfig::desk(), &mut rng).unwrap().estimate;
        for x in [
            lmmse_estimate(&lin, &y).unwrap().estimate,
            ls_estimate(&lin, &y).unwrap().estimate,
            DVector::zeros(5),
            pm,
        ] {
            assert!(best <= solver.objective(&y, &x).unwrap() + 1e-6);
        }
    }
}

#[test]
fn iterative_reports_carry_diagnostics() {
    let cfg = SolverConfig::desk();
    let (p, y) = instance(25, 4, 3, 0.5);
    for id in [EstimatorId::Map, EstimatorId::LogitMap, EstimatorId::Pm] {
        let r = PreparedEstimator::new(id, &p, &cfg).unwrap().fit(&y, &mut substream(0, 0)).unwrap();
        assert!(r.diagnostics.iterations.unwrap() >= 1);
        assert!(r.estimate.iter().all(|v| v.is_finite()));
        if id == EstimatorId::Pm {
            assert_eq!(r.diagnostics.samples_kept, Some(5_000));
            assert_eq!(r.diagnostics.burn_in, Some(2_000));
        } else {
            assert!(r.diagnostics.final_residual.unwrap() >= 0.0);
        }
    }
}
