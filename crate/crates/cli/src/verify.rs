//! Desk-scale self-verification suite.
//!
//! Every Monte-Carlo tolerance is a multiple of the measured standard error,
//! so smaller sample counts widen the bands rather than break the checks.

use linprobit::analysis::{empirical_mse, lmmse_mse_closed_form, ls_mse_closed_form};
use linprobit::estimators::{EstimatorId, LinearMap, Loss, MapSolver, SolverConfig};
use linprobit::linearization::{monte_carlo_moments, residual_moments};
use linprobit::model::{generate_design, noise_variance_for, sample_instance, ProbitProblem};
use linprobit::rng::{mix_seed, substream};
use linprobit::{linearize, Linearization};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

use crate::config::{Sabotage, VerifyConfig};

/// Standard errors allowed between a Monte-Carlo mean and its exact value.
pub const MC_SIGMAS: f64 = 4.0;

/// Factor applied to `E` by [`Sabotage::EMatrixScale`].
const SABOTAGE_SCALE: f64 = 1.25;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn problem(m: usize, n: usize, snr_db: f64, seed: u64) -> ProbitProblem {
    let d = generate_design(m, n, &mut substream(seed, u64::MAX));
    ProbitProblem::isotropic(d, 1.0, noise_variance_for(1.0, snr_db), 0.0).expect("valid synthetic problem")
}

fn sabotaged(lin: &Linearization, sabotage: Option<Sabotage>) -> Linearization {
    let mut lin = lin.clone();
    if sabotage == Some(Sabotage::EMatrixScale) {
        lin.e_matrix *= SABOTAGE_SCALE;
    }
    lin
}

fn closed_form_vs_mc(cfg: &VerifyConfig, id: EstimatorId) -> Check {
    let trials = cfg.trials.unwrap_or(4_000).max(2);
    let mut worst = 0.0f64;
    let mut detail = String::new();
    let sizes: &[(usize, usize, f64)] = &[(10, 5, -10.0), (50, 5, 0.0), (50, 20, 10.0)];
    for (k, &(m, n, snr)) in sizes.iter().enumerate() {
        let seed = mix_seed(cfg.seed, &[k as u64, 1]);
        let p = problem(m, n, snr, seed);
        let lin = sabotaged(&linearize(&p).expect("linearization"), cfg.sabotage);
        let (map, exact) = match id {
            EstimatorId::Lmmse => (LinearMap::lmmse(&lin), lmmse_mse_closed_form(&lin, p.prior_cov())),
            _ => (LinearMap::ls(&lin), ls_mse_closed_form(&lin, p.prior_cov())),
        };
        let (map, exact) = match (map, exact) {
            (Ok(map), Ok(exact)) => (map, exact),
            (Err(e), _) => return fail(id, format!("M={m} N={n}: {e}")),
            (_, Err(e)) => return fail(id, format!("M={m} N={n}: {e}")),
        };
        match empirical_mse(&p, |y, _| map.estimate(id, y), trials, seed) {
            Ok(est) => {
                let z = (est.mean - exact).abs() / est.stderr.max(f64::MIN_POSITIVE);
                if z > worst {
                    worst = z;
                    detail = format!(
                        "worst at M={m} N={n} SNR={snr} dB: MC {:.5} vs exact {:.5} ({z:.2} se)",
                        est.mean, exact
                    );
                }
            }
            Err(e) => return fail(id, e.to_string()),
        }
    }
    Check {
        name: if id == EstimatorId::Lmmse { "lmmse-closed-form-vs-mc" } else { "ls-closed-form-vs-mc" },
        passed: worst <= MC_SIGMAS,
        detail,
    }
}

fn fail(id: EstimatorId, detail: String) -> Check {
    Check {
        name: if id == EstimatorId::Lmmse { "lmmse-closed-form-vs-mc" } else { "ls-closed-form-vs-mc" },
        passed: false,
        detail,
    }
}

fn scalar_anchors() -> Check {
    let p = ProbitProblem::isotropic(nalgebra::dmatrix![1.0], 1.0, 1.0, 0.0).expect("scalar problem");
    let lin = linearize(&p).expect("linearization");
    let a = lmmse_mse_closed_form(&lin, p.prior_cov()).unwrap_or(f64::NAN);
    let b = ls_mse_closed_form(&lin, p.prior_cov()).unwrap_or(f64::NAN);
    let err = (a - (1.0 - 1.0 / PI)).abs().max((b - (PI - 1.0)).abs());
    Check {
        name: "scalar-anchors",
        passed: err <= 1e-10,
        detail: format!("L-MMSE {a:.12}, LS {b:.12}, max error {err:.1e}"),
    }
}

fn arcsine_law(cfg: &VerifyConfig) -> Check {
    let trials = cfg.trials.unwrap_or(200_000).max(2);
    let p = problem(6, 3, 0.0, mix_seed(cfg.seed, &[2]));
    let lin = linearize(&p).expect("linearization");
    let mc = monte_carlo_moments(&p, trials, &mut substream(cfg.seed, 2));
    let mut worst = 0.0f64;
    for i in 0..p.m() {
        for j in 0..i {
            let c = lin.obs_cov[(i, j)];
            // the product of two signs is +-1, so its variance is exactly 1 - c^2
            let se = ((1.0 - c * c) / trials as f64).sqrt();
            worst = worst.max((mc.obs[(i, j)] - c).abs() / se);
        }
    }
    Check {
        name: "arcsine-law",
        passed: worst <= MC_SIGMAS,
        detail: format!("max deviation {worst:.2} se over {} pairs, {trials} draws", p.m() * (p.m() - 1) / 2),
    }
}

fn orthogonality(cfg: &VerifyConfig) -> Check {
    let trials = cfg.trials.unwrap_or(200_000).max(2);
    let p = problem(8, 3, 5.0, mix_seed(cfg.seed, &[3]));
    let lin = linearize(&p).expect("linearization");
    let r = residual_moments(&p, &lin, trials, &mut substream(cfg.seed, 3));
    let z = r.max_abs_in_stderr();
    Check {
        name: "bussgang-orthogonality",
        passed: z < 5.0,
        detail: format!("max |E[x e^T]| = {:.2e} ({z:.2} se)", r.mean.amax()),
    }
}

fn gradient_check(cfg: &VerifyConfig) -> Check {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for loss in [Loss::Probit, Loss::Logistic] {
        for k in 0..10u64 {
            let mut rng = substream(mix_seed(cfg.seed, &[4, k]), 4);
            let p = problem(20, 4, 0.0, mix_seed(cfg.seed, &[4, k]));
            let (_, y) = sample_instance(&p, &mut rng);
            let solver = MapSolver::new(&p, loss, true, &SolverConfig::default()).expect("solver");
            let x = DVector::from_fn(4, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
            let g = solver.gradient(&y, &x).expect("gradient");
            let fd = DVector::from_fn(4, |j, _| {
                let mut a = x.clone();
                let mut b = x.clone();
                a[j] += h;
                b[j] -= h;
                (solver.objective(&y, &a).expect("objective") - solver.objective(&y, &b).expect("objective"))
                    / (2.0 * h)
            });
            worst = worst.max((&g - &fd).norm() / g.norm().max(1e-12));
        }
    }
    Check {
        name: "map-gradient-fd",
        passed: worst < 1e-4,
        detail: format!("max relative error {worst:.1e} over 20 points"),
    }
}

/// Runs every check in a fixed order.
pub fn run_checks(cfg: &VerifyConfig) -> Vec<Check> {
    vec![
        closed_form_vs_mc(cfg, EstimatorId::Lmmse),
        closed_form_vs_mc(cfg, EstimatorId::Ls),
        scalar_anchors(),
        arcsine_law(cfg),
        orthogonality(cfg),
        gradient_check(cfg),
    ]
}

pub fn render_table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for c in checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{:<width$}  {status}  {}\n", c.name, c.detail));
    }
    out
}
