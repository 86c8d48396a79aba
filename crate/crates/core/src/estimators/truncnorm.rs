//! Unit-variance normal draws restricted to a half-line.

use crate::special::{norm_cdf, norm_quantile};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

/// Beyond this standardized truncation point the sampler switches from the
/// inverse CDF to rejection.
const TAIL_SWITCH: f64 = 5.0;

/// Draws from `N(mean, 1)` conditioned on `z >= 0`, or on `z < 0` when
/// `lower_tail` is set.
pub fn sample_truncated_normal<R: Rng + ?Sized>(mean: f64, lower_tail: bool, rng: &mut R) -> f64 {
    if lower_tail {
        -positive_side(-mean, rng)
    } else {
        positive_side(mean, rng)
    }
}

fn positive_side<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    // z = mean + t with t ~ N(0, 1) restricted to t >= a
    let a = -mean;
    let t = if a > TAIL_SWITCH {
        exponential_tail(a, rng)
    } else if a < -TAIL_SWITCH {
        // acceptance probability exceeds 1 - 3e-7
        loop {
            let t: f64 = rng.sample(StandardNormal);
            if t >= a {
                break t;
            }
        }
    } else {
        // -t ~ N(0, 1) restricted to -t <= -a, by inversion of v * Phi(-a), v in (0, 1]
        let v = 1.0 - rng.random::<f64>();
        (-norm_quantile(v * norm_cdf(-a))).max(a)
    };
    (mean + t).max(0.0)
}

/// Robert's exponential-proposal sampler for `N(0, 1)` restricted to `t >= a`, `a > 0`.
fn exponential_tail<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = rng.sample(Exp1);
        let t = a + e / rate;
        let log_accept = -0.5 * (t - rate) * (t - rate);
        let u = 1.0 - rng.random::<f64>();
        if u.ln() <= log_accept {
            return t;
        }
    }
}
