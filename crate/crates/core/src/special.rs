//! Standard-normal special functions with tail-stable evaluations.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Below this argument `log_norm_cdf` switches to the scaled complementary error function.
const LOG_CDF_TAIL: f64 = -6.0;

/// Standard normal density.
#[inline]
pub fn norm_pdf(t: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

/// Standard normal CDF, accurate in both tails.
#[inline]
pub fn norm_cdf(t: f64) -> f64 {
    0.5 * erfc(-t * FRAC_1_SQRT_2)
}

/// Inverse of the standard normal CDF for `p` in (0, 1).
pub fn norm_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let t = -SQRT_2 * erfc_inv(2.0 * p);
    // one Halley step against the exact CDF
    let pdf = norm_pdf(t);
    if !(pdf > 0.0) || !t.is_finite() {
        return t;
    }
    let r = (norm_cdf(t) - p) / pdf;
    t - r / (1.0 + 0.5 * t * r)
}

/// Scaled complementary error function `exp(u^2) erfc(u)`.
///
/// Uses a Lentz continued fraction above `u = 4`, where `erfc` alone
/// would eventually underflow.
pub fn erfcx(u: f64) -> f64 {
    if u < 4.0 {
        return (u * u).exp() * erfc(u);
    }
    // erfc(u) = exp(-u^2)/sqrt(pi) * 1/(u + (1/2)/(u + 1/(u + (3/2)/(u + ...))))
    let tiny = 1e-300;
    let mut f = u;
    let mut c = u;
    let mut d = 0.0;
    for k in 1..200 {
        let a = 0.5 * k as f64;
        d = u + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        d = 1.0 / d;
        c = u + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / (PI.sqrt() * f)
}

/// `log Phi(t)` without cancellation deep in the lower tail.
pub fn log_norm_cdf(t: f64) -> f64 {
    if t < LOG_CDF_TAIL {
        let u = -t * FRAC_1_SQRT_2;
        (0.5 * erfcx(u)).ln() - u * u
    } else if t > 0.0 {
        (-norm_cdf(-t)).ln_1p()
    } else {
        norm_cdf(t).ln()
    }
}

/// Inverse Mills ratio `phi(t) / Phi(t)`, stable for very negative `t`.
pub fn mills_ratio(t: f64) -> f64 {
    if t < LOG_CDF_TAIL {
        (2.0 / PI).sqrt() / erfcx(-t * FRAC_1_SQRT_2)
    } else {
        norm_pdf(t) / norm_cdf(t)
    }
}

/// `log(1 + exp(-t))`, the logistic loss at margin `t`.
pub fn log1p_exp_neg(t: f64) -> f64 {
    if t > 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

/// Logistic sigmoid `1 / (1 + exp(-t))`.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}
