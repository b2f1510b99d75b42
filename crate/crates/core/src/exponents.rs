//! Power-law tail exponents of persistence lifetimes.
//!
//! The empirical survival function `S(e) = #{l > e} / n` is sampled at 16
//! log-spaced points in `[e0/2, 2 e0]`, where `e0` is the 80th percentile, and
//! `log S` is regressed on `log e`. The exponent is the negated slope.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persistence::Lifetimes;

/// Number of regression abscissae.
pub const N_ABSCISSAE: usize = 16;
/// Smallest sample accepted as a reliable estimate.
pub const MIN_LIFETIMES: usize = 20;
/// Quantile used as the reference lifetime.
pub const REFERENCE_QUANTILE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentEstimate {
    pub beta: f64,
    pub epsilon0: f64,
    pub n_used: usize,
    pub r_squared: f64,
}

/// Quantile of a sorted sample by linear interpolation between order
/// statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Ratios `e / e0` of the regression abscissae.
fn window_ratios() -> [f64; N_ABSCISSAE] {
    let mut out = [0.0; N_ABSCISSAE];
    for (i, r) in out.iter_mut().enumerate() {
        let u = -1.0 + 2.0 * i as f64 / (N_ABSCISSAE - 1) as f64;
        *r = u.exp2();
    }
    out
}

/// Fits the tail exponent. Zero lifetimes carry no scale information and are
/// ignored. With fewer than [`MIN_LIFETIMES`] positive values the error
/// carries `fallback` back to the caller.
pub fn estimate_exponent(lifetimes: &Lifetimes, fallback: Option<f64>) -> Result<ExponentEstimate> {
    if lifetimes.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput("lifetimes must be finite and >= 0".into()));
    }
    let mut sorted: Vec<f64> = lifetimes.values.iter().copied().filter(|v| *v > 0.0).collect();
    if sorted.len() < MIN_LIFETIMES {
        return Err(Error::UnreliableEstimate {
            available: sorted.len(),
            required: MIN_LIFETIMES,
            fallback,
        });
    }
    sorted.sort_unstable_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::ZeroVariance);
    }
    let n = sorted.len() as f64;
    let epsilon0 = quantile_sorted(&sorted, REFERENCE_QUANTILE);

    // Regress on log(e / e0): the slope is unchanged and the abscissae do not
    // depend on the scale of the sample.
    let mut xs = Vec::with_capacity(N_ABSCISSAE);
    let mut ys = Vec::with_capacity(N_ABSCISSAE);
    for ratio in window_ratios() {
        let eps = ratio * epsilon0;
        let above = sorted.len() - sorted.partition_point(|&v| v <= eps);
        if above > 0 {
            xs.push(ratio.ln());
            ys.push((above as f64 / n).ln());
        }
    }
    if xs.len() < 2 {
        return Err(Error::ZeroVariance);
    }
    let (slope, r_squared) = ols(&xs, &ys);
    Ok(ExponentEstimate {
        beta: (-slope).max(0.0),
        epsilon0,
        n_used: xs.len(),
        r_squared,
    })
}

/// Least-squares slope and coefficient of determination.
fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    (slope, r2)
}
