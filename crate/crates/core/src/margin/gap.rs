//! Expressibility-gap curve: the fraction of positions whose margin falls
//! below a threshold, and its log-log scaling fit.

use serde::{Deserialize, Serialize};

use super::nearest_rank;
use crate::error::{Error, Result};

/// Log-spaced threshold grid, bounded by two quantiles of the margin sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub count: usize,
    pub quantile_lo: f64,
    pub quantile_hi: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            count: 20,
            quantile_lo: 1e-4,
            quantile_hi: 0.3,
        }
    }
}

/// Result of fitting `η(ε) ≈ α·ε^β` to an empirical gap curve.
///
/// Only grid points with a nonzero gap are kept; `epsilon_grid` and `eta_hat`
/// list exactly the points that entered the regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapFit {
    pub epsilon_grid: Vec<f64>,
    pub eta_hat: Vec<f64>,
    /// Log-log slope.
    pub beta: f64,
    /// `exp(intercept)` of the unconstrained log-log fit.
    pub alpha_intercept: f64,
    /// Mean of `η/ε` over the lower half of the grid (slope pinned to 1).
    pub alpha_constrained: f64,
    pub r2: f64,
}

/// Fraction of `sorted` (ascending) strictly below `eps`.
pub fn empirical_gap(sorted: &[f64], eps: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    sorted.partition_point(|&m| m < eps) as f64 / sorted.len() as f64
}

pub const MIN_FIT_MARGINS: usize = 1000;
const MIN_FIT_POINTS: usize = 5;

pub fn fit_gap_curve(margins: &[f64], grid: &GridSpec) -> Result<GapFit> {
    if margins.len() < MIN_FIT_MARGINS {
        return Err(Error::usage(format!(
            "gap fit needs at least {MIN_FIT_MARGINS} margins, got {}",
            margins.len()
        )));
    }
    if grid.count < MIN_FIT_POINTS
        || !(0.0 < grid.quantile_lo && grid.quantile_lo < grid.quantile_hi && grid.quantile_hi <= 1.0)
    {
        return Err(Error::usage(format!("invalid grid {grid:?}")));
    }
    if let Some(bad) = margins.iter().find(|m| !m.is_finite() || **m < 0.0) {
        return Err(Error::data(format!("margin {bad} is not a finite nonnegative value")));
    }

    let mut sorted = margins.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut lo = nearest_rank(&sorted, grid.quantile_lo);
    if lo <= 0.0 {
        match sorted.iter().find(|&&m| m > 0.0) {
            Some(&m) => lo = m,
            None => return Err(Error::numerical("all margins are zero")),
        }
    }
    let hi = nearest_rank(&sorted, grid.quantile_hi);
    if hi <= lo {
        return Err(Error::numerical(format!(
            "degenerate threshold range [{lo}, {hi}]"
        )));
    }

    let (log_lo, log_hi) = (lo.ln(), hi.ln());
    let step = (log_hi - log_lo) / (grid.count - 1) as f64;
    let (epsilon_grid, eta_hat): (Vec<f64>, Vec<f64>) = (0..grid.count)
        .map(|i| {
            let eps = if i + 1 == grid.count { hi } else { (log_lo + step * i as f64).exp() };
            (eps, empirical_gap(&sorted, eps))
        })
        .filter(|&(_, eta)| eta > 0.0)
        .unzip();
    if epsilon_grid.len() < MIN_FIT_POINTS {
        return Err(Error::numerical(format!(
            "only {} grid points have a nonzero gap",
            epsilon_grid.len()
        )));
    }

    let xs: Vec<f64> = epsilon_grid.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = eta_hat.iter().map(|e| e.ln()).collect();
    let (beta, intercept, r2) = least_squares(&xs, &ys)?;

    let half = epsilon_grid.len().div_ceil(2);
    let alpha_constrained = epsilon_grid[..half]
        .iter()
        .zip(&eta_hat[..half])
        .map(|(e, eta)| eta / e)
        .sum::<f64>()
        / half as f64;

    Ok(GapFit {
        epsilon_grid,
        eta_hat,
        beta,
        alpha_intercept: intercept.exp(),
        alpha_constrained,
        r2,
    })
}

/// Ordinary least squares `y = slope·x + intercept`, returning `(slope, intercept, r²)`.
fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::numerical("threshold grid has no spread"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        0.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok((slope, intercept, r2))
}
