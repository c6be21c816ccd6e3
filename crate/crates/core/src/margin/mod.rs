//! Exact margin computation and the statistics built on it.
//!
//! A position's margin is the gap between its largest and second-largest
//! logit. Ties between equal logits resolve to the lower token id, so every
//! result here is reproducible bit for bit.

mod bf16;
mod gap;
mod rank;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bf16::{
    bf16_bits_to_f32, emulate_bf16, f32_to_bf16_bits, recompute_fp32_logits, unique_value_count,
};
pub use gap::{empirical_gap, fit_gap_curve, GapFit, GridSpec};
pub use rank::{mid_ranks, spearman};

/// One audited position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginRecord {
    pub position: usize,
    pub target: u32,
    pub top1: u32,
    pub top2: u32,
    pub margin: f64,
    pub correct: bool,
}

/// Indices of the two largest entries of `row`, lower index first on ties.
///
/// `row` must hold at least two entries.
pub fn top_two<T: Copy + Into<f64>>(row: &[T]) -> (usize, usize) {
    debug_assert!(row.len() >= 2);
    let (mut best, mut second) = if row[1].into() > row[0].into() {
        (1, 0)
    } else {
        (0, 1)
    };
    for (i, &v) in row.iter().enumerate().skip(2) {
        let v = v.into();
        if v > row[best].into() {
            second = best;
            best = i;
        } else if v > row[second].into() {
            second = i;
        }
    }
    (best, second)
}

/// Computes one [`MarginRecord`] per row of a row-major `rows × vocab` logit matrix.
pub fn compute_margins<T: Copy + Into<f64>>(
    logits: &[T],
    vocab: usize,
    targets: &[u32],
) -> Result<Vec<MarginRecord>> {
    if vocab < 2 {
        return Err(Error::usage(format!(
            "margins need at least 2 logits per row, got {vocab}"
        )));
    }
    if !logits.len().is_multiple_of(vocab) {
        return Err(Error::usage(format!(
            "logit buffer of length {} is not a multiple of vocab {vocab}",
            logits.len()
        )));
    }
    let rows = logits.len() / vocab;
    if rows != targets.len() {
        return Err(Error::usage(format!(
            "{rows} logit rows but {} targets",
            targets.len()
        )));
    }

    logits
        .chunks_exact(vocab)
        .zip(targets)
        .enumerate()
        .map(|(position, (row, &target))| {
            if let Some(bad) = row.iter().position(|&v| !v.into().is_finite()) {
                return Err(Error::data(format!(
                    "non-finite logit at position {position}, token {bad}"
                )));
            }
            let (top1, top2) = top_two(row);
            Ok(MarginRecord {
                position,
                target,
                top1: top1 as u32,
                top2: top2 as u32,
                margin: row[top1].into() - row[top2].into(),
                correct: top1 as u32 == target,
            })
        })
        .collect()
}

/// Nearest-rank quantiles of the margin distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginQuantiles {
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    /// Fraction of margins strictly below 0.5.
    pub pr_below_half: f64,
}

/// Nearest-rank quantile of an ascending slice: the value at rank `ceil(p·n)`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn margin_quantiles(margins: &[f64]) -> Result<MarginQuantiles> {
    if margins.is_empty() {
        return Err(Error::usage("margin quantiles of an empty set"));
    }
    let mut sorted = margins.to_vec();
    sorted.sort_by(f64::total_cmp);
    let below = sorted.partition_point(|&m| m < 0.5);
    Ok(MarginQuantiles {
        q05: nearest_rank(&sorted, 0.05),
        q25: nearest_rank(&sorted, 0.25),
        median: nearest_rank(&sorted, 0.5),
        q75: nearest_rank(&sorted, 0.75),
        q95: nearest_rank(&sorted, 0.95),
        pr_below_half: below as f64 / sorted.len() as f64,
    })
}

/// Median by nearest rank; `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(nearest_rank(&sorted, 0.5))
}
