//! bfloat16 precision emulation and full-precision logit recomputation.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// Upper 16 bits of `x` after round-to-nearest-even on the discarded mantissa bits.
///
/// NaN stays NaN (quiet bit forced on) and infinities pass through.
pub fn f32_to_bf16_bits(x: f32) -> u16 {
    let bits = x.to_bits();
    if x.is_nan() {
        return ((bits >> 16) as u16) | 0x0040;
    }
    let lsb = (bits >> 16) & 1;
    (bits.wrapping_add(0x7FFF + lsb) >> 16) as u16
}

pub fn bf16_bits_to_f32(bits: u16) -> f32 {
    f32::from_bits((bits as u32) << 16)
}

/// Rounds `x` to the nearest value with an 8-bit significand.
///
/// Idempotent. Infinities and NaN pass through unchanged.
pub fn emulate_bf16(x: f32) -> f32 {
    if !x.is_finite() {
        return x;
    }
    bf16_bits_to_f32(f32_to_bf16_bits(x))
}

/// Number of distinct bit patterns in `values`, with `-0.0` folded into `+0.0`.
pub fn unique_value_count(values: &[f64]) -> usize {
    values
        .iter()
        .map(|&v| if v == 0.0 { 0u64 } else { v.to_bits() })
        .collect::<HashSet<_>>()
        .len()
}

/// Logits `unembedding · hidden` for one position, accumulated in f64 and
/// rounded once to f32.
///
/// `unembedding` is row-major `V × d` with `d = hidden.len()`.
pub fn recompute_fp32_logits(hidden: &[f32], unembedding: &[f32]) -> Result<Vec<f32>> {
    let d = hidden.len();
    if d == 0 || !unembedding.len().is_multiple_of(d) {
        return Err(Error::usage(format!(
            "unembedding of {} values does not split into rows of width {d}",
            unembedding.len()
        )));
    }
    Ok(unembedding
        .chunks_exact(d)
        .map(|row| {
            row.iter()
                .zip(hidden)
                .map(|(&w, &h)| w as f64 * h as f64)
                .sum::<f64>() as f32
        })
        .collect())
}
