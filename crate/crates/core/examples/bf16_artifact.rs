// Rounding logits to bf16 collapses the margin distribution onto a coarse
// lattice; recomputing from the hidden states in single precision undoes it.

use margin_lab::margin::{compute_margins, emulate_bf16, recompute_fp32_logits, unique_value_count};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unique(logits: &[f32], vocab: usize, targets: &[u32]) -> usize {
    let m: Vec<f64> = compute_margins(logits, vocab, targets).unwrap().iter().map(|r| r.margin).collect();
    unique_value_count(&m)
}

fn main() {
    let (rows, d, vocab) = (2000, 16, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let hidden: Vec<f32> = (0..rows * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let w: Vec<f32> = (0..vocab * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let targets: Vec<u32> = (0..rows).map(|_| rng.random_range(0..vocab as u32)).collect();

    let logits: Vec<f32> = hidden.chunks(d).flat_map(|h| recompute_fp32_logits(h, &w).unwrap()).collect();
    let bf16: Vec<f32> = logits.iter().map(|&x| emulate_bf16(x)).collect();

    println!("unique margins, fp32 logits: {}", unique(&logits, vocab, &targets));
    println!("unique margins, bf16 logits: {}", unique(&bf16, vocab, &targets));
}
