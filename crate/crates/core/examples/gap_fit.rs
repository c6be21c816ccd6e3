// Fit the small-margin gap curve of a margin sample.

use margin_lab::margin::{fit_gap_curve, margin_quantiles};
use margin_lab::GridSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

fn main() {
    // Exponential margins have a linear gap curve near zero: η(ε) ≈ λε.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let exp = Exp::new(2.0).unwrap();
    let margins: Vec<f64> = (0..100_000).map(|_| exp.sample(&mut rng)).collect();

    let q = margin_quantiles(&margins).unwrap();
    println!("median {:.4}, Pr(m < 0.5) {:.4}", q.median, q.pr_below_half);

    let fit = fit_gap_curve(&margins, &GridSpec { quantile_hi: 0.05, ..GridSpec::default() }).unwrap();
    println!("beta {:.4}  alpha {:.4}  R^2 {:.5}", fit.beta, fit.alpha_constrained, fit.r2);
}
