// Check the linear small-margin law on synthetic manifolds with known geometry.

use margin_lab::synth::{validate_scaling, ManifoldSpec};

fn main() {
    for (name, spec) in [
        ("antipodal circle", ManifoldSpec::circle_antipodal(200_000, 0)),
        ("triad circle", ManifoldSpec::circle_triad(200_000, 0)),
        ("8 sites in square", ManifoldSpec::square_random(8, 0, 200_000, 0)),
    ] {
        let v = validate_scaling(&spec).unwrap();
        println!(
            "{name:>18}: beta {:.3}, R^2 {:.4}, alpha {:.4} vs oracle {:.4} ({:.1}% off), {}",
            v.fit.beta,
            v.fit.r2,
            v.fit.alpha_constrained,
            v.oracle_alpha,
            100.0 * v.relative_alpha_error,
            if v.passes() { "pass" } else { "fail" }
        );
    }
}
