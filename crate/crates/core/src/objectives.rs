//! Margin-refinement objectives and the combined training loss
//! `ce_weight · CE + lambda_mrp · L_objective`.
//!
//! Each loss comes in two forms: a `*_var` builder that records onto a
//! [`Tape`] for training, and a plain function that evaluates it on fixed
//! inputs.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Raise the top-1/top-2 gap at positions whose margin is below `tau`.
    Margin,
    /// Spread the top-k candidates apart under the top-k Fisher metric.
    Fisher,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::Margin => "margin",
            Objective::Fisher => "fisher",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrpConfig {
    pub objective: Objective,
    pub lambda_mrp: f64,
    /// Margin gate threshold in logit units; used by [`Objective::Margin`] only.
    pub tau: f64,
    /// Candidate count for [`Objective::Fisher`]; ignored by the margin objective.
    pub k: usize,
    pub clamp_floor: f64,
    pub ce_weight: f64,
}

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_K: usize = 5;
pub const DEFAULT_CLAMP_FLOOR: f64 = 1e-8;

impl Default for MrpConfig {
    fn default() -> Self {
        MrpConfig {
            objective: Objective::Fisher,
            lambda_mrp: 0.0,
            tau: DEFAULT_TAU,
            k: DEFAULT_K,
            clamp_floor: DEFAULT_CLAMP_FLOOR,
            ce_weight: 1.0,
        }
    }
}

impl MrpConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::usage(format!("{name} must be a finite nonnegative value, got {v}")))
            }
        };
        nonneg("lambda_mrp", self.lambda_mrp)?;
        nonneg("ce_weight", self.ce_weight)?;
        if !(self.clamp_floor > 0.0) {
            return Err(Error::usage(format!("clamp_floor must be positive, got {}", self.clamp_floor)));
        }
        match self.objective {
            Objective::Margin if !(self.tau > 0.0) => {
                Err(Error::usage(format!("tau must be positive, got {}", self.tau)))
            }
            Objective::Fisher if self.k < 2 => {
                Err(Error::usage(format!("fisher objective needs k >= 2, got {}", self.k)))
            }
            _ => Ok(()),
        }
    }
}

/// Loss components recorded on a tape. Zero-weighted parts are not recorded.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub ce: Option<Var>,
    pub mrp: Option<Var>,
}

fn check_finite(t: &Tensor) -> Result<()> {
    match t.data().iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::data(format!(
            "non-finite logit at position {}, token {}",
            i / t.cols().max(1),
            i % t.cols().max(1)
        ))),
        None => Ok(()),
    }
}

/// `−mean(margin)` over rows whose margin is below `tau`; zero when no row is.
pub fn margin_loss_var(tape: &mut Tape, logits: Var, tau: f64) -> Result<Var> {
    check_finite(tape.value(logits))?;
    if tape.value(logits).cols() < 2 {
        return Err(Error::usage("margin loss needs at least 2 logits per row"));
    }
    let (top2, _) = tape.topk_values_gather(logits, 2)?;
    let diff = tape.constant(Tensor::new(2, 1, vec![1.0, -1.0])?);
    let margins = tape.matmul(top2, diff)?;
    let gate: Vec<bool> = tape.value(margins).data().iter().map(|&m| m < tau).collect();
    let gated = tape.masked_mean(margins, &gate)?;
    Ok(tape.scale(gated, -1.0))
}

/// `−mean` over rows of `Σ_{i≠j} p_i p_j d_F(i, j)` on the top-k renormalized softmax.
///
/// `unembedding` is `V × d` with one row per logit column.
pub fn fisher_loss_var(
    tape: &mut Tape,
    logits: Var,
    unembedding: Var,
    k: usize,
    clamp_floor: f64,
) -> Result<Var> {
    check_finite(tape.value(logits))?;
    let [m, v] = tape.value(logits).shape();
    let [rows, _] = tape.value(unembedding).shape();
    if rows != v {
        return Err(Error::usage(format!(
            "unembedding has {rows} rows but logits have {v} columns"
        )));
    }
    if k < 2 || k > v {
        return Err(Error::usage(format!("top-{k} needs 2 <= k <= {v}")));
    }
    let (top, ids) = tape.topk_values_gather(logits, k)?;
    let p = tape.softmax(top);
    let w = tape.gather_rows(unembedding, &ids)?;
    let w = tape.l2_normalize_rows(w)?;
    let gram = tape.block_gram(w, k)?;
    let d2 = tape.quadratic_form(p, gram)?;
    let d = tape.sqrt_clamped(d2, clamp_floor)?;
    let penalty = tape.pair_weighted_sum(p, d)?;
    debug_assert_eq!(tape.value(penalty).rows(), m);
    let mean = tape.mean(penalty);
    Ok(tape.scale(mean, -1.0))
}

/// Mean negative log-probability of `targets`.
pub fn cross_entropy_var(tape: &mut Tape, logits: Var, targets: &[u32]) -> Result<Var> {
    check_finite(tape.value(logits))?;
    let ids: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    let lp = tape.log_softmax_gather(logits, &ids)?;
    let mean = tape.mean(lp);
    Ok(tape.scale(mean, -1.0))
}

pub fn combined_loss_var(
    tape: &mut Tape,
    logits: Var,
    unembedding: Var,
    targets: &[u32],
    config: &MrpConfig,
) -> Result<LossParts> {
    config.validate()?;
    let ce = if config.ce_weight != 0.0 {
        Some(cross_entropy_var(tape, logits, targets)?)
    } else {
        None
    };
    let mrp = if config.lambda_mrp != 0.0 {
        Some(match config.objective {
            Objective::Margin => margin_loss_var(tape, logits, config.tau)?,
            Objective::Fisher => {
                fisher_loss_var(tape, logits, unembedding, config.k, config.clamp_floor)?
            }
        })
    } else {
        None
    };
    let total = match (ce, mrp) {
        (Some(c), Some(r)) => {
            let a = weighted(tape, c, config.ce_weight);
            let b = weighted(tape, r, config.lambda_mrp);
            tape.add(a, b)?
        }
        (Some(c), None) => weighted(tape, c, config.ce_weight),
        (None, Some(r)) => weighted(tape, r, config.lambda_mrp),
        (None, None) => tape.constant(Tensor::scalar(0.0)),
    };
    Ok(LossParts { total, ce, mrp })
}

fn weighted(tape: &mut Tape, v: Var, w: f64) -> Var {
    if w == 1.0 {
        v
    } else {
        tape.scale(v, w)
    }
}

pub fn margin_loss(logits: &Tensor, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let out = margin_loss_var(&mut tape, l, tau)?;
    Ok(tape.value(out).item())
}

pub fn fisher_loss(logits: &Tensor, unembedding: &Tensor, k: usize, clamp_floor: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let w = tape.constant(unembedding.clone());
    let out = fisher_loss_var(&mut tape, l, w, k, clamp_floor)?;
    Ok(tape.value(out).item())
}

pub fn cross_entropy(logits: &Tensor, targets: &[u32]) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let out = cross_entropy_var(&mut tape, l, targets)?;
    Ok(tape.value(out).item())
}

pub fn combined_loss(
    logits: &Tensor,
    unembedding: &Tensor,
    targets: &[u32],
    config: &MrpConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let w = tape.constant(unembedding.clone());
    let parts = combined_loss_var(&mut tape, l, w, targets, config)?;
    Ok(tape.value(parts.total).item())
}

/// Fisher distance between candidates `i` and `j` of a top-k distribution.
///
/// `p` is the renormalized top-k distribution and `rows` the `k × d` matrix of
/// unit-norm embedding rows. With `δ = rows[i] − rows[j]` and `x = rows · δ`,
/// returns `sqrt(max(xᵀ(diag(p) − ppᵀ)x, clamp_floor))`, so `i = j` reports
/// `sqrt(clamp_floor)`.
pub fn fisher_distance(p: &[f64], rows: &Tensor, i: usize, j: usize, clamp_floor: f64) -> Result<f64> {
    let [k, d] = rows.shape();
    if p.len() != k {
        return Err(Error::usage(format!("{} probabilities for {k} rows", p.len())));
    }
    if i >= k || j >= k {
        return Err(Error::usage(format!("pair ({i}, {j}) out of range for k = {k}")));
    }
    if (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::usage("probabilities do not sum to 1"));
    }
    for r in 0..k {
        let norm = rows.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::usage(format!("row {r} has norm {norm}, expected unit norm")));
        }
    }
    let (ri, rj) = (rows.row(i), rows.row(j));
    let (mut quad, mut lin) = (0.0, 0.0);
    for (a, &pa) in p.iter().enumerate() {
        let ra = rows.row(a);
        let x: f64 = (0..d).map(|t| ra[t] * (ri[t] - rj[t])).sum();
        quad += pa * x * x;
        lin += pa * x;
    }
    Ok((quad - lin * lin).max(clamp_floor).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, softmax_in_place};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
        Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
    }

    fn unit_rows(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Tensor {
        let mut t = random(rng, k, d, 1.0);
        for row in t.data_mut().chunks_exact_mut(d) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.iter_mut().for_each(|x| *x /= n);
        }
        t
    }

    /// Explicit Σ = diag(p) − ppᵀ and projection through every row.
    fn dense_d2(p: &[f64], rows: &Tensor, i: usize, j: usize) -> f64 {
        let [k, d] = rows.shape();
        let mut sigma = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in 0..k {
                sigma[a][b] = if a == b { p[a] } else { 0.0 } - p[a] * p[b];
            }
        }
        let delta: Vec<f64> = (0..d).map(|t| rows.get(i, t) - rows.get(j, t)).collect();
        let proj: Vec<f64> = (0..k)
            .map(|a| (0..d).map(|t| delta[t] * rows.get(a, t)).sum())
            .collect();
        let mut s = 0.0;
        for a in 0..k {
            for b in 0..k {
                s += proj[a] * sigma[a][b] * proj[b];
            }
        }
        s
    }

    /// Straight-line evaluation of the Fisher objective, independent of the tape.
    fn dense_fisher_loss(logits: &Tensor, w: &Tensor, k: usize, floor: f64) -> f64 {
        let [m, v] = logits.shape();
        let d = w.cols();
        let mut total = 0.0;
        for r in 0..m {
            let row = logits.row(r);
            let mut order: Vec<usize> = (0..v).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            let top = &order[..k];
            let mut p: Vec<f64> = top.iter().map(|&t| row[t]).collect();
            softmax_in_place(&mut p);
            let mut rows = Vec::new();
            for &t in top {
                let n = w.row(t).iter().map(|x| x * x).sum::<f64>().sqrt();
                rows.push(w.row(t).iter().map(|x| x / n).collect::<Vec<_>>());
            }
            let rows = Tensor::from_rows(&rows).unwrap();
            assert_eq!(rows.cols(), d);
            for i in 0..k {
                for j in 0..k {
                    if i != j {
                        total += p[i] * p[j] * dense_d2(&p, &rows, i, j).max(floor).sqrt();
                    }
                }
            }
        }
        -total / m as f64
    }

    #[test]
    fn margin_loss_single_gated_row() {
        let logits = Tensor::new(2, 3, vec![1.2, 1.0, 0.0, 0.8, 0.0, -1.0]).unwrap();
        assert!((margin_loss(&logits, 0.5).unwrap() + 0.2).abs() < 1e-12);
        assert_eq!(margin_loss(&logits, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn margin_loss_matches_sort_gate_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = random(&mut rng, 50, 10, 1.0);
        let mut gated = Vec::new();
        for r in 0..50 {
            let mut row = logits.row(r).to_vec();
            row.sort_by(|a, b| b.total_cmp(a));
            let m = row[0] - row[1];
            if m < 0.3 {
                gated.push(m);
            }
        }
        assert!(!gated.is_empty());
        let oracle = -gated.iter().sum::<f64>() / gated.len() as f64;
        assert!((margin_loss(&logits, 0.3).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn margin_loss_rejects_nan() {
        let logits = Tensor::new(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(margin_loss(&logits, 0.5), Err(Error::Data(_))));
    }

    #[test]
    fn fisher_distance_examples() {
        let rows = Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let d = fisher_distance(&[0.5, 0.5], &rows, 0, 1, 1e-8).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
        let same = fisher_distance(&[0.5, 0.5], &rows, 1, 1, 1e-8).unwrap();
        assert!((same - 1e-4).abs() < 1e-18);
        assert!(fisher_distance(&[0.5, 0.5], &rows, 0, 2, 1e-8).is_err());
        assert!(fisher_distance(&[0.6, 0.5], &rows, 0, 1, 1e-8).is_err());
    }

    #[test]
    fn fisher_distance_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let rows = unit_rows(&mut rng, 5, 8);
            let mut p: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            softmax_in_place(&mut p);
            for i in 0..5 {
                for j in 0..5 {
                    let got = fisher_distance(&p, &rows, i, j, 1e-8).unwrap();
                    let want = dense_d2(&p, &rows, i, j).max(1e-8).sqrt();
                    assert!((got - want).abs() < 1e-10);
                    assert_eq!(got, fisher_distance(&p, &rows, j, i, 1e-8).unwrap());
                }
            }
        }
    }

    #[test]
    fn fisher_loss_examples() {
        let w = Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let even = Tensor::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert!((fisher_loss(&even, &w, 2, 1e-8).unwrap() + 0.5).abs() < 1e-15);
        let peaked = Tensor::new(1, 2, vec![30.0, 0.0]).unwrap();
        assert!(fisher_loss(&peaked, &w, 2, 1e-8).unwrap().abs() < 1e-10);
        assert!(matches!(fisher_loss(&even, &w, 3, 1e-8), Err(Error::Usage(_))));
    }

    #[test]
    fn fisher_loss_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let logits = random(&mut rng, 20, 12, 2.0);
        let w = random(&mut rng, 12, 6, 1.0);
        let got = fisher_loss(&logits, &w, 3, 1e-8).unwrap();
        let want = dense_fisher_loss(&logits, &w, 3, 1e-8);
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }

    #[test]
    fn cross_entropy_examples() {
        let t = Tensor::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert!((cross_entropy(&t, &[0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let t = Tensor::new(1, 3, vec![30.0, 0.0, 0.0]).unwrap();
        assert!(cross_entropy(&t, &[0]).unwrap() < 1e-12);
        assert!(matches!(cross_entropy(&t, &[3]), Err(Error::Data(_))));
    }

    #[test]
    fn cross_entropy_matches_log_sum_exp_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let logits = random(&mut rng, 30, 7, 4.0);
        let targets: Vec<u32> = (0..30).map(|_| rng.random_range(0..7)).collect();
        let mut want = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = logits.row(r);
            let mx = row.iter().cloned().fold(f64::MIN, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            want += lse - row[t as usize];
        }
        want /= 30.0;
        assert!((cross_entropy(&logits, &targets).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn combined_loss_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let logits = random(&mut rng, 8, 9, 2.0);
        let w = random(&mut rng, 9, 4, 1.0);
        let targets: Vec<u32> = (0..8).map(|_| rng.random_range(0..9)).collect();
        let ce = cross_entropy(&logits, &targets).unwrap();

        let plain = MrpConfig { lambda_mrp: 0.0, ..MrpConfig::default() };
        assert_eq!(combined_loss(&logits, &w, &targets, &plain).unwrap(), ce);

        for objective in [Objective::Margin, Objective::Fisher] {
            let cfg = MrpConfig { objective, lambda_mrp: 0.3, ce_weight: 0.7, k: 3, tau: 0.8, ..MrpConfig::default() };
            let part = match objective {
                Objective::Margin => margin_loss(&logits, 0.8).unwrap(),
                Objective::Fisher => fisher_loss(&logits, &w, 3, 1e-8).unwrap(),
            };
            let got = combined_loss(&logits, &w, &targets, &cfg).unwrap();
            assert!((got - (0.7 * ce + 0.3 * part)).abs() < 1e-12);
        }

        let wide = Tensor::new(1, 3, vec![5.0, 0.0, -1.0]).unwrap();
        let cfg = MrpConfig { objective: Objective::Margin, lambda_mrp: 1.0, ce_weight: 0.0, ..MrpConfig::default() };
        assert_eq!(combined_loss(&wide, &w.clone(), &[1], &cfg).unwrap(), 0.0);
    }

    #[test]
    fn config_rules() {
        assert!(MrpConfig::default().validate().is_ok());
        let bad = MrpConfig { k: 1, ..MrpConfig::default() };
        assert!(bad.validate().is_err());
        let margin_k1 = MrpConfig { objective: Objective::Margin, k: 1, ..MrpConfig::default() };
        assert!(margin_k1.validate().is_ok());
        assert!(MrpConfig { clamp_floor: 0.0, ..MrpConfig::default() }.validate().is_err());
    }

    #[test]
    fn loss_gradients_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let logits = random(&mut rng, 4, 12, 2.0);
            let w = random(&mut rng, 12, 5, 1.0);
            let ww = w.clone();
            let err = grad_check(|t, x| {
                let wv = t.constant(ww.clone());
                fisher_loss_var(t, x, wv, 3, 1e-8)
            }, &logits, 1e-6).unwrap();
            assert!(err < 1e-4, "fisher wrt logits {err}");
            let ll = logits.clone();
            let err = grad_check(|t, x| {
                let lv = t.constant(ll.clone());
                fisher_loss_var(t, lv, x, 3, 1e-8)
            }, &w, 1e-6).unwrap();
            assert!(err < 1e-4, "fisher wrt unembedding {err}");
            let err = grad_check(|t, x| margin_loss_var(t, x, 1.0), &logits, 1e-6).unwrap();
            assert!(err < 1e-4, "margin {err}");
        }
    }

    proptest! {
        #[test]
        fn shift_invariance(seed in 0u64..1000, shift in -20.0f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let logits = random(&mut rng, 3, 8, 2.0);
            let w = random(&mut rng, 8, 4, 1.0);
            // integer shift keeps logit differences exact
            let c = shift.round();
            let shifted = Tensor::new(3, 8, logits.data().iter().map(|x| x + c).collect()).unwrap();
            prop_assert!((margin_loss(&logits, 0.7).unwrap() - margin_loss(&shifted, 0.7).unwrap()).abs() < 1e-12);
            let a = fisher_loss(&logits, &w, 4, 1e-8).unwrap();
            let b = fisher_loss(&shifted, &w, 4, 1e-8).unwrap();
            prop_assert!((a - b).abs() < 1e-6);
        }

        #[test]
        fn covariance_form_is_psd(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.random_range(2..=5);
            let rows = unit_rows(&mut rng, k, 6);
            let mut p: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            softmax_in_place(&mut p);
            for i in 0..k {
                for j in 0..k {
                    prop_assert!(dense_d2(&p, &rows, i, j) >= -1e-12);
                }
            }
        }
    }
}
