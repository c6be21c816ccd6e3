//! AdamW training with the combined objective, plus fp32 corpus audits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::ToyLm;
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::margin::{compute_margins, median, top_two, MarginRecord};
use crate::objectives::{combined_loss_var, cross_entropy, fisher_loss, margin_loss, MrpConfig, Objective};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Fraction of steps spent ramping the learning rate up linearly from zero.
    pub warmup_fraction: f64,
    /// Sequences per step.
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f64,
    pub mrp: MrpConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            learning_rate: 3e-4,
            weight_decay: 0.01,
            warmup_fraction: 0.05,
            batch_size: 1,
            seed: 0,
            max_grad_norm: 1.0,
            mrp: MrpConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::usage("steps and batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::usage(format!("warmup_fraction {} outside [0, 1)", self.warmup_fraction)));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || !(self.max_grad_norm >= 0.0) {
            return Err(Error::usage("learning_rate must be positive; weight_decay and max_grad_norm nonnegative"));
        }
        self.mrp.validate()
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.steps as f64).ceil() as usize
    }

    /// Learning rate for 0-based `step`: linear warmup, then constant.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let warm = self.warmup_steps();
        if warm == 0 {
            self.learning_rate
        } else {
            self.learning_rate * ((step + 1) as f64 / warm as f64).min(1.0)
        }
    }
}

/// One row of the metric log, recorded before the update of that step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 1-based.
    pub step: usize,
    pub ce: f64,
    /// Unweighted objective value, logged even when its weight is zero.
    pub mrp: f64,
    pub median_margin: f64,
}

pub const METRICS_HEADER: &str = "step,ce,mrp,median_margin";

pub fn metrics_csv(log: &[StepMetrics]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for m in log {
        s.push_str(&format!("{},{},{},{}\n", m.step, m.ce, m.mrp, m.median_margin));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ToyLm,
    pub log: Vec<StepMetrics>,
}

struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    fn new(model: &ToyLm) -> Self {
        let zeros = || model.params.iter().map(|(_, p)| vec![0.0; p.data().len()]).collect();
        AdamW { m: zeros(), v: zeros(), t: 0 }
    }

    fn step(&mut self, model: &mut ToyLm, grads: &[Tensor], lr: f64, wd: f64) {
        self.t += 1;
        let (c1, c2) = (1.0 - BETA1.powi(self.t), 1.0 - BETA2.powi(self.t));
        for (i, ((name, p), g)) in model.params.iter_mut().zip(grads).enumerate() {
            let decay = if name.ends_with("norm") { 0.0 } else { wd };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
                *w -= lr * decay * *w;
                *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Window length used for training and audits.
fn window_len(model: &ToyLm, tokens: &[u32]) -> Result<usize> {
    if tokens.len() < 2 {
        return Err(Error::data("corpus needs at least 2 tokens"));
    }
    Ok(model.config.context.min(tokens.len()))
}

/// Trains a copy of `model` on random windows of `tokens`. Deterministic in `config.seed`.
pub fn train(model: &ToyLm, tokens: &[u32], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let len = window_len(model, tokens)?;
    let mut model = model.clone();
    let mut opt = AdamW::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let unembed_index = if model.config.tied_embeddings { 0 } else { model.params.len() - 1 };
    let mut log = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let mut tape = Tape::new();
        let leaves = model.leaves(&mut tape, true);
        let mut rows = Vec::with_capacity(config.batch_size);
        let mut targets = Vec::with_capacity(config.batch_size * (len - 1));
        for _ in 0..config.batch_size {
            let start = rng.random_range(0..=tokens.len() - len);
            let window = &tokens[start..start + len];
            let f = model.record_with(&mut tape, &leaves, window)?;
            let loss_rows: Vec<usize> = (0..len - 1).collect();
            rows.push(tape.gather_rows(f.logits, &loss_rows)?);
            targets.extend_from_slice(&window[1..]);
        }
        let logits = tape.concat_rows(&rows)?;
        let diverged = || Error::numerical(format!("training diverged at step {}", step + 1));
        if tape.value(logits).data().iter().any(|v| !v.is_finite()) {
            return Err(diverged());
        }
        let parts = combined_loss_var(&mut tape, logits, leaves[unembed_index], &targets, &config.mrp)?;
        let total = tape.value(parts.total).item();
        if !total.is_finite() {
            return Err(diverged());
        }

        let lv = tape.value(logits).clone();
        let ce = match parts.ce {
            Some(v) => tape.value(v).item(),
            None => cross_entropy(&lv, &targets)?,
        };
        let mrp = match parts.mrp {
            Some(v) => tape.value(v).item(),
            None => objective_value(&lv, model.unembedding(), &config.mrp)?,
        };
        let margins: Vec<f64> = (0..lv.rows()).map(|r| row_margin(lv.row(r))).collect();
        log.push(StepMetrics {
            step: step + 1,
            ce,
            mrp,
            median_margin: median(&margins).unwrap_or(0.0),
        });

        let grads = tape.backward(parts.total);
        let mut grads: Vec<Tensor> = leaves.iter().map(|&p| grads.get_or_zeros(p)).collect();
        let norm = grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(diverged());
        }
        if config.max_grad_norm > 0.0 && norm > config.max_grad_norm {
            let s = config.max_grad_norm / norm;
            grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= s));
        }
        opt.step(&mut model, &grads, config.learning_rate_at(step), config.weight_decay);
    }
    Ok(TrainOutcome { model, log })
}

fn objective_value(logits: &Tensor, unembedding: &Tensor, mrp: &MrpConfig) -> Result<f64> {
    match mrp.objective {
        Objective::Margin => margin_loss(logits, mrp.tau),
        Objective::Fisher => fisher_loss(logits, unembedding, mrp.k.min(logits.cols()), mrp.clamp_floor),
    }
}

fn row_margin(row: &[f64]) -> f64 {
    let (a, b) = top_two(row);
    row[a] - row[b]
}

/// `(start, len)` windows covering every prediction exactly once: consecutive
/// windows overlap by one token, so each token after the first is a target once.
pub fn audit_windows(n_tokens: usize, context: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < n_tokens {
        let len = context.min(n_tokens - start);
        out.push((start, len));
        start += len - 1;
    }
    out
}

/// Per-window forward passes over `tokens`, yielding `(start, logits, hidden)`.
pub(crate) fn for_each_window<F>(model: &ToyLm, tokens: &[u32], mut f: F) -> Result<()>
where
    F: FnMut(usize, &[u32], &Tensor, &[Tensor]) -> Result<()>,
{
    window_len(model, tokens)?;
    for (start, len) in audit_windows(tokens.len(), model.config.context) {
        let window = &tokens[start..start + len];
        let out = model.forward(window)?;
        f(start, window, &out.logits, &out.hidden)?;
    }
    Ok(())
}

/// fp32 margin audit of every next-token prediction in `tokens`; position ids
/// are the index of the predicting token.
pub fn audit_tokens(model: &ToyLm, tokens: &[u32]) -> Result<Vec<MarginRecord>> {
    let vocab = model.config.vocab_size;
    let mut out = Vec::with_capacity(tokens.len());
    for_each_window(model, tokens, |start, window, logits, _| {
        let n = window.len() - 1;
        let rows: Vec<f32> = logits.data()[..n * vocab].iter().map(|&v| v as f32).collect();
        for mut r in compute_margins(&rows, vocab, &window[1..])? {
            r.position += start;
            out.push(r);
        }
        Ok(())
    })?;
    Ok(out)
}

/// Mean next-token cross-entropy over `tokens`.
pub fn evaluate_ce(model: &ToyLm, tokens: &[u32]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for_each_window(model, tokens, |_, window, logits, _| {
        let k = window.len() - 1;
        let rows = Tensor::new(k, logits.cols(), logits.data()[..k * logits.cols()].to_vec())?;
        sum += cross_entropy(&rows, &window[1..])? * k as f64;
        n += k;
        Ok(())
    })?;
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{ToyLmConfig, Tokenizer, BUNDLED_CORPUS};

    fn small() -> (ToyLm, Vec<u32>) {
        let text = &BUNDLED_CORPUS[..4000];
        let tok = Tokenizer::fit(text, 128).unwrap();
        let cfg = ToyLmConfig { vocab_size: tok.len(), hidden_dim: 16, layers: 2, heads: 2, context: 16, tied_embeddings: true };
        (ToyLm::new(cfg, 0).unwrap(), tok.encode(text))
    }

    fn quick(steps: usize) -> TrainConfig {
        TrainConfig { steps, learning_rate: 3e-3, ..TrainConfig::default() }
    }

    #[test]
    fn schedule_warms_up_then_holds() {
        let c = TrainConfig::default();
        assert_eq!(c.warmup_steps(), 10);
        assert!((c.learning_rate_at(0) - 3e-5).abs() < 1e-18);
        assert_eq!(c.learning_rate_at(9), 3e-4);
        assert_eq!(c.learning_rate_at(199), 3e-4);
        let bad = TrainConfig { warmup_fraction: 1.0, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn windows_cover_each_target_once() {
        for (n, c) in [(2, 4), (10, 4), (11, 4), (64, 64), (65, 64)] {
            let w = audit_windows(n, c);
            let targets: usize = w.iter().map(|&(_, l)| l - 1).sum();
            assert_eq!(targets, n - 1);
            assert!(w.iter().all(|&(s, l)| l >= 2 && s + l <= n));
        }
    }

    #[test]
    fn ce_decreases_without_mrp() {
        let (m, tokens) = small();
        let out = train(&m, &tokens, &quick(50)).unwrap();
        assert_eq!(out.log.len(), 50);
        let early: f64 = out.log[..5].iter().map(|s| s.ce).sum::<f64>() / 5.0;
        let late: f64 = out.log[45..].iter().map(|s| s.ce).sum::<f64>() / 5.0;
        assert!(late < early, "{early} -> {late}");
        assert!(out.log[49].ce < out.log[0].ce);
    }

    #[test]
    fn identical_seeds_bit_identical() {
        let (m, tokens) = small();
        let a = train(&m, &tokens, &quick(5)).unwrap();
        let b = train(&m, &tokens, &quick(5)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(metrics_csv(&a.log), metrics_csv(&b.log));
    }

    #[test]
    fn pure_mrp_mode_runs() {
        let (m, tokens) = small();
        let mut c = quick(3);
        c.mrp.ce_weight = 0.0;
        c.mrp.lambda_mrp = 1.0;
        let out = train(&m, &tokens, &c).unwrap();
        assert!(out.log.iter().all(|s| s.ce.is_finite() && s.mrp.is_finite()));
    }

    #[test]
    fn divergence_names_the_step() {
        let (m, tokens) = small();
        let c = TrainConfig { learning_rate: 1e300, warmup_fraction: 0.0, max_grad_norm: 0.0, ..quick(5) };
        let e = train(&m, &tokens, &c).unwrap_err();
        assert_eq!(e.exit_code(), 3, "{e}");
        assert!(e.to_string().contains("step 2"), "{e}");
    }

    #[test]
    fn margin_objective_widens_margins() {
        let (m, tokens) = small();
        let base = quick(40);
        let mut widened = base;
        widened.mrp.objective = Objective::Margin;
        widened.mrp.lambda_mrp = 0.3;
        let a = train(&m, &tokens, &base).unwrap().model;
        let b = train(&m, &tokens, &widened).unwrap().model;
        let med = |m: &ToyLm| {
            let r = audit_tokens(m, &tokens).unwrap();
            median(&r.iter().map(|r| r.margin).collect::<Vec<_>>()).unwrap()
        };
        assert!(med(&b) >= med(&a), "{} < {}", med(&b), med(&a));
    }

    #[test]
    fn audit_positions_are_contiguous() {
        let (m, tokens) = small();
        let r = audit_tokens(&m, &tokens[..40]).unwrap();
        assert_eq!(r.len(), 39);
        assert!(r.iter().enumerate().all(|(i, r)| r.position == i && r.target == tokens[i + 1]));
        assert!(evaluate_ce(&m, &tokens[..40]).unwrap().is_finite());
    }
}
