//! Pre-norm causal transformer over the tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyLmConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub context: usize,
    /// One shared matrix for the input embedding and the output unembedding.
    pub tied_embeddings: bool,
}

impl Default for ToyLmConfig {
    fn default() -> Self {
        ToyLmConfig {
            vocab_size: 512,
            hidden_dim: 64,
            layers: 2,
            heads: 2,
            context: 64,
            tied_embeddings: true,
        }
    }
}

impl ToyLmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.hidden_dim == 0 || self.layers == 0 || self.heads == 0 || self.context < 2 {
            return Err(Error::usage(format!("degenerate model config {self:?}")));
        }
        if !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::usage(format!(
                "hidden_dim {} is not divisible by {} heads",
                self.hidden_dim, self.heads
            )));
        }
        Ok(())
    }

    fn param_shapes(&self) -> Vec<(String, usize, usize)> {
        let (v, d) = (self.vocab_size, self.hidden_dim);
        let mut out = vec![("embed".to_string(), v, d), ("pos".to_string(), self.context, d)];
        for l in 0..self.layers {
            for (name, r, c) in [
                ("attn_norm", 1, d),
                ("wq", d, d),
                ("wk", d, d),
                ("wv", d, d),
                ("wo", d, d),
                ("mlp_norm", 1, d),
                ("w_in", d, 4 * d),
                ("w_out", 4 * d, d),
            ] {
                out.push((format!("layer{l}.{name}"), r, c));
            }
        }
        out.push(("final_norm".to_string(), 1, d));
        if !self.tied_embeddings {
            out.push(("unembed".to_string(), v, d));
        }
        out
    }
}

/// Model parameters in a fixed order: embedding, positions, per-layer blocks,
/// final norm, then the unembedding when untied.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLm {
    pub config: ToyLmConfig,
    pub params: Vec<(String, Tensor)>,
}

/// Values recorded by one forward pass.
pub struct ForwardVars {
    /// Parameter leaves, in [`ToyLm::params`] order.
    pub params: Vec<Var>,
    /// `T × V`; row `t` predicts token `t + 1`.
    pub logits: Var,
    /// Residual stream after each block, `T × d` each.
    pub hidden: Vec<Var>,
    pub final_norm: Var,
    pub unembedding: Var,
}

/// Plain output of [`ToyLm::forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub hidden: Vec<Tensor>,
}

impl ToyLm {
    /// Seeded initialization: N(0, 0.02) weights, residual projections scaled
    /// by `1/sqrt(2·layers)`, unit norm gains.
    pub fn new(config: ToyLmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let residual = INIT_STD / (2.0 * config.layers as f64).sqrt();
        let params = config
            .param_shapes()
            .into_iter()
            .map(|(name, r, c)| {
                let data = if name.ends_with("norm") {
                    vec![1.0; r * c]
                } else {
                    let std = if name.ends_with(".wo") || name.ends_with(".w_out") { residual } else { INIT_STD };
                    let dist = Normal::new(0.0, std).expect("positive std");
                    (0..r * c).map(|_| dist.sample(&mut rng)).collect()
                };
                (name, Tensor::new(r, c, data).expect("shape"))
            })
            .collect();
        Ok(ToyLm { config, params })
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.data().len()).sum()
    }

    /// The matrix that maps final hidden states to logits.
    pub fn unembedding(&self) -> &Tensor {
        self.param(if self.config.tied_embeddings { "embed" } else { "unembed" })
            .expect("present")
    }

    /// An untied model whose unembedding starts as a copy of the shared matrix.
    pub fn untied(&self) -> ToyLm {
        let mut out = self.clone();
        if self.config.tied_embeddings {
            out.config.tied_embeddings = false;
            let e = self.param("embed").expect("present").clone();
            out.params.push(("unembed".to_string(), e));
        }
        out
    }

    pub fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() || tokens.len() > self.config.context {
            return Err(Error::usage(format!(
                "sequence length {} outside 1..={}",
                tokens.len(),
                self.config.context
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::data(format!(
                "token {t} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Records the forward pass. With `trainable`, parameters become
    /// differentiable leaves; otherwise constants.
    pub fn record(&self, tape: &mut Tape, tokens: &[u32], trainable: bool) -> Result<ForwardVars> {
        let params = self.leaves(tape, trainable);
        self.record_with(tape, &params, tokens)
    }

    /// Puts every parameter on the tape, in [`ToyLm::params`] order.
    pub fn leaves(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|(_, t)| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    /// Forward pass over parameter leaves already on the tape, so several
    /// sequences can share one set of leaves.
    pub fn record_with(&self, tape: &mut Tape, params: &[Var], tokens: &[u32]) -> Result<ForwardVars> {
        self.check_tokens(tokens)?;
        if params.len() != self.params.len() {
            return Err(Error::usage(format!(
                "{} parameter leaves for a model with {}",
                params.len(),
                self.params.len()
            )));
        }
        let cfg = self.config;
        let params = params.to_vec();
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..tokens.len()).collect();

        let tok = tape.gather_rows(params[0], &ids)?;
        let pos = tape.gather_rows(params[1], &positions)?;
        let mut x = tape.add(tok, pos)?;

        let dh = cfg.hidden_dim / cfg.heads;
        let attn_scale = 1.0 / (dh as f64).sqrt();
        let mut hidden = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = &params[2 + 8 * l..2 + 8 * (l + 1)];
            let (attn_norm, wq, wk, wv, wo, mlp_norm, w_in, w_out) =
                (p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]);

            let n = tape.rms_norm(x, NORM_EPS);
            let h = tape.mul_row(n, attn_norm)?;
            let q = tape.matmul(h, wq)?;
            let k = tape.matmul(h, wk)?;
            let v = tape.matmul(h, wv)?;
            let mut heads = Vec::with_capacity(cfg.heads);
            for head in 0..cfg.heads {
                let qh = tape.slice_cols(q, head * dh, dh)?;
                let kh = tape.slice_cols(k, head * dh, dh)?;
                let vh = tape.slice_cols(v, head * dh, dh)?;
                let scores = tape.matmul_t(qh, kh)?;
                let scores = tape.scale(scores, attn_scale);
                let attn = tape.causal_softmax(scores)?;
                heads.push(tape.matmul(attn, vh)?);
            }
            let merged = tape.concat_cols(&heads)?;
            let out = tape.matmul(merged, wo)?;
            x = tape.add(x, out)?;

            let n = tape.rms_norm(x, NORM_EPS);
            let h = tape.mul_row(n, mlp_norm)?;
            let up = tape.matmul(h, w_in)?;
            let act = tape.gelu(up);
            let down = tape.matmul(act, w_out)?;
            x = tape.add(x, down)?;
            hidden.push(x);
        }

        let final_norm = params[2 + 8 * cfg.layers];
        let unembedding = if cfg.tied_embeddings { params[0] } else { params[3 + 8 * cfg.layers] };
        let logits = self.project(tape, x, final_norm, unembedding)?;
        Ok(ForwardVars { params, logits, hidden, final_norm, unembedding })
    }

    /// Final norm then unembedding: logits for any residual-stream state.
    pub fn project(&self, tape: &mut Tape, state: Var, final_norm: Var, unembedding: Var) -> Result<Var> {
        let n = tape.rms_norm(state, NORM_EPS);
        let h = tape.mul_row(n, final_norm)?;
        tape.matmul_t(h, unembedding)
    }

    pub fn forward(&self, tokens: &[u32]) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, tokens, false)?;
        Ok(ForwardOutput {
            logits: tape.value(vars.logits).clone(),
            hidden: vars.hidden.iter().map(|&h| tape.value(h).clone()).collect(),
        })
    }
}

/// Number of loss positions in a sequence: every position but the last.
pub fn loss_positions(sequence_len: usize) -> usize {
    sequence_len.saturating_sub(1)
}
