//! Tied-embedding toy causal language model and its training harness.

mod corpus;
mod tokenizer;

pub use corpus::{generate_corpus, BUNDLED_CORPUS, BUNDLED_PARAGRAPHS, BUNDLED_SEED};
pub use tokenizer::{split_words, Tokenizer, UNK};

mod model;

pub use model::{loss_positions, ForwardOutput, ForwardVars, ToyLm, ToyLmConfig};

mod train;

pub use train::{
    audit_tokens, audit_windows, evaluate_ce, metrics_csv, train, StepMetrics, TrainConfig, TrainOutcome,
    METRICS_HEADER,
};

mod sweep;

pub use sweep::{
    dose_csv, dose_response, layer_penalties, layer_scan, layer_scan_csv, summarize_audit, AuditSummary,
    DoseResponse, DoseRow, LayerScanRow, DOSE_HEADER, LAYER_SCAN_HEADER,
};

use crate::error::Result;

/// Vocabulary cap used for the bundled corpus.
pub const MAX_VOCAB: usize = 512;
/// Share of the token stream held out for audits.
pub const AUDIT_FRACTION: f64 = 0.1;

/// A tokenized corpus split into a training prefix and a held-out audit suffix.
#[derive(Debug, Clone)]
pub struct ToyData {
    pub tokenizer: Tokenizer,
    pub train: Vec<u32>,
    pub audit: Vec<u32>,
}

impl ToyData {
    pub fn from_text(text: &str, max_vocab: usize, audit_fraction: f64) -> Result<Self> {
        let tokenizer = Tokenizer::fit(text, max_vocab)?;
        Ok(Self::with_tokenizer(tokenizer, text, audit_fraction))
    }

    pub fn with_tokenizer(tokenizer: Tokenizer, text: &str, audit_fraction: f64) -> Self {
        let mut ids = tokenizer.encode(text);
        let cut = ids.len() - (ids.len() as f64 * audit_fraction).round() as usize;
        let audit = ids.split_off(cut);
        ToyData { tokenizer, train: ids, audit }
    }

    pub fn bundled() -> Self {
        Self::from_text(BUNDLED_CORPUS, MAX_VOCAB, AUDIT_FRACTION).expect("bundled corpus tokenizes")
    }

    /// Default-shaped model sized to this vocabulary.
    pub fn model_config(&self) -> ToyLmConfig {
        ToyLmConfig { vocab_size: self.tokenizer.len(), ..ToyLmConfig::default() }
    }
}

/// CE-only schedule used to produce the base checkpoint a sweep starts from.
pub fn base_pretrain_config(seed: u64) -> TrainConfig {
    TrainConfig { steps: 1500, learning_rate: 3e-3, seed, ..TrainConfig::default() }
}

/// JSON `config` block stored in a toy-model checkpoint.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointConfig {
    pub model: ToyLmConfig,
    pub train: Option<TrainConfig>,
    pub vocab: Tokenizer,
}

pub fn to_checkpoint(
    model: &ToyLm,
    tokenizer: &Tokenizer,
    train: Option<&TrainConfig>,
    seed: u64,
    step: usize,
) -> crate::io::Checkpoint {
    let config = CheckpointConfig { model: model.config, train: train.copied(), vocab: tokenizer.clone() };
    crate::io::Checkpoint::new(
        serde_json::to_value(&config).expect("config serializes"),
        seed,
        step,
        model.params.clone(),
    )
}

pub fn from_checkpoint(ckpt: &crate::io::Checkpoint) -> Result<(ToyLm, Tokenizer, CheckpointConfig)> {
    use crate::error::Error;
    let config: CheckpointConfig = serde_json::from_value(ckpt.header.config.clone())
        .map_err(|e| Error::data(format!("checkpoint config: {e}")))?;
    config.model.validate().map_err(|e| Error::data(format!("checkpoint model config: {e}")))?;
    let fresh = ToyLm::new(config.model, 0)?;
    if fresh.params.len() != ckpt.tensors.len() {
        return Err(Error::data(format!(
            "checkpoint holds {} tensors, model expects {}",
            ckpt.tensors.len(),
            fresh.params.len()
        )));
    }
    let mut params = Vec::with_capacity(fresh.params.len());
    for ((name, expected), (entry, t)) in fresh.params.iter().zip(ckpt.header.params.iter().zip(&ckpt.tensors)) {
        if *name != entry.name || expected.shape() != t.shape() {
            return Err(Error::data(format!(
                "checkpoint tensor {} {:?} does not match {name} {:?}",
                entry.name,
                t.shape(),
                expected.shape()
            )));
        }
        params.push((name.clone(), t.clone()));
    }
    if config.vocab.len() != config.model.vocab_size {
        return Err(Error::data("checkpoint vocabulary size disagrees with model config"));
    }
    let tokenizer = config.vocab.clone();
    Ok((ToyLm { config: config.model, params }, tokenizer, config))
}
