//! Word/punctuation tokenizer with a frequency-ranked closed vocabulary.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";

fn splitter() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[0-9]+(?:[.,:][0-9]+)*%?|[A-Za-z]+(?:'[a-z]+)?|[^\sA-Za-z0-9]").unwrap()
    })
}

/// Splits text into words, numbers, and single punctuation marks.
pub fn split_words(text: &str) -> Vec<&str> {
    splitter().find_iter(text).map(|m| m.as_str()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Tokenizer {
    fn from(vocab: Vec<String>) -> Self {
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Tokenizer { vocab, index }
    }
}

impl From<Tokenizer> for Vec<String> {
    fn from(t: Tokenizer) -> Self {
        t.vocab
    }
}

impl Tokenizer {
    /// Keeps the `max_vocab − 1` most frequent words (ties by byte order) plus `<unk>` at id 0.
    pub fn fit(text: &str, max_vocab: usize) -> Result<Self> {
        if max_vocab < 2 {
            return Err(Error::usage("vocabulary needs room for <unk> and one word"));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for w in split_words(text) {
            *counts.entry(w).or_default() += 1;
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let vocab = std::iter::once(UNK.to_string())
            .chain(ranked.into_iter().take(max_vocab - 1).map(|(w, _)| w.to_string()))
            .collect::<Vec<_>>();
        Ok(Tokenizer::from(vocab))
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        split_words(text)
            .into_iter()
            .map(|w| self.index.get(w).copied().unwrap_or(0))
            .collect()
    }

    pub fn decode(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }
}
