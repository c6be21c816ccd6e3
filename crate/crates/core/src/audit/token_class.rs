//! Heuristic token classes, applied in order with the first matching rule winning.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenClass {
    Structural,
    Numeric,
    FunctionWord,
    EntityLike,
    ContentWord,
    Fragment,
}

impl TokenClass {
    pub const ALL: [TokenClass; 6] = [
        TokenClass::Structural,
        TokenClass::Numeric,
        TokenClass::FunctionWord,
        TokenClass::EntityLike,
        TokenClass::ContentWord,
        TokenClass::Fragment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TokenClass::Structural => "structural",
            TokenClass::Numeric => "numeric",
            TokenClass::FunctionWord => "function_word",
            TokenClass::EntityLike => "entity_like",
            TokenClass::ContentWord => "content_word",
            TokenClass::Fragment => "fragment",
        }
    }
}

const FUNCTION_WORDS_FILE: &str = include_str!("../../data/function_words.txt");

/// The pinned function-word list (lowercase).
pub fn function_words() -> &'static HashSet<&'static str> {
    static WORDS: OnceLock<HashSet<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| {
        FUNCTION_WORDS_FILE
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

struct Patterns {
    structural: Regex,
    numeric: Regex,
    capitalized: Regex,
    all_caps: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        structural: Regex::new(r"^[\p{P}\p{S}]+$").unwrap(),
        numeric: Regex::new(r"^[0-9][0-9,./:%+-]*$").unwrap(),
        capitalized: Regex::new(r"^[A-Z][A-Za-z]+$").unwrap(),
        all_caps: Regex::new(r"^[A-Z]{2,}$").unwrap(),
    })
}

/// Classifies decoded token text.
///
/// Surrounding whitespace (a word-start marker in most vocabularies) is
/// stripped before rules 2–6; a token that is nothing but whitespace is
/// structural. The empty string is a fragment.
pub fn classify_token(text: &str) -> TokenClass {
    if text.is_empty() {
        return TokenClass::Fragment;
    }
    let core = text.trim();
    let p = patterns();
    if core.is_empty() || p.structural.is_match(core) {
        return TokenClass::Structural;
    }
    if p.numeric.is_match(core) {
        return TokenClass::Numeric;
    }
    let alphabetic = core.chars().all(char::is_alphabetic);
    if alphabetic && function_words().contains(core.to_lowercase().as_str()) {
        return TokenClass::FunctionWord;
    }
    if p.capitalized.is_match(core) || p.all_caps.is_match(core) {
        return TokenClass::EntityLike;
    }
    if alphabetic {
        return TokenClass::ContentWord;
    }
    TokenClass::Fragment
}
