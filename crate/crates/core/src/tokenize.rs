//! Default tokenizer used for token accounting and text-overlap scoring.
//!
//! Splits on whitespace; alphanumeric/underscore runs form one token and every
//! other character is a token of its own. Counting is all the analyses need,
//! so the contract is deliberately small and pluggable.

/// Counting interface; analyses accept any implementation.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> u64;
}

/// Whitespace-and-punctuation splitter.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespacePunctTokenizer;

impl Tokenizer for WhitespacePunctTokenizer {
    fn count(&self, text: &str) -> u64 {
        tokenize(text).len() as u64
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Split `text` into word runs and single punctuation tokens.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (idx, c) in text.char_indices() {
        if is_word_char(c) {
            if start.is_none() {
                start = Some(idx);
            }
        } else {
            if let Some(s) = start.take() {
                tokens.push(&text[s..idx]);
            }
            if !c.is_whitespace() {
                tokens.push(&text[idx..idx + c.len_utf8()]);
            }
        }
    }
    if let Some(s) = start {
        tokens.push(&text[s..]);
    }
    tokens
}

/// Case-insensitive token-set Jaccard similarity.
pub fn token_set_jaccard(a: &str, b: &str) -> f64 {
    use std::collections::BTreeSet;
    let set_a: BTreeSet<String> = tokenize(a).iter().map(|t| t.to_lowercase()).collect();
    let set_b: BTreeSet<String> = tokenize(b).iter().map(|t| t.to_lowercase()).collect();
    if set_a.is_empty() && set_b.is_empty() {
        return 1.0;
    }
    let inter = set_a.intersection(&set_b).count() as f64;
    let union = set_a.union(&set_b).count() as f64;
    inter / union
}
