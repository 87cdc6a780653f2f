//! Local knowledge base of historical fixes, ranked by relevance and past
//! success.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenize::token_set_jaccard;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("knowledge base is empty")]
    EmptyKnowledgeBase,
    #[error("duplicate knowledge base id: {0}")]
    DuplicateId(String),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed knowledge base line {line}: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbEntry {
    pub id: String,
    pub error_pattern: String,
    pub fix_text: String,
    #[serde(default)]
    pub success_count: u64,
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    entries: Vec<KbEntry>,
}

impl KnowledgeBase {
    pub fn from_entries(entries: Vec<KbEntry>) -> Result<Self, KbError> {
        let mut seen = std::collections::BTreeSet::new();
        for entry in &entries {
            if !seen.insert(entry.id.clone()) {
                return Err(KbError::DuplicateId(entry.id.clone()));
            }
        }
        Ok(Self { entries })
    }

    /// Load a JSON-lines file of entries.
    pub fn load_jsonl(path: &Path) -> Result<Self, KbError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut entries = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: KbEntry =
                serde_json::from_str(&line).map_err(|source| KbError::Malformed {
                    line: idx + 1,
                    source,
                })?;
            entries.push(entry);
        }
        Self::from_entries(entries)
    }

    pub fn entries(&self) -> &[KbEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Rank entries for a query by descending (relevance, success_count, id),
/// where relevance is case-insensitive token-set overlap between the query
/// and the entry's error pattern. Returns at most `k` entries.
pub fn kb_lookup<'a>(
    kb: &'a KnowledgeBase,
    query: &str,
    k: usize,
) -> Result<Vec<&'a KbEntry>, KbError> {
    if kb.is_empty() {
        return Err(KbError::EmptyKnowledgeBase);
    }
    let mut scored: Vec<(f64, &KbEntry)> = kb
        .entries
        .iter()
        .map(|entry| (token_set_jaccard(query, &entry.error_pattern), entry))
        .collect();
    scored.sort_by(|(score_a, a), (score_b, b)| {
        score_b
            .partial_cmp(score_a)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.success_count.cmp(&a.success_count))
            .then(b.id.cmp(&a.id))
    });
    Ok(scored.into_iter().take(k).map(|(_, entry)| entry).collect())
}
