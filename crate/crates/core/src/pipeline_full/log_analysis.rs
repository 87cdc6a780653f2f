//! Build-log error extraction, normalization, and similarity.
//!
//! Normalization masks the volatile parts of an error line (paths, version
//! strings, hex hashes, bare numbers) so that recurrences of the same defect
//! group together. Masks contain no digits or slashes, so normalization is
//! idempotent.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::analysis::{categorize_error, ErrorCategory};
use crate::tokenize::tokenize;

static PATH_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(~|\.{1,2})?(/[\w.\-+]+)+/?|[\w.\-+]+(/[\w.\-+]+)+/?").expect("static regex")
});
static VERSION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b\d+(\.\d+)+(-[A-Za-z0-9.]+)?\b").expect("static regex"));
static HASH_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b[0-9a-f]{7,64}\b").expect("static regex"));
static NUMBER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").expect("static regex"));

/// Mask paths, version strings, hex hashes, and numbers.
pub fn normalize_error_text(text: &str) -> String {
    let masked = PATH_RE.replace_all(text, "<PATH>");
    let masked = VERSION_RE.replace_all(&masked, "<VER>");
    let masked = HASH_RE.replace_all(&masked, "<HASH>");
    let masked = NUMBER_RE.replace_all(&masked, "<N>");
    masked.into_owned()
}

/// A normalized build error used for retry accounting and similarity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorSignature {
    /// The first raw line observed for this signature.
    pub raw: String,
    pub normalized: String,
    pub category: ErrorCategory,
}

impl ErrorSignature {
    pub fn from_line(line: &str) -> Self {
        Self {
            raw: line.to_string(),
            normalized: normalize_error_text(line),
            category: categorize_error(line),
        }
    }
}

/// Which log lines count as errors. Patterns are literal substrings, matched
/// case-sensitively unless `case_insensitive` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogAnalyzerConfig {
    pub patterns: Vec<String>,
    pub case_insensitive: bool,
}

impl Default for LogAnalyzerConfig {
    fn default() -> Self {
        Self {
            patterns: vec![
                "error".to_string(),
                "ERROR".to_string(),
                "FAILED".to_string(),
                "exception".to_string(),
            ],
            case_insensitive: false,
        }
    }
}

impl LogAnalyzerConfig {
    fn line_matches(&self, line: &str) -> bool {
        if self.case_insensitive {
            let lowered = line.to_lowercase();
            self.patterns
                .iter()
                .any(|p| lowered.contains(&p.to_lowercase()))
        } else {
            self.patterns.iter().any(|p| line.contains(p.as_str()))
        }
    }
}

/// Extract error lines, group them by normalized form, and rank groups by
/// (frequency descending, first occurrence ascending). The head of the list
/// is "the top error"; a clean log yields an empty list.
pub fn analyze_log(log: &str, config: &LogAnalyzerConfig) -> Vec<ErrorSignature> {
    struct Group {
        first_index: usize,
        count: usize,
        signature: ErrorSignature,
    }
    let mut groups: BTreeMap<String, Group> = BTreeMap::new();
    for (index, line) in log.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || !config.line_matches(line) {
            continue;
        }
        let signature = ErrorSignature::from_line(line);
        groups
            .entry(signature.normalized.clone())
            .and_modify(|g| g.count += 1)
            .or_insert(Group {
                first_index: index,
                count: 1,
                signature,
            });
    }
    let mut ranked: Vec<Group> = groups.into_values().collect();
    ranked.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then(a.first_index.cmp(&b.first_index))
    });
    ranked.into_iter().map(|g| g.signature).collect()
}

fn shingles(text: &str) -> std::collections::BTreeSet<String> {
    let tokens: Vec<String> = tokenize(text).iter().map(|t| t.to_lowercase()).collect();
    if tokens.len() < 2 {
        return tokens.into_iter().collect();
    }
    tokens
        .windows(2)
        .map(|pair| format!("{} {}", pair[0], pair[1]))
        .collect()
}

/// Token-shingle Jaccard similarity over normalized texts; symmetric and
/// reflexive.
pub fn signature_similarity(a: &ErrorSignature, b: &ErrorSignature) -> f64 {
    let set_a = shingles(&a.normalized);
    let set_b = shingles(&b.normalized);
    if set_a.is_empty() && set_b.is_empty() {
        return 1.0;
    }
    let inter = set_a.intersection(&set_b).count() as f64;
    let union = set_a.union(&set_b).count() as f64;
    inter / union
}

/// True iff the similarity is at least `threshold`. `threshold` must lie in
/// (0, 1].
pub fn similar(a: &ErrorSignature, b: &ErrorSignature, threshold: f64) -> bool {
    debug_assert!(
        threshold > 0.0 && threshold <= 1.0,
        "threshold out of range"
    );
    signature_similarity(a, b) >= threshold
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_masks_volatile_parts() {
        let normalized =
            normalize_error_text("error at /home/u/project/src/Main.java:42 version 5.6.4");
        assert!(!normalized.contains("/home"));
        assert!(normalized.contains("<PATH>"));
        assert!(normalized.contains("<VER>"));
        assert!(normalized.contains("<N>"));
        assert!(!normalized.chars().any(|c| c.is_ascii_digit()));

        let relative = normalize_error_text("cannot compile src/app/main.txt");
        assert_eq!(relative, "cannot compile <PATH>");

        let hash = normalize_error_text("commit deadbeefcafe1234 is broken");
        assert!(hash.contains("<HASH>"));
    }

    #[test]
    fn normalization_is_idempotent() {
        let samples = [
            "error at /a/b/c.java:10",
            "version 1.2.3-rc.1 mismatch",
            "hash 0123456789abcdef settled",
            "plain words only",
            "numbers 123 and 456",
        ];
        for sample in samples {
            let once = normalize_error_text(sample);
            assert_eq!(
                once,
                normalize_error_text(&once),
                "not idempotent for {sample:?}"
            );
        }
    }

    #[test]
    fn analyze_ranks_by_frequency_then_position() {
        let log = "error: Missing dependency foo\n\
                   some progress output\n\
                   error: Missing dependency foo\n\
                   Test FAILED: integration suite\n\
                   error: Missing dependency foo\n";
        let signatures = analyze_log(log, &LogAnalyzerConfig::default());
        assert_eq!(signatures.len(), 2);
        assert!(signatures[0].raw.contains("Missing dependency foo"));
        assert!(signatures[1].raw.contains("Test FAILED"));
    }

    #[test]
    fn clean_and_empty_logs_yield_nothing() {
        let config = LogAnalyzerConfig::default();
        assert!(analyze_log("", &config).is_empty());
        assert!(analyze_log("BUILD SUCCESSFUL\nall good\n", &config).is_empty());
    }

    #[test]
    fn equal_frequency_falls_back_to_first_occurrence() {
        let log = "error: alpha problem\nerror: beta problem\n";
        let signatures = analyze_log(log, &LogAnalyzerConfig::default());
        assert!(signatures[0].raw.contains("alpha"));
    }

    #[test]
    fn identical_signatures_are_similar_at_any_threshold() {
        let sig = ErrorSignature::from_line("error: Missing dependency foo");
        assert!(similar(&sig, &sig, 1.0));
        assert!(similar(&sig, &sig, 0.01));
    }

    #[test]
    fn path_differences_are_masked_away() {
        let a = ErrorSignature::from_line("error: cannot compile /src/alpha/Main.java");
        let b = ErrorSignature::from_line("error: cannot compile /lib/beta/Other.java");
        assert_eq!(a.normalized, b.normalized);
        assert!(similar(&a, &b, 0.8));
    }

    #[test]
    fn unrelated_errors_are_dissimilar() {
        let a = ErrorSignature::from_line("error: Missing dependency foo in module core");
        let b = ErrorSignature::from_line("Test FAILED: snapshot comparison exploded");
        assert!(signature_similarity(&a, &b) < 0.2);
        assert!(!similar(&a, &b, 0.8));
    }

    #[test]
    fn similarity_is_symmetric() {
        let a = ErrorSignature::from_line("error: one thing happened");
        let b = ErrorSignature::from_line("error: another thing happened");
        assert_eq!(
            signature_similarity(&a, &b).to_bits(),
            signature_similarity(&b, &a).to_bits()
        );
    }

    #[test]
    fn custom_patterns_and_case_rules() {
        let config = LogAnalyzerConfig {
            patterns: vec!["warnung".to_string()],
            case_insensitive: true,
        };
        let signatures = analyze_log("WARNUNG: kaputt\n", &config);
        assert_eq!(signatures.len(), 1);

        let default = LogAnalyzerConfig::default();
        // Default patterns are case-sensitive literals.
        assert!(analyze_log("Error: capitalized\n", &default).is_empty());
        assert_eq!(analyze_log("ERROR: shouty\n", &default).len(), 1);
    }
}
