//! Analyses over trajectory logs and build records: error categorization,
//! category distributions, turn/token/build-time statistics, and next-tool
//! transition matrices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::{count_turn_tokens, Role, TokenCounts, Trajectory};
use crate::protocol::TOOL_NAMES;
use crate::tokenize::Tokenizer;
use crate::tools::{BuildRecord, BuildStatus};

/// Error categories in precedence order; an error text is assigned to the
/// first category with a keyword hit, falling back to `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    DependencyRelated,
    BuildTool,
    Test,
    Configuration,
    Installation,
    Version,
    Environment,
    Permission,
    Other,
}

impl ErrorCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorCategory::DependencyRelated => "dependency_related",
            ErrorCategory::BuildTool => "build_tool",
            ErrorCategory::Test => "test",
            ErrorCategory::Configuration => "configuration",
            ErrorCategory::Installation => "installation",
            ErrorCategory::Version => "version",
            ErrorCategory::Environment => "environment",
            ErrorCategory::Permission => "permission",
            ErrorCategory::Other => "other",
        }
    }
}

/// Keyword filters per category, in matching precedence order.
pub const CATEGORY_KEYWORDS: [(ErrorCategory, &[&str]); 8] = [
    (
        ErrorCategory::DependencyRelated,
        &["dependency", "dependencies"],
    ),
    (
        ErrorCategory::BuildTool,
        &[
            "gradle",
            "maven",
            "build tool",
            "build failed",
            "compilation failed",
        ],
    ),
    (
        ErrorCategory::Test,
        &[
            "test",
            "unit test",
            "integration test",
            "test case",
            "test failure",
        ],
    ),
    (
        ErrorCategory::Configuration,
        &[
            "configuration",
            "config",
            "schema",
            "avsc",
            "yaml",
            "yml",
            "json",
            "xml",
        ],
    ),
    (
        ErrorCategory::Installation,
        &["install", "yarn", "npm", "pip", "package manager"],
    ),
    (
        ErrorCategory::Version,
        &["version", "compatibility", "incompatible", "mismatch"],
    ),
    (
        ErrorCategory::Environment,
        &[
            "path",
            "environment",
            "variable",
            "not found",
            "cannot locate",
            "missing",
        ],
    ),
    (
        ErrorCategory::Permission,
        &["permission", "access", "denied", "forbidden"],
    ),
];

/// How keywords are matched against the lowercased error text. The default is
/// raw substring matching, so "test" also hits "latest"; the word-boundary
/// mode is available behind this flag, off by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    #[default]
    Substring,
    WordBoundary,
}

fn keyword_hits(text: &str, keyword: &str, mode: MatchMode) -> bool {
    match mode {
        MatchMode::Substring => text.contains(keyword),
        MatchMode::WordBoundary => {
            let mut search_from = 0;
            while let Some(rel) = text[search_from..].find(keyword) {
                let start = search_from + rel;
                let end = start + keyword.len();
                let before_ok = start == 0
                    || !text[..start]
                        .chars()
                        .next_back()
                        .is_some_and(char::is_alphanumeric);
                let after_ok = end == text.len()
                    || !text[end..]
                        .chars()
                        .next()
                        .is_some_and(char::is_alphanumeric);
                if before_ok && after_ok {
                    return true;
                }
                search_from = end;
            }
            false
        }
    }
}

/// Assign an error text to the first matching category.
pub fn categorize_error(text: &str) -> ErrorCategory {
    categorize_error_with(text, MatchMode::Substring)
}

pub fn categorize_error_with(text: &str, mode: MatchMode) -> ErrorCategory {
    let lowered = text.to_lowercase();
    for (category, keywords) in CATEGORY_KEYWORDS {
        if keywords.iter().any(|kw| keyword_hits(&lowered, kw, mode)) {
            return category;
        }
    }
    ErrorCategory::Other
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryShare {
    pub count: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("input is empty")]
    EmptyInput,
    #[error("no tool calls to derive transitions from")]
    NoTransitions,
}

/// Count and fraction per category over a corpus of error texts; fractions
/// sum to 1.
pub fn category_distribution(
    corpus: &[String],
) -> Result<BTreeMap<ErrorCategory, CategoryShare>, AnalysisError> {
    if corpus.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut counts: BTreeMap<ErrorCategory, u64> = BTreeMap::new();
    for text in corpus {
        *counts.entry(categorize_error(text)).or_default() += 1;
    }
    let total = corpus.len() as f64;
    Ok(counts
        .into_iter()
        .map(|(cat, count)| {
            (
                cat,
                CategoryShare {
                    count,
                    fraction: count as f64 / total,
                },
            )
        })
        .collect())
}

/// Row-stochastic next-tool probabilities plus per-tool usage fractions.
///
/// Rows exist only for tools observed with at least one outgoing transition;
/// never-observed tools are absent rather than zero-filled. Transitions are
/// counted within a trajectory only, never across trajectory boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    /// Observed tools, in canonical prompt order.
    pub tools: Vec<String>,
    /// P(next tool | current tool) per observed predecessor.
    pub probabilities: BTreeMap<String, BTreeMap<String, f64>>,
    /// Fraction of all tool calls made with each tool.
    pub usage: BTreeMap<String, f64>,
}

fn executed_tool_sequence(trajectory: &Trajectory) -> Vec<String> {
    trajectory
        .turns
        .iter()
        .filter(|turn| turn.role == Role::Tool)
        .filter_map(|turn| turn.tool_result.as_ref())
        .map(|result| result.tool_name.clone())
        .filter(|name| TOOL_NAMES.contains(&name.as_str()))
        .collect()
}

/// Count next-tool transitions and usage over executed tool calls.
pub fn transition_matrix(trajectories: &[Trajectory]) -> Result<TransitionMatrix, AnalysisError> {
    let mut usage_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut transition_counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    let mut total_calls = 0u64;

    for trajectory in trajectories {
        let sequence = executed_tool_sequence(trajectory);
        for name in &sequence {
            *usage_counts.entry(name.clone()).or_default() += 1;
            total_calls += 1;
        }
        for pair in sequence.windows(2) {
            *transition_counts
                .entry(pair[0].clone())
                .or_default()
                .entry(pair[1].clone())
                .or_default() += 1;
        }
    }

    if total_calls == 0 {
        return Err(AnalysisError::NoTransitions);
    }

    let tools: Vec<String> = TOOL_NAMES
        .iter()
        .filter(|name| usage_counts.contains_key(**name))
        .map(|name| name.to_string())
        .collect();

    let probabilities = transition_counts
        .into_iter()
        .map(|(from, row)| {
            let out_degree: u64 = row.values().sum();
            let normalized = row
                .into_iter()
                .map(|(to, count)| (to, count as f64 / out_degree as f64))
                .collect();
            (from, normalized)
        })
        .collect();

    let usage = usage_counts
        .into_iter()
        .map(|(name, count)| (name, count as f64 / total_calls as f64))
        .collect();

    Ok(TransitionMatrix {
        tools,
        probabilities,
        usage,
    })
}

/// Mean, 95% half-width (1.96 times the standard error over the population
/// standard deviation), count, min, and max for one metric stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub mean: f64,
    pub ci95_half_width: f64,
    pub count: u64,
    pub min: f64,
    pub max: f64,
}

impl StatsSummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let half_width = if values.len() > 1 {
            1.96 * variance.sqrt() / n.sqrt()
        } else {
            0.0
        };
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Some(Self {
            mean,
            ci95_half_width: half_width,
            count: values.len() as u64,
            min,
            max,
        })
    }
}

pub const STRATUM_SUCCESS: &str = "success";
pub const STRATUM_FAILURE: &str = "failure";
pub const STRATUM_TOTAL: &str = "total";

fn stratify<T, F: Fn(&T) -> bool>(items: &[T], is_success: F) -> [(&'static str, Vec<&T>); 3] {
    let success: Vec<&T> = items.iter().filter(|t| is_success(t)).collect();
    let failure: Vec<&T> = items.iter().filter(|t| !is_success(t)).collect();
    let total: Vec<&T> = items.iter().collect();
    [
        (STRATUM_SUCCESS, success),
        (STRATUM_FAILURE, failure),
        (STRATUM_TOTAL, total),
    ]
}

/// Turn-count statistics per outcome stratum; empty strata are omitted.
pub fn turn_stats(
    trajectories: &[Trajectory],
) -> Result<BTreeMap<String, StatsSummary>, AnalysisError> {
    if trajectories.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut out = BTreeMap::new();
    for (name, members) in stratify(trajectories, |t| t.reward == 1) {
        let values: Vec<f64> = members.iter().map(|t| t.turns.len() as f64).collect();
        if let Some(summary) = StatsSummary::from_values(&values) {
            out.insert(name.to_string(), summary);
        }
    }
    Ok(out)
}

/// Token fractions per category per outcome, in two views: assistant thinking
/// included and excluded (remaining categories renormalized). Categories
/// whose share is under 1% are folded into `other` in both views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBreakdown {
    pub with_thinking: BTreeMap<String, BTreeMap<String, f64>>,
    pub without_thinking: BTreeMap<String, BTreeMap<String, f64>>,
}

pub const TOKEN_CATEGORY_THINKING: &str = "thinking";
pub const TOKEN_CATEGORY_CONTENT: &str = "content";
pub const TOKEN_CATEGORY_OTHER: &str = "other";

fn token_category_totals(
    trajectories: &[&Trajectory],
    tokenizer: &dyn Tokenizer,
) -> BTreeMap<String, u64> {
    let mut totals: BTreeMap<String, u64> = BTreeMap::new();
    for trajectory in trajectories {
        for turn in &trajectory.turns {
            let counts: TokenCounts = count_turn_tokens(turn, tokenizer);
            *totals
                .entry(TOKEN_CATEGORY_THINKING.to_string())
                .or_default() += counts.thinking;
            *totals
                .entry(TOKEN_CATEGORY_CONTENT.to_string())
                .or_default() += counts.content;
            for (tool, count) in counts.tool_call {
                *totals.entry(format!("tool_call:{tool}")).or_default() += count;
            }
            for (tool, count) in counts.tool_response {
                *totals.entry(format!("{tool}_response")).or_default() += count;
            }
        }
    }
    totals.retain(|_, count| *count > 0);
    totals
}

fn fractions_with_small_folded(totals: &BTreeMap<String, u64>) -> BTreeMap<String, f64> {
    let grand: u64 = totals.values().sum();
    if grand == 0 {
        return BTreeMap::new();
    }
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    let mut other = 0.0;
    for (category, count) in totals {
        let fraction = *count as f64 / grand as f64;
        if fraction < 0.01 {
            other += fraction;
        } else {
            out.insert(category.clone(), fraction);
        }
    }
    if other > 0.0 {
        *out.entry(TOKEN_CATEGORY_OTHER.to_string()).or_default() += other;
    }
    out
}

pub fn token_breakdown(
    trajectories: &[Trajectory],
    tokenizer: &dyn Tokenizer,
) -> Result<TokenBreakdown, AnalysisError> {
    if trajectories.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut with_thinking = BTreeMap::new();
    let mut without_thinking = BTreeMap::new();
    for (name, members) in stratify(trajectories, |t| t.reward == 1) {
        if members.is_empty() {
            continue;
        }
        let totals = token_category_totals(&members, tokenizer);
        let included = fractions_with_small_folded(&totals);
        if !included.is_empty() {
            with_thinking.insert(name.to_string(), included);
        }
        let mut rest = totals.clone();
        rest.remove(TOKEN_CATEGORY_THINKING);
        let excluded = fractions_with_small_folded(&rest);
        if !excluded.is_empty() {
            without_thinking.insert(name.to_string(), excluded);
        }
    }
    Ok(TokenBreakdown {
        with_thinking,
        without_thinking,
    })
}

/// Histogram with log-spaced (decade) bin edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin edges; bin `i` covers `[edges[i], edges[i + 1])`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildTimeStats {
    pub stats: BTreeMap<String, StatsSummary>,
    pub histogram: Histogram,
}

/// Build-duration statistics per outcome plus a log-scale histogram over all
/// durations. Sub-millisecond durations are clamped for binning.
pub fn build_time_stats(records: &[BuildRecord]) -> Result<BuildTimeStats, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut stats = BTreeMap::new();
    for (name, members) in stratify(records, |r| r.status == BuildStatus::Success) {
        let values: Vec<f64> = members.iter().map(|r| r.duration_s).collect();
        if let Some(summary) = StatsSummary::from_values(&values) {
            stats.insert(name.to_string(), summary);
        }
    }

    let clamped: Vec<f64> = records.iter().map(|r| r.duration_s.max(1e-3)).collect();
    let min = clamped.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = clamped.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = min.log10().floor() as i32;
    let hi = max.log10().floor() as i32 + 1;
    let edges: Vec<f64> = (lo..=hi).map(|exp| 10f64.powi(exp)).collect();
    let mut counts = vec![0u64; edges.len() - 1];
    for value in &clamped {
        let mut bin = edges.len() - 2;
        for i in 0..edges.len() - 1 {
            if *value >= edges[i] && *value < edges[i + 1] {
                bin = i;
                break;
            }
        }
        counts[bin] += 1;
    }
    Ok(BuildTimeStats {
        stats,
        histogram: Histogram { edges, counts },
    })
}

/// Full-precision CSV of a transition matrix: header row of observed tools,
/// one row per predecessor, empty cells for absent rows.
pub fn render_matrix_csv(matrix: &TransitionMatrix) -> String {
    let mut out = String::from("tool");
    for tool in &matrix.tools {
        out.push(',');
        out.push_str(tool);
    }
    out.push_str(",usage\n");
    for tool in &matrix.tools {
        out.push_str(tool);
        match matrix.probabilities.get(tool) {
            Some(row) => {
                for target in &matrix.tools {
                    out.push(',');
                    if let Some(p) = row.get(target) {
                        out.push_str(&format!("{p}"));
                    } else {
                        out.push('0');
                    }
                }
            }
            None => {
                for _ in &matrix.tools {
                    out.push(',');
                }
            }
        }
        out.push(',');
        out.push_str(&format!(
            "{}",
            matrix.usage.get(tool).copied().unwrap_or(0.0)
        ));
        out.push('\n');
    }
    out
}

/// Whole-percent rendering for console display; stored values keep full
/// precision.
pub fn render_matrix_pretty(matrix: &TransitionMatrix) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<22}", "current \\ next"));
    for tool in &matrix.tools {
        out.push_str(&format!("{:>22}", tool));
    }
    out.push_str(&format!("{:>8}\n", "usage"));
    for tool in &matrix.tools {
        out.push_str(&format!("{:<22}", tool));
        for target in &matrix.tools {
            let cell = matrix
                .probabilities
                .get(tool)
                .and_then(|row| row.get(target))
                .map(|p| format!("{:.0}%", p * 100.0))
                .unwrap_or_else(|| "-".to_string());
            out.push_str(&format!("{:>22}", cell));
        }
        let usage = matrix.usage.get(tool).copied().unwrap_or(0.0);
        out.push_str(&format!("{:>7.0}%\n", usage * 100.0));
    }
    out
}

/// Per-cell difference between two matrices over the union of their tools:
/// `after - before`, with absent cells treated as zero.
pub fn render_matrix_delta_csv(before: &TransitionMatrix, after: &TransitionMatrix) -> String {
    let tools: Vec<String> = TOOL_NAMES
        .iter()
        .filter(|name| {
            before.tools.iter().any(|t| t == *name) || after.tools.iter().any(|t| t == *name)
        })
        .map(|name| name.to_string())
        .collect();
    let cell = |matrix: &TransitionMatrix, from: &str, to: &str| -> f64 {
        matrix
            .probabilities
            .get(from)
            .and_then(|row| row.get(to))
            .copied()
            .unwrap_or(0.0)
    };
    let mut out = String::from("tool");
    for tool in &tools {
        out.push(',');
        out.push_str(tool);
    }
    out.push_str(",usage_delta\n");
    for from in &tools {
        out.push_str(from);
        for to in &tools {
            out.push(',');
            out.push_str(&format!(
                "{}",
                cell(after, from, to) - cell(before, from, to)
            ));
        }
        let usage_delta = after.usage.get(from).copied().unwrap_or(0.0)
            - before.usage.get(from).copied().unwrap_or(0.0);
        out.push(',');
        out.push_str(&format!("{usage_delta}\n"));
    }
    out
}

/// `category,value` rows consumable by any plotting tool.
pub fn render_plot_data(rows: &[(String, f64)]) -> String {
    let mut out = String::from("category,value\n");
    for (category, value) in rows {
        out.push_str(&format!("{category},{value}\n"));
    }
    out
}
