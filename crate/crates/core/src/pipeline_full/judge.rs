//! Post-build verdicts guarding against coverage loss.
//!
//! The default judge is a deterministic heuristic: it rejects a change that
//! deleted a test file (or a fixture-configured validation script) or that
//! reduced the total number of assertion lines across the tree. Anything
//! smarter can be plugged in behind the [`Judge`] trait.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::walk_files;
use crate::episode::Turn;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "reason")]
pub enum Verdict {
    Approve,
    Reject(String),
}

impl Verdict {
    pub fn is_approve(&self) -> bool {
        matches!(self, Verdict::Approve)
    }
}

/// Assess a finished change. Implementations must be deterministic for fixed
/// inputs.
pub trait Judge: Send + Sync {
    fn assess(&self, pristine: &Path, final_tree: &Path, turns: &[Turn]) -> Verdict;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeConfig {
    /// A path containing any of these substrings counts as a test file.
    pub test_path_patterns: Vec<String>,
    /// Lines containing any of these substrings count as assertions
    /// (case-insensitive).
    pub assertion_patterns: Vec<String>,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            test_path_patterns: vec!["test".to_string()],
            assertion_patterns: vec!["assert".to_string()],
        }
    }
}

/// Deterministic coverage guard.
#[derive(Debug, Clone, Default)]
pub struct HeuristicJudge {
    config: JudgeConfig,
    /// Exact relative paths (or bare file names) of per-fixture validation
    /// scripts that must survive.
    validation_scripts: Vec<String>,
}

impl HeuristicJudge {
    pub fn new(config: JudgeConfig) -> Self {
        Self {
            config,
            validation_scripts: Vec::new(),
        }
    }

    pub fn with_validation_scripts(mut self, scripts: Vec<String>) -> Self {
        self.validation_scripts = scripts;
        self
    }

    fn is_guarded_path(&self, rel: &str) -> bool {
        let lowered = rel.to_lowercase();
        if self
            .config
            .test_path_patterns
            .iter()
            .any(|p| lowered.contains(&p.to_lowercase()))
        {
            return true;
        }
        let file_name = rel.rsplit('/').next().unwrap_or(rel);
        self.validation_scripts
            .iter()
            .any(|s| s == rel || s == file_name)
    }

    fn assertion_count(&self, tree: &Path) -> u64 {
        let mut total = 0u64;
        for rel in walk_files(tree).unwrap_or_default() {
            let Ok(bytes) = fs::read(tree.join(&rel)) else {
                continue;
            };
            let text = String::from_utf8_lossy(&bytes).to_lowercase();
            for line in text.lines() {
                if self
                    .config
                    .assertion_patterns
                    .iter()
                    .any(|p| line.contains(&p.to_lowercase()))
                {
                    total += 1;
                }
            }
        }
        total
    }
}

impl Judge for HeuristicJudge {
    fn assess(&self, pristine: &Path, final_tree: &Path, _turns: &[Turn]) -> Verdict {
        let pristine_files = walk_files(pristine).unwrap_or_default();
        for rel in &pristine_files {
            let rel_str = rel.to_string_lossy();
            if self.is_guarded_path(&rel_str) && !final_tree.join(rel).is_file() {
                return Verdict::Reject(format!("test file deleted: {rel_str}"));
            }
        }
        let before = self.assertion_count(pristine);
        let after = self.assertion_count(final_tree);
        if after < before {
            return Verdict::Reject(format!("assertion count decreased: {before} -> {after}"));
        }
        Verdict::Approve
    }
}
