//! The one-shot environment: dataset expansion into per-error problems,
//! build-time filtering, time-ordered splits, bounded-concurrency batch
//! rollouts, and repeated evaluation runs with confidence intervals.
//!
//! Every episode here foregrounds a single (error, candidate fix) pair, runs
//! under the simplified config (30 tool calls, build-only reward, judge
//! disabled), and acquires the shared build semaphore for every build, so the
//! number of concurrent builds never exceeds the configured bound.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::seed_from_parts;
use crate::episode::{
    run_episode, EpisodeConfig, EpisodeHarness, EpisodeTask, PolicyFactory, TerminalReason,
    Trajectory,
};
use crate::fixtures::{FixtureRegistry, RepoFixture, VersionRegistry, WorkspaceManager};
use crate::pipeline_full::{Judge, LogAnalyzerConfig};
use crate::tokenize::Tokenizer;
use crate::tools::{BuildSemaphore, BuildSink, KnowledgeBase};

#[derive(Debug, Error)]
pub enum SimplifiedError {
    #[error("fixture {fixture} has {errors} injected errors but {fixes} candidate fixes")]
    FixErrorArityMismatch {
        fixture: String,
        errors: usize,
        fixes: usize,
    },
    #[error("split ratios must be non-negative and sum to 1, got {0}")]
    InvalidRatios(f64),
    #[error("fixture {0} has no measured initial build time")]
    UnmeasuredFixture(String),
    #[error("duplicate problem id: {0}")]
    DuplicateProblemId(String),
    #[error("duplicate (fixture, error) pair within a split: {0} / {1:?}")]
    DuplicatePair(String, String),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed problem line {line}: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split: {other}")),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Validation => write!(f, "validation"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One unit of work: a fixture, a starting error, and a candidate fix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub fixture_id: String,
    pub error_text: String,
    pub candidate_fix: String,
    pub created_at: i64,
    pub split: Split,
}

impl Problem {
    pub fn task(&self) -> EpisodeTask {
        EpisodeTask {
            problem_id: self.id.clone(),
            repo_name: self.fixture_id.clone(),
            error_text: self.error_text.clone(),
            fix_text: self.candidate_fix.clone(),
        }
    }
}

/// Ids unique; (fixture, error) pairs unique within each split.
pub fn validate_problems(problems: &[Problem]) -> Result<(), SimplifiedError> {
    let mut ids = BTreeSet::new();
    let mut pairs = BTreeSet::new();
    for problem in problems {
        if !ids.insert(problem.id.clone()) {
            return Err(SimplifiedError::DuplicateProblemId(problem.id.clone()));
        }
        if !pairs.insert((
            problem.split,
            problem.fixture_id.clone(),
            problem.error_text.clone(),
        )) {
            return Err(SimplifiedError::DuplicatePair(
                problem.fixture_id.clone(),
                problem.error_text.clone(),
            ));
        }
    }
    Ok(())
}

pub fn load_problems_jsonl(path: &Path) -> Result<Vec<Problem>, SimplifiedError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut problems = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let problem: Problem =
            serde_json::from_str(&line).map_err(|source| SimplifiedError::Malformed {
                line: index + 1,
                source,
            })?;
        problems.push(problem);
    }
    validate_problems(&problems)?;
    Ok(problems)
}

pub fn save_problems_jsonl(path: &Path, problems: &[Problem]) -> Result<(), SimplifiedError> {
    let mut out = fs::File::create(path)?;
    for problem in problems {
        let line = serde_json::to_string(problem)
            .map_err(|source| SimplifiedError::Malformed { line: 0, source })?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Expand a fixture with k injected errors into k problems, one per (error,
/// fix) pair. Solving any of them still requires the whole build to pass.
pub fn expand_problems(
    fixture: &RepoFixture,
    fixes: &[String],
    base_created_at: i64,
) -> Result<Vec<Problem>, SimplifiedError> {
    if fixture.injected_errors.is_empty() || fixture.injected_errors.len() != fixes.len() {
        return Err(SimplifiedError::FixErrorArityMismatch {
            fixture: fixture.id.clone(),
            errors: fixture.injected_errors.len(),
            fixes: fixes.len(),
        });
    }
    Ok(fixture
        .injected_errors
        .iter()
        .zip(fixes)
        .enumerate()
        .map(|(index, (error, fix))| Problem {
            id: format!("{}-e{}", fixture.id, index + 1),
            fixture_id: fixture.id.clone(),
            error_text: error.error_text.clone(),
            candidate_fix: fix.clone(),
            created_at: base_created_at + index as i64,
            split: Split::Train,
        })
        .collect())
}

/// Keep problems whose fixture's measured initial build time is strictly
/// under the threshold.
pub fn filter_by_build_time(
    problems: &[Problem],
    threshold_s: f64,
    build_times: &BTreeMap<String, f64>,
) -> Result<Vec<Problem>, SimplifiedError> {
    let mut kept = Vec::new();
    for problem in problems {
        let time = build_times
            .get(&problem.fixture_id)
            .copied()
            .ok_or_else(|| SimplifiedError::UnmeasuredFixture(problem.fixture_id.clone()))?;
        if time < threshold_s {
            kept.push(problem.clone());
        }
    }
    Ok(kept)
}

/// Sort by (created_at, id) ascending and assign splits by cumulative-ratio
/// floor boundaries; the remainder lands in test.
pub fn split_time_ordered(
    mut problems: Vec<Problem>,
    ratios: (f64, f64, f64),
) -> Result<Vec<Problem>, SimplifiedError> {
    let (train, validation, test) = ratios;
    let sum = train + validation + test;
    if !(train >= 0.0 && validation >= 0.0 && test >= 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(SimplifiedError::InvalidRatios(sum));
    }
    problems.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.id.cmp(&b.id)));
    let n = problems.len();
    let train_end = (train * n as f64).floor() as usize;
    let validation_end = ((train + validation) * n as f64).floor() as usize;
    for (index, problem) in problems.iter_mut().enumerate() {
        problem.split = if index < train_end {
            Split::Train
        } else if index < validation_end {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(problems)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatchConfig {
    pub batch_size: usize,
    pub rollouts_per_problem: usize,
    pub max_concurrent_builds: usize,
    pub seed: u64,
}

impl Default for RolloutBatchConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            rollouts_per_problem: 4,
            max_concurrent_builds: 32,
            seed: 0,
        }
    }
}

impl RolloutBatchConfig {
    pub fn validated(self) -> Result<Self, String> {
        if self.batch_size == 0 || self.rollouts_per_problem == 0 || self.max_concurrent_builds == 0
        {
            return Err("batch_size, rollouts_per_problem, and max_concurrent_builds must all be at least 1".into());
        }
        Ok(self)
    }
}

/// Shared, read-only environment for concurrent episodes.
pub struct BatchEnv {
    pub registry: Arc<FixtureRegistry>,
    pub manager: Arc<WorkspaceManager>,
    pub kb: Option<Arc<KnowledgeBase>>,
    pub versions: Arc<VersionRegistry>,
    pub tokenizer: Arc<dyn Tokenizer>,
    pub log_config: LogAnalyzerConfig,
    /// Consulted only when the episode config uses a judged reward.
    pub judge: Option<Arc<dyn Judge>>,
    pub build_sink: Option<BuildSink>,
    /// Injected semaphore (for instrumentation); otherwise each batch run
    /// creates one sized `max_concurrent_builds`.
    pub semaphore: Option<Arc<BuildSemaphore>>,
    pub keep_workspaces: bool,
    rollout_nonce: AtomicU64,
}

impl BatchEnv {
    pub fn new(
        registry: Arc<FixtureRegistry>,
        manager: Arc<WorkspaceManager>,
        versions: Arc<VersionRegistry>,
        tokenizer: Arc<dyn Tokenizer>,
    ) -> Self {
        Self {
            registry,
            manager,
            kb: None,
            versions,
            tokenizer,
            log_config: LogAnalyzerConfig::default(),
            judge: None,
            build_sink: None,
            semaphore: None,
            keep_workspaces: false,
            rollout_nonce: AtomicU64::new(0),
        }
    }

    fn next_rollout_id(&self, problem_id: &str, rollout: usize) -> String {
        let nonce = self.rollout_nonce.fetch_add(1, Ordering::Relaxed);
        let safe: String = problem_id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "._-".contains(c) {
                    c
                } else {
                    '-'
                }
            })
            .collect();
        format!("{safe}-r{rollout}-n{nonce}")
    }
}

fn failed_trajectory(problem_id: &str, note: &str) -> Trajectory {
    use crate::episode::{Role, TokenCounts, Turn};
    Trajectory {
        problem_id: problem_id.to_string(),
        turns: vec![Turn {
            role: Role::System,
            raw: format!("[episode setup failed: {note}]"),
            tool_calls: Vec::new(),
            tool_result: None,
            tokens: TokenCounts::default(),
        }],
        terminal_reason: TerminalReason::InternalError,
        reward: 0,
        wall_time_s: 0.0,
        tool_call_count: 0,
        final_patch: None,
    }
}

fn run_one_episode(
    problem: &Problem,
    rollout: usize,
    factory: &dyn PolicyFactory,
    env: &BatchEnv,
    semaphore: &Arc<BuildSemaphore>,
    episode_config: &EpisodeConfig,
    seed: u64,
) -> Trajectory {
    let fixture = match env.registry.get(&problem.fixture_id) {
        Ok(fixture) => fixture,
        Err(err) => return failed_trajectory(&problem.id, &err.to_string()),
    };
    let rollout_id = env.next_rollout_id(&problem.id, rollout);
    let workspace = match env.manager.materialize(&fixture, &rollout_id) {
        Ok(workspace) => workspace,
        Err(err) => return failed_trajectory(&problem.id, &err.to_string()),
    };
    let mut policy = match factory.create(&problem.id, seed) {
        Ok(policy) => policy,
        Err(err) => return failed_trajectory(&problem.id, &err.to_string()),
    };
    let harness = EpisodeHarness {
        task: problem.task(),
        workspace: &workspace,
        fixture: &fixture,
        kb: env.kb.as_deref(),
        versions: &env.versions,
        semaphore: Arc::clone(semaphore),
        tokenizer: env.tokenizer.as_ref(),
        judge: env.judge.as_deref(),
        build_sink: env.build_sink.clone(),
        log_config: env.log_config.clone(),
    };
    let trajectory = run_episode(&harness, policy.as_mut(), episode_config);
    if !env.keep_workspaces {
        let _ = workspace.remove();
    }
    trajectory
}

/// Run `rollouts_per_problem` episodes for every problem, `batch_size`
/// problems at a time, all episodes of a batch concurrently. Results come
/// back in (problem, rollout) order regardless of completion order; episodes
/// that hit a cap or fail internally are recorded as failures in their
/// trajectories.
pub fn run_batch(
    problems: &[Problem],
    factory: &dyn PolicyFactory,
    env: &BatchEnv,
    batch: &RolloutBatchConfig,
    episode_config: &EpisodeConfig,
) -> Vec<Trajectory> {
    let semaphore = env
        .semaphore
        .clone()
        .unwrap_or_else(|| BuildSemaphore::new(batch.max_concurrent_builds));
    let rollouts = batch.rollouts_per_problem.max(1);
    let mut results: Vec<Trajectory> = Vec::with_capacity(problems.len() * rollouts);

    for chunk in problems.chunks(batch.batch_size.max(1)) {
        let mut chunk_results: Vec<Option<Trajectory>> = Vec::new();
        chunk_results.resize_with(chunk.len() * rollouts, || None);
        thread::scope(|scope| {
            let mut handles = Vec::new();
            for (problem_index, problem) in chunk.iter().enumerate() {
                for rollout in 0..rollouts {
                    let semaphore = Arc::clone(&semaphore);
                    let seed = seed_from_parts(&[
                        b"episode",
                        &batch.seed.to_le_bytes(),
                        problem.id.as_bytes(),
                        &(rollout as u64).to_le_bytes(),
                    ]);
                    handles.push((
                        problem_index * rollouts + rollout,
                        scope.spawn(move || {
                            run_one_episode(
                                problem,
                                rollout,
                                factory,
                                env,
                                &semaphore,
                                episode_config,
                                seed,
                            )
                        }),
                    ));
                }
            }
            for (slot, handle) in handles {
                let trajectory = handle
                    .join()
                    .unwrap_or_else(|_| failed_trajectory("unknown", "episode thread panicked"));
                chunk_results[slot] = Some(trajectory);
            }
        });
        results.extend(
            chunk_results
                .into_iter()
                .map(|t| t.expect("every slot joined")),
        );
    }
    results
}

/// Success-rate statistics over repeated evaluation runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub runs: Vec<f64>,
    pub mean: f64,
    pub ci95_half_width: f64,
    pub per_problem: BTreeMap<String, u32>,
    pub repeats: u32,
    pub base_seed: u64,
    /// Recorded so the interval construction is auditable.
    pub ci_formula: String,
    pub batch_config: RolloutBatchConfig,
    pub episode_config: EpisodeConfig,
}

pub const CI_FORMULA: &str = "mean +/- 1.96 * sample_stddev(runs) / sqrt(len(runs))";

/// Mean and 95% half-width over run-level rates: normal approximation with
/// the sample (n-1) standard deviation.
pub fn run_rate_stats(runs: &[f64]) -> (f64, f64) {
    if runs.is_empty() {
        return (0.0, 0.0);
    }
    let n = runs.len() as f64;
    let mean = runs.iter().sum::<f64>() / n;
    if runs.len() < 2 {
        return (mean, 0.0);
    }
    let variance = runs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * variance.sqrt() / n.sqrt())
}

impl EvalReport {
    pub fn from_run_rates(
        runs: Vec<f64>,
        per_problem: BTreeMap<String, u32>,
        base_seed: u64,
        batch_config: RolloutBatchConfig,
        episode_config: EpisodeConfig,
    ) -> Self {
        let (mean, ci95_half_width) = run_rate_stats(&runs);
        Self {
            repeats: runs.len() as u32,
            runs,
            mean,
            ci95_half_width,
            per_problem,
            base_seed,
            ci_formula: CI_FORMULA.to_string(),
            batch_config,
            episode_config,
        }
    }
}

/// Evaluation-only mode: run the whole problem set `repeats` times with
/// distinct derived seeds (one rollout per problem per run), and aggregate
/// run-level success rates. No training of any kind occurs.
pub fn evaluate(
    problems: &[Problem],
    factory: &dyn PolicyFactory,
    env: &BatchEnv,
    batch: &RolloutBatchConfig,
    episode_config: &EpisodeConfig,
    repeats: u32,
) -> EvalReport {
    let repeats = repeats.max(1);
    let mut runs = Vec::with_capacity(repeats as usize);
    let mut per_problem: BTreeMap<String, u32> =
        problems.iter().map(|p| (p.id.clone(), 0)).collect();

    for run in 0..repeats {
        let run_config = RolloutBatchConfig {
            rollouts_per_problem: 1,
            seed: batch.seed.wrapping_add(u64::from(run)),
            ..batch.clone()
        };
        let trajectories = run_batch(problems, factory, env, &run_config, episode_config);
        let mut successes = 0u32;
        for (problem, trajectory) in problems.iter().zip(&trajectories) {
            if trajectory.reward == 1 {
                successes += 1;
                *per_problem.entry(problem.id.clone()).or_default() += 1;
            }
        }
        runs.push(f64::from(successes) / problems.len().max(1) as f64);
    }

    EvalReport::from_run_rates(
        runs,
        per_problem,
        batch.seed,
        batch.clone(),
        episode_config.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(id: &str, created_at: i64) -> Problem {
        Problem {
            id: id.to_string(),
            fixture_id: "fx".to_string(),
            error_text: format!("error unique to {id}"),
            candidate_fix: "fix it".to_string(),
            created_at,
            split: Split::Train,
        }
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let problems: Vec<Problem> = (0..10)
            .map(|i| problem(&format!("p{i:02}"), i as i64))
            .collect();
        let split = split_time_ordered(problems, (0.8, 0.1, 0.1)).unwrap();
        let count = |s: Split| split.iter().filter(|p| p.split == s).count();
        assert_eq!(
            (
                count(Split::Train),
                count(Split::Validation),
                count(Split::Test)
            ),
            (8, 1, 1)
        );

        let single = split_time_ordered(vec![problem("only", 0)], (0.8, 0.1, 0.1)).unwrap();
        assert_eq!(single[0].split, Split::Test);
    }

    #[test]
    fn split_is_stable_under_input_shuffling() {
        let ordered: Vec<Problem> = (0..7)
            .map(|i| problem(&format!("p{i}"), i as i64))
            .collect();
        let mut shuffled = ordered.clone();
        shuffled.reverse();
        shuffled.swap(0, 3);
        let a = split_time_ordered(ordered, (0.8, 0.1, 0.1)).unwrap();
        let b = split_time_ordered(shuffled, (0.8, 0.1, 0.1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_ratios_are_rejected() {
        let err = split_time_ordered(vec![problem("p", 0)], (0.5, 0.1, 0.1)).unwrap_err();
        assert!(matches!(err, SimplifiedError::InvalidRatios(_)));
    }

    #[test]
    fn build_time_filter_keeps_strictly_under_threshold() {
        let problems = vec![problem("a", 0), problem("b", 1), problem("c", 2)];
        let mut times = BTreeMap::new();
        times.insert("fx".to_string(), 50.0);
        // All problems share one fixture here; vary via three fixtures.
        let mut problems = problems;
        problems[1].fixture_id = "fy".into();
        problems[2].fixture_id = "fz".into();
        times.insert("fy".to_string(), 99.0);
        times.insert("fz".to_string(), 150.0);

        let kept = filter_by_build_time(&problems, 100.0, &times).unwrap();
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|p| p.fixture_id != "fz"));

        assert!(filter_by_build_time(&problems, 0.0, &times)
            .unwrap()
            .is_empty());
        assert_eq!(
            filter_by_build_time(&problems, f64::INFINITY, &times)
                .unwrap()
                .len(),
            3
        );

        times.remove("fy");
        assert!(matches!(
            filter_by_build_time(&problems, 100.0, &times).unwrap_err(),
            SimplifiedError::UnmeasuredFixture(_)
        ));
    }

    #[test]
    fn run_rate_stats_hand_values() {
        let (mean, hw) = run_rate_stats(&[0.2, 0.2, 0.2, 0.2, 0.2]);
        assert!((mean - 0.2).abs() < 1e-12);
        assert_eq!(hw, 0.0);

        let (mean, hw) = run_rate_stats(&[0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((mean - 0.2).abs() < 1e-12);
        // sample stddev is sqrt(0.8 / 4) = 0.4472135955; /sqrt(5) = 0.2
        assert!((hw - 1.96 * 0.447_213_595_499_958 / 5f64.sqrt()).abs() < 1e-9);
        assert!((hw - 0.392).abs() < 1e-9);
    }

    #[test]
    fn problem_validation_catches_duplicates() {
        let mut problems = vec![problem("a", 0), problem("b", 1)];
        problems[1].error_text = problems[0].error_text.clone();
        assert!(matches!(
            validate_problems(&problems).unwrap_err(),
            SimplifiedError::DuplicatePair(_, _)
        ));

        let duplicated = vec![problem("a", 0), problem("a", 1)];
        assert!(matches!(
            validate_problems(&duplicated).unwrap_err(),
            SimplifiedError::DuplicateProblemId(_)
        ));
    }

    #[test]
    fn problems_jsonl_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("problems.jsonl");
        let problems = vec![problem("a", 10), problem("b", 20)];
        save_problems_jsonl(&path, &problems).unwrap();
        let back = load_problems_jsonl(&path).unwrap();
        assert_eq!(back, problems);
    }
}
