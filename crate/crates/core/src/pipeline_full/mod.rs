//! The iterative repair orchestrator: build and validate, analyze the log,
//! retrieve and select a solution, run an agent episode with fresh context,
//! then branch on error similarity.
//!
//! After each episode the build runs again. Success must also pass the judge;
//! then the patch is extracted and the loop ends. A new, distinct error
//! commits the current state (snapshot) and recurses with fresh retrieval. An
//! error similar to the current one discards the changes (restore to the last
//! commit) and retries with the next-ranked solution. Each error signature
//! gets at most `retry_cap` attempts; the loop hard-stops at `loop_cap`
//! iterations.

mod judge;
mod log_analysis;

pub use judge::{HeuristicJudge, Judge, JudgeConfig, Verdict};
pub use log_analysis::{
    analyze_log, normalize_error_text, signature_similarity, similar, ErrorSignature,
    LogAnalyzerConfig,
};

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::seed_from_parts;
use crate::episode::{
    run_episode, EpisodeConfig, EpisodeHarness, EpisodeTask, PolicyError, PolicyFactory,
    RewardMode, Trajectory,
};
use crate::fixtures::{
    FixtureError, Patch, PatchError, RepoFixture, VersionRegistry, WorkspaceManager,
};
use crate::tokenize::Tokenizer;
use crate::tools::{
    kb_lookup, run_build, BuildSemaphore, BuildSink, BuildStatus, KbError, KnowledgeBase,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    KnowledgeBase(#[from] KbError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Hard stop for the main loop.
    pub loop_cap: u32,
    /// Attempts allowed per error signature before skipping it.
    pub retry_cap: u32,
    /// Jaccard threshold for the similar-error branch, in (0, 1].
    pub similarity_threshold: f64,
    /// Retrieval depth per error.
    pub kb_top_k: usize,
    pub log: LogAnalyzerConfig,
    pub judge: JudgeConfig,
    pub episode: EpisodeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            loop_cap: 100,
            retry_cap: 3,
            similarity_threshold: 0.8,
            kb_top_k: 5,
            log: LogAnalyzerConfig::default(),
            judge: JudgeConfig::default(),
            episode: EpisodeConfig::full(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStatus {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    InitialBuild,
    CleanAtStart,
    EpisodeRun,
    BuildSucceeded,
    JudgeApproved,
    JudgeRejected,
    SimilarErrorRetry,
    NewErrorCommitted,
    SignatureExhausted,
    ErrorsExhausted,
    LoopCapReached,
    Solved,
}

/// One entry in the loop audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub iteration: u32,
    pub kind: AuditKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u32>,
    pub note: String,
}

/// Mutable loop bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct LoopState {
    pub iteration: u32,
    pub attempts_per_signature: BTreeMap<String, u32>,
    pub committed_snapshots: Vec<String>,
    pub current_error: Option<ErrorSignature>,
    pub current_solution: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub fixture_id: String,
    pub status: PipelineStatus,
    pub iterations: u32,
    pub episodes: Vec<Trajectory>,
    pub patches: Vec<Patch>,
    pub attempts_audit: BTreeMap<String, u32>,
    pub audit: Vec<AuditEvent>,
}

/// Shared environment handles for one pipeline run.
pub struct PipelineDeps<'a> {
    pub manager: &'a WorkspaceManager,
    pub kb: &'a KnowledgeBase,
    pub versions: &'a VersionRegistry,
    pub semaphore: Arc<BuildSemaphore>,
    pub tokenizer: &'a dyn Tokenizer,
    pub build_sink: Option<BuildSink>,
}

/// Run the iterative repair loop on one fixture. `rollout_id` names the
/// workspace; it must be unused.
pub fn run_full_pipeline(
    fixture: &RepoFixture,
    policy_factory: &dyn PolicyFactory,
    deps: &PipelineDeps,
    config: &PipelineConfig,
    rollout_id: &str,
) -> Result<PipelineResult, PipelineError> {
    let mut workspace = deps.manager.materialize(fixture, rollout_id)?;
    let judge = HeuristicJudge::new(config.judge.clone())
        .with_validation_scripts(fixture.validation_scripts.clone());

    let mut state = LoopState::default();
    let mut audit: Vec<AuditEvent> = Vec::new();
    let mut episodes: Vec<Trajectory> = Vec::new();
    let mut patches: Vec<Patch> = Vec::new();

    let push_audit = |audit: &mut Vec<AuditEvent>,
                      iteration: u32,
                      kind: AuditKind,
                      error: Option<&ErrorSignature>,
                      attempt: Option<u32>,
                      note: String| {
        audit.push(AuditEvent {
            iteration,
            kind,
            error: error.map(|e| e.normalized.clone()),
            attempt,
            note,
        });
    };

    let build = |workspace: &crate::fixtures::Workspace| {
        run_build(
            workspace,
            &fixture.manifest.build_command,
            &config.episode.tool_limits,
            &deps.semaphore,
            &config.log,
            None,
            deps.build_sink.as_ref(),
        )
    };

    // Initial build; a fixture that already builds is done immediately.
    let initial = build(&workspace);
    push_audit(
        &mut audit,
        0,
        AuditKind::InitialBuild,
        None,
        None,
        format!("status: {}", initial.status),
    );
    if initial.status == BuildStatus::Success {
        push_audit(
            &mut audit,
            0,
            AuditKind::CleanAtStart,
            None,
            None,
            String::new(),
        );
        return Ok(PipelineResult {
            fixture_id: fixture.id.clone(),
            status: PipelineStatus::Success,
            iterations: 0,
            episodes,
            patches,
            attempts_audit: state.attempts_per_signature,
            audit,
        });
    }

    let base_label = "commit-000".to_string();
    workspace.snapshot(&base_label)?;
    state.committed_snapshots.push(base_label);
    let mut error_queue: Vec<ErrorSignature> = initial.top_errors.clone();

    let status = loop {
        // Select the top-ranked error that still has attempts left.
        let current = error_queue
            .iter()
            .find(|sig| {
                state
                    .attempts_per_signature
                    .get(&sig.normalized)
                    .copied()
                    .unwrap_or(0)
                    < config.retry_cap
            })
            .cloned();
        let Some(current) = current else {
            push_audit(
                &mut audit,
                state.iteration,
                AuditKind::ErrorsExhausted,
                None,
                None,
                "every extracted signature used its retry budget".to_string(),
            );
            break PipelineStatus::Failure;
        };
        if state.iteration >= config.loop_cap {
            push_audit(
                &mut audit,
                state.iteration,
                AuditKind::LoopCapReached,
                Some(&current),
                None,
                format!("hard stop at {} iterations", config.loop_cap),
            );
            break PipelineStatus::Failure;
        }
        state.iteration += 1;
        let iteration = state.iteration;

        // Retrieval: next-ranked solution on each retry of the same error.
        let attempt_index = state
            .attempts_per_signature
            .get(&current.normalized)
            .copied()
            .unwrap_or(0);
        let ranked = kb_lookup(deps.kb, &current.raw, config.kb_top_k)?;
        let solution = ranked[(attempt_index as usize).min(ranked.len() - 1)]
            .fix_text
            .clone();
        state.current_error = Some(current.clone());
        state.current_solution = Some(solution.clone());

        // Fresh-context episode on the current error and solution.
        let task = EpisodeTask {
            problem_id: format!("{}-iter{:03}", fixture.id, iteration),
            repo_name: fixture.id.clone(),
            error_text: current.raw.clone(),
            fix_text: solution,
        };
        let seed = seed_from_parts(&[
            b"full",
            fixture.id.as_bytes(),
            &u64::from(iteration).to_le_bytes(),
        ]);
        let mut policy = policy_factory.create(&task.problem_id, seed)?;
        let episode_judge: Option<&dyn Judge> = match config.episode.reward_mode {
            RewardMode::BuildAndJudge => Some(&judge),
            RewardMode::BuildOnly => None,
        };
        let harness = EpisodeHarness {
            task,
            workspace: &workspace,
            fixture,
            kb: Some(deps.kb),
            versions: deps.versions,
            semaphore: Arc::clone(&deps.semaphore),
            tokenizer: deps.tokenizer,
            judge: episode_judge,
            build_sink: deps.build_sink.clone(),
            log_config: config.log.clone(),
        };
        let trajectory = run_episode(&harness, policy.as_mut(), &config.episode);
        push_audit(
            &mut audit,
            iteration,
            AuditKind::EpisodeRun,
            Some(&current),
            Some(attempt_index + 1),
            format!("terminal: {:?}", trajectory.terminal_reason),
        );
        episodes.push(trajectory);

        // Validate what the episode left behind.
        let report = build(&workspace);
        if report.status == BuildStatus::Success {
            push_audit(
                &mut audit,
                iteration,
                AuditKind::BuildSucceeded,
                Some(&current),
                None,
                String::new(),
            );
            let turns = episodes.last().map(|t| t.turns.as_slice()).unwrap_or(&[]);
            match judge.assess(workspace.pristine(), workspace.root(), turns) {
                Verdict::Approve => {
                    push_audit(
                        &mut audit,
                        iteration,
                        AuditKind::JudgeApproved,
                        Some(&current),
                        None,
                        String::new(),
                    );
                    patches.push(workspace.extract_patch()?);
                    push_audit(
                        &mut audit,
                        iteration,
                        AuditKind::Solved,
                        Some(&current),
                        None,
                        String::new(),
                    );
                    break PipelineStatus::Success;
                }
                Verdict::Reject(reason) => {
                    let attempts = retry_signature(&mut state, &current, config.retry_cap);
                    push_audit(
                        &mut audit,
                        iteration,
                        AuditKind::JudgeRejected,
                        Some(&current),
                        Some(attempts),
                        reason,
                    );
                    if attempts >= config.retry_cap {
                        push_audit(
                            &mut audit,
                            iteration,
                            AuditKind::SignatureExhausted,
                            Some(&current),
                            None,
                            String::new(),
                        );
                    }
                    restore_last_commit(&mut workspace, &state)?;
                }
            }
            continue;
        }

        match report.top_errors.first().cloned() {
            Some(new_error) if !similar(&new_error, &current, config.similarity_threshold) => {
                // Distinct failure: keep the progress, recurse on the new
                // error with fresh retrieval.
                let label = format!("commit-{iteration:03}");
                workspace.snapshot(&label)?;
                state.committed_snapshots.push(label);
                push_audit(
                    &mut audit,
                    iteration,
                    AuditKind::NewErrorCommitted,
                    Some(&new_error),
                    None,
                    format!("was working on: {}", current.normalized),
                );
                error_queue = report.top_errors.clone();
            }
            maybe_similar => {
                // Same failure (or nothing extractable): discard the changes
                // and retry with the next-ranked solution.
                let attempts = retry_signature(&mut state, &current, config.retry_cap);
                let note = match &maybe_similar {
                    Some(same) => format!("still failing: {}", same.normalized),
                    None => "build failed without extractable signatures".to_string(),
                };
                push_audit(
                    &mut audit,
                    iteration,
                    AuditKind::SimilarErrorRetry,
                    Some(&current),
                    Some(attempts),
                    note,
                );
                if attempts >= config.retry_cap {
                    push_audit(
                        &mut audit,
                        iteration,
                        AuditKind::SignatureExhausted,
                        Some(&current),
                        None,
                        String::new(),
                    );
                }
                restore_last_commit(&mut workspace, &state)?;
            }
        }
    };

    Ok(PipelineResult {
        fixture_id: fixture.id.clone(),
        status,
        iterations: state.iteration,
        episodes,
        patches,
        attempts_audit: state.attempts_per_signature,
        audit,
    })
}

fn retry_signature(state: &mut LoopState, signature: &ErrorSignature, retry_cap: u32) -> u32 {
    let attempts = state
        .attempts_per_signature
        .entry(signature.normalized.clone())
        .or_insert(0);
    *attempts = (*attempts + 1).min(retry_cap);
    *attempts
}

fn restore_last_commit(
    workspace: &mut crate::fixtures::Workspace,
    state: &LoopState,
) -> Result<(), FixtureError> {
    let label = state
        .committed_snapshots
        .last()
        .cloned()
        .expect("base snapshot exists before the loop starts");
    workspace.restore(&label)
}
