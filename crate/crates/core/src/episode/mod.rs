//! One agent episode: alternate policy messages and tool executions, enforce
//! termination caps, compute the sparse reward, and record the trajectory.
//!
//! An episode ends with exactly one terminal reason: the build succeeded (and
//! the judge approved, when one is consulted), the tool-call cap was hit, the
//! wall-clock cap was hit, the policy produced a message with no tool calls,
//! or something internal failed. Reward is 1 iff the terminal reason is
//! success. The horizon is finite, so the discount is the constant 1.

mod policy;

pub use policy::{
    Policy, PolicyError, PolicyFactory, PolicySpec, RemotePolicy, ScriptedPolicy,
    SpecPolicyFactory, SCRIPT_EXHAUSTED_MESSAGE,
};

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixtures::{Patch, RepoFixture, VersionRegistry, Workspace};
use crate::pipeline_full::{Judge, LogAnalyzerConfig, Verdict};
use crate::protocol::{
    parse_assistant, render_system_prompt, render_tool_result, render_user_message,
    serialize_tool_call_body, validate_call, AssistantMessage, ToolCall, ToolResult,
};
use crate::tokenize::Tokenizer;
use crate::tools::{
    execute_tool_full, BuildReport, BuildSemaphore, BuildSink, BuildStatus, KnowledgeBase,
    ToolContext, ToolLimits,
};

/// Finite horizon, so discounting is vacuous.
pub const DISCOUNT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

/// How the sparse reward is decided when a build succeeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    BuildOnly,
    BuildAndJudge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub max_tool_calls: u32,
    pub max_wall_time_s: f64,
    pub reward_mode: RewardMode,
    pub tool_limits: ToolLimits,
    /// When set, validate_and_build defers during the episode and one final
    /// build at episode end decides the reward.
    pub skip_intermediate_builds: bool,
}

impl EpisodeConfig {
    /// Iterative-pipeline episode: 50 tool calls, 80 minutes, judged reward.
    pub fn full() -> Self {
        Self {
            max_tool_calls: 50,
            max_wall_time_s: 4800.0,
            reward_mode: RewardMode::BuildAndJudge,
            tool_limits: ToolLimits::default(),
            skip_intermediate_builds: false,
        }
    }

    /// One-shot environment episode: 30 tool calls, build-only reward.
    pub fn simplified() -> Self {
        Self {
            max_tool_calls: 30,
            max_wall_time_s: 4800.0,
            reward_mode: RewardMode::BuildOnly,
            tool_limits: ToolLimits::default(),
            skip_intermediate_builds: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    Success,
    ToolCap,
    TimeCap,
    PolicyStop,
    InternalError,
}

/// Per-turn token counts, partitioned into thinking, prose content, tool-call
/// emission (attributed to the tool), and tool responses.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub thinking: u64,
    pub content: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tool_call: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tool_response: BTreeMap<String, u64>,
}

impl TokenCounts {
    pub fn total(&self) -> u64 {
        self.thinking
            + self.content
            + self.tool_call.values().sum::<u64>()
            + self.tool_response.values().sum::<u64>()
    }
}

/// One recorded conversation turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub raw: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_result: Option<ToolResult>,
    pub tokens: TokenCounts,
}

/// Ordered record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub problem_id: String,
    pub turns: Vec<Turn>,
    pub terminal_reason: TerminalReason,
    pub reward: u8,
    pub wall_time_s: f64,
    pub tool_call_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_patch: Option<Patch>,
}

impl Trajectory {
    pub fn summary(&self) -> TrajectorySummary {
        TrajectorySummary {
            problem_id: self.problem_id.clone(),
            terminal_reason: self.terminal_reason,
            reward: self.reward,
            wall_time_s: self.wall_time_s,
            tool_call_count: self.tool_call_count,
        }
    }
}

/// Summary record closing each trajectory in a JSON-lines log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub problem_id: String,
    pub terminal_reason: TerminalReason,
    pub reward: u8,
    pub wall_time_s: f64,
    pub tool_call_count: u32,
}

/// Token accounting for a recorded turn. Categories partition the turn's
/// countable text: think content, prose (including malformed call bodies),
/// serialized tool-call bodies attributed per tool, and tool responses.
pub fn count_turn_tokens(turn: &Turn, tokenizer: &dyn Tokenizer) -> TokenCounts {
    match turn.role {
        Role::System | Role::User => TokenCounts {
            content: tokenizer.count(&turn.raw),
            ..TokenCounts::default()
        },
        Role::Tool => {
            let name = turn
                .tool_result
                .as_ref()
                .map(|r| r.tool_name.clone())
                .unwrap_or_else(|| "unknown".to_string());
            let mut counts = TokenCounts::default();
            counts
                .tool_response
                .insert(name, tokenizer.count(&turn.raw));
            counts
        }
        Role::Assistant => {
            let parsed = parse_assistant(&turn.raw);
            assistant_token_counts(&parsed, tokenizer)
        }
    }
}

fn assistant_token_counts(parsed: &AssistantMessage, tokenizer: &dyn Tokenizer) -> TokenCounts {
    let mut counts = TokenCounts {
        thinking: parsed
            .thinking
            .as_deref()
            .map(|t| tokenizer.count(t))
            .unwrap_or(0),
        content: tokenizer.count(&parsed.visible_text),
        ..TokenCounts::default()
    };
    for block in &parsed.malformed {
        counts.content += tokenizer.count(&block.body);
    }
    for call in &parsed.tool_calls {
        *counts.tool_call.entry(call.name.clone()).or_default() +=
            tokenizer.count(&serialize_tool_call_body(call));
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RewardError {
    #[error("judge verdict required in build_and_judge mode")]
    MissingVerdict,
}

/// Sparse reward: 1 iff the build succeeded (and the judge approved, in
/// build_and_judge mode).
pub fn compute_reward(
    build: &BuildReport,
    verdict: Option<&Verdict>,
    mode: RewardMode,
) -> Result<u8, RewardError> {
    let built = build.status == BuildStatus::Success;
    match mode {
        RewardMode::BuildOnly => Ok(u8::from(built)),
        RewardMode::BuildAndJudge => match verdict {
            Some(verdict) => Ok(u8::from(built && verdict.is_approve())),
            None => Err(RewardError::MissingVerdict),
        },
    }
}

/// The conversation as the policy sees it.
#[derive(Debug)]
pub struct ConversationState {
    pub messages: Vec<Message>,
    pub tool_call_count: u32,
    pub started_at: Instant,
}

impl ConversationState {
    pub fn new(system: String, user: String) -> Self {
        Self {
            messages: vec![
                Message::new(Role::System, system),
                Message::new(Role::User, user),
            ],
            tool_call_count: 0,
            started_at: Instant::now(),
        }
    }

    /// Structural sanity: starts with a system message, and every tool
    /// message answers an assistant message that carried tool calls.
    pub fn well_formed(&self) -> bool {
        if self.messages.first().map(|m| m.role) != Some(Role::System) {
            return false;
        }
        for (index, message) in self.messages.iter().enumerate() {
            if message.role != Role::Tool {
                continue;
            }
            let anchor = self.messages[..index]
                .iter()
                .rev()
                .find(|m| m.role != Role::Tool);
            match anchor {
                Some(m) if m.role == Role::Assistant => {
                    if parse_assistant(&m.content).tool_calls.is_empty() {
                        return false;
                    }
                }
                _ => return false,
            }
        }
        true
    }
}

/// The problem slice an episode needs: identity plus the prompt inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeTask {
    pub problem_id: String,
    pub repo_name: String,
    pub error_text: String,
    pub fix_text: String,
}

/// Environment handles shared by one episode.
pub struct EpisodeHarness<'a> {
    pub task: EpisodeTask,
    pub workspace: &'a Workspace,
    pub fixture: &'a RepoFixture,
    pub kb: Option<&'a KnowledgeBase>,
    pub versions: &'a VersionRegistry,
    pub semaphore: Arc<BuildSemaphore>,
    pub tokenizer: &'a dyn Tokenizer,
    pub judge: Option<&'a dyn Judge>,
    pub build_sink: Option<BuildSink>,
    pub log_config: LogAnalyzerConfig,
}

fn record_turn(
    turns: &mut Vec<Turn>,
    role: Role,
    raw: String,
    tool_calls: Vec<ToolCall>,
    tool_result: Option<ToolResult>,
    tokenizer: &dyn Tokenizer,
) {
    let mut turn = Turn {
        role,
        raw,
        tool_calls,
        tool_result,
        tokens: TokenCounts::default(),
    };
    turn.tokens = count_turn_tokens(&turn, tokenizer);
    turns.push(turn);
}

/// Run one episode to a terminal reason.
///
/// The loop queries the policy, parses the message, and executes each tool
/// call in order, appending every observation. A successful build ends the
/// episode with reward 1 (after judge approval in build_and_judge mode; a
/// rejection is appended as an observation and the loop continues). A message
/// with zero tool calls is a policy stop. Wall time is measured from the
/// first policy query and tool time counts toward it.
pub fn run_episode(
    env: &EpisodeHarness,
    policy: &mut dyn Policy,
    config: &EpisodeConfig,
) -> Trajectory {
    let system = render_system_prompt(
        &env.task.error_text,
        &env.task.fix_text,
        &env.task.repo_name,
    );
    let user = render_user_message(&env.task.fix_text);
    let mut state = ConversationState::new(system, user);
    let mut turns = Vec::new();
    for message in &state.messages {
        record_turn(
            &mut turns,
            message.role,
            message.content.clone(),
            Vec::new(),
            None,
            env.tokenizer,
        );
    }

    let started = state.started_at;
    let elapsed = |started: Instant| started.elapsed().as_secs_f64();

    let terminal = 'episode: loop {
        let raw = match policy.next_message(&state.messages) {
            Ok(raw) => raw,
            Err(error) => {
                record_turn(
                    &mut turns,
                    Role::Assistant,
                    format!("[policy unreachable: {error}]"),
                    Vec::new(),
                    None,
                    env.tokenizer,
                );
                break TerminalReason::InternalError;
            }
        };
        let parsed = parse_assistant(&raw);
        state
            .messages
            .push(Message::new(Role::Assistant, raw.clone()));
        record_turn(
            &mut turns,
            Role::Assistant,
            raw,
            parsed.tool_calls.clone(),
            None,
            env.tokenizer,
        );

        if elapsed(started) >= config.max_wall_time_s {
            break TerminalReason::TimeCap;
        }
        if parsed.tool_calls.is_empty() {
            break TerminalReason::PolicyStop;
        }

        for call in &parsed.tool_calls {
            state.tool_call_count += 1;
            let remaining = (config.max_wall_time_s - elapsed(started)).max(0.0);
            let (result, build) = match validate_call(call) {
                Ok(validated) => {
                    let mut ctx = ToolContext {
                        workspace: env.workspace,
                        fixture: env.fixture,
                        kb: env.kb,
                        versions: env.versions,
                        limits: config.tool_limits,
                        semaphore: Arc::clone(&env.semaphore),
                        log_config: env.log_config.clone(),
                        build_sink: env.build_sink.clone(),
                        skip_builds: config.skip_intermediate_builds,
                        wall_budget_s: Some(remaining),
                    };
                    execute_tool_full(&validated, &mut ctx)
                }
                Err(error) => (ToolResult::error(&call.name, error.to_string()), None),
            };
            let rendered = render_tool_result(&result);
            state
                .messages
                .push(Message::new(Role::Tool, rendered.clone()));
            record_turn(
                &mut turns,
                Role::Tool,
                rendered,
                Vec::new(),
                Some(result),
                env.tokenizer,
            );

            if let Some(report) = &build {
                if report.status == BuildStatus::Success {
                    let verdict = match config.reward_mode {
                        RewardMode::BuildOnly => None,
                        RewardMode::BuildAndJudge => {
                            let Some(judge) = env.judge else {
                                break 'episode TerminalReason::InternalError;
                            };
                            Some(judge.assess(
                                env.workspace.pristine(),
                                env.workspace.root(),
                                &turns,
                            ))
                        }
                    };
                    match compute_reward(report, verdict.as_ref(), config.reward_mode) {
                        Ok(1) => break 'episode TerminalReason::Success,
                        Ok(_) => {
                            // Judge rejection: append the feedback as an
                            // observation and keep going under the caps.
                            let reason = match &verdict {
                                Some(Verdict::Reject(reason)) => reason.clone(),
                                _ => "change rejected".to_string(),
                            };
                            let feedback =
                                ToolResult::error("judge", format!("change rejected: {reason}"));
                            let rendered = render_tool_result(&feedback);
                            state
                                .messages
                                .push(Message::new(Role::Tool, rendered.clone()));
                            record_turn(
                                &mut turns,
                                Role::Tool,
                                rendered,
                                Vec::new(),
                                Some(feedback),
                                env.tokenizer,
                            );
                        }
                        Err(_) => break 'episode TerminalReason::InternalError,
                    }
                }
            }
            if elapsed(started) >= config.max_wall_time_s {
                break 'episode TerminalReason::TimeCap;
            }
            if state.tool_call_count >= config.max_tool_calls {
                break 'episode TerminalReason::ToolCap;
            }
        }
    };

    let terminal = if config.skip_intermediate_builds
        && matches!(
            terminal,
            TerminalReason::PolicyStop | TerminalReason::ToolCap | TerminalReason::TimeCap
        ) {
        let report = crate::tools::run_build(
            env.workspace,
            &env.fixture.manifest.build_command,
            &config.tool_limits,
            &env.semaphore,
            &env.log_config,
            None,
            env.build_sink.as_ref(),
        );
        if report.status == BuildStatus::Success {
            TerminalReason::Success
        } else {
            terminal
        }
    } else {
        terminal
    };

    let reward = u8::from(terminal == TerminalReason::Success);
    let final_patch = if terminal == TerminalReason::Success {
        env.workspace.extract_patch().ok()
    } else {
        None
    };

    debug_assert!(state.well_formed());
    Trajectory {
        problem_id: env.task.problem_id.clone(),
        turns,
        terminal_reason: terminal,
        reward,
        wall_time_s: elapsed(started),
        tool_call_count: state.tool_call_count,
        final_patch,
    }
}

#[derive(Debug, Error)]
pub enum TrajectoryLogError {
    #[error("I/O failure: {0}")]
    Io(#[from] io::Error),
    #[error("malformed trajectory log line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Write trajectories as JSON-lines: one object per turn, then one summary
/// object per trajectory.
pub fn write_trajectories_jsonl<W: Write>(
    writer: &mut W,
    trajectories: &[Trajectory],
) -> Result<(), TrajectoryLogError> {
    for trajectory in trajectories {
        for turn in &trajectory.turns {
            let line = serde_json::to_string(turn).map_err(|e| TrajectoryLogError::Malformed {
                line: 0,
                reason: e.to_string(),
            })?;
            writeln!(writer, "{line}")?;
        }
        let summary = serde_json::to_string(&trajectory.summary()).map_err(|e| {
            TrajectoryLogError::Malformed {
                line: 0,
                reason: e.to_string(),
            }
        })?;
        writeln!(writer, "{summary}")?;
    }
    Ok(())
}

/// Read a JSON-lines trajectory log written by [`write_trajectories_jsonl`].
/// Summary lines (no `role` field) close out the preceding turns.
pub fn read_trajectories_jsonl<R: BufRead>(
    reader: R,
) -> Result<Vec<Trajectory>, TrajectoryLogError> {
    let mut trajectories = Vec::new();
    let mut pending: Vec<Turn> = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| TrajectoryLogError::Malformed {
                line: index + 1,
                reason: e.to_string(),
            })?;
        if value.get("role").is_some() {
            let turn: Turn =
                serde_json::from_value(value).map_err(|e| TrajectoryLogError::Malformed {
                    line: index + 1,
                    reason: e.to_string(),
                })?;
            pending.push(turn);
        } else {
            let summary: TrajectorySummary =
                serde_json::from_value(value).map_err(|e| TrajectoryLogError::Malformed {
                    line: index + 1,
                    reason: e.to_string(),
                })?;
            trajectories.push(Trajectory {
                problem_id: summary.problem_id,
                turns: std::mem::take(&mut pending),
                terminal_reason: summary.terminal_reason,
                reward: summary.reward,
                wall_time_s: summary.wall_time_s,
                tool_call_count: summary.tool_call_count,
                final_patch: None,
            });
        }
    }
    if !pending.is_empty() {
        return Err(TrajectoryLogError::Malformed {
            line: 0,
            reason: "trailing turns without a summary record".to_string(),
        });
    }
    Ok(trajectories)
}
