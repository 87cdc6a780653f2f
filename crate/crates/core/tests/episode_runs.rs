//! Episode-level behavior: rewards, termination caps, timeout signals,
//! judge feedback, remote policies, and determinism.

mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;

use buildgym_core::episode::{
    run_episode, write_trajectories_jsonl, EpisodeConfig, EpisodeHarness, EpisodeTask, Policy,
    RemotePolicy, RewardMode, Role, ScriptedPolicy, TerminalReason,
};
use buildgym_core::fixtures::samples::{
    BRITTLE_FIXTURE_ID, GRADLE_DEPRECATION_ERROR, GRADLE_FIXTURE_ID, GRADLE_FIX_TEXT,
};
use buildgym_core::pipeline_full::{HeuristicJudge, JudgeConfig, LogAnalyzerConfig};
use buildgym_core::protocol::{serialize_tool_call, ToolCall, ToolStatus};
use buildgym_core::tokenize::WhitespacePunctTokenizer;
use buildgym_core::tools::{BuildSemaphore, ToolLimits};

use common::{policy_messages, run_episode_on, TestEnv};

fn gradle_task(problem_id: &str) -> EpisodeTask {
    EpisodeTask {
        problem_id: problem_id.to_string(),
        repo_name: GRADLE_FIXTURE_ID.to_string(),
        error_text: GRADLE_DEPRECATION_ERROR.to_string(),
        fix_text: GRADLE_FIX_TEXT.to_string(),
    }
}

#[test]
fn expert_policy_earns_reward_and_independent_rebuild_confirms() {
    let env = TestEnv::new();
    let mut policy = ScriptedPolicy::new(policy_messages("gradle-expert"));
    let outcome = run_episode_on(
        &env,
        GRADLE_FIXTURE_ID,
        "ep-expert",
        gradle_task("p-expert"),
        &mut policy,
        &EpisodeConfig::simplified(),
        None,
        None,
    );

    assert_eq!(outcome.trajectory.terminal_reason, TerminalReason::Success);
    assert_eq!(outcome.trajectory.reward, 1);
    assert_eq!(outcome.trajectory.tool_call_count, 2);
    let patch = outcome
        .trajectory
        .final_patch
        .as_ref()
        .expect("patch on success");
    assert!(patch.hunks.iter().any(|h| h.path == "gradle-version"));

    // Independent oracle: run the fixture's build command directly.
    let (code, log) = common::shell(outcome.workspace.root(), "sh build.sh");
    assert_eq!(code, 0, "independent rebuild failed:\n{log}");
    assert!(log.contains("BUILD SUCCESSFUL"));
}

#[test]
fn prose_only_policy_stops_with_reward_zero() {
    let env = TestEnv::new();
    let mut policy = ScriptedPolicy::new(policy_messages("noop"));
    let outcome = run_episode_on(
        &env,
        GRADLE_FIXTURE_ID,
        "ep-noop",
        gradle_task("p-noop"),
        &mut policy,
        &EpisodeConfig::simplified(),
        None,
        None,
    );
    assert_eq!(
        outcome.trajectory.terminal_reason,
        TerminalReason::PolicyStop
    );
    assert_eq!(outcome.trajectory.reward, 0);
    assert_eq!(outcome.trajectory.tool_call_count, 0);
    assert!(outcome.trajectory.final_patch.is_none());
}

#[test]
fn infinite_policy_is_cut_at_exactly_the_tool_cap() {
    let env = TestEnv::new();
    let read_loop = vec![serialize_tool_call(
        &ToolCall::new("read_file").with_arg("file_path", "build.sh"),
    )];

    for (config, expected) in [
        (EpisodeConfig::full(), 50u32),
        (EpisodeConfig::simplified(), 30u32),
    ] {
        let mut policy = ScriptedPolicy::repeating(read_loop.clone());
        let outcome = run_episode_on(
            &env,
            GRADLE_FIXTURE_ID,
            &format!("ep-cap-{expected}"),
            gradle_task(&format!("p-cap-{expected}")),
            &mut policy,
            &config,
            None,
            None,
        );
        assert_eq!(outcome.trajectory.terminal_reason, TerminalReason::ToolCap);
        assert_eq!(outcome.trajectory.tool_call_count, expected);
        assert_eq!(outcome.trajectory.reward, 0);
        let executed = outcome
            .trajectory
            .turns
            .iter()
            .filter(|t| t.role == Role::Tool)
            .count();
        assert_eq!(executed as u32, expected);
    }
}

#[test]
fn slow_build_hits_the_wall_clock_cap_promptly() {
    let env = TestEnv::new();
    env.add_fixture("slow-wall", "sleep 60\necho BUILD SUCCESSFUL\n", &[]);
    let mut policy = ScriptedPolicy::new(vec![serialize_tool_call(&ToolCall::new(
        "validate_and_build",
    ))]);
    let mut config = EpisodeConfig::simplified();
    config.max_wall_time_s = 5.0;

    let started = std::time::Instant::now();
    let outcome = run_episode_on(
        &env,
        "slow-wall",
        "ep-wall",
        common::task_for("slow-wall", "p-wall"),
        &mut policy,
        &config,
        None,
        None,
    );
    let elapsed = started.elapsed().as_secs_f64();

    assert_eq!(outcome.trajectory.terminal_reason, TerminalReason::TimeCap);
    assert_eq!(outcome.trajectory.reward, 0);
    // Cap plus kill grace: the build process is killed once the remaining
    // wall budget is exhausted.
    assert!(
        elapsed < 5.0 + 2.0,
        "episode took {elapsed}s, expected under 7s"
    );
}

#[test]
fn run_sh_timeout_emits_tooltimeout_and_the_episode_continues() {
    let env = TestEnv::new();
    let messages = vec![
        serialize_tool_call(&ToolCall::new("run_sh").with_arg("cmd", "sleep 10")),
        serialize_tool_call(&ToolCall::new("read_file").with_arg("file_path", "gradle-version")),
    ];
    let mut policy = ScriptedPolicy::new(messages);
    let mut config = EpisodeConfig::simplified();
    config.tool_limits = ToolLimits {
        tool_timeout_s: 1.0,
        build_timeout_s: 3600.0,
    };

    let outcome = run_episode_on(
        &env,
        GRADLE_FIXTURE_ID,
        "ep-timeout",
        gradle_task("p-timeout"),
        &mut policy,
        &config,
        None,
        None,
    );

    let results: Vec<_> = outcome
        .trajectory
        .turns
        .iter()
        .filter_map(|t| t.tool_result.as_ref())
        .collect();
    assert_eq!(results.len(), 2);
    assert_eq!(results[0].tool_name, "run_sh");
    assert_eq!(results[0].status, ToolStatus::Tooltimeout);
    // The next policy step still executed.
    assert_eq!(results[1].tool_name, "read_file");
    assert_eq!(results[1].status, ToolStatus::Ok);
    assert!(results[1].content.contains("5.6.4"));
    assert_eq!(
        outcome.trajectory.terminal_reason,
        TerminalReason::PolicyStop
    );
}

#[test]
fn judge_blocks_test_deletion_in_judged_mode_but_not_build_only() {
    let env = TestEnv::new();
    let judge = HeuristicJudge::new(JudgeConfig::default())
        .with_validation_scripts(vec!["tests/validate.sh".to_string()]);
    let task = EpisodeTask {
        problem_id: "p-hack".to_string(),
        repo_name: BRITTLE_FIXTURE_ID.to_string(),
        error_text: "error: release validation test FAILED".to_string(),
        fix_text: "Inspect tests/validate.sh and repair the failing release gate.".to_string(),
    };

    let mut judged_config = EpisodeConfig::simplified();
    judged_config.reward_mode = RewardMode::BuildAndJudge;
    let mut policy = ScriptedPolicy::new(policy_messages("hacker"));
    let judged = run_episode_on(
        &env,
        BRITTLE_FIXTURE_ID,
        "ep-hack-judged",
        task.clone(),
        &mut policy,
        &judged_config,
        Some(&judge),
        None,
    );
    assert_eq!(judged.trajectory.reward, 0);
    assert_ne!(judged.trajectory.terminal_reason, TerminalReason::Success);
    let judge_feedback = judged
        .trajectory
        .turns
        .iter()
        .filter_map(|t| t.tool_result.as_ref())
        .find(|r| r.tool_name == "judge")
        .expect("judge feedback appended");
    assert!(judge_feedback.content.contains("rejected"));

    let mut policy = ScriptedPolicy::new(policy_messages("hacker"));
    let unjudged = run_episode_on(
        &env,
        BRITTLE_FIXTURE_ID,
        "ep-hack-free",
        task,
        &mut policy,
        &EpisodeConfig::simplified(),
        None,
        None,
    );
    assert_eq!(unjudged.trajectory.reward, 1);
    assert_eq!(unjudged.trajectory.terminal_reason, TerminalReason::Success);
}

#[test]
fn scripted_episodes_are_deterministic_up_to_wall_time() {
    let env = TestEnv::new();
    let run = |rollout: &str| {
        let mut policy = ScriptedPolicy::new(policy_messages("gradle-expert"));
        let mut outcome = run_episode_on(
            &env,
            GRADLE_FIXTURE_ID,
            rollout,
            gradle_task("p-deterministic"),
            &mut policy,
            &EpisodeConfig::simplified(),
            None,
            None,
        );
        outcome.trajectory.wall_time_s = 0.0;
        let mut bytes = Vec::new();
        write_trajectories_jsonl(&mut bytes, std::slice::from_ref(&outcome.trajectory)).unwrap();
        bytes
    };
    assert_eq!(run("ep-det-a"), run("ep-det-b"));
}

#[test]
fn token_counts_partition_every_turn() {
    let env = TestEnv::new();
    let mut policy = ScriptedPolicy::new(policy_messages("gradle-expert"));
    let outcome = run_episode_on(
        &env,
        GRADLE_FIXTURE_ID,
        "ep-tokens",
        gradle_task("p-tokens"),
        &mut policy,
        &EpisodeConfig::simplified(),
        None,
        None,
    );
    for turn in &outcome.trajectory.turns {
        let tokens = &turn.tokens;
        assert_eq!(
            tokens.total(),
            tokens.thinking
                + tokens.content
                + tokens.tool_call.values().sum::<u64>()
                + tokens.tool_response.values().sum::<u64>()
        );
        assert!(
            tokens.total() > 0,
            "turn with no countable tokens: {:?}",
            turn.raw
        );
    }

    // Counts stored in a log round-trip: reloading the trajectory and
    // recomputing from raw text reproduces them exactly.
    let mut bytes = Vec::new();
    write_trajectories_jsonl(&mut bytes, std::slice::from_ref(&outcome.trajectory)).unwrap();
    let reloaded =
        buildgym_core::episode::read_trajectories_jsonl(std::io::BufReader::new(bytes.as_slice()))
            .unwrap();
    let tokenizer = WhitespacePunctTokenizer;
    for (stored, original) in reloaded[0].turns.iter().zip(&outcome.trajectory.turns) {
        assert_eq!(stored.tokens, original.tokens);
        assert_eq!(
            buildgym_core::episode::count_turn_tokens(stored, &tokenizer),
            stored.tokens
        );
    }
}

/// Minimal one-shot HTTP server answering each POST with {"content": …}.
fn spawn_stub_policy_server(replies: Vec<String>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for reply in replies {
            let Ok((mut stream, _)) = listener.accept() else {
                return;
            };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).is_err() || line.trim().is_empty() {
                    break;
                }
                let lowered = line.to_lowercase();
                if let Some(rest) = lowered.strip_prefix("content-length:") {
                    content_length = rest.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0u8; content_length];
            reader.read_exact(&mut body).ok();
            // The request must be the chat wire shape.
            let value: serde_json::Value = serde_json::from_slice(&body).expect("json body");
            assert!(value.get("messages").and_then(|m| m.as_array()).is_some());

            let payload = serde_json::json!({ "content": reply }).to_string();
            let response = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                payload.len(),
                payload
            );
            stream.write_all(response.as_bytes()).ok();
        }
    });
    format!("http://{addr}")
}

#[test]
fn remote_policy_speaks_the_chat_wire_contract() {
    let env = TestEnv::new();
    let url = spawn_stub_policy_server(policy_messages("gradle-expert"));
    let mut policy = RemotePolicy::new(url);
    let outcome = run_episode_on(
        &env,
        GRADLE_FIXTURE_ID,
        "ep-remote",
        gradle_task("p-remote"),
        &mut policy,
        &EpisodeConfig::simplified(),
        None,
        None,
    );
    assert_eq!(outcome.trajectory.terminal_reason, TerminalReason::Success);
    assert_eq!(outcome.trajectory.reward, 1);
}

#[test]
fn unreachable_remote_policy_is_an_internal_error() {
    let env = TestEnv::new();
    let mut policy = RemotePolicy::new("http://127.0.0.1:9/unroutable");
    let outcome = run_episode_on(
        &env,
        GRADLE_FIXTURE_ID,
        "ep-unreachable",
        gradle_task("p-unreachable"),
        &mut policy,
        &EpisodeConfig::simplified(),
        None,
        None,
    );
    assert_eq!(
        outcome.trajectory.terminal_reason,
        TerminalReason::InternalError
    );
    assert_eq!(outcome.trajectory.reward, 0);
}

#[test]
fn skip_intermediate_builds_defers_to_a_final_build() {
    let env = TestEnv::new();
    let mut config = EpisodeConfig::simplified();
    config.skip_intermediate_builds = true;

    // The expert bumps the marker; the intermediate build is deferred, the
    // episode ends on script exhaustion, and the final build decides.
    let mut policy = ScriptedPolicy::new(policy_messages("gradle-expert"));
    let fixture = env.fixture(GRADLE_FIXTURE_ID);
    let workspace = env.workspace(GRADLE_FIXTURE_ID, "ep-skip");
    let tokenizer = WhitespacePunctTokenizer;
    let harness = EpisodeHarness {
        task: gradle_task("p-skip"),
        workspace: &workspace,
        fixture: &fixture,
        kb: Some(&env.kb),
        versions: &env.versions,
        semaphore: BuildSemaphore::new(2),
        tokenizer: &tokenizer,
        judge: None,
        build_sink: None,
        log_config: LogAnalyzerConfig::default(),
    };
    let trajectory = run_episode(&harness, &mut policy as &mut dyn Policy, &config);
    assert_eq!(trajectory.terminal_reason, TerminalReason::Success);
    assert_eq!(trajectory.reward, 1);
    let build_observation = trajectory
        .turns
        .iter()
        .filter_map(|t| t.tool_result.as_ref())
        .find(|r| r.tool_name == "validate_and_build")
        .expect("deferred observation");
    assert!(build_observation.content.contains("deferred"));
}
