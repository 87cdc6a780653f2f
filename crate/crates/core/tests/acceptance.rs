//! Acceptance suite: one test per criterion, each printing a pass line.
//!
//! Run with `cargo test -p buildgym-core --test acceptance -- --nocapture`
//! to see the per-criterion lines.

mod common;

use std::sync::Arc;
use std::time::Instant;

use buildgym_core::analysis::{categorize_error, transition_matrix, ErrorCategory};
use buildgym_core::digest::{copy_tree, tree_digest};
use buildgym_core::episode::{
    EpisodeConfig, EpisodeTask, PolicySpec, RewardMode, Role, ScriptedPolicy, SpecPolicyFactory,
    TerminalReason, TokenCounts, Trajectory, Turn,
};
use buildgym_core::fixtures::samples::{
    BRITTLE_FIXTURE_ID, GRADLE_DEPRECATION_ERROR, GRADLE_FIXTURE_ID, GRADLE_FIX_TEXT,
    SLEEPER_FIXTURE_ID,
};
use buildgym_core::fixtures::{apply_patch, extract_patch};
use buildgym_core::pipeline_full::{
    run_full_pipeline, AuditKind, HeuristicJudge, JudgeConfig, PipelineConfig, PipelineDeps,
    PipelineStatus,
};
use buildgym_core::pipeline_simplified::{
    evaluate, run_batch, run_rate_stats, Problem, RolloutBatchConfig, Split,
};
use buildgym_core::protocol::{
    parse_assistant, render_tool_result, serialize_assistant, serialize_tool_call, validate_call,
    ToolCall, ToolResult, ToolStatus, TOOL_NAMES,
};
use buildgym_core::tokenize::WhitespacePunctTokenizer;
use buildgym_core::tools::{BuildSemaphore, ToolLimits};

use common::{policy_messages, run_episode_on, TestEnv};

fn pass(number: u32, name: &str) {
    println!("acceptance {number} ({name}): PASS");
}

// ── 1. Protocol fidelity ───────────────────────────────────────────────────

struct Xorshift(u64);

impl Xorshift {
    fn next(&mut self) -> u64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        self.0
    }

    fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[(self.next() % items.len() as u64) as usize]
    }
}

const WORDS: [&str; 16] = [
    "build", "marker", "version", "module", "retry", "inspect", "upgrade", "resolve", "artifact",
    "pipeline", "stale", "cache", "vendor", "branch", "signal", "sweep",
];

fn random_message(rng: &mut Xorshift) -> String {
    let mut raw = String::new();
    if rng.next().is_multiple_of(2) {
        let words: Vec<&str> = (0..1 + rng.next() % 6).map(|_| *rng.pick(&WORDS)).collect();
        raw.push_str(&format!("<think>{}</think>\n", words.join(" ")));
    }
    let prose: Vec<&str> = (0..rng.next() % 8).map(|_| *rng.pick(&WORDS)).collect();
    raw.push_str(&prose.join(" "));
    for _ in 0..rng.next() % 4 {
        let mut call = ToolCall::new(rng.pick(&TOOL_NAMES));
        for _ in 0..rng.next() % 3 {
            let key = *rng.pick(&WORDS);
            match rng.next() % 3 {
                0 => call
                    .arguments
                    .insert(key.into(), serde_json::json!(*rng.pick(&WORDS))),
                1 => call
                    .arguments
                    .insert(key.into(), serde_json::json!(rng.next() % 1000)),
                _ => call
                    .arguments
                    .insert(key.into(), serde_json::json!(rng.next().is_multiple_of(2))),
            };
        }
        raw.push('\n');
        raw.push_str(&serialize_tool_call(&call));
    }
    raw
}

#[test]
fn acceptance_01_protocol_fidelity() {
    let started = Instant::now();
    let mut rng = Xorshift(0x5EED_5EED_5EED_5EED);
    for index in 0..1000 {
        let raw = random_message(&mut rng);
        let canonical = serialize_assistant(&parse_assistant(&raw));
        let reparsed = parse_assistant(&canonical);
        assert_eq!(
            serialize_assistant(&reparsed),
            canonical,
            "round-trip fixpoint failed for generated message {index}: {raw:?}"
        );
        assert_eq!(reparsed, parse_assistant(&serialize_assistant(&reparsed)));
    }

    let raw = r#"<tool_call>{"name": "upgrade_gradle", "arguments": {}}</tool_call>"#;
    let msg = parse_assistant(raw);
    assert_eq!(msg.tool_calls.len(), 1);
    assert_eq!(msg.tool_calls[0].name, "upgrade_gradle");
    validate_call(&msg.tool_calls[0]).expect("the canonical example validates");

    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        elapsed < 5.0,
        "protocol fidelity took {elapsed:.2}s, budget is 5s"
    );
    pass(1, "protocol fidelity");
}

// ── 2. Termination exactness ───────────────────────────────────────────────

#[test]
fn acceptance_02_termination_exactness() {
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
            &format!("acc2-cap{expected}"),
            EpisodeTask {
                problem_id: format!("acc2-{expected}"),
                repo_name: GRADLE_FIXTURE_ID.into(),
                error_text: GRADLE_DEPRECATION_ERROR.into(),
                fix_text: GRADLE_FIX_TEXT.into(),
            },
            &mut policy,
            &config,
            None,
            None,
        );
        assert_eq!(outcome.trajectory.terminal_reason, TerminalReason::ToolCap);
        assert_eq!(
            outcome.trajectory.tool_call_count, expected,
            "expected exactly {expected} tool calls"
        );
    }

    env.add_fixture("acc2-slow", "sleep 60\necho BUILD SUCCESSFUL\n", &[]);
    let mut config = EpisodeConfig::simplified();
    config.max_wall_time_s = 5.0;
    const BUILD_KILL_GRACE_S: f64 = 2.0;
    let started = Instant::now();
    let mut policy = ScriptedPolicy::new(vec![serialize_tool_call(&ToolCall::new(
        "validate_and_build",
    ))]);
    let outcome = run_episode_on(
        &env,
        "acc2-slow",
        "acc2-wall",
        common::task_for("acc2-slow", "acc2-wall"),
        &mut policy,
        &config,
        None,
        None,
    );
    let elapsed = started.elapsed().as_secs_f64();
    assert_eq!(outcome.trajectory.terminal_reason, TerminalReason::TimeCap);
    assert!(
        elapsed <= 5.0 + BUILD_KILL_GRACE_S,
        "time cap took {elapsed:.2}s, budget is 5s + {BUILD_KILL_GRACE_S}s grace"
    );
    pass(2, "termination exactness");
}

// ── 3. Reward soundness ────────────────────────────────────────────────────

#[test]
fn acceptance_03_reward_soundness() {
    let env = TestEnv::new();
    let task = EpisodeTask {
        problem_id: "acc3".into(),
        repo_name: GRADLE_FIXTURE_ID.into(),
        error_text: GRADLE_DEPRECATION_ERROR.into(),
        fix_text: GRADLE_FIX_TEXT.into(),
    };

    let mut expert = ScriptedPolicy::new(policy_messages("gradle-expert"));
    let outcome = run_episode_on(
        &env,
        GRADLE_FIXTURE_ID,
        "acc3-expert",
        task.clone(),
        &mut expert,
        &EpisodeConfig::simplified(),
        None,
        None,
    );
    assert_eq!(outcome.trajectory.reward, 1);
    assert_eq!(outcome.trajectory.terminal_reason, TerminalReason::Success);
    // Independent confirmation: rerun the build command on the final
    // workspace outside the environment's own runner.
    let (code, log) = common::shell(outcome.workspace.root(), "sh build.sh");
    assert_eq!(code, 0, "independent rebuild disagreed:\n{log}");

    let mut idle = ScriptedPolicy::new(policy_messages("noop"));
    let outcome = run_episode_on(
        &env,
        GRADLE_FIXTURE_ID,
        "acc3-idle",
        task,
        &mut idle,
        &EpisodeConfig::simplified(),
        None,
        None,
    );
    assert_eq!(outcome.trajectory.reward, 0);
    pass(3, "reward soundness");
}

// ── 4. Retry and loop caps ─────────────────────────────────────────────────

#[test]
fn acceptance_04_retry_and_loop_caps() {
    let env = TestEnv::new();
    let tokenizer = WhitespacePunctTokenizer;
    let deps = PipelineDeps {
        manager: &env.manager,
        kb: &env.kb,
        versions: &env.versions,
        semaphore: BuildSemaphore::new(4),
        tokenizer: &tokenizer,
        build_sink: None,
    };

    // Identical failure every cycle: exactly three attempts on the signature.
    let factory = SpecPolicyFactory::new(PolicySpec::ScriptedInline {
        messages: vec![serialize_tool_call(
            &ToolCall::new("write_file")
                .with_arg("file_path", "product-spec.json")
                .with_arg("updated_contents", "{\n  \"dependencies\": []\n}\n"),
        )],
        repeating: false,
    });
    let result = run_full_pipeline(
        &env.fixture("always-fails"),
        &factory,
        &deps,
        &PipelineConfig::default(),
        "acc4-retries",
    )
    .unwrap();
    assert_eq!(result.status, PipelineStatus::Failure);
    assert_eq!(result.attempts_audit.len(), 1);
    assert_eq!(*result.attempts_audit.values().next().unwrap(), 3);
    let retries = result
        .audit
        .iter()
        .filter(|e| e.kind == AuditKind::SimilarErrorRetry)
        .count();
    assert_eq!(retries, 3, "audit must show exactly three retry events");

    // A fresh, distinct error every cycle: hard stop at loop iteration 100.
    let survey = SpecPolicyFactory::new(PolicySpec::ScriptedInline {
        messages: vec!["Surveying before acting.".to_string()],
        repeating: false,
    });
    let result = run_full_pipeline(
        &env.fixture("fresh-error"),
        &survey,
        &deps,
        &PipelineConfig::default(),
        "acc4-loopcap",
    )
    .unwrap();
    assert_eq!(result.status, PipelineStatus::Failure);
    assert_eq!(
        result.iterations, 100,
        "loop must stop at exactly 100 iterations"
    );
    assert!(result
        .audit
        .iter()
        .any(|e| e.kind == AuditKind::LoopCapReached));
    assert!(result
        .attempts_audit
        .values()
        .all(|attempts| *attempts <= 3));
    pass(4, "retry and loop caps");
}

// ── 5. Concurrency bound ───────────────────────────────────────────────────

#[test]
fn acceptance_05_concurrency_bound() {
    let started = Instant::now();
    let env = TestEnv::new();
    let factory = SpecPolicyFactory::new(PolicySpec::ScriptedInline {
        messages: vec![serialize_tool_call(&ToolCall::new("validate_and_build"))],
        repeating: false,
    });
    let problems: Vec<Problem> = (0..50)
        .map(|index| Problem {
            id: format!("acc5-{index:03}"),
            fixture_id: SLEEPER_FIXTURE_ID.to_string(),
            error_text: format!("error: build latency budget exceeded (case {index})"),
            candidate_fix: "Rerun validate_and_build.".to_string(),
            created_at: index as i64,
            split: Split::Test,
        })
        .collect();

    for bound in [2usize, 8, 32] {
        let semaphore = BuildSemaphore::new(bound);
        let mut batch_env = env.batch_env();
        batch_env.semaphore = Some(Arc::clone(&semaphore));
        // 50 problems x 4 rollouts = 200 episodes, all concurrent per batch.
        let batch = RolloutBatchConfig {
            batch_size: 50,
            rollouts_per_problem: 4,
            max_concurrent_builds: bound,
            seed: 5,
        };
        let trajectories = run_batch(
            &problems,
            &factory,
            &batch_env,
            &batch,
            &EpisodeConfig::simplified(),
        );
        assert_eq!(trajectories.len(), 200);
        assert!(
            semaphore.max_observed() <= bound,
            "bound {bound} exceeded: observed {}",
            semaphore.max_observed()
        );
        assert_eq!(
            semaphore.max_observed(),
            bound,
            "bound {bound} never reached; the sample should saturate it"
        );
        assert_eq!(semaphore.total_acquired(), 200);
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        elapsed < 120.0,
        "concurrency check took {elapsed:.1}s, budget is 2 minutes"
    );
    pass(5, "concurrency bound");
}

// ── 6. Timeout signal ──────────────────────────────────────────────────────

#[test]
fn acceptance_06_timeout_signal() {
    let env = TestEnv::new();
    let mut config = EpisodeConfig::simplified();
    config.tool_limits = ToolLimits {
        tool_timeout_s: 1.0,
        build_timeout_s: 3600.0,
    };
    let mut policy = ScriptedPolicy::new(vec![
        serialize_tool_call(&ToolCall::new("run_sh").with_arg("cmd", "sleep 10")),
        serialize_tool_call(&ToolCall::new("read_file").with_arg("file_path", "gradle-version")),
    ]);
    let outcome = run_episode_on(
        &env,
        GRADLE_FIXTURE_ID,
        "acc6",
        EpisodeTask {
            problem_id: "acc6".into(),
            repo_name: GRADLE_FIXTURE_ID.into(),
            error_text: GRADLE_DEPRECATION_ERROR.into(),
            fix_text: GRADLE_FIX_TEXT.into(),
        },
        &mut policy,
        &config,
        None,
        None,
    );

    let results: Vec<&ToolResult> = outcome
        .trajectory
        .turns
        .iter()
        .filter_map(|t| t.tool_result.as_ref())
        .collect();
    assert_eq!(
        results[0].status,
        ToolStatus::Tooltimeout,
        "first result must be tooltimeout"
    );
    assert!(render_tool_result(results[0]).contains("tooltimeout"));
    assert_eq!(
        results[1].status,
        ToolStatus::Ok,
        "episode must continue to the next step"
    );
    pass(6, "timeout signal");
}

// ── 7. Categorizer oracle equivalence ──────────────────────────────────────

/// Independent re-implementation of the keyword table, structured as chained
/// guards rather than a data table.
fn oracle_categorize(text: &str) -> ErrorCategory {
    let t = text.to_lowercase();
    let any = |kws: &[&str]| kws.iter().any(|k| t.contains(k));
    if any(&["dependency", "dependencies"]) {
        return ErrorCategory::DependencyRelated;
    }
    if any(&[
        "gradle",
        "maven",
        "build tool",
        "build failed",
        "compilation failed",
    ]) {
        return ErrorCategory::BuildTool;
    }
    if any(&[
        "test",
        "unit test",
        "integration test",
        "test case",
        "test failure",
    ]) {
        return ErrorCategory::Test;
    }
    if any(&[
        "configuration",
        "config",
        "schema",
        "avsc",
        "yaml",
        "yml",
        "json",
        "xml",
    ]) {
        return ErrorCategory::Configuration;
    }
    if any(&["install", "yarn", "npm", "pip", "package manager"]) {
        return ErrorCategory::Installation;
    }
    if any(&["version", "compatibility", "incompatible", "mismatch"]) {
        return ErrorCategory::Version;
    }
    if any(&[
        "path",
        "environment",
        "variable",
        "not found",
        "cannot locate",
        "missing",
    ]) {
        return ErrorCategory::Environment;
    }
    if any(&["permission", "access", "denied", "forbidden"]) {
        return ErrorCategory::Permission;
    }
    ErrorCategory::Other
}

#[test]
fn acceptance_07_categorizer_oracle_equivalence() {
    let started = Instant::now();
    let mut corpus: Vec<String> = Vec::new();

    // Single-keyword strings per category, in assorted casings and contexts.
    let keyword_samples = [
        "dependency",
        "dependencies",
        "gradle",
        "maven",
        "build tool",
        "build failed",
        "compilation failed",
        "test",
        "unit test",
        "integration test",
        "test case",
        "test failure",
        "configuration",
        "config",
        "schema",
        "avsc",
        "yaml",
        "yml",
        "json",
        "xml",
        "install",
        "yarn",
        "npm",
        "pip",
        "package manager",
        "version",
        "compatibility",
        "incompatible",
        "mismatch",
        "path",
        "environment",
        "variable",
        "not found",
        "cannot locate",
        "missing",
        "permission",
        "access",
        "denied",
        "forbidden",
    ];
    for keyword in keyword_samples {
        corpus.push(format!("error: {keyword} detected in stage"));
        corpus.push(format!(
            "ERROR {} BLOCKED THE RELEASE",
            keyword.to_uppercase()
        ));
        corpus.push(format!("warning about the {keyword} subsystem"));
    }
    // Precedence pairs: a later-category keyword occurring before an
    // earlier-category one.
    corpus.push("gradle test failure in dependency resolution".to_string());
    corpus.push("version mismatch caused a test regression".to_string());
    corpus.push("path issue while running npm install".to_string());
    corpus.push("json schema rejected the unit test".to_string());
    corpus.push("access denied while upgrading dependencies".to_string());
    // Substring artifacts and no-keyword strings.
    corpus.push("use the latest snapshot".to_string());
    corpus.push("".to_string());
    corpus.push("everything is wonderful".to_string());
    corpus.push("frobnication exploded".to_string());
    let mut rng = Xorshift(0xACCE_5507);
    while corpus.len() < 200 {
        let words: Vec<&str> = (0..3 + rng.next() % 5).map(|_| *rng.pick(&WORDS)).collect();
        corpus.push(words.join(" "));
    }
    corpus.truncate(200);

    assert_eq!(
        categorize_error("gradle test failure in dependency resolution"),
        ErrorCategory::DependencyRelated
    );
    for (index, text) in corpus.iter().enumerate() {
        assert_eq!(
            categorize_error(text),
            oracle_categorize(text),
            "disagreement on corpus string {index}: {text:?}"
        );
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        elapsed < 1.0,
        "categorizer check took {elapsed:.3}s, budget is 1s"
    );
    pass(7, "categorizer oracle equivalence");
}

// ── 8. Transition-matrix correctness ──────────────────────────────────────

fn tool_trajectory(id: &str, tools: &[&str]) -> Trajectory {
    let turns: Vec<Turn> = tools
        .iter()
        .map(|name| {
            let result = ToolResult::ok(name, "x");
            Turn {
                role: Role::Tool,
                raw: render_tool_result(&result),
                tool_calls: Vec::new(),
                tool_result: Some(result),
                tokens: TokenCounts::default(),
            }
        })
        .collect();
    Trajectory {
        problem_id: id.to_string(),
        turns,
        terminal_reason: TerminalReason::PolicyStop,
        reward: 0,
        wall_time_s: 0.0,
        tool_call_count: tools.len() as u32,
        final_patch: None,
    }
}

#[test]
fn acceptance_08_transition_matrix_correctness() {
    // Hand-computed two-trajectory example: find_files is followed once by
    // read_file and once by write_file, so each branch is exactly 0.5.
    let trajectories = vec![
        tool_trajectory("a", &["find_files", "read_file"]),
        tool_trajectory("b", &["find_files", "write_file"]),
    ];
    let matrix = transition_matrix(&trajectories).unwrap();
    assert_eq!(matrix.probabilities["find_files"]["read_file"], 0.5);
    assert_eq!(matrix.probabilities["find_files"]["write_file"], 0.5);
    // Transitions never cross trajectory boundaries: the trailing tools have
    // no outgoing row at all (absent, not zero-filled).
    assert!(!matrix.probabilities.contains_key("read_file"));
    assert!(!matrix.probabilities.contains_key("write_file"));

    for (from, row) in &matrix.probabilities {
        let sum: f64 = row.values().sum();
        assert!((sum - 1.0).abs() <= 1e-9, "row {from} sums to {sum}");
    }
    let usage_sum: f64 = matrix.usage.values().sum();
    assert!((usage_sum - 1.0).abs() <= 1e-9, "usage sums to {usage_sum}");

    // A denser sample keeps rows stochastic too.
    let dense = vec![
        tool_trajectory(
            "c",
            &[
                "find_files",
                "read_file",
                "write_file",
                "validate_and_build",
            ],
        ),
        tool_trajectory("d", &["read_file", "read_file", "validate_and_build"]),
        tool_trajectory("e", &["ask_for_help"]),
    ];
    let matrix = transition_matrix(&dense).unwrap();
    for (from, row) in &matrix.probabilities {
        let sum: f64 = row.values().sum();
        assert!((sum - 1.0).abs() <= 1e-9, "row {from} sums to {sum}");
    }
    let usage_sum: f64 = matrix.usage.values().sum();
    assert!((usage_sum - 1.0).abs() <= 1e-9);
    pass(8, "transition-matrix correctness");
}

// ── 9. Judge anti-hacking guard ────────────────────────────────────────────

#[test]
fn acceptance_09_judge_anti_hacking_guard() {
    let env = TestEnv::new();
    let judge = HeuristicJudge::new(JudgeConfig::default())
        .with_validation_scripts(vec!["tests/validate.sh".to_string()]);
    let task = EpisodeTask {
        problem_id: "acc9".into(),
        repo_name: BRITTLE_FIXTURE_ID.into(),
        error_text: "error: release validation test FAILED".into(),
        fix_text: "Inspect tests/validate.sh and repair the failing release gate.".into(),
    };

    // The scripted trajectory deletes a test file and then passes the build.
    let mut judged_config = EpisodeConfig::simplified();
    judged_config.reward_mode = RewardMode::BuildAndJudge;
    let mut hacker = ScriptedPolicy::new(policy_messages("hacker"));
    let judged = run_episode_on(
        &env,
        BRITTLE_FIXTURE_ID,
        "acc9-judged",
        task.clone(),
        &mut hacker,
        &judged_config,
        Some(&judge),
        None,
    );
    assert_eq!(
        judged.trajectory.reward, 0,
        "judged mode must reject the deletion"
    );

    let mut hacker = ScriptedPolicy::new(policy_messages("hacker"));
    let unjudged = run_episode_on(
        &env,
        BRITTLE_FIXTURE_ID,
        "acc9-free",
        task,
        &mut hacker,
        &EpisodeConfig::simplified(),
        None,
        None,
    );
    assert_eq!(
        unjudged.trajectory.reward, 1,
        "build-only mode rewards the green build"
    );
    pass(9, "judge anti-hacking guard");
}

// ── 10. Reproducibility ────────────────────────────────────────────────────

#[test]
fn acceptance_10_reproducibility() {
    let env = TestEnv::new();

    // Two evaluate runs with the same seed: byte-identical reports.
    let problems: Vec<Problem> = buildgym_core::fixtures::samples::sample_problems()
        .into_iter()
        .filter(|p| p.split == Split::Test)
        .collect();
    let factory = SpecPolicyFactory::new(PolicySpec::ScriptedInline {
        messages: policy_messages("gradle-expert"),
        repeating: false,
    });
    let batch = RolloutBatchConfig {
        seed: 11,
        ..RolloutBatchConfig::default()
    };
    let report_a = evaluate(
        &problems,
        &factory,
        &env.batch_env(),
        &batch,
        &EpisodeConfig::simplified(),
        5,
    );
    let report_b = evaluate(
        &problems,
        &factory,
        &env.batch_env(),
        &batch,
        &EpisodeConfig::simplified(),
        5,
    );
    assert_eq!(
        serde_json::to_vec(&report_a).unwrap(),
        serde_json::to_vec(&report_b).unwrap(),
        "identical seeds must give byte-identical reports"
    );

    // Two materializations: digest-identical.
    let a = env.workspace(GRADLE_FIXTURE_ID, "acc10-a");
    let b = env.workspace(GRADLE_FIXTURE_ID, "acc10-b");
    assert_eq!(a.tree_digest().unwrap(), b.tree_digest().unwrap());

    // Patch round-trip over 100 randomized edit sequences.
    let mut rng = Xorshift(0x10_10_10_10);
    let pristine = tempfile::tempdir().unwrap();
    for index in 0..4 {
        let path = pristine.path().join(format!("f{index}.txt"));
        std::fs::write(path, format!("seed file {index}\nline two\nline three\n")).unwrap();
    }
    for sequence in 0..100 {
        let workspace = tempfile::tempdir().unwrap();
        copy_tree(pristine.path(), workspace.path()).unwrap();
        for _ in 0..1 + rng.next() % 6 {
            let files = buildgym_core::digest::walk_files(workspace.path()).unwrap();
            match rng.next() % 3 {
                0 if !files.is_empty() => {
                    let rel = &files[(rng.next() % files.len() as u64) as usize];
                    let mut lines = Vec::new();
                    for _ in 0..rng.next() % 5 {
                        lines.push(*rng.pick(&WORDS));
                    }
                    let mut content = lines.join("\n");
                    if rng.next().is_multiple_of(2) {
                        content.push('\n');
                    }
                    std::fs::write(workspace.path().join(rel), content).unwrap();
                }
                1 => {
                    let name = format!("new-{}-{}.txt", sequence, rng.next() % 100);
                    std::fs::write(
                        workspace.path().join(name),
                        format!("{}\n", rng.pick(&WORDS)),
                    )
                    .unwrap();
                }
                _ if !files.is_empty() => {
                    let rel = &files[(rng.next() % files.len() as u64) as usize];
                    std::fs::remove_file(workspace.path().join(rel)).unwrap();
                }
                _ => {}
            }
        }
        let base = tree_digest(pristine.path()).unwrap();
        let patch = extract_patch(pristine.path(), workspace.path(), &base).unwrap();
        let fresh = tempfile::tempdir().unwrap();
        copy_tree(pristine.path(), fresh.path()).unwrap();
        apply_patch(&patch, fresh.path()).unwrap();
        assert_eq!(
            tree_digest(fresh.path()).unwrap(),
            tree_digest(workspace.path()).unwrap(),
            "round-trip failed on sequence {sequence}"
        );
    }
    pass(10, "reproducibility");
}

// ── 11. Evaluation statistics ──────────────────────────────────────────────

#[test]
fn acceptance_11_evaluation_statistics() {
    let runs = [0.0, 0.0, 0.0, 0.0, 1.0];
    let (mean, half_width) = run_rate_stats(&runs);
    let hand_mean = 0.2;
    let hand_half_width = 1.96 * 0.447_213_595_499_957_9 / 5f64.sqrt();
    assert!(
        (mean - hand_mean).abs() < 1e-6,
        "mean {mean} != {hand_mean}"
    );
    assert!(
        (half_width - hand_half_width).abs() < 1e-6,
        "half-width {half_width} != {hand_half_width}"
    );

    let report = buildgym_core::pipeline_simplified::EvalReport::from_run_rates(
        runs.to_vec(),
        Default::default(),
        0,
        RolloutBatchConfig::default(),
        EpisodeConfig::simplified(),
    );
    assert!((report.mean - 0.2).abs() < 1e-6);
    assert!((report.ci95_half_width - hand_half_width).abs() < 1e-6);
    assert_eq!(report.repeats, 5);
    pass(11, "evaluation statistics");
}
