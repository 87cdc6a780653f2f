//! Shared setup for integration tests: a sample corpus in a temp directory
//! with a registry, workspace manager, version registry, and knowledge base.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use buildgym_core::episode::{
    run_episode, EpisodeConfig, EpisodeHarness, EpisodeTask, Policy, Trajectory,
};
use buildgym_core::fixtures::{
    samples, ErrorSpec, FixtureConfig, FixtureRegistry, RepoFixture, VersionRegistry, Workspace,
    WorkspaceManager, FIXTURE_CONFIG_FILE, PRODUCT_SPEC_FILE,
};
use buildgym_core::pipeline_full::{Judge, LogAnalyzerConfig};
use buildgym_core::pipeline_simplified::BatchEnv;
use buildgym_core::tokenize::WhitespacePunctTokenizer;
use buildgym_core::tools::{BuildSemaphore, KnowledgeBase};

pub struct TestEnv {
    pub tmp: tempfile::TempDir,
    pub corpus: PathBuf,
    pub registry: Arc<FixtureRegistry>,
    pub manager: Arc<WorkspaceManager>,
    pub versions: Arc<VersionRegistry>,
    pub kb: Arc<KnowledgeBase>,
}

impl TestEnv {
    pub fn new() -> Self {
        let tmp = tempfile::tempdir().expect("tempdir");
        let corpus = tmp.path().join("corpus");
        samples::write_sample_corpus(&corpus).expect("write corpus");

        let registry = Arc::new(FixtureRegistry::new(tmp.path().join("cache")));
        registry
            .register_all(&corpus.join("fixtures"))
            .expect("register fixtures");
        let manager = Arc::new(WorkspaceManager::new(tmp.path().join("work")));
        let versions =
            Arc::new(VersionRegistry::load(&corpus.join("registry.json")).expect("registry.json"));
        let kb = Arc::new(KnowledgeBase::load_jsonl(&corpus.join("kb.jsonl")).expect("kb.jsonl"));
        Self {
            tmp,
            corpus,
            registry,
            manager,
            versions,
            kb,
        }
    }

    pub fn fixture(&self, id: &str) -> Arc<RepoFixture> {
        self.registry.get(id).expect("registered fixture")
    }

    pub fn workspace(&self, fixture_id: &str, rollout_id: &str) -> Workspace {
        self.manager
            .materialize(&self.fixture(fixture_id), rollout_id)
            .expect("materialize")
    }

    pub fn batch_env(&self) -> BatchEnv {
        let mut env = BatchEnv::new(
            Arc::clone(&self.registry),
            Arc::clone(&self.manager),
            Arc::clone(&self.versions),
            Arc::new(WhitespacePunctTokenizer),
        );
        env.kb = Some(Arc::clone(&self.kb));
        env
    }

    /// Register an extra fixture with the given build script (and optional
    /// extra files) under a fresh directory.
    pub fn add_fixture(
        &self,
        id: &str,
        build_script: &str,
        extra: &[(&str, &str)],
    ) -> Arc<RepoFixture> {
        let dir = self.tmp.path().join("extra").join(id);
        fs::create_dir_all(&dir).expect("fixture dir");
        let config = FixtureConfig {
            id: id.to_string(),
            build_command: "sh build.sh".to_string(),
            injected_errors: vec![ErrorSpec {
                error_text: format!("error: synthetic failure in {id}"),
                category_hint: None,
                files: vec!["build.sh".to_string()],
            }],
            pinned_dependencies: BTreeMap::from([("acme-core".to_string(), "1.2.3".to_string())]),
            auto_upgrade_disabled: true,
            gradle_current_version: None,
            validation_scripts: Vec::new(),
        };
        fs::write(
            dir.join(FIXTURE_CONFIG_FILE),
            serde_json::to_string_pretty(&config).unwrap(),
        )
        .unwrap();
        fs::write(
            dir.join(PRODUCT_SPEC_FILE),
            "{\n  \"dependencies\": [\n    {\n      \"name\": \"acme-core\",\n      \"version\": \"1.2.3\"\n    }\n  ]\n}\n",
        )
        .unwrap();
        fs::write(dir.join("build.sh"), build_script).unwrap();
        for (rel, content) in extra {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).unwrap();
            }
            fs::write(path, content).unwrap();
        }
        self.registry
            .register_dir(&dir)
            .expect("register extra fixture")
    }
}

/// Messages of a named sample policy.
pub fn policy_messages(name: &str) -> Vec<String> {
    samples::sample_policies()
        .into_iter()
        .find(|(n, _)| n == name)
        .map(|(_, messages)| messages)
        .unwrap_or_else(|| panic!("no sample policy named {name}"))
}

pub struct EpisodeOutcome {
    pub trajectory: Trajectory,
    pub workspace: Workspace,
}

/// Materialize a workspace for the fixture and run one episode on it.
#[allow(clippy::too_many_arguments)]
pub fn run_episode_on(
    env: &TestEnv,
    fixture_id: &str,
    rollout_id: &str,
    task: EpisodeTask,
    policy: &mut dyn Policy,
    config: &EpisodeConfig,
    judge: Option<&dyn Judge>,
    semaphore: Option<Arc<BuildSemaphore>>,
) -> EpisodeOutcome {
    let fixture = env.fixture(fixture_id);
    let workspace = env.workspace(fixture_id, rollout_id);
    let tokenizer = WhitespacePunctTokenizer;
    let harness = EpisodeHarness {
        task,
        workspace: &workspace,
        fixture: &fixture,
        kb: Some(&env.kb),
        versions: &env.versions,
        semaphore: semaphore.unwrap_or_else(|| BuildSemaphore::new(4)),
        tokenizer: &tokenizer,
        judge,
        build_sink: None,
        log_config: LogAnalyzerConfig::default(),
    };
    let trajectory = run_episode(&harness, policy, config);
    EpisodeOutcome {
        trajectory,
        workspace,
    }
}

/// Episode task for a sample problem id, defaulting to the gradle problem's
/// inputs for ad-hoc fixtures.
pub fn task_for(fixture_id: &str, problem_id: &str) -> EpisodeTask {
    EpisodeTask {
        problem_id: problem_id.to_string(),
        repo_name: fixture_id.to_string(),
        error_text: format!("error: synthetic failure in {fixture_id}"),
        fix_text: "Apply the recommended repair sequence.".to_string(),
    }
}

/// Run a shell command in a directory and return (exit code, stdout+stderr).
/// Used as an independent oracle next to the environment's own build runner.
pub fn shell(dir: &Path, cmd: &str) -> (i32, String) {
    let output = std::process::Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .current_dir(dir)
        .output()
        .expect("spawn sh");
    let mut text = String::from_utf8_lossy(&output.stdout).into_owned();
    text.push_str(&String::from_utf8_lossy(&output.stderr));
    (output.status.code().unwrap_or(-1), text)
}
