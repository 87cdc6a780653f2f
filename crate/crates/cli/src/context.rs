//! Shared run wiring: knob resolution, environment loading, policy specs,
//! and output-directory bookkeeping.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use buildgym_core::episode::{EpisodeConfig, PolicySpec, SpecPolicyFactory};
use buildgym_core::fixtures::{
    FixtureRegistry, InitialBuildMeasurement, VersionRegistry, VERSION_REGISTRY_FILE,
};
use buildgym_core::pipeline_full::{JudgeConfig, LogAnalyzerConfig, PipelineConfig};
use buildgym_core::pipeline_simplified::RolloutBatchConfig;
use buildgym_core::tokenize::WhitespacePunctTokenizer;
use buildgym_core::tools::{KnowledgeBase, ToolLimits};

use crate::{CliError, KnobArgs, POLICY_TOKEN_ENV};

/// Sidecar file (next to the fixture directories) caching measured initial
/// build times.
pub const BUILD_TIMES_FILE: &str = "build_times.json";
/// Sidecar file freezing per-fixture source-tree checksums at init time.
pub const CHECKSUMS_FILE: &str = "checksums.json";

/// Config-file shape: same keys as the flags, all optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub max_tool_calls: Option<u32>,
    pub max_wall_time: Option<f64>,
    pub loop_cap: Option<u32>,
    pub retry_cap: Option<u32>,
    pub similarity_threshold: Option<f64>,
    pub max_concurrent_builds: Option<usize>,
    pub batch_size: Option<usize>,
    pub rollouts: Option<usize>,
    pub repeats: Option<u32>,
    pub build_time_filter: Option<f64>,
    pub tool_timeout: Option<f64>,
    pub build_timeout: Option<f64>,
    pub seed: Option<u64>,
    pub kb_top_k: Option<usize>,
    pub error_patterns: Option<Vec<String>>,
    pub assertion_patterns: Option<Vec<String>>,
    pub test_path_patterns: Option<Vec<String>>,
}

/// Flag values merged over the config file, with paper defaults underneath.
#[derive(Debug, Clone)]
pub struct Knobs {
    pub max_tool_calls: Option<u32>,
    pub max_wall_time: f64,
    pub loop_cap: u32,
    pub retry_cap: u32,
    pub similarity_threshold: f64,
    pub max_concurrent_builds: usize,
    pub batch_size: usize,
    pub rollouts: usize,
    pub repeats: u32,
    pub build_time_filter: Option<f64>,
    pub tool_limits: ToolLimits,
    pub seed: u64,
    pub kb_top_k: usize,
    pub log_config: LogAnalyzerConfig,
    pub judge_config: JudgeConfig,
}

impl Knobs {
    pub fn resolve(args: &KnobArgs) -> Result<Self, CliError> {
        let file: ConfigFile = match &args.config {
            Some(path) => {
                let bytes = fs::read(path).map_err(|e| {
                    CliError::config(format!("cannot read config file {}: {e}", path.display()))
                })?;
                serde_json::from_slice(&bytes).map_err(|e| {
                    CliError::config(format!("malformed config file {}: {e}", path.display()))
                })?
            }
            None => ConfigFile::default(),
        };

        let mut log_config = LogAnalyzerConfig::default();
        if let Some(patterns) = file.error_patterns.clone() {
            log_config.patterns = patterns;
        }
        let mut judge_config = JudgeConfig::default();
        if let Some(patterns) = file.assertion_patterns.clone() {
            judge_config.assertion_patterns = patterns;
        }
        if let Some(patterns) = file.test_path_patterns.clone() {
            judge_config.test_path_patterns = patterns;
        }

        let knobs = Self {
            max_tool_calls: args.max_tool_calls.or(file.max_tool_calls),
            max_wall_time: args.max_wall_time.or(file.max_wall_time).unwrap_or(4800.0),
            loop_cap: args.loop_cap.or(file.loop_cap).unwrap_or(100),
            retry_cap: args.retry_cap.or(file.retry_cap).unwrap_or(3),
            similarity_threshold: args
                .similarity_threshold
                .or(file.similarity_threshold)
                .unwrap_or(0.8),
            max_concurrent_builds: args
                .max_concurrent_builds
                .or(file.max_concurrent_builds)
                .unwrap_or(32),
            batch_size: args.batch_size.or(file.batch_size).unwrap_or(8),
            rollouts: args.rollouts.or(file.rollouts).unwrap_or(4),
            repeats: args.repeats.or(file.repeats).unwrap_or(5),
            build_time_filter: args.build_time_filter.or(file.build_time_filter),
            tool_limits: ToolLimits {
                tool_timeout_s: args.tool_timeout.or(file.tool_timeout).unwrap_or(3600.0),
                build_timeout_s: args.build_timeout.or(file.build_timeout).unwrap_or(3600.0),
            },
            seed: args.seed.or(file.seed).unwrap_or(0),
            kb_top_k: file.kb_top_k.unwrap_or(5),
            log_config,
            judge_config,
        };
        if knobs.similarity_threshold <= 0.0 || knobs.similarity_threshold > 1.0 {
            return Err(CliError::config("similarity threshold must be in (0, 1]"));
        }
        if knobs.batch_size == 0 || knobs.rollouts == 0 || knobs.max_concurrent_builds == 0 {
            return Err(CliError::config(
                "batch size, rollouts, and max concurrent builds must be at least 1",
            ));
        }
        Ok(knobs)
    }

    /// Episode config for the iterative pipeline (50-call cap by default).
    pub fn full_episode(&self) -> EpisodeConfig {
        let mut config = EpisodeConfig::full();
        if let Some(cap) = self.max_tool_calls {
            config.max_tool_calls = cap;
        }
        config.max_wall_time_s = self.max_wall_time;
        config.tool_limits = self.tool_limits;
        config
    }

    /// Episode config for the one-shot environment (30-call cap, judge off).
    pub fn simplified_episode(&self) -> EpisodeConfig {
        let mut config = EpisodeConfig::simplified();
        if let Some(cap) = self.max_tool_calls {
            config.max_tool_calls = cap;
        }
        config.max_wall_time_s = self.max_wall_time;
        config.tool_limits = self.tool_limits;
        config
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            loop_cap: self.loop_cap,
            retry_cap: self.retry_cap,
            similarity_threshold: self.similarity_threshold,
            kb_top_k: self.kb_top_k,
            log: self.log_config.clone(),
            judge: self.judge_config.clone(),
            episode: self.full_episode(),
        }
    }

    pub fn batch_config(&self) -> RolloutBatchConfig {
        RolloutBatchConfig {
            batch_size: self.batch_size,
            rollouts_per_problem: self.rollouts,
            max_concurrent_builds: self.max_concurrent_builds,
            seed: self.seed,
        }
    }
}

/// Parse `scripted:<path>` or `remote:<url>` into a policy spec.
pub fn parse_policy_spec(raw: &str, repeating: bool) -> Result<PolicySpec, CliError> {
    if let Some(path) = raw.strip_prefix("scripted:") {
        if !Path::new(path).is_file() {
            return Err(CliError::config(format!("policy script not found: {path}")));
        }
        return Ok(PolicySpec::Scripted {
            path: path.to_string(),
            repeating,
        });
    }
    if let Some(url) = raw.strip_prefix("remote:") {
        return Ok(PolicySpec::Remote {
            url: url.to_string(),
        });
    }
    Err(CliError::config(format!(
        "policy must be scripted:<path> or remote:<url>, got {raw:?}"
    )))
}

pub fn policy_factory(spec: PolicySpec) -> SpecPolicyFactory {
    SpecPolicyFactory::new(spec).with_bearer_token(std::env::var(POLICY_TOKEN_ENV).ok())
}

/// A loaded fixtures root: registry, version registry, and cached build
/// times if present.
pub struct FixtureWorld {
    pub root: PathBuf,
    pub registry: Arc<FixtureRegistry>,
    pub versions: Arc<VersionRegistry>,
}

impl FixtureWorld {
    pub fn load(fixtures_root: &Path, cache_dir: &Path) -> Result<Self, CliError> {
        if !fixtures_root.is_dir() {
            return Err(CliError::config(format!(
                "fixtures directory not found: {}",
                fixtures_root.display()
            )));
        }
        let fixtures_dir = fixtures_root.join("fixtures");
        let scan_root = if fixtures_dir.is_dir() {
            fixtures_dir
        } else {
            fixtures_root.to_path_buf()
        };
        let registry = FixtureRegistry::new(cache_dir);
        let registered = registry
            .register_all(&scan_root)
            .map_err(|e| CliError::config(format!("fixture registration failed: {e}")))?;
        if registered.is_empty() {
            return Err(CliError::config(format!(
                "no fixtures found under {}",
                scan_root.display()
            )));
        }
        let versions = VersionRegistry::load_dir(fixtures_root)
            .map_err(|e| CliError::config(format!("cannot load {VERSION_REGISTRY_FILE}: {e}")))?;
        let world = Self {
            root: fixtures_root.to_path_buf(),
            registry: Arc::new(registry),
            versions: Arc::new(versions),
        };
        world.load_measurements()?;
        Ok(world)
    }

    /// Merge `build_times.json` into the registry's measurement cache.
    pub fn load_measurements(&self) -> Result<(), CliError> {
        let path = self.root.join(BUILD_TIMES_FILE);
        if !path.is_file() {
            return Ok(());
        }
        let bytes = fs::read(&path)?;
        let map: BTreeMap<String, InitialBuildMeasurement> = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::config(format!("malformed {BUILD_TIMES_FILE}: {e}")))?;
        for (id, measurement) in map {
            self.registry.record_measurement(&id, measurement);
        }
        Ok(())
    }

    pub fn save_measurements(&self) -> Result<PathBuf, CliError> {
        let path = self.root.join(BUILD_TIMES_FILE);
        let mut text = serde_json::to_string_pretty(&self.registry.measurements())
            .map_err(|e| CliError::io(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

pub fn load_kb(path: &Path) -> Result<Arc<KnowledgeBase>, CliError> {
    if !path.is_file() {
        return Err(CliError::config(format!(
            "knowledge base not found: {}",
            path.display()
        )));
    }
    KnowledgeBase::load_jsonl(path)
        .map(Arc::new)
        .map_err(|e| CliError::config(format!("cannot load knowledge base: {e}")))
}

pub fn tokenizer() -> Arc<WhitespacePunctTokenizer> {
    Arc::new(WhitespacePunctTokenizer)
}

/// Output-directory bookkeeping: collects the produced files and writes a
/// manifest listing them.
pub struct OutDir {
    root: PathBuf,
    produced: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            produced: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// A working area for workspaces and caches; never listed in the
    /// manifest.
    pub fn work_dir(&self) -> Result<PathBuf, CliError> {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        let dir = self.root.join("work").join(format!("run-{nanos}"));
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    pub fn write(&mut self, rel: &str, content: &str) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, content)?;
        self.produced.push(rel.to_string());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| CliError::io(e.to_string()))?;
        text.push('\n');
        self.write(rel, &text)
    }

    /// Write `manifest.json` naming the command, the seed, and every file the
    /// run produced.
    pub fn finish(mut self, command: &str, seed: u64) -> Result<(), CliError> {
        self.produced.sort();
        let manifest = serde_json::json!({
            "command": command,
            "seed": seed,
            "outputs": self.produced,
        });
        let mut text =
            serde_json::to_string_pretty(&manifest).map_err(|e| CliError::io(e.to_string()))?;
        text.push('\n');
        fs::write(self.root.join("manifest.json"), text)?;
        Ok(())
    }
}
