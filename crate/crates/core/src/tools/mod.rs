//! The ten tool behaviors executed against a workspace, including the build
//! runner with timeout supervision and the knowledge-base lookup.
//!
//! Tool execution never raises: every failure is encoded in the returned
//! [`ToolResult`] status and content. Process-backed tools (`run_sh`,
//! `validate_and_build`) are wall-clock bounded; when the supervisor kills
//! one, the result status is `tooltimeout`.

mod kb;
mod process;
mod semaphore;

pub use kb::{kb_lookup, KbEntry, KbError, KnowledgeBase};
pub use process::{run_shell_with_timeout, ProcessOutcome};
pub use semaphore::{BuildPermit, BuildSemaphore};

use std::fs;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::fixtures::{
    RepoFixture, VersionRegistry, Workspace, GRADLE_VERSION_FILE, PRODUCT_SPEC_FILE,
};
use crate::pipeline_full::{analyze_log, ErrorSignature, LogAnalyzerConfig};
use crate::protocol::{ToolResult, ValidatedCall};

/// Longest log tail included in a rendered build observation.
const BUILD_LOG_TAIL_CHARS: usize = 4_000;

/// Wall-clock budgets for tool execution, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolLimits {
    /// Budget for any single tool process; exceeding it emits `tooltimeout`.
    pub tool_timeout_s: f64,
    /// Budget for one build invocation; exceeding it is a build timeout.
    pub build_timeout_s: f64,
}

impl Default for ToolLimits {
    fn default() -> Self {
        // One hour each.
        Self {
            tool_timeout_s: 3600.0,
            build_timeout_s: 3600.0,
        }
    }
}

/// One dependency entry in `product-spec.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyEntry {
    pub name: String,
    pub version: String,
}

/// The dependency spec the dependency tools operate on; serialized as
/// `{"dependencies": [{"name": …, "version": …}]}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencySpec {
    pub dependencies: Vec<DependencyEntry>,
}

impl DependencySpec {
    pub fn load(path: &Path) -> Result<Self, std::io::Error> {
        let bytes = fs::read(path)?;
        let spec: Self = serde_json::from_slice(&bytes)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let mut seen = std::collections::BTreeSet::new();
        for entry in &spec.dependencies {
            if !seen.insert(entry.name.as_str()) {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("duplicate dependency name: {}", entry.name),
                ));
            }
        }
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<(), std::io::Error> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        text.push('\n');
        fs::write(path, text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuildStatus {
    Success,
    Failure,
    Timeout,
}

impl std::fmt::Display for BuildStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BuildStatus::Success => write!(f, "success"),
            BuildStatus::Failure => write!(f, "failure"),
            BuildStatus::Timeout => write!(f, "timeout"),
        }
    }
}

/// Outcome of one validate-and-build invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub status: BuildStatus,
    pub duration_s: f64,
    pub log: String,
    pub top_errors: Vec<ErrorSignature>,
}

/// Compact per-build record persisted for build-time statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildRecord {
    pub fixture_id: String,
    pub status: BuildStatus,
    pub duration_s: f64,
}

/// Shared collector of build records across concurrent episodes.
pub type BuildSink = Arc<Mutex<Vec<BuildRecord>>>;

pub fn new_build_sink() -> BuildSink {
    Arc::new(Mutex::new(Vec::new()))
}

/// Everything a tool execution needs besides the call itself.
pub struct ToolContext<'a> {
    pub workspace: &'a Workspace,
    pub fixture: &'a RepoFixture,
    pub kb: Option<&'a KnowledgeBase>,
    pub versions: &'a VersionRegistry,
    pub limits: ToolLimits,
    pub semaphore: Arc<BuildSemaphore>,
    pub log_config: LogAnalyzerConfig,
    pub build_sink: Option<BuildSink>,
    /// When set, validate_and_build defers instead of running the build.
    pub skip_builds: bool,
    /// Remaining episode wall-clock budget, if an episode is enforcing one.
    pub wall_budget_s: Option<f64>,
}

impl<'a> ToolContext<'a> {
    pub fn new(
        workspace: &'a Workspace,
        fixture: &'a RepoFixture,
        versions: &'a VersionRegistry,
        semaphore: Arc<BuildSemaphore>,
    ) -> Self {
        Self {
            workspace,
            fixture,
            kb: None,
            versions,
            limits: ToolLimits::default(),
            semaphore,
            log_config: LogAnalyzerConfig::default(),
            build_sink: None,
            skip_builds: false,
            wall_budget_s: None,
        }
    }

    fn effective_tool_budget(&self) -> f64 {
        match self.wall_budget_s {
            Some(wall) => self.limits.tool_timeout_s.min(wall),
            None => self.limits.tool_timeout_s,
        }
    }
}

/// Run the build command under the global build semaphore and classify the
/// outcome: exit 0 is success, nonzero is failure, a supervisor kill is a
/// timeout. Error signatures are extracted from the log unless the build
/// succeeded.
pub fn run_build(
    workspace: &Workspace,
    build_command: &str,
    limits: &ToolLimits,
    semaphore: &Arc<BuildSemaphore>,
    log_config: &LogAnalyzerConfig,
    budget_override_s: Option<f64>,
    sink: Option<&BuildSink>,
) -> BuildReport {
    let _permit = semaphore.acquire();
    let budget = match budget_override_s {
        Some(override_s) => limits.build_timeout_s.min(override_s),
        None => limits.build_timeout_s,
    };
    let report = match run_shell_with_timeout(build_command, workspace.root(), budget) {
        Ok(outcome) => {
            let status = if outcome.killed {
                BuildStatus::Timeout
            } else if outcome.exit_code == Some(0) {
                BuildStatus::Success
            } else {
                BuildStatus::Failure
            };
            let log = outcome.combined_output();
            let top_errors = match status {
                BuildStatus::Success => Vec::new(),
                _ => analyze_log(&log, log_config),
            };
            BuildReport {
                status,
                duration_s: outcome.duration_s,
                log,
                top_errors,
            }
        }
        Err(err) => BuildReport {
            status: BuildStatus::Failure,
            duration_s: 0.0,
            log: format!("failed to spawn build command: {err}"),
            top_errors: Vec::new(),
        },
    };
    if let Some(sink) = sink {
        sink.lock().expect("build sink lock").push(BuildRecord {
            fixture_id: workspace.fixture_id.clone(),
            status: report.status,
            duration_s: report.duration_s,
        });
    }
    report
}

/// Deterministic observation text for a build report. Wall-clock duration is
/// deliberately omitted so identical runs produce identical observations.
pub fn render_build_report(report: &BuildReport) -> String {
    let mut out = format!("build status: {}\n", report.status);
    if !report.top_errors.is_empty() {
        out.push_str("top errors:\n");
        for signature in &report.top_errors {
            out.push_str("- ");
            out.push_str(&signature.raw);
            out.push('\n');
        }
    }
    out.push_str("log:\n");
    let log = report.log.as_str();
    if log.len() > BUILD_LOG_TAIL_CHARS {
        let cut = log.len() - BUILD_LOG_TAIL_CHARS;
        let boundary = log
            .char_indices()
            .map(|(i, _)| i)
            .find(|&i| i >= cut)
            .unwrap_or(0);
        out.push_str("[truncated]\n");
        out.push_str(&log[boundary..]);
    } else {
        out.push_str(log);
    }
    out
}

/// Execute a validated call, returning the build report too when the call ran
/// a build (the episode loop needs it for reward decisions).
pub fn execute_tool_full(
    call: &ValidatedCall,
    ctx: &mut ToolContext,
) -> (ToolResult, Option<BuildReport>) {
    match call.name() {
        "find_files" => (find_files(call, ctx), None),
        "read_file" => (read_file(call, ctx), None),
        "write_file" => (write_file(call, ctx), None),
        "run_sh" => (run_sh(call, ctx), None),
        "upgrade_gradle" => (upgrade_gradle(ctx), None),
        "find_files_with_text" => (find_files_with_text(call, ctx), None),
        "remove_dependency" => (remove_dependency(call, ctx), None),
        "ask_for_help" => (ask_for_help(call, ctx), None),
        "dependency_upgrade" => (dependency_upgrade(call, ctx), None),
        "validate_and_build" => validate_and_build(ctx),
        other => (
            ToolResult::error(other, format!("unknown tool: {other}")),
            None,
        ),
    }
}

/// Execute a validated call against the workspace. Never raises; failures are
/// encoded in the result status and content.
pub fn execute_tool(call: &ValidatedCall, ctx: &mut ToolContext) -> ToolResult {
    execute_tool_full(call, ctx).0
}

fn arg_string(call: &ValidatedCall, key: &str) -> Option<String> {
    call.call.arguments.get(key).and_then(|value| match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    })
}

fn require_arg(call: &ValidatedCall, key: &str) -> Result<String, ToolResult> {
    arg_string(call, key).ok_or_else(|| {
        ToolResult::error(
            call.name(),
            format!("parameter {key} must be a scalar value"),
        )
    })
}

/// Resolve an agent-supplied path strictly inside the workspace root.
fn resolve_in_workspace(root: &Path, user_path: &str) -> Option<PathBuf> {
    let path = Path::new(user_path);
    if path.is_absolute() {
        return None;
    }
    let mut clean = PathBuf::new();
    for component in path.components() {
        match component {
            Component::Normal(part) => clean.push(part),
            Component::CurDir => {}
            _ => return None,
        }
    }
    if clean.as_os_str().is_empty() {
        return None;
    }
    Some(root.join(clean))
}

fn glob_to_regex(pattern: &str) -> regex::Regex {
    let mut out = String::from("^");
    let mut chars = pattern.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '*' => {
                if chars.peek() == Some(&'*') {
                    chars.next();
                    out.push_str(".*");
                } else {
                    out.push_str("[^/]*");
                }
            }
            '?' => out.push_str("[^/]"),
            other => out.push_str(&regex::escape(&other.to_string())),
        }
    }
    out.push('$');
    regex::Regex::new(&out).expect("escaped glob compiles")
}

fn workspace_files(root: &Path) -> Vec<String> {
    crate::digest::walk_files(root)
        .unwrap_or_default()
        .into_iter()
        .map(|p| p.to_string_lossy().into_owned())
        .collect()
}

fn find_files(call: &ValidatedCall, ctx: &ToolContext) -> ToolResult {
    let pattern = match require_arg(call, "file_path") {
        Ok(p) => p,
        Err(result) => return result,
    };
    let has_glob = pattern.contains('*') || pattern.contains('?');
    let regex = has_glob.then(|| glob_to_regex(&pattern));
    let matches: Vec<String> = workspace_files(ctx.workspace.root())
        .into_iter()
        .filter(|rel| {
            let file_name = rel.rsplit('/').next().unwrap_or(rel);
            match &regex {
                Some(re) => re.is_match(rel) || (!pattern.contains('/') && re.is_match(file_name)),
                None => rel == &pattern || file_name == pattern,
            }
        })
        .collect();
    ToolResult::ok(call.name(), matches.join("\n"))
}

fn find_files_with_text(call: &ValidatedCall, ctx: &ToolContext) -> ToolResult {
    let needle = match require_arg(call, "search_text") {
        Ok(t) => t,
        Err(result) => return result,
    };
    let glob = arg_string(call, "glob_file_pattern").map(|p| glob_to_regex(&p));
    let matches: Vec<String> = workspace_files(ctx.workspace.root())
        .into_iter()
        .filter(|rel| match &glob {
            Some(re) => re.is_match(rel) || re.is_match(rel.rsplit('/').next().unwrap_or(rel)),
            None => true,
        })
        .filter(|rel| {
            fs::read(ctx.workspace.root().join(rel))
                .map(|bytes| String::from_utf8_lossy(&bytes).contains(&needle))
                .unwrap_or(false)
        })
        .collect();
    ToolResult::ok(call.name(), matches.join("\n"))
}

fn read_file(call: &ValidatedCall, ctx: &ToolContext) -> ToolResult {
    let user_path = match require_arg(call, "file_path") {
        Ok(p) => p,
        Err(result) => return result,
    };
    let Some(path) = resolve_in_workspace(ctx.workspace.root(), &user_path) else {
        return ToolResult::error(call.name(), format!("not found: {user_path}"));
    };
    match fs::read(&path) {
        Ok(bytes) => ToolResult::ok(call.name(), String::from_utf8_lossy(&bytes).into_owned()),
        Err(_) => ToolResult::error(call.name(), format!("not found: {user_path}")),
    }
}

fn write_file(call: &ValidatedCall, ctx: &ToolContext) -> ToolResult {
    let user_path = match require_arg(call, "file_path") {
        Ok(p) => p,
        Err(result) => return result,
    };
    let contents = match require_arg(call, "updated_contents") {
        Ok(c) => c,
        Err(result) => return result,
    };
    let Some(path) = resolve_in_workspace(ctx.workspace.root(), &user_path) else {
        return ToolResult::error(call.name(), format!("not found: {user_path}"));
    };
    if !path.is_file() {
        return ToolResult::error(
            call.name(),
            format!("not found: {user_path} (write_file only overwrites existing files)"),
        );
    }
    match fs::write(&path, contents) {
        Ok(()) => ToolResult::ok(call.name(), format!("wrote {user_path}")),
        Err(err) => ToolResult::error(call.name(), format!("write failed: {err}")),
    }
}

fn run_sh(call: &ValidatedCall, ctx: &ToolContext) -> ToolResult {
    let cmd = match require_arg(call, "cmd") {
        Ok(c) => c,
        Err(result) => return result,
    };
    let budget = ctx.effective_tool_budget();
    match run_shell_with_timeout(&cmd, ctx.workspace.root(), budget) {
        Ok(outcome) if outcome.killed => ToolResult::timeout(
            call.name(),
            format!("command killed after exceeding the {budget:.0}s tool budget"),
        ),
        Ok(outcome) => {
            let code = outcome.exit_code.unwrap_or(-1);
            ToolResult::ok(
                call.name(),
                format!("exit code: {code}\n{}", outcome.combined_output()),
            )
        }
        Err(err) => ToolResult::error(call.name(), format!("failed to run command: {err}")),
    }
}

fn load_spec(ctx: &ToolContext) -> Result<(DependencySpec, PathBuf), ToolResult> {
    let path = ctx.workspace.root().join(PRODUCT_SPEC_FILE);
    DependencySpec::load(&path)
        .map(|spec| (spec, path))
        .map_err(|err| {
            ToolResult::error(
                "dependency",
                format!("cannot read {PRODUCT_SPEC_FILE}: {err}"),
            )
        })
}

fn remove_dependency(call: &ValidatedCall, ctx: &ToolContext) -> ToolResult {
    let name = match require_arg(call, "dependency_name") {
        Ok(n) => n,
        Err(result) => return result,
    };
    let (mut spec, path) = match load_spec(ctx) {
        Ok(v) => v,
        Err(result) => return result,
    };
    let before = spec.dependencies.len();
    spec.dependencies.retain(|d| d.name != name);
    if spec.dependencies.len() == before {
        return ToolResult::error(call.name(), format!("dependency not found: {name}"));
    }
    match spec.save(&path) {
        Ok(()) => ToolResult::ok(call.name(), format!("removed dependency {name}")),
        Err(err) => ToolResult::error(call.name(), format!("write failed: {err}")),
    }
}

fn dependency_upgrade(call: &ValidatedCall, ctx: &ToolContext) -> ToolResult {
    let name = match require_arg(call, "dependency_to_upgrade") {
        Ok(n) => n,
        Err(result) => return result,
    };
    let requested = arg_string(call, "version_to_upgrade_to");
    let (mut spec, path) = match load_spec(ctx) {
        Ok(v) => v,
        Err(result) => return result,
    };
    let Some(entry) = spec.dependencies.iter_mut().find(|d| d.name == name) else {
        return ToolResult::error(call.name(), format!("dependency not found: {name}"));
    };
    let target = match requested {
        Some(version) => version,
        None => match ctx.versions.latest(&name) {
            Some(version) => version.to_string(),
            None => {
                return ToolResult::error(
                    call.name(),
                    format!("no registry version available for {name}"),
                )
            }
        },
    };
    entry.version = target.clone();
    match spec.save(&path) {
        Ok(()) => ToolResult::ok(call.name(), format!("upgraded {name} to {target}")),
        Err(err) => ToolResult::error(call.name(), format!("write failed: {err}")),
    }
}

fn upgrade_gradle(ctx: &ToolContext) -> ToolResult {
    let version = ctx.fixture.gradle_current_version.as_str();
    let path = ctx.workspace.root().join(GRADLE_VERSION_FILE);
    match fs::write(&path, format!("{version}\n")) {
        Ok(()) => ToolResult::ok(
            "upgrade_gradle",
            format!("{GRADLE_VERSION_FILE} set to {version}"),
        ),
        Err(err) => ToolResult::error("upgrade_gradle", format!("write failed: {err}")),
    }
}

fn ask_for_help(call: &ValidatedCall, ctx: &ToolContext) -> ToolResult {
    let question = match require_arg(call, "troubleshooting_question") {
        Ok(q) => q,
        Err(result) => return result,
    };
    let Some(kb) = ctx.kb else {
        return ToolResult::error(call.name(), "knowledge base is empty");
    };
    match kb_lookup(kb, &question, 1) {
        Ok(hits) if !hits.is_empty() => ToolResult::ok(call.name(), hits[0].fix_text.clone()),
        _ => ToolResult::error(call.name(), "knowledge base is empty"),
    }
}

fn validate_and_build(ctx: &mut ToolContext) -> (ToolResult, Option<BuildReport>) {
    const NAME: &str = "validate_and_build";
    if ctx.skip_builds {
        return (
            ToolResult::ok(NAME, "build deferred; a final build decides the outcome"),
            None,
        );
    }
    let tool_budget = ctx.effective_tool_budget();
    let supervisor_bound = ctx.limits.build_timeout_s > tool_budget;
    let report = run_build(
        ctx.workspace,
        &ctx.fixture.manifest.build_command,
        &ctx.limits,
        &ctx.semaphore,
        &ctx.log_config,
        supervisor_bound.then_some(tool_budget),
        ctx.build_sink.as_ref(),
    );
    let result = if report.status == BuildStatus::Timeout && supervisor_bound {
        ToolResult::timeout(
            NAME,
            format!("build killed after exceeding the {tool_budget:.0}s tool budget"),
        )
    } else {
        ToolResult::ok(NAME, render_build_report(&report))
    };
    (result, Some(report))
}
