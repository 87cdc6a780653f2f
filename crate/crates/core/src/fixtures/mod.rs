//! Repository fixtures with injectable build failures, isolated per-rollout
//! workspaces, reproducibility pinning, and patch extraction.
//!
//! On disk a fixture is a directory holding `fixture.json` (the manifest),
//! `product-spec.json` (the dependency spec), a build script named by the
//! manifest's `build_command`, and the rest of the source tree. Everything
//! except `fixture.json` is the source tree that workspaces are copied from.
//!
//! Registration freezes a checksum over the source tree and builds a pinned
//! pristine copy in a content-addressed cache: wildcard dependency versions
//! are rewritten to the manifest's exact pins and the auto-upgrade marker is
//! written. Workspaces are materialized from that pinned copy, so repeated
//! materializations are byte-identical and patches diff against the pinned
//! baseline.

mod patch;
pub mod samples;

pub use patch::{apply_patch, diff_trees, extract_patch, FileHunk, Patch, PatchError};

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{copy_tree, replace_tree, tree_digest, walk_files};
use crate::pipeline_full::LogAnalyzerConfig;
use crate::tools::{BuildSemaphore, BuildStatus, DependencySpec, ToolLimits};

/// Manifest file name; the only file excluded from the source tree.
pub const FIXTURE_CONFIG_FILE: &str = "fixture.json";
/// Dependency spec consumed by the dependency tools.
pub const PRODUCT_SPEC_FILE: &str = "product-spec.json";
/// Build-tool version marker read by fixture build scripts.
pub const GRADLE_VERSION_FILE: &str = "gradle-version";
/// Marker written during pinning to record that auto-upgrade is off.
pub const ADU_MARKER_FILE: &str = ".auto-upgrade-disabled";
/// Local version-registry file mapping dependency name to ordered versions.
pub const VERSION_REGISTRY_FILE: &str = "registry.json";

/// Fallback when a fixture does not configure its current build-tool version.
pub const DEFAULT_GRADLE_CURRENT: &str = "7.6.1";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("unknown fixture: {0}")]
    UnknownFixture(String),
    #[error("fixture already registered: {0}")]
    AlreadyRegistered(String),
    #[error("rollout id already in use: {0}")]
    RolloutIdCollision(String),
    #[error("unknown snapshot label: {0}")]
    UnknownSnapshot(String),
    #[error("invalid fixture {id}: {reason}")]
    InvalidFixture { id: String, reason: String },
    #[error("invalid name {0:?}: only [A-Za-z0-9._-] is allowed")]
    InvalidName(String),
    #[error("I/O failure: {0}")]
    Io(#[from] io::Error),
    #[error("malformed JSON in {path}: {source}")]
    MalformedJson {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// One injectable failure: the error text shown to the agent plus the files
/// (or dependency names) it concerns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorSpec {
    pub error_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_hint: Option<String>,
    pub files: Vec<String>,
}

/// On-disk shape of `fixture.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub id: String,
    pub build_command: String,
    #[serde(default)]
    pub injected_errors: Vec<ErrorSpec>,
    #[serde(default)]
    pub pinned_dependencies: BTreeMap<String, String>,
    #[serde(default)]
    pub auto_upgrade_disabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradle_current_version: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub validation_scripts: Vec<String>,
}

/// Reproducibility controls for a registered fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub build_command: String,
    /// Measured once and cached; `None` until measured.
    pub initial_build_time_s: Option<f64>,
    pub pinned_dependencies: BTreeMap<String, String>,
    pub auto_upgrade_disabled: bool,
}

/// A registered fixture: immutable source tree plus its pinned pristine copy.
#[derive(Debug, Clone)]
pub struct RepoFixture {
    pub id: String,
    /// The fixture directory itself (contains `fixture.json`).
    pub root: PathBuf,
    pub manifest: FixtureManifest,
    pub injected_errors: Vec<ErrorSpec>,
    /// Checksum over the source tree at registration time.
    pub source_digest: String,
    /// Checksum over the pinned pristine tree workspaces are copied from.
    pub pristine_digest: String,
    /// Location of the pinned pristine tree in the cache.
    pub pristine_path: PathBuf,
    pub gradle_current_version: String,
    pub validation_scripts: Vec<String>,
}

/// Cached result of the one-off initial build measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialBuildMeasurement {
    pub duration_s: f64,
    pub status: BuildStatus,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "._-".contains(c))
}

fn is_wildcard_version(version: &str) -> bool {
    version.is_empty()
        || version == "latest"
        || version.contains('*')
        || version.contains('+')
        || version.starts_with('^')
        || version.starts_with('~')
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, FixtureError> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|source| FixtureError::MalformedJson {
        path: path.to_path_buf(),
        source,
    })
}

fn now_epoch_s() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Local stand-in for a package registry: dependency name to the ordered
/// list of published versions; the last entry is the pinned-latest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VersionRegistry {
    pub versions: BTreeMap<String, Vec<String>>,
}

impl VersionRegistry {
    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        read_json(path)
    }

    /// Load `registry.json` under `dir` if present, else an empty registry.
    pub fn load_dir(dir: &Path) -> Result<Self, FixtureError> {
        let path = dir.join(VERSION_REGISTRY_FILE);
        if path.exists() {
            Self::load(&path)
        } else {
            Ok(Self::default())
        }
    }

    pub fn latest(&self, name: &str) -> Option<&str> {
        self.versions
            .get(name)
            .and_then(|list| list.last())
            .map(String::as_str)
    }
}

struct RegistryInner {
    fixtures: HashMap<String, Arc<RepoFixture>>,
    measurements: HashMap<String, InitialBuildMeasurement>,
}

/// Registry of fixtures: concurrent readers, exclusive registration.
pub struct FixtureRegistry {
    inner: RwLock<RegistryInner>,
    cache_root: PathBuf,
    measure_nonce: AtomicU64,
}

impl FixtureRegistry {
    /// `cache_root` holds the content-addressed pinned pristine trees.
    pub fn new(cache_root: impl Into<PathBuf>) -> Self {
        Self {
            inner: RwLock::new(RegistryInner {
                fixtures: HashMap::new(),
                measurements: HashMap::new(),
            }),
            cache_root: cache_root.into(),
            measure_nonce: AtomicU64::new(0),
        }
    }

    /// Register the fixture stored in `dir`, validating its manifest and
    /// building the pinned pristine cache entry.
    pub fn register_dir(&self, dir: &Path) -> Result<Arc<RepoFixture>, FixtureError> {
        let config: FixtureConfig = read_json(&dir.join(FIXTURE_CONFIG_FILE))?;
        let id = config.id.clone();
        let invalid = |reason: &str| FixtureError::InvalidFixture {
            id: id.clone(),
            reason: reason.to_string(),
        };

        if !valid_name(&config.id) {
            return Err(FixtureError::InvalidName(config.id));
        }
        if !config.auto_upgrade_disabled {
            return Err(invalid(
                "auto_upgrade_disabled must be true for admitted fixtures",
            ));
        }

        let spec_path = dir.join(PRODUCT_SPEC_FILE);
        if !spec_path.exists() {
            return Err(invalid("missing product-spec.json"));
        }
        let spec = DependencySpec::load(&spec_path)
            .map_err(|e| invalid(&format!("unreadable product-spec.json: {e}")))?;
        for entry in &spec.dependencies {
            if !config.pinned_dependencies.contains_key(&entry.name) {
                return Err(invalid(&format!(
                    "dependency {} has no pinned version",
                    entry.name
                )));
            }
        }

        for error in &config.injected_errors {
            if error.files.is_empty() {
                return Err(invalid(&format!(
                    "injected error {:?} names no files",
                    error.error_text
                )));
            }
            let any_known = error
                .files
                .iter()
                .any(|f| dir.join(f).is_file() || spec.dependencies.iter().any(|d| &d.name == f));
            if !any_known {
                return Err(invalid(&format!(
                    "injected error {:?} names no file in the source tree or dependency spec",
                    error.error_text
                )));
            }
        }

        let source_digest = source_tree_digest(dir)?;
        let pristine_path = self.cache_root.join(&source_digest);
        if !pristine_path.exists() {
            build_pinned_pristine(dir, &pristine_path, &config)?;
        }
        let pristine_digest = tree_digest(&pristine_path)?;

        let fixture = Arc::new(RepoFixture {
            id: config.id.clone(),
            root: dir.to_path_buf(),
            manifest: FixtureManifest {
                build_command: config.build_command,
                initial_build_time_s: None,
                pinned_dependencies: config.pinned_dependencies,
                auto_upgrade_disabled: config.auto_upgrade_disabled,
            },
            injected_errors: config.injected_errors,
            source_digest,
            pristine_digest,
            pristine_path,
            gradle_current_version: config
                .gradle_current_version
                .unwrap_or_else(|| DEFAULT_GRADLE_CURRENT.to_string()),
            validation_scripts: config.validation_scripts,
        });

        let mut inner = self.inner.write().expect("registry lock");
        if inner.fixtures.contains_key(&fixture.id) {
            return Err(FixtureError::AlreadyRegistered(fixture.id.clone()));
        }
        inner
            .fixtures
            .insert(fixture.id.clone(), Arc::clone(&fixture));
        Ok(fixture)
    }

    /// Register every subdirectory of `root` that contains a `fixture.json`.
    pub fn register_all(&self, root: &Path) -> Result<Vec<Arc<RepoFixture>>, FixtureError> {
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && p.join(FIXTURE_CONFIG_FILE).is_file())
            .collect();
        dirs.sort();
        dirs.iter().map(|dir| self.register_dir(dir)).collect()
    }

    pub fn get(&self, id: &str) -> Result<Arc<RepoFixture>, FixtureError> {
        self.inner
            .read()
            .expect("registry lock")
            .fixtures
            .get(id)
            .cloned()
            .ok_or_else(|| FixtureError::UnknownFixture(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .inner
            .read()
            .expect("registry lock")
            .fixtures
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    /// Re-hash the registered source tree and compare with the stored digest.
    pub fn verify(&self, id: &str) -> Result<bool, FixtureError> {
        let fixture = self.get(id)?;
        Ok(source_tree_digest(&fixture.root)? == fixture.source_digest)
    }

    /// Manifest with the cached initial build time merged in.
    pub fn manifest(&self, id: &str) -> Result<FixtureManifest, FixtureError> {
        let fixture = self.get(id)?;
        let mut manifest = fixture.manifest.clone();
        let inner = self.inner.read().expect("registry lock");
        manifest.initial_build_time_s = inner.measurements.get(id).map(|m| m.duration_s);
        Ok(manifest)
    }

    pub fn initial_build_time(&self, id: &str) -> Option<f64> {
        self.inner
            .read()
            .expect("registry lock")
            .measurements
            .get(id)
            .map(|m| m.duration_s)
    }

    pub fn record_measurement(&self, id: &str, measurement: InitialBuildMeasurement) {
        self.inner
            .write()
            .expect("registry lock")
            .measurements
            .insert(id.to_string(), measurement);
    }

    pub fn measurements(&self) -> BTreeMap<String, InitialBuildMeasurement> {
        self.inner
            .read()
            .expect("registry lock")
            .measurements
            .iter()
            .map(|(k, v)| (k.clone(), *v))
            .collect()
    }

    /// Run the fixture's build once on a fresh workspace, cache the measured
    /// duration, and report it. A failing build is recorded in the
    /// measurement, not raised: the duration is still the answer.
    pub fn measure_initial_build_time(
        &self,
        id: &str,
        manager: &WorkspaceManager,
        limits: &ToolLimits,
        semaphore: &Arc<BuildSemaphore>,
    ) -> Result<InitialBuildMeasurement, FixtureError> {
        let fixture = self.get(id)?;
        let nonce = self.measure_nonce.fetch_add(1, Ordering::Relaxed);
        let workspace = manager.materialize(&fixture, &format!("measure-{id}-{nonce}"))?;
        let report = crate::tools::run_build(
            &workspace,
            &fixture.manifest.build_command,
            limits,
            semaphore,
            &LogAnalyzerConfig::default(),
            None,
            None,
        );
        let measurement = InitialBuildMeasurement {
            duration_s: report.duration_s,
            status: report.status,
        };
        workspace.remove()?;
        self.record_measurement(id, measurement);
        Ok(measurement)
    }
}

/// Digest over the fixture source tree: every file except `fixture.json`.
pub fn source_tree_digest(dir: &Path) -> Result<String, FixtureError> {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for rel in walk_files(dir)? {
        if rel.as_os_str() == FIXTURE_CONFIG_FILE {
            continue;
        }
        let bytes = fs::read(dir.join(&rel))?;
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0u8]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(crate::digest::to_hex(&hasher.finalize()))
}

/// Copy the source tree (minus the manifest), rewrite wildcard versions to
/// their exact pins, and write the auto-upgrade marker.
fn build_pinned_pristine(
    dir: &Path,
    dst: &Path,
    config: &FixtureConfig,
) -> Result<(), FixtureError> {
    fs::create_dir_all(dst)?;
    for rel in walk_files(dir)? {
        if rel.as_os_str() == FIXTURE_CONFIG_FILE {
            continue;
        }
        let to = dst.join(&rel);
        if let Some(parent) = to.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::copy(dir.join(&rel), &to)?;
    }

    let spec_path = dst.join(PRODUCT_SPEC_FILE);
    let mut spec = DependencySpec::load(&spec_path).map_err(|e| FixtureError::InvalidFixture {
        id: config.id.clone(),
        reason: format!("unreadable product-spec.json: {e}"),
    })?;
    for entry in &mut spec.dependencies {
        if is_wildcard_version(&entry.version) {
            if let Some(pin) = config.pinned_dependencies.get(&entry.name) {
                entry.version = pin.clone();
            }
        }
    }
    spec.save(&spec_path)
        .map_err(|e| FixtureError::InvalidFixture {
            id: config.id.clone(),
            reason: format!("cannot write pinned product-spec.json: {e}"),
        })?;

    fs::write(dst.join(ADU_MARKER_FILE), "auto-upgrade: disabled\n")?;
    Ok(())
}

/// Point-in-time full-tree copy of a workspace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub label: String,
    pub tree_digest: String,
    pub created_at: u64,
}

/// An isolated working copy owned by exactly one episode at a time.
#[derive(Debug)]
pub struct Workspace {
    pub rollout_id: String,
    pub fixture_id: String,
    pub snapshots: Vec<Snapshot>,
    root: PathBuf,
    snapshots_dir: PathBuf,
    pristine: PathBuf,
    pristine_digest: String,
}

impl Workspace {
    pub fn root(&self) -> &Path {
        &self.root
    }

    /// The pinned pristine tree this workspace was copied from.
    pub fn pristine(&self) -> &Path {
        &self.pristine
    }

    pub fn pristine_digest(&self) -> &str {
        &self.pristine_digest
    }

    pub fn tree_digest(&self) -> Result<String, FixtureError> {
        Ok(tree_digest(&self.root)?)
    }

    /// Record the current tree under `label`; a later `restore` reproduces it
    /// exactly. Re-using a label replaces the stored tree.
    pub fn snapshot(&mut self, label: &str) -> Result<Snapshot, FixtureError> {
        if !valid_name(label) {
            return Err(FixtureError::InvalidName(label.to_string()));
        }
        let dest = self.snapshots_dir.join(label);
        replace_tree(&self.root, &dest)?;
        let snapshot = Snapshot {
            label: label.to_string(),
            tree_digest: tree_digest(&dest)?,
            created_at: now_epoch_s(),
        };
        self.snapshots.push(snapshot.clone());
        Ok(snapshot)
    }

    /// Make the tree equal to the most recent snapshot with `label`.
    pub fn restore(&mut self, label: &str) -> Result<(), FixtureError> {
        if !self.snapshots.iter().rev().any(|s| s.label == label) {
            return Err(FixtureError::UnknownSnapshot(label.to_string()));
        }
        let source = self.snapshots_dir.join(label);
        if !source.is_dir() {
            return Err(FixtureError::UnknownSnapshot(label.to_string()));
        }
        replace_tree(&source, &self.root)?;
        Ok(())
    }

    /// Hunks for exactly the files whose bytes differ from the pinned
    /// pristine tree; empty iff nothing changed.
    pub fn extract_patch(&self) -> Result<Patch, PatchError> {
        patch::extract_patch(&self.pristine, &self.root, &self.pristine_digest)
    }

    /// Delete the working tree and all snapshots. The fixture and its cache
    /// are untouched.
    pub fn remove(self) -> Result<(), FixtureError> {
        if self.root.exists() {
            fs::remove_dir_all(&self.root)?;
        }
        if self.snapshots_dir.exists() {
            fs::remove_dir_all(&self.snapshots_dir)?;
        }
        Ok(())
    }
}

/// Materializes workspaces under one root; rollout ids never collide because
/// directory creation is exclusive.
pub struct WorkspaceManager {
    root: PathBuf,
}

impl WorkspaceManager {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Copy the fixture's pinned pristine tree into a fresh directory owned
    /// by `rollout_id`.
    pub fn materialize(
        &self,
        fixture: &RepoFixture,
        rollout_id: &str,
    ) -> Result<Workspace, FixtureError> {
        if !valid_name(rollout_id) {
            return Err(FixtureError::InvalidName(rollout_id.to_string()));
        }
        let workspace_root = self.root.join("workspaces").join(rollout_id);
        if let Some(parent) = workspace_root.parent() {
            fs::create_dir_all(parent)?;
        }
        match fs::create_dir(&workspace_root) {
            Ok(()) => {}
            Err(err) if err.kind() == io::ErrorKind::AlreadyExists => {
                return Err(FixtureError::RolloutIdCollision(rollout_id.to_string()));
            }
            Err(err) => return Err(err.into()),
        }
        copy_tree(&fixture.pristine_path, &workspace_root)?;
        Ok(Workspace {
            rollout_id: rollout_id.to_string(),
            fixture_id: fixture.id.clone(),
            snapshots: Vec::new(),
            root: workspace_root,
            snapshots_dir: self.root.join("snapshots").join(rollout_id),
            pristine: fixture.pristine_path.clone(),
            pristine_digest: fixture.pristine_digest.clone(),
        })
    }

    /// Convenience: materialize by fixture id via a registry.
    pub fn materialize_from(
        &self,
        registry: &FixtureRegistry,
        fixture_id: &str,
        rollout_id: &str,
    ) -> Result<Workspace, FixtureError> {
        let fixture = registry.get(fixture_id)?;
        self.materialize(&fixture, rollout_id)
    }
}
