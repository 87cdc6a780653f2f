//! Fixture corpus management: scaffold the sample corpus, list registered
//! fixtures, verify frozen checksums, and measure initial build times.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};

use buildgym_core::fixtures::{samples, source_tree_digest, WorkspaceManager};
use buildgym_core::tools::{BuildSemaphore, ToolLimits};

use crate::context::{FixtureWorld, CHECKSUMS_FILE};
use crate::CliError;

#[derive(Args, Debug)]
pub struct FixturesArgs {
    #[command(subcommand)]
    action: FixturesAction,
}

#[derive(Subcommand, Debug)]
enum FixturesAction {
    /// Write the built-in sample corpus (fixtures, registry, knowledge base,
    /// problems, policies) and freeze per-fixture checksums.
    Init {
        /// Target directory for the corpus.
        #[arg(long)]
        dir: PathBuf,
        /// Overwrite an existing non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// List registered fixtures with their digests and injected errors.
    List {
        #[arg(long)]
        fixtures: PathBuf,
    },
    /// Re-hash every fixture and compare against the frozen checksums.
    Verify {
        #[arg(long)]
        fixtures: PathBuf,
    },
    /// Run each fixture's build once and cache the measured duration.
    Measure {
        #[arg(long)]
        fixtures: PathBuf,
        /// Per-build wall-clock budget, seconds.
        #[arg(long, default_value_t = 3600.0)]
        build_timeout: f64,
        /// Bound on concurrent measurement builds.
        #[arg(long, default_value_t = 4)]
        max_concurrent_builds: usize,
    },
}

pub fn run(args: FixturesArgs) -> Result<(), CliError> {
    match args.action {
        FixturesAction::Init { dir, force } => init(&dir, force),
        FixturesAction::List { fixtures } => list(&fixtures),
        FixturesAction::Verify { fixtures } => verify(&fixtures),
        FixturesAction::Measure {
            fixtures,
            build_timeout,
            max_concurrent_builds,
        } => measure(&fixtures, build_timeout, max_concurrent_builds),
    }
}

fn init(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists()
        && dir
            .read_dir()
            .map(|mut it| it.next().is_some())
            .unwrap_or(false)
        && !force
    {
        return Err(CliError::config(format!(
            "{} is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    let written = samples::write_sample_corpus(dir)?;

    let mut checksums: BTreeMap<String, String> = BTreeMap::new();
    for sample in samples::sample_fixtures() {
        let fixture_dir = dir.join("fixtures").join(&sample.config.id);
        let digest = source_tree_digest(&fixture_dir).map_err(|e| CliError::io(e.to_string()))?;
        checksums.insert(sample.config.id, digest);
    }
    let mut text =
        serde_json::to_string_pretty(&checksums).map_err(|e| CliError::io(e.to_string()))?;
    text.push('\n');
    fs::write(dir.join(CHECKSUMS_FILE), text)?;

    println!("wrote {} files under {}", written.len() + 1, dir.display());
    for sample in samples::sample_fixtures() {
        println!("  fixture {}", sample.config.id);
    }
    Ok(())
}

fn list(fixtures_root: &Path) -> Result<(), CliError> {
    let tmp = tempfile_dir(fixtures_root)?;
    let world = FixtureWorld::load(fixtures_root, &tmp)?;
    for id in world.registry.ids() {
        let fixture = world
            .registry
            .get(&id)
            .map_err(|e| CliError::io(e.to_string()))?;
        let measured = world
            .registry
            .initial_build_time(&id)
            .map(|secs| format!("{secs:.2}s"))
            .unwrap_or_else(|| "unmeasured".to_string());
        println!(
            "{id}: {} injected error(s), build '{}', initial build {measured}, digest {}",
            fixture.injected_errors.len(),
            fixture.manifest.build_command,
            &fixture.source_digest[..12],
        );
    }
    let _ = fs::remove_dir_all(&tmp);
    Ok(())
}

fn verify(fixtures_root: &Path) -> Result<(), CliError> {
    let checksums_path = fixtures_root.join(CHECKSUMS_FILE);
    if !checksums_path.is_file() {
        return Err(CliError::config(format!(
            "no {CHECKSUMS_FILE} under {}; run fixtures init first",
            fixtures_root.display()
        )));
    }
    let bytes = fs::read(&checksums_path)?;
    let frozen: BTreeMap<String, String> = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::config(format!("malformed {CHECKSUMS_FILE}: {e}")))?;

    let mut mismatches = 0usize;
    for (id, expected) in &frozen {
        let dir = fixtures_root.join("fixtures").join(id);
        if !dir.is_dir() {
            println!("{id}: MISSING");
            mismatches += 1;
            continue;
        }
        let actual = source_tree_digest(&dir).map_err(|e| CliError::io(e.to_string()))?;
        if &actual == expected {
            println!("{id}: OK");
        } else {
            println!("{id}: MODIFIED (expected {expected}, found {actual})");
            mismatches += 1;
        }
    }
    if mismatches > 0 {
        return Err(CliError::io(format!(
            "{mismatches} fixture(s) failed verification"
        )));
    }
    Ok(())
}

fn measure(
    fixtures_root: &Path,
    build_timeout: f64,
    max_concurrent_builds: usize,
) -> Result<(), CliError> {
    let work = fixtures_root.join(".measure-work");
    let world = FixtureWorld::load(fixtures_root, &work.join("cache"))?;
    let manager = WorkspaceManager::new(work.join("workspaces"));
    let limits = ToolLimits {
        tool_timeout_s: build_timeout,
        build_timeout_s: build_timeout,
    };
    let semaphore = BuildSemaphore::new(max_concurrent_builds);

    for id in world.registry.ids() {
        let measurement = world
            .registry
            .measure_initial_build_time(&id, &manager, &limits, &semaphore)
            .map_err(|e| CliError::io(e.to_string()))?;
        println!(
            "{id}: {:.3}s ({})",
            measurement.duration_s,
            status_word(measurement.status)
        );
    }
    let path = world.save_measurements()?;
    println!("cached measurements in {}", path.display());
    let _ = fs::remove_dir_all(&work);
    Ok(())
}

fn status_word(status: buildgym_core::tools::BuildStatus) -> &'static str {
    match status {
        buildgym_core::tools::BuildStatus::Success => "success",
        buildgym_core::tools::BuildStatus::Failure => "failure",
        buildgym_core::tools::BuildStatus::Timeout => "timeout",
    }
}

fn tempfile_dir(base: &Path) -> Result<PathBuf, CliError> {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let dir = base.join(format!(".list-cache-{nanos}"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}
