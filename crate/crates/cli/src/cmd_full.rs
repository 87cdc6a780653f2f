//! The `full` command: run the iterative repair pipeline per fixture and
//! write results, trajectories, and build records.

use std::io::Write as _;
use std::path::PathBuf;

use clap::Args;

use buildgym_core::episode::write_trajectories_jsonl;
use buildgym_core::fixtures::WorkspaceManager;
use buildgym_core::pipeline_full::{run_full_pipeline, PipelineDeps, PipelineStatus};
use buildgym_core::tools::{new_build_sink, BuildSemaphore};

use crate::context::{load_kb, parse_policy_spec, policy_factory, FixtureWorld, Knobs, OutDir};
use crate::{CliError, KnobArgs};

#[derive(Args, Debug)]
pub struct FullArgs {
    /// Directory holding the fixture corpus (as written by `fixtures init`).
    #[arg(long)]
    fixtures: PathBuf,
    /// Knowledge base JSON-lines file.
    #[arg(long)]
    kb: PathBuf,
    /// Policy: scripted:<path> or remote:<url>.
    #[arg(long)]
    policy: String,
    /// Cycle a scripted policy instead of stopping after its last message.
    #[arg(long)]
    policy_repeat: bool,
    /// Run only these fixture ids (default: all registered).
    #[arg(long = "fixture")]
    fixture_ids: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    knobs: KnobArgs,
}

pub fn run(args: FullArgs) -> Result<(), CliError> {
    let knobs = Knobs::resolve(&args.knobs)?;
    let mut out = OutDir::create(&args.out_dir)?;
    let work = out.work_dir()?;
    let world = FixtureWorld::load(&args.fixtures, &work.join("cache"))?;
    let kb = load_kb(&args.kb)?;
    let spec = parse_policy_spec(&args.policy, args.policy_repeat)?;
    let factory = policy_factory(spec);
    let manager = WorkspaceManager::new(work.join("workspaces"));
    let tokenizer = crate::context::tokenizer();
    let sink = new_build_sink();
    let semaphore = BuildSemaphore::new(knobs.max_concurrent_builds);
    let config = knobs.pipeline_config();

    let ids = if args.fixture_ids.is_empty() {
        world.registry.ids()
    } else {
        args.fixture_ids.clone()
    };
    let mut summaries = Vec::new();
    for (index, id) in ids.iter().enumerate() {
        let fixture = world
            .registry
            .get(id)
            .map_err(|e| CliError::config(format!("unknown fixture {id}: {e}")))?;
        let deps = PipelineDeps {
            manager: &manager,
            kb: &kb,
            versions: &world.versions,
            semaphore: std::sync::Arc::clone(&semaphore),
            tokenizer: tokenizer.as_ref(),
            build_sink: Some(sink.clone()),
        };
        let result = run_full_pipeline(
            &fixture,
            &factory,
            &deps,
            &config,
            &format!("full-{index:03}-{id}"),
        )
        .map_err(|e| CliError::io(format!("pipeline on {id} failed: {e}")))?;

        let log_rel = format!("trajectories/{id}.jsonl");
        let mut bytes = Vec::new();
        write_trajectories_jsonl(&mut bytes, &result.episodes)
            .map_err(|e| CliError::io(e.to_string()))?;
        out.write(&log_rel, &String::from_utf8_lossy(&bytes))?;

        for (patch_index, patch) in result.patches.iter().enumerate() {
            out.write(
                &format!("patches/{id}-{patch_index}.patch"),
                &patch.to_unified(),
            )?;
        }

        println!(
            "{id}: {} after {} iteration(s), {} episode(s)",
            match result.status {
                PipelineStatus::Success => "success",
                PipelineStatus::Failure => "failure",
            },
            result.iterations,
            result.episodes.len(),
        );
        summaries.push(serde_json::json!({
            "fixture_id": result.fixture_id,
            "status": result.status,
            "iterations": result.iterations,
            "episodes": [log_rel],
            "patches": result.patches,
            "attempts_audit": result.attempts_audit,
            "audit": result.audit,
        }));
    }

    out.write_json("full_results.json", &summaries)?;
    let mut builds = Vec::new();
    for record in sink.lock().expect("sink lock").iter() {
        writeln!(
            builds,
            "{}",
            serde_json::to_string(record).map_err(|e| CliError::io(e.to_string()))?
        )?;
    }
    out.write("builds.jsonl", &String::from_utf8_lossy(&builds))?;
    out.finish("full", knobs.seed)?;
    Ok(())
}
