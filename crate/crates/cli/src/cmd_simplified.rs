//! The `simplified` and `evaluate` commands: one-shot batch rollouts over a
//! problem set, and repeated evaluation runs with confidence intervals.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;

use buildgym_core::episode::{write_trajectories_jsonl, Trajectory};
use buildgym_core::fixtures::WorkspaceManager;
use buildgym_core::pipeline_simplified::{
    evaluate, filter_by_build_time, load_problems_jsonl, run_batch, BatchEnv, Problem, Split,
};
use buildgym_core::tools::new_build_sink;

use crate::context::{load_kb, parse_policy_spec, policy_factory, FixtureWorld, Knobs, OutDir};
use crate::{CliError, KnobArgs};

#[derive(Args, Debug)]
pub struct SimplifiedArgs {
    #[arg(long)]
    fixtures: PathBuf,
    /// Problem set JSON-lines file.
    #[arg(long)]
    problems: PathBuf,
    /// Knowledge base JSON-lines file (optional; ask_for_help errors without
    /// one).
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Policy: scripted:<path> or remote:<url>.
    #[arg(long)]
    policy: String,
    #[arg(long)]
    policy_repeat: bool,
    /// Restrict to one split (train, validation, test); default: all.
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Keep per-episode workspaces on disk for inspection.
    #[arg(long)]
    keep_workspaces: bool,
    #[command(flatten)]
    knobs: KnobArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    fixtures: PathBuf,
    #[arg(long)]
    problems: PathBuf,
    #[arg(long)]
    kb: Option<PathBuf>,
    #[arg(long)]
    policy: String,
    #[arg(long)]
    policy_repeat: bool,
    /// Split to evaluate (required).
    #[arg(long)]
    split: Split,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    knobs: KnobArgs,
}

struct LoadedRun {
    problems: Vec<Problem>,
    env: BatchEnv,
}

fn load_run(
    fixtures: &Path,
    problems_path: &Path,
    kb: Option<&PathBuf>,
    split: Option<Split>,
    knobs: &Knobs,
    out: &OutDir,
    keep_workspaces: bool,
) -> Result<LoadedRun, CliError> {
    if !problems_path.is_file() {
        return Err(CliError::config(format!(
            "problem set not found: {}",
            problems_path.display()
        )));
    }
    let work = out.work_dir()?;
    let world = FixtureWorld::load(fixtures, &work.join("cache"))?;

    let mut problems = load_problems_jsonl(problems_path)
        .map_err(|e| CliError::config(format!("cannot load problems: {e}")))?;
    if let Some(split) = split {
        problems.retain(|p| p.split == split);
    }
    if let Some(threshold) = knobs.build_time_filter {
        let mut times = world
            .registry
            .measurements()
            .into_iter()
            .map(|(id, m)| (id, m.duration_s))
            .collect::<std::collections::BTreeMap<_, _>>();
        // Measure anything the sidecar file does not cover yet.
        let manager = WorkspaceManager::new(work.join("measure"));
        let semaphore = buildgym_core::tools::BuildSemaphore::new(knobs.max_concurrent_builds);
        for problem in &problems {
            if !times.contains_key(&problem.fixture_id) {
                let measurement = world
                    .registry
                    .measure_initial_build_time(
                        &problem.fixture_id,
                        &manager,
                        &knobs.tool_limits,
                        &semaphore,
                    )
                    .map_err(|e| CliError::io(e.to_string()))?;
                times.insert(problem.fixture_id.clone(), measurement.duration_s);
            }
        }
        problems = filter_by_build_time(&problems, threshold, &times)
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    if problems.is_empty() {
        return Err(CliError::config(
            "no problems selected (empty split or filtered out)",
        ));
    }

    let mut env = BatchEnv::new(
        Arc::clone(&world.registry),
        Arc::new(WorkspaceManager::new(work.join("workspaces"))),
        Arc::clone(&world.versions),
        crate::context::tokenizer(),
    );
    env.log_config = knobs.log_config.clone();
    env.keep_workspaces = keep_workspaces;
    if let Some(kb_path) = kb {
        env.kb = Some(load_kb(kb_path)?);
    }
    env.build_sink = Some(new_build_sink());
    Ok(LoadedRun { problems, env })
}

fn write_builds(out: &mut OutDir, env: &BatchEnv) -> Result<(), CliError> {
    let Some(sink) = &env.build_sink else {
        return Ok(());
    };
    let mut bytes = Vec::new();
    for record in sink.lock().expect("sink lock").iter() {
        writeln!(
            bytes,
            "{}",
            serde_json::to_string(record).map_err(|e| CliError::io(e.to_string()))?
        )?;
    }
    out.write("builds.jsonl", &String::from_utf8_lossy(&bytes))?;
    Ok(())
}

fn write_trajectory_file(
    out: &mut OutDir,
    rel: &str,
    trajectories: &[Trajectory],
) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    write_trajectories_jsonl(&mut bytes, trajectories).map_err(|e| CliError::io(e.to_string()))?;
    out.write(rel, &String::from_utf8_lossy(&bytes))?;
    Ok(())
}

pub fn run_simplified(args: SimplifiedArgs) -> Result<(), CliError> {
    let knobs = Knobs::resolve(&args.knobs)?;
    let mut out = OutDir::create(&args.out_dir)?;
    let run = load_run(
        &args.fixtures,
        &args.problems,
        args.kb.as_ref(),
        args.split,
        &knobs,
        &out,
        args.keep_workspaces,
    )?;
    let spec = parse_policy_spec(&args.policy, args.policy_repeat)?;
    let factory = policy_factory(spec);
    let episode_config = knobs.simplified_episode();
    let batch_config = knobs.batch_config();

    let trajectories = run_batch(
        &run.problems,
        &factory,
        &run.env,
        &batch_config,
        &episode_config,
    );
    write_trajectory_file(&mut out, "trajectories.jsonl", &trajectories)?;
    write_builds(&mut out, &run.env)?;

    let successes = trajectories.iter().filter(|t| t.reward == 1).count();
    println!(
        "{} trajectories over {} problems; {} succeeded",
        trajectories.len(),
        run.problems.len(),
        successes
    );
    out.write_json(
        "summary.json",
        &serde_json::json!({
            "problems": run.problems.len(),
            "trajectories": trajectories.len(),
            "successes": successes,
            "batch_config": batch_config,
            "episode_config": episode_config,
        }),
    )?;
    out.finish("simplified", knobs.seed)?;
    Ok(())
}

pub fn run_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let knobs = Knobs::resolve(&args.knobs)?;
    let mut out = OutDir::create(&args.out_dir)?;
    let run = load_run(
        &args.fixtures,
        &args.problems,
        args.kb.as_ref(),
        Some(args.split),
        &knobs,
        &out,
        false,
    )?;
    let spec = parse_policy_spec(&args.policy, args.policy_repeat)?;
    let factory = policy_factory(spec);
    let episode_config = knobs.simplified_episode();
    let batch_config = knobs.batch_config();

    let report = evaluate(
        &run.problems,
        &factory,
        &run.env,
        &batch_config,
        &episode_config,
        knobs.repeats,
    );
    println!(
        "split {} over {} problems: mean success {:.4} +/- {:.4} across {} runs",
        args.split,
        run.problems.len(),
        report.mean,
        report.ci95_half_width,
        report.repeats
    );
    out.write_json("eval_report.json", &report)?;
    write_builds(&mut out, &run.env)?;
    out.finish("evaluate", knobs.seed)?;
    Ok(())
}
