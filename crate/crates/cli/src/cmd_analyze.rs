//! The `analyze` command: category distributions, token breakdowns, turn
//! statistics, build-time statistics, and tool-transition matrices over
//! trajectory logs, with an optional before/after comparison.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::Args;

use buildgym_core::analysis::{
    build_time_stats, category_distribution, render_matrix_csv, render_matrix_delta_csv,
    render_matrix_pretty, render_plot_data, token_breakdown, transition_matrix, turn_stats,
    TransitionMatrix,
};
use buildgym_core::episode::{read_trajectories_jsonl, Trajectory};
use buildgym_core::pipeline_simplified::load_problems_jsonl;
use buildgym_core::tools::BuildRecord;

use crate::context::OutDir;
use crate::CliError;

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Trajectory logs: JSON-lines files or directories of them.
    #[arg(long, required = true, num_args = 1..)]
    logs: Vec<PathBuf>,
    /// Second log set for a before/after transition comparison.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Problem set whose error texts feed the category distribution.
    #[arg(long)]
    problems: Option<PathBuf>,
    /// builds.jsonl with per-build durations for build-time statistics.
    #[arg(long)]
    builds: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn collect_log_files(path: &Path, into: &mut Vec<PathBuf>) -> Result<(), CliError> {
    if path.is_file() {
        into.push(path.to_path_buf());
        return Ok(());
    }
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for entry in entries {
            if entry.is_dir() {
                collect_log_files(&entry, into)?;
            } else if entry.extension().is_some_and(|ext| ext == "jsonl") {
                into.push(entry);
            }
        }
        return Ok(());
    }
    Err(CliError::config(format!(
        "log path not found: {}",
        path.display()
    )))
}

fn load_trajectories(paths: &[PathBuf]) -> Result<Vec<Trajectory>, CliError> {
    let mut files = Vec::new();
    for path in paths {
        collect_log_files(path, &mut files)?;
    }
    if files.is_empty() {
        return Err(CliError::config("no trajectory logs found"));
    }
    let mut trajectories = Vec::new();
    for file in files {
        let reader = BufReader::new(fs::File::open(&file)?);
        let mut batch = read_trajectories_jsonl(reader)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", file.display())))?;
        trajectories.append(&mut batch);
    }
    if trajectories.is_empty() {
        return Err(CliError::config("trajectory logs contain no trajectories"));
    }
    Ok(trajectories)
}

fn load_build_records(path: &Path) -> Result<Vec<BuildRecord>, CliError> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: BuildRecord = serde_json::from_str(line).map_err(|e| {
            CliError::config(format!("malformed build record on line {}: {e}", index + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn run(args: AnalyzeArgs) -> Result<(), CliError> {
    let mut out = OutDir::create(&args.out_dir)?;
    let trajectories = load_trajectories(&args.logs)?;
    let tokenizer = crate::context::tokenizer();

    let turns = turn_stats(&trajectories).map_err(|e| CliError::config(e.to_string()))?;
    let tokens = token_breakdown(&trajectories, tokenizer.as_ref())
        .map_err(|e| CliError::config(e.to_string()))?;
    let matrix: Option<TransitionMatrix> = transition_matrix(&trajectories).ok();

    let mut analysis = serde_json::json!({
        "trajectories": trajectories.len(),
        "turn_stats": turns,
        "token_breakdown": tokens,
    });

    if let Some(matrix) = &matrix {
        out.write("transition_matrix.csv", &render_matrix_csv(matrix))?;
        println!("{}", render_matrix_pretty(matrix));
        analysis["transition"] =
            serde_json::to_value(matrix).map_err(|e| CliError::io(e.to_string()))?;
    }

    let mut plot_rows: Vec<(String, f64)> = Vec::new();
    if let Some(problems_path) = &args.problems {
        let problems = load_problems_jsonl(problems_path)
            .map_err(|e| CliError::config(format!("cannot load problems: {e}")))?;
        let corpus: Vec<String> = problems.into_iter().map(|p| p.error_text).collect();
        let distribution =
            category_distribution(&corpus).map_err(|e| CliError::config(e.to_string()))?;
        plot_rows = distribution
            .iter()
            .map(|(category, share)| (category.as_str().to_string(), share.fraction))
            .collect();
        analysis["category_distribution"] =
            serde_json::to_value(&distribution).map_err(|e| CliError::io(e.to_string()))?;
    } else if let Some(matrix) = &matrix {
        plot_rows = matrix
            .usage
            .iter()
            .map(|(tool, share)| (tool.clone(), *share))
            .collect();
    }
    if !plot_rows.is_empty() {
        out.write("plotdata.csv", &render_plot_data(&plot_rows))?;
    }

    if let Some(builds_path) = &args.builds {
        let records = load_build_records(builds_path)?;
        if !records.is_empty() {
            let stats = build_time_stats(&records).map_err(|e| CliError::config(e.to_string()))?;
            analysis["build_time_stats"] =
                serde_json::to_value(&stats).map_err(|e| CliError::io(e.to_string()))?;
        }
    }

    if let Some(compare_path) = &args.compare {
        let compare_trajectories = load_trajectories(std::slice::from_ref(compare_path))?;
        let compare_matrix = transition_matrix(&compare_trajectories)
            .map_err(|e| CliError::config(format!("comparison set: {e}")))?;
        out.write(
            "transition_matrix_compare.csv",
            &render_matrix_csv(&compare_matrix),
        )?;
        if let Some(matrix) = &matrix {
            out.write(
                "transition_delta.csv",
                &render_matrix_delta_csv(matrix, &compare_matrix),
            )?;
        }
        analysis["transition_compare"] =
            serde_json::to_value(&compare_matrix).map_err(|e| CliError::io(e.to_string()))?;
    }

    out.write_json("analysis.json", &analysis)?;
    println!("analysis written to {}", out.root().display());
    out.finish("analyze", 0)?;
    Ok(())
}
