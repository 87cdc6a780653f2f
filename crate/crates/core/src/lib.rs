//! Sandboxed environment and evaluation harness for automated build-repair
//! agents.
//!
//! The crate is organized around the lifecycle of a repair run:
//!
//! - [`fixtures`] defines repository fixtures with injectable build failures,
//!   materializes isolated per-rollout workspaces, and extracts patches.
//! - [`protocol`] parses agent output into tool calls and renders prompts and
//!   tool observations.
//! - [`tools`] implements the ten tool behaviors against a workspace,
//!   including the build runner with timeout supervision.
//! - [`episode`] runs one agent conversation to a terminal reason and records
//!   the trajectory.
//! - [`pipeline_full`] is the iterative repair orchestrator: build, analyze
//!   logs, retrieve a fix, run an episode, branch on error similarity.
//! - [`pipeline_simplified`] is the one-shot batch environment with bounded
//!   concurrent builds and repeated evaluation runs.
//! - [`analysis`] computes error-category distributions, token and turn
//!   statistics, and tool-transition matrices over trajectory logs.

pub mod analysis;
pub mod digest;
pub mod episode;
pub mod fixtures;
pub mod pipeline_full;
pub mod pipeline_simplified;
pub mod protocol;
pub mod tokenize;
pub mod tools;
