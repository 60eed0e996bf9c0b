//! Run artifacts: the per-round CSV and the JSON sidecar.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::compressor::{epsilon_worst_case, Epsilon};
use crate::error::{Error, Result};
use crate::orchestrator::{ExperimentConfig, Mechanism, Trajectory};
use crate::rng::StreamSeeds;
use crate::tasks::{GradientTask, TaskMetadata};

pub const CSV_HEADER: &str = "t,loss,grad_norm_1,sign_errors,zero_coords,sampled,byzantine";

impl Trajectory {
    /// One row per round. `byzantine` counts faulty clients that were sampled.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{},{},{},{}",
                r.t,
                r.loss,
                r.grad_norm_1,
                r.sign_errors,
                r.zero_coords,
                r.sampled.len(),
                r.active_byzantine
            )
            .expect("writing to a String cannot fail");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Per-client privacy loss: one release per round, composed over `T` rounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonReport {
    pub per_round: Epsilon,
    pub rounds: usize,
    pub composed: Epsilon,
}

impl EpsilonReport {
    pub fn for_config(config: &ExperimentConfig, dim: usize) -> Result<Self> {
        let per_round = match config.mechanism {
            Mechanism::Stochastic => epsilon_worst_case(&config.compressor_params()?, dim),
            Mechanism::DeterministicSign => Epsilon::NonPrivate,
        };
        Ok(EpsilonReport {
            per_round,
            rounds: config.rounds,
            composed: per_round.compose(config.rounds as u64),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub seeds: StreamSeeds,
    pub eta: f64,
    pub dim: usize,
    pub task: TaskMetadata,
    pub epsilon: EpsilonReport,
    pub final_loss: f64,
    pub final_grad_norm_1: f64,
    pub mean_grad_norm_1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
}

impl RunSummary {
    pub fn new(
        config: &ExperimentConfig,
        task: &dyn GradientTask,
        traj: &Trajectory,
        test_accuracy: Option<f64>,
    ) -> Result<Self> {
        Ok(RunSummary {
            config: config.clone(),
            seeds: traj.seeds,
            eta: traj.eta,
            dim: task.dim(),
            task: task.metadata().clone(),
            epsilon: EpsilonReport::for_config(config, task.dim())?,
            final_loss: traj.final_loss,
            final_grad_norm_1: traj.final_grad_norm_1,
            mean_grad_norm_1: traj.mean_grad_norm_1(),
            test_accuracy,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}
