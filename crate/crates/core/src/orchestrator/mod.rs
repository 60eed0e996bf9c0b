//! The federated protocol loop.
//!
//! Each round: sample `S(t)`, pick `B(t)`, collect honest or corrupted
//! reports, drop entries outside `{±1}`, aggregate, take the sign and step
//! `w ← w − η g̃`. Diagnostics use the true gradient and never feed back
//! into the protocol.
//!
//! Randomness is split by stream and keyed by `(round, lane)`:
//!
//! | draw | stream | lane |
//! |---|---|---|
//! | `S(t)` | sampling | global |
//! | trimmed-mean tie breaks | sampling | server |
//! | `B(t)` | adversary | global |
//! | mini-batch of client `m` | task noise | `m` |
//! | compression of client `m` | compression | `m` |
//! | attack noise of client `m` | adversary | `m` |
//!
//! Task construction, partitioning and random initial points use the task
//! noise stream at a round index no protocol round can reach.

mod config;
mod output;

use rand::Rng;
use serde::Serialize;

use crate::adversary::{choose_faults, corrupt, AdversarySpec, Attack};
use crate::aggregation::{aggregate_tallies, AggregateSign, AggregationRule, Tally};
use crate::compressor::{compress, compress_deterministic_sign, CompressorParams, Sign};
use crate::error::{Error, Result};
use crate::rng::{SimRng, Stream, StreamSeeds, GLOBAL_LANE};
use crate::tasks::{
    dirichlet_partition, load_dataset, make_quadratic_task, make_softmax_task, DirichletPartition, GradientTask,
    LabeledDataset, QuadraticTask, SoftmaxTask,
};

pub use config::{ExperimentConfig, InitialPoint, Mechanism, SeedOverrides, StepSize, TaskSpec};
pub use output::{EpsilonReport, RunSummary, CSV_HEADER};

/// Lane for server-side randomness.
pub const SERVER_LANE: u64 = GLOBAL_LANE - 1;
/// Round index reserved for setup draws.
pub const SETUP_ROUND: u64 = u64::MAX;
const TASK_LANE: u64 = 0;
const PARTITION_LANE: u64 = 1;
const INIT_LANE: u64 = 2;

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// How an honest client turns its mini-batch gradient into a message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Compressor {
    Stochastic(CompressorParams),
    DeterministicSign,
}

impl Compressor {
    pub fn apply<R: Rng + ?Sized>(&self, g: &[f64], rng: &mut R) -> Result<Vec<Sign>> {
        match self {
            Compressor::Stochastic(p) => compress(g, p, rng),
            Compressor::DeterministicSign => compress_deterministic_sign(g),
        }
    }
}

/// Includes each client independently with probability `p`. Ascending order.
pub fn sample_clients<R: Rng + ?Sized>(clients: usize, p: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::param("p", format!("must lie in (0, 1], got {p}")));
    }
    Ok((0..clients).filter(|_| rng.gen::<f64>() < p).collect())
}

/// Mini-batch gradient of `n` draws, then compression.
pub fn honest_report(
    client: usize,
    w: &[f64],
    task: &dyn GradientTask,
    n: usize,
    compressor: &Compressor,
    noise_rng: &mut SimRng,
    compression_rng: &mut SimRng,
) -> Result<Vec<Sign>> {
    let g = task.minibatch_gradient(client, w, n, noise_rng)?;
    compressor.apply(&g, compression_rng)
}

/// Per-coordinate multisets of the valid (`±1`) entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilteredReports {
    pub tallies: Vec<Tally>,
    /// Number of discarded entries in each coordinate.
    pub dropped: Vec<usize>,
}

impl FilteredReports {
    pub fn total_dropped(&self) -> usize {
        self.dropped.iter().sum()
    }
}

pub fn filter_reports(reports: &[Vec<f64>], dim: usize) -> Result<FilteredReports> {
    let mut tallies = vec![Tally::default(); dim];
    let mut dropped = vec![0; dim];
    for r in reports {
        if r.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: r.len(),
            });
        }
        for (i, &v) in r.iter().enumerate() {
            if v == 1.0 {
                tallies[i].push(Sign::Plus);
            } else if v == -1.0 {
                tallies[i].push(Sign::Minus);
            } else {
                dropped[i] += 1;
            }
        }
    }
    Ok(FilteredReports { tallies, dropped })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub t: usize,
    /// `S(t)`.
    pub sampled: Vec<usize>,
    /// `B(t)`; only members of `S(t)` actually send anything.
    pub byzantine: Vec<usize>,
    /// `|B(t) ∩ S(t)|`.
    pub active_byzantine: usize,
    pub g_tilde: AggregateSign,
    /// `F(w(t))`.
    pub loss: f64,
    /// `‖∇F(w(t))‖₁`.
    pub grad_norm_1: f64,
    /// `#{i : ∇F_i ≠ 0, g̃_i ≠ sign(∇F_i)}`.
    pub sign_errors: usize,
    pub zero_coords: usize,
    /// Report entries discarded by the filter.
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub records: Vec<RoundRecord>,
    /// `(t, w(t))` every `record_stride` rounds, plus `w(T)`.
    pub history: Vec<(usize, Vec<f64>)>,
    pub final_w: Vec<f64>,
    pub final_loss: f64,
    pub final_grad_norm_1: f64,
    pub eta: f64,
    pub seeds: StreamSeeds,
}

impl Trajectory {
    /// `(1/T) Σ_t ‖∇F(w(t))‖₁`.
    pub fn mean_grad_norm_1(&self) -> f64 {
        self.records.iter().map(|r| r.grad_norm_1).sum::<f64>() / self.records.len() as f64
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }
}

/// Everything a round needs besides the model.
pub struct RoundContext<'a> {
    pub task: &'a dyn GradientTask,
    pub clients: usize,
    pub p: f64,
    pub n: usize,
    pub eta: f64,
    pub compressor: Compressor,
    pub rule: AggregationRule,
    pub adversary: &'a AdversarySpec,
    pub seeds: StreamSeeds,
}

fn strict_sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Runs round `t` from `w(t)`, updating `w` in place to `w(t+1)`.
pub fn run_round(ctx: &RoundContext<'_>, w: &mut [f64], t: usize) -> Result<RoundRecord> {
    let task = ctx.task;
    let dim = task.dim();
    if w.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: w.len(),
        });
    }
    let round = t as u64;
    let seeds = &ctx.seeds;

    let sampled = sample_clients(ctx.clients, ctx.p, &mut seeds.rng(Stream::Sampling, round, GLOBAL_LANE))?;
    let faults = choose_faults(
        ctx.adversary,
        t,
        ctx.clients,
        &sampled,
        &mut seeds.rng(Stream::Adversary, round, GLOBAL_LANE),
    )?;

    let mut reports = Vec::with_capacity(sampled.len());
    let mut active_byzantine = 0;
    for &m in &sampled {
        let lane = m as u64;
        let honest = honest_report(
            m,
            w,
            task,
            ctx.n,
            &ctx.compressor,
            &mut seeds.rng(Stream::TaskNoise, round, lane),
            &mut seeds.rng(Stream::Compression, round, lane),
        )?;
        if faults.contains(m) {
            active_byzantine += 1;
            let true_sign = if ctx.adversary.attack == Attack::TrueSignFlip {
                compress_deterministic_sign(&task.client_gradient(m, w)?)?
            } else {
                Vec::new()
            };
            let mut rng = seeds.rng(Stream::Adversary, round, lane);
            reports.push(corrupt(&honest, ctx.adversary.attack, &true_sign, &mut rng));
        } else {
            reports.push(honest.iter().map(|s| s.as_f64()).collect());
        }
    }

    let filtered = filter_reports(&reports, dim)?;
    let g_tilde = aggregate_tallies(
        ctx.rule,
        &filtered.tallies,
        &mut seeds.rng(Stream::Sampling, round, SERVER_LANE),
    );

    let grad = task.gradient(w);
    let loss = task.loss(w);
    let grad_norm_1 = grad.iter().map(|g| g.abs()).sum();
    let sign_errors = grad
        .iter()
        .zip(g_tilde.as_slice())
        .filter(|(&g, &s)| g != 0.0 && s != strict_sign(g))
        .count();

    for (wi, &s) in w.iter_mut().zip(g_tilde.as_slice()) {
        *wi -= ctx.eta * f64::from(s);
    }

    Ok(RoundRecord {
        t,
        sampled,
        byzantine: faults.byzantine,
        active_byzantine,
        zero_coords: g_tilde.zero_count(),
        g_tilde,
        loss,
        grad_norm_1,
        sign_errors,
        dropped: filtered.total_dropped(),
    })
}

/// A task built from a [`TaskSpec`].
#[derive(Debug, Clone)]
pub enum BuiltTask {
    Quadratic(QuadraticTask),
    Softmax(Box<SoftmaxTask>),
}

impl BuiltTask {
    pub fn as_task(&self) -> &dyn GradientTask {
        match self {
            BuiltTask::Quadratic(t) => t,
            BuiltTask::Softmax(t) => t.as_ref(),
        }
    }
}

/// A validated configuration together with its task.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub task: BuiltTask,
    pub partition: Option<DirichletPartition>,
    pub test_set: Option<LabeledDataset>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let seeds = config.stream_seeds();
        let (task, partition, test_set) = match &config.task {
            TaskSpec::Quadratic {
                d,
                heterogeneity,
                sigma,
                domain_radius,
                optima,
            } => {
                let task = match optima {
                    Some(a) => QuadraticTask::from_optima(a.clone(), *sigma, *domain_radius)?,
                    None => make_quadratic_task(
                        config.clients,
                        *d,
                        *heterogeneity,
                        *sigma,
                        *domain_radius,
                        &mut seeds.rng(Stream::TaskNoise, SETUP_ROUND, TASK_LANE),
                    )?,
                };
                (BuiltTask::Quadratic(task), None, None)
            }
            TaskSpec::Mnist {
                dir,
                train_samples,
                alpha,
                partition,
                partition_file,
                arch,
                evaluate_test,
            } => {
                let mut train = load_dataset(&dir.join(MNIST_TRAIN_IMAGES), &dir.join(MNIST_TRAIN_LABELS), 10)?;
                if let Some(k) = train_samples {
                    train = train.truncated(*k);
                }
                let part = match partition_file {
                    Some(path) => {
                        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                        let p = DirichletPartition::from_json(&text, train.len())?;
                        if p.num_clients() != config.clients {
                            return Err(Error::config(
                                "task.partition_file",
                                format!("holds {} clients, config has M={}", p.num_clients(), config.clients),
                            ));
                        }
                        p
                    }
                    None => dirichlet_partition(
                        train.labels(),
                        config.clients,
                        *alpha,
                        *partition,
                        &mut seeds.rng(Stream::TaskNoise, SETUP_ROUND, PARTITION_LANE),
                    )?,
                };
                let task = make_softmax_task(&train, &part, *arch)?;
                let test = if *evaluate_test {
                    Some(load_dataset(
                        &dir.join(MNIST_TEST_IMAGES),
                        &dir.join(MNIST_TEST_LABELS),
                        10,
                    )?)
                } else {
                    None
                };
                (BuiltTask::Softmax(Box::new(task)), Some(part), test)
            }
        };
        Self::check_task(&config, task.as_task())?;
        Ok(Experiment {
            config,
            task,
            partition,
            test_set,
        })
    }

    fn check_task(config: &ExperimentConfig, task: &dyn GradientTask) -> Result<()> {
        if task.num_clients() != config.clients {
            return Err(Error::config(
                "M",
                format!("task has {} clients, config has {}", task.num_clients(), config.clients),
            ));
        }
        if let InitialPoint::Vector(v) = &config.w0 {
            if v.len() != task.dim() {
                return Err(Error::config(
                    "w0",
                    format!("length {} does not match d={}", v.len(), task.dim()),
                ));
            }
        }
        Ok(())
    }

    pub fn run(&self) -> Result<Trajectory> {
        simulate(&self.config, self.task.as_task())
    }

    /// Test-set accuracy of `w`, when the task has a test set.
    pub fn test_accuracy(&self, w: &[f64]) -> Result<Option<f64>> {
        match (&self.task, &self.test_set) {
            (BuiltTask::Softmax(t), Some(test)) => Ok(Some(t.accuracy(w, test)?)),
            _ => Ok(None),
        }
    }

    pub fn summary(&self, traj: &Trajectory) -> Result<RunSummary> {
        let accuracy = self.test_accuracy(&traj.final_w)?;
        RunSummary::new(&self.config, self.task.as_task(), traj, accuracy)
    }
}

pub fn initial_point(config: &ExperimentConfig, task: &dyn GradientTask) -> Result<Vec<f64>> {
    let dim = task.dim();
    Ok(match &config.w0 {
        InitialPoint::Zero => vec![0.0; dim],
        InitialPoint::TaskDefault => {
            task.initial_point(&mut config.stream_seeds().rng(Stream::TaskNoise, SETUP_ROUND, INIT_LANE))
        }
        InitialPoint::Vector(v) => {
            if v.len() != dim {
                return Err(Error::config(
                    "w0",
                    format!("length {} does not match d={dim}", v.len()),
                ));
            }
            v.clone()
        }
    })
}

pub fn compressor_for(config: &ExperimentConfig) -> Result<Compressor> {
    Ok(match config.mechanism {
        Mechanism::Stochastic => Compressor::Stochastic(config.compressor_params()?),
        Mechanism::DeterministicSign => Compressor::DeterministicSign,
    })
}

/// Runs all `T` rounds of `config` on `task`.
pub fn simulate(config: &ExperimentConfig, task: &dyn GradientTask) -> Result<Trajectory> {
    config.validate()?;
    Experiment::check_task(config, task)?;
    let seeds = config.stream_seeds();
    let eta = config.resolved_eta(task.dim());
    let ctx = RoundContext {
        task,
        clients: config.clients,
        p: config.p,
        n: config.n,
        eta,
        compressor: compressor_for(config)?,
        rule: config.aggregation,
        adversary: &config.adversary,
        seeds,
    };
    let mut w = initial_point(config, task)?;
    let stride = config.record_stride;
    let mut history = Vec::new();
    let mut records = Vec::with_capacity(config.rounds);
    for t in 0..config.rounds {
        if stride > 0 && t % stride == 0 {
            history.push((t, w.clone()));
        }
        records.push(run_round(&ctx, &mut w, t)?);
    }
    if stride > 0 {
        history.push((config.rounds, w.clone()));
    }
    let final_loss = task.loss(&w);
    let final_grad_norm_1 = task.gradient(&w).iter().map(|g| g.abs()).sum();
    Ok(Trajectory {
        records,
        history,
        final_w: w,
        final_loss,
        final_grad_norm_1,
        eta,
        seeds,
    })
}

/// Builds the task described by `config` and runs it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Trajectory> {
    Experiment::new(config.clone())?.run()
}
