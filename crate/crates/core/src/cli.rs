//! Command-line entry points.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success, or the check passed |
//! | 1 | a check ran and failed |
//! | 2 | bad flags, invalid config or parameters, unreadable input |
//! | 3 | `audit` found the mechanism non-private (β = 0) |
//! | 4 | an output file could not be written |

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::aggregation::exhaustive_sweep;
use crate::analysis::{audit_dp, check_config, default_pair_grid, Verdict, DEFAULT_REPLICAS};
use crate::compressor::{CompressorParams, Epsilon};
use crate::error::Error;
use crate::orchestrator::{Experiment, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NON_PRIVATE: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Points in the audit's scalar pair grid.
pub const AUDIT_GRID_POINTS: usize = 41;

#[derive(Debug, Parser)]
#[command(
    name = "signfl",
    version,
    about = "Stochastic sign SGD simulator and analysis toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its trajectory and summary.
    Run(RunArgs),
    /// Monte Carlo audit of the scalar compressor's privacy loss.
    Audit(AuditArgs),
    /// Compare multi-seed runs of a config against the convergence bound.
    CheckBounds(CheckArgs),
    /// Exhaustively check that all aggregation rules agree in sign.
    VerifyAggregation(SweepArgs),
    /// Write the client data partition of an MNIST config.
    Partition(PartitionArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long = "B")]
    pub clip_bound: f64,
    #[arg(long)]
    pub beta: f64,
    /// Draws per grid point.
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Writes the JSON report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// First of the replica seeds; defaults to the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub max_clients: usize,
    #[arg(long)]
    pub max_dim: usize,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli.command, stdout, stderr),
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            if e.use_stderr() {
                EXIT_USAGE
            } else {
                let _ = write!(stdout, "{}", e.render());
                EXIT_OK
            }
        }
    }
}

pub fn execute(command: &Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = match command {
        Command::Run(a) => cmd_run(a, stdout),
        Command::Audit(a) => cmd_audit(a, stdout, stderr),
        Command::CheckBounds(a) => cmd_check_bounds(a, stdout, stderr),
        Command::VerifyAggregation(a) => cmd_verify_aggregation(a, stdout),
        Command::Partition(a) => cmd_partition(a, stdout),
    };
    result.unwrap_or_else(|e| {
        let _ = writeln!(stderr, "error: {}", e.error);
        e.code
    })
}

pub struct CliError {
    pub code: i32,
    pub error: Error,
}

impl From<Error> for CliError {
    fn from(error: Error) -> Self {
        CliError {
            code: EXIT_USAGE,
            error,
        }
    }
}

type CmdResult = std::result::Result<i32, CliError>;

fn write_file(path: &Path, contents: &str) -> std::result::Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError {
        code: EXIT_IO,
        error: Error::io(path, e),
    })
}

fn load_config(path: &Path, seed: Option<u64>) -> std::result::Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::from_file(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn to_json<T: serde::Serialize>(value: &T) -> std::result::Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

/// Writes `trajectory.csv`, `config.json` and `summary.json` into `out`.
pub fn cmd_run(args: &RunArgs, stdout: &mut dyn Write) -> CmdResult {
    let config = load_config(&args.config, args.seed)?;
    let experiment = Experiment::new(config)?;
    let traj = experiment.run()?;
    let summary = experiment.summary(&traj)?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError {
        code: EXIT_IO,
        error: Error::io(&args.out, e),
    })?;
    write_file(&args.out.join("trajectory.csv"), &traj.to_csv())?;
    write_file(&args.out.join("config.json"), &to_json(&experiment.config)?)?;
    write_file(&args.out.join("summary.json"), &to_json(&summary)?)?;
    if let Some(p) = &experiment.partition {
        write_file(&args.out.join("partition.json"), &p.to_json()?)?;
    }
    let _ = writeln!(
        stdout,
        "rounds={} final_loss={:.6e} final_grad_norm_1={:.6e} epsilon={}",
        traj.records.len(),
        summary.final_loss,
        summary.final_grad_norm_1,
        format_epsilon(summary.epsilon.composed)
    );
    if let Some(acc) = summary.test_accuracy {
        let _ = writeln!(stdout, "test_accuracy={acc:.4}");
    }
    Ok(EXIT_OK)
}

fn format_epsilon(e: Epsilon) -> String {
    match e {
        Epsilon::Private(v) => format!("{v:.4}"),
        Epsilon::NonPrivate => "inf".into(),
    }
}

/// Audits the scalar compressor on the default pair grid.
pub fn cmd_audit(args: &AuditArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    let params = CompressorParams::new(args.clip_bound, args.beta)?;
    let grid = default_pair_grid(args.clip_bound, AUDIT_GRID_POINTS);
    let report = audit_dp(&params, &grid, args.samples, args.seed)?;
    let json = to_json(&report)?;
    // the summary goes wherever the JSON does not
    let summary: &mut dyn Write = match &args.out {
        Some(path) => {
            write_file(path, &json)?;
            stdout
        }
        None => {
            let _ = stdout.write_all(json.as_bytes());
            stderr
        }
    };
    let _ = writeln!(
        summary,
        "B={} beta={} samples={} cap={} analytic_max={:.6} empirical_max={:.6} verdict={:?}",
        args.clip_bound,
        args.beta,
        args.samples,
        format_epsilon(report.cap),
        report.analytic_max,
        report.empirical_max,
        report.verdict
    );
    if let Some(w) = &report.witness {
        let _ = writeln!(
            summary,
            "witness: P({:?} | {}) = {} while P({:?} | {}) = {}",
            w.outcome, w.g, w.p_at_g, w.outcome, w.g_prime, w.p_at_g_prime
        );
    }
    Ok(match report.verdict {
        Verdict::Pass => EXIT_OK,
        Verdict::Fail => EXIT_FAIL,
        Verdict::NonPrivate => EXIT_NON_PRIVATE,
    })
}

/// Runs the config over `DEFAULT_REPLICAS` seeds and compares the mean
/// gradient norm with the convergence bound.
pub fn cmd_check_bounds(args: &CheckArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    let config = load_config(&args.config, args.seed)?;
    let experiment = Experiment::new(config)?;
    let check = check_config(&experiment.config, experiment.task.as_task(), DEFAULT_REPLICAS)?;
    let json = to_json(&check)?;
    let summary: &mut dyn Write = match &args.out {
        Some(path) => {
            write_file(path, &json)?;
            stdout
        }
        None => {
            let _ = stdout.write_all(json.as_bytes());
            stderr
        }
    };
    if let Some(reason) = &check.skipped {
        let _ = writeln!(summary, "warning: check skipped: {reason}");
        return Ok(EXIT_OK);
    }
    let bound = check.bound.as_ref().map_or(f64::NAN, |b| b.value);
    let _ = writeln!(
        summary,
        "replicas={} empirical_mean={:.6e} bound={:.6e} {}",
        check.per_run.len(),
        check.empirical_mean,
        bound,
        if check.passed { "PASS" } else { "FAIL" }
    );
    Ok(if check.passed { EXIT_OK } else { EXIT_FAIL })
}

pub fn cmd_verify_aggregation(args: &SweepArgs, stdout: &mut dyn Write) -> CmdResult {
    let report = exhaustive_sweep(args.max_clients, args.max_dim)?;
    let _ = writeln!(
        stdout,
        "matrices={} checks={} failures={} {}",
        report.matrices,
        report.checks,
        report.failures,
        if report.passed() { "PASS" } else { "FAIL" }
    );
    Ok(if report.passed() { EXIT_OK } else { EXIT_FAIL })
}

pub fn cmd_partition(args: &PartitionArgs, stdout: &mut dyn Write) -> CmdResult {
    let config = load_config(&args.config, args.seed)?;
    let experiment = Experiment::new(config)?;
    let partition = experiment
        .partition
        .as_ref()
        .ok_or_else(|| Error::config("task.kind", "only mnist tasks have a data partition"))?;
    write_file(&args.out, &partition.to_json()?)?;
    let sizes: Vec<usize> = partition.assignment.iter().map(Vec::len).collect();
    let _ = writeln!(
        stdout,
        "clients={} samples={} smallest_shard={} largest_shard={}",
        sizes.len(),
        sizes.iter().sum::<usize>(),
        sizes.iter().min().copied().unwrap_or(0),
        sizes.iter().max().copied().unwrap_or(0)
    );
    Ok(EXIT_OK)
}
