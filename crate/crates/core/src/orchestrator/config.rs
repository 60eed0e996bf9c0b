//! Experiment configuration (one JSON object per experiment).
//!
//! ```json
//! {
//!   "M": 20, "p": 0.5, "T": 200, "eta": "auto", "n": 4,
//!   "B": 1.0, "beta": 0.1, "aggregation": "majority",
//!   "task": {"kind": "quadratic", "d": 10, "heterogeneity": 0.5, "sigma": 0.2},
//!   "adversary": {"mode": "adaptive", "tau": 2, "attack": "sign_flip"},
//!   "seed": 7
//! }
//! ```
//!
//! Optional keys: `mechanism` (`"stochastic"` or `"deterministic_sign"`),
//! `seeds` (per-stream overrides), `w0` (`"zero"`, `"task_default"`, or a
//! vector), `record_stride` (0 keeps no weight history), and `c`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::AdversarySpec;
use crate::aggregation::AggregationRule;
use crate::compressor::CompressorParams;
use crate::error::{Error, Result};
use crate::rng::StreamSeeds;
use crate::tasks::{Architecture, PartitionMode};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "StepRepr", into = "StepRepr")]
pub enum StepSize {
    /// `η = 1/√(dT)`.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StepRepr {
    Number(f64),
    Word(String),
}

impl TryFrom<StepRepr> for StepSize {
    type Error = String;

    fn try_from(r: StepRepr) -> std::result::Result<Self, String> {
        match r {
            StepRepr::Number(x) => Ok(StepSize::Fixed(x)),
            StepRepr::Word(w) if w == "auto" => Ok(StepSize::Auto),
            StepRepr::Word(w) => Err(format!("eta must be a number or \"auto\", got \"{w}\"")),
        }
    }
}

impl From<StepSize> for StepRepr {
    fn from(s: StepSize) -> Self {
        match s {
            StepSize::Auto => StepRepr::Word("auto".into()),
            StepSize::Fixed(x) => StepRepr::Number(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "InitRepr", into = "InitRepr")]
pub enum InitialPoint {
    #[default]
    Zero,
    /// The task's own initializer (random for the MLP).
    TaskDefault,
    Vector(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum InitRepr {
    Vector(Vec<f64>),
    Word(String),
}

impl TryFrom<InitRepr> for InitialPoint {
    type Error = String;

    fn try_from(r: InitRepr) -> std::result::Result<Self, String> {
        match r {
            InitRepr::Vector(v) => Ok(InitialPoint::Vector(v)),
            InitRepr::Word(w) => match w.as_str() {
                "zero" => Ok(InitialPoint::Zero),
                "task_default" => Ok(InitialPoint::TaskDefault),
                _ => Err(format!(
                    "w0 must be \"zero\", \"task_default\" or a vector, got \"{w}\""
                )),
            },
        }
    }
}

impl From<InitialPoint> for InitRepr {
    fn from(p: InitialPoint) -> Self {
        match p {
            InitialPoint::Zero => InitRepr::Word("zero".into()),
            InitialPoint::TaskDefault => InitRepr::Word("task_default".into()),
            InitialPoint::Vector(v) => InitRepr::Vector(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// The β-stochastic sign compressor.
    #[default]
    Stochastic,
    /// Plain `sign(·)` of the mini-batch gradient; not private.
    DeterministicSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compression: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_noise: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    /// `f_m(w) = ½‖w − a_m‖²` with Gaussian gradient noise.
    Quadratic {
        d: usize,
        #[serde(default)]
        heterogeneity: f64,
        #[serde(default)]
        sigma: f64,
        #[serde(default = "default_radius")]
        domain_radius: f64,
        /// Explicit client optima; overrides `heterogeneity`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        optima: Option<Vec<Vec<f64>>>,
    },
    /// Cross-entropy on MNIST IDX files found in `dir`.
    Mnist {
        dir: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_samples: Option<usize>,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        partition: PartitionMode,
        /// Previously exported partition; replaces the Dirichlet draw.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        partition_file: Option<PathBuf>,
        #[serde(default = "default_arch")]
        arch: Architecture,
        /// Evaluate final accuracy on the t10k files.
        #[serde(default)]
        evaluate_test: bool,
    },
}

fn default_radius() -> f64 {
    10.0
}

fn default_alpha() -> f64 {
    1.0
}

fn default_arch() -> Architecture {
    Architecture::Softmax
}

fn default_n() -> usize {
    1
}

fn default_c() -> f64 {
    0.5
}

fn default_rule() -> AggregationRule {
    AggregationRule::Majority
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "M")]
    pub clients: usize,
    pub p: f64,
    #[serde(rename = "T")]
    pub rounds: usize,
    #[serde(default)]
    pub eta: StepSize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(rename = "B")]
    pub clip_bound: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub mechanism: Mechanism,
    #[serde(default = "default_rule")]
    pub aggregation: AggregationRule,
    pub task: TaskSpec,
    #[serde(default)]
    pub adversary: AdversarySpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seeds: SeedOverrides,
    #[serde(default)]
    pub w0: InitialPoint,
    #[serde(default)]
    pub record_stride: usize,
    #[serde(default = "default_c")]
    pub c: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative data paths are resolved against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let TaskSpec::Mnist {
            dir, partition_file, ..
        } = &mut cfg.task
        {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
            if let Some(f) = partition_file {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::config("M", "need at least one client"));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::config(
                "p",
                format!("sampling probability must lie in (0, 1], got {}", self.p),
            ));
        }
        if self.rounds == 0 {
            return Err(Error::config("T", "need at least one round"));
        }
        if self.n == 0 {
            return Err(Error::config("n", "mini-batch size must be >= 1"));
        }
        if let StepSize::Fixed(eta) = self.eta {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(Error::config("eta", format!("must be finite and >= 0, got {eta}")));
            }
        }
        if !(self.clip_bound > 0.0 && self.clip_bound.is_finite()) {
            return Err(Error::config(
                "B",
                format!("must be finite and > 0, got {}", self.clip_bound),
            ));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config(
                "beta",
                format!("must be finite and >= 0, got {}", self.beta),
            ));
        }
        if !(self.c > 0.0 && self.c < 0.6) {
            return Err(Error::config("c", format!("must lie in (0, 3/5), got {}", self.c)));
        }
        let tau = self.adversary.tau.max();
        if tau > self.clients {
            return Err(Error::config(
                "adversary.tau",
                format!("tau={tau} exceeds M={}", self.clients),
            ));
        }
        match &self.task {
            TaskSpec::Quadratic {
                d,
                heterogeneity,
                sigma,
                domain_radius,
                optima,
            } => {
                if *d == 0 {
                    return Err(Error::config("task.d", "dimension must be >= 1"));
                }
                if !(*sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::config(
                        "task.sigma",
                        format!("must be finite and >= 0, got {sigma}"),
                    ));
                }
                if !(*heterogeneity >= 0.0 && heterogeneity.is_finite()) {
                    return Err(Error::config("task.heterogeneity", "must be finite and >= 0"));
                }
                if !(*domain_radius >= 0.0 && domain_radius.is_finite()) {
                    return Err(Error::config("task.domain_radius", "must be finite and >= 0"));
                }
                if let Some(a) = optima {
                    if a.len() != self.clients || a.iter().any(|v| v.len() != *d) {
                        return Err(Error::config(
                            "task.optima",
                            format!("need {} vectors of length {d}", self.clients),
                        ));
                    }
                }
            }
            TaskSpec::Mnist { alpha, arch, .. } => {
                if !(*alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::config(
                        "task.alpha",
                        format!("must be finite and > 0, got {alpha}"),
                    ));
                }
                if let Architecture::Mlp { hidden: 0 } = arch {
                    return Err(Error::config("task.arch", "MLP needs at least one hidden unit"));
                }
            }
        }
        if let InitialPoint::Vector(v) = &self.w0 {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::config("w0", format!("entry {i} is not finite")));
            }
        }
        Ok(())
    }

    pub fn stream_seeds(&self) -> StreamSeeds {
        let mut s = StreamSeeds::from_master(self.seed);
        let o = &self.seeds;
        if let Some(v) = o.sampling {
            s.sampling = v;
        }
        if let Some(v) = o.compression {
            s.compression = v;
        }
        if let Some(v) = o.task_noise {
            s.task_noise = v;
        }
        if let Some(v) = o.adversary {
            s.adversary = v;
        }
        s
    }

    pub fn compressor_params(&self) -> Result<CompressorParams> {
        CompressorParams::new(self.clip_bound, self.beta)
    }

    pub fn resolved_eta(&self, dim: usize) -> f64 {
        match self.eta {
            StepSize::Auto => 1.0 / ((dim * self.rounds) as f64).sqrt(),
            StepSize::Fixed(eta) => eta,
        }
    }
}
