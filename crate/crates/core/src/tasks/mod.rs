//! Objectives the simulator trains on.
//!
//! A task exposes the global objective `F(w) = (1/M) Σ_m f_m(w)`, its true
//! gradient, per-client gradients, and a stochastic-gradient oracle that
//! draws from a caller-owned generator. Each task also records the constants
//! the convergence analysis needs.

mod idx;
mod partition;
mod quadratic;
mod softmax;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

pub use idx::{load_dataset, parse_idx, read_idx_file, IdxData};
pub use partition::{dirichlet_partition, DirichletPartition, PartitionMode};
pub use quadratic::{make_quadratic_task, QuadraticTask};
pub use softmax::{make_softmax_task, Architecture, SoftmaxTask};

/// Tail behaviour of the stochastic-gradient noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseClass {
    Bounded,
    Gaussian,
    SubGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetadata {
    /// Coordinate-wise bound `B₀` on every client's true gradient.
    pub grad_bound: f64,
    /// Per-coordinate noise scale `σ` of a single stochastic gradient.
    pub sigma: f64,
    /// Smoothness constant `L`, if known.
    pub smoothness: Option<f64>,
    /// Lower bound `F*` on the objective, if known.
    pub loss_lower_bound: Option<f64>,
    pub noise_class: NoiseClass,
    /// True when `grad_bound`/`smoothness` were estimated rather than derived.
    pub estimated: bool,
}

pub trait GradientTask: Send + Sync {
    fn dim(&self) -> usize;

    fn num_clients(&self) -> usize;

    /// Global objective `F(w)`.
    fn loss(&self, w: &[f64]) -> f64;

    /// `∇F(w)`.
    fn gradient(&self, w: &[f64]) -> Vec<f64>;

    /// `∇f_m(w)`.
    fn client_gradient(&self, client: usize, w: &[f64]) -> Result<Vec<f64>>;

    /// One unbiased sample of `∇f_m(w)`.
    fn stochastic_gradient(&self, client: usize, w: &[f64], rng: &mut SimRng) -> Result<Vec<f64>>;

    /// Average of `n` independent stochastic gradients.
    fn minibatch_gradient(&self, client: usize, w: &[f64], n: usize, rng: &mut SimRng) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::param("n", "mini-batch size must be >= 1"));
        }
        let mut acc = vec![0.0; self.dim()];
        for _ in 0..n {
            let g = self.stochastic_gradient(client, w, rng)?;
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
        let inv = 1.0 / n as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(acc)
    }

    fn metadata(&self) -> &TaskMetadata;

    /// Default starting point when a configuration does not give one.
    fn initial_point(&self, _rng: &mut SimRng) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

pub(crate) fn check_client(client: usize, clients: usize) -> Result<()> {
    if client < clients {
        Ok(())
    } else {
        Err(Error::ClientOutOfRange { client, clients })
    }
}

/// Feature matrix with labels. Features are raw bytes scaled by 1/255.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f32>,
    labels: Vec<u8>,
    input_dim: usize,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<f32>, labels: Vec<u8>, input_dim: usize, classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::param("labels", "dataset must contain at least one sample"));
        }
        if input_dim == 0 || features.len() != labels.len() * input_dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * input_dim,
                actual: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= classes) {
            return Err(Error::param("labels", format!("label {bad} outside [0, {classes})")));
        }
        Ok(LabeledDataset {
            features,
            labels,
            input_dim,
            classes,
        })
    }

    pub fn from_bytes(pixels: &[u8], labels: Vec<u8>, input_dim: usize, classes: usize) -> Result<Self> {
        let features = pixels.iter().map(|&b| f32::from(b) / 255.0).collect();
        Self::new(features, labels, input_dim, classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn features(&self, i: usize) -> &[f32] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Keeps the first `n` samples.
    pub fn truncated(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        LabeledDataset {
            features: self.features[..n * self.input_dim].to_vec(),
            labels: self.labels[..n].to_vec(),
            input_dim: self.input_dim,
            classes: self.classes,
        }
    }
}

/// Central finite-difference directional derivative of `f` at `w` along `u`.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, w: &[f64], u: &[f64], h: f64) -> f64 {
    let plus: Vec<f64> = w.iter().zip(u).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = w.iter().zip(u).map(|(a, b)| a - h * b).collect();
    (f(&plus) - f(&minus)) / (2.0 * h)
}
