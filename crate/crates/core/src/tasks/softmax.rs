//! Multinomial logistic regression and a one-hidden-layer tanh network on a
//! partitioned labeled dataset, with hand-derived gradients.
//!
//! Client `m` minimizes the mean cross-entropy over its shard, and the global
//! objective is the unweighted mean of the client objectives. Inputs are kept
//! in sparse form because MNIST pixels are mostly zero.
//!
//! Parameter layout (`D` inputs, `C` classes, `H` hidden units):
//!
//! * softmax: `W[c][j]` at `c·D + j`, then bias `b[c]` at `C·D + c`.
//! * MLP: `W1[k][j]` at `k·D + j`, `b1[k]` at `H·D + k`,
//!   `W2[c][k]` at `H·D + H + c·H + k`, `b2[c]` at `H·D + H + C·H + c`.

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::tasks::{check_client, DirichletPartition, GradientTask, LabeledDataset, NoiseClass, TaskMetadata};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Softmax,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone)]
struct SparseRow {
    index: Vec<u32>,
    value: Vec<f64>,
}

impl SparseRow {
    fn from_dense(x: &[f32]) -> Self {
        let mut index = Vec::new();
        let mut value = Vec::new();
        for (j, &v) in x.iter().enumerate() {
            if v != 0.0 {
                index.push(j as u32);
                value.push(f64::from(v));
            }
        }
        SparseRow { index, value }
    }

    fn dot(&self, dense: &[f64]) -> f64 {
        self.index
            .iter()
            .zip(&self.value)
            .map(|(&j, &v)| dense[j as usize] * v)
            .sum()
    }

    fn axpy(&self, a: f64, dense: &mut [f64]) {
        for (&j, &v) in self.index.iter().zip(&self.value) {
            dense[j as usize] += a * v;
        }
    }

    fn sq_norm(&self) -> f64 {
        self.value.iter().map(|v| v * v).sum()
    }
}

fn sparse_rows(data: &LabeledDataset) -> Vec<SparseRow> {
    (0..data.len())
        .map(|i| SparseRow::from_dense(data.features(i)))
        .collect()
}

/// Overwrites `z` with `softmax(z)` and returns `log Σ exp(z)`.
fn softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
    max + sum.ln()
}

#[derive(Debug, Clone)]
pub struct SoftmaxTask {
    arch: Architecture,
    input_dim: usize,
    classes: usize,
    rows: Vec<SparseRow>,
    labels: Vec<u8>,
    shards: Vec<Vec<usize>>,
    metadata: TaskMetadata,
}

/// Per-call scratch buffers.
struct Scratch {
    logits: Vec<f64>,
    hidden: Vec<f64>,
    delta: Vec<f64>,
}

impl SoftmaxTask {
    fn scratch(&self) -> Scratch {
        let h = match self.arch {
            Architecture::Softmax => 0,
            Architecture::Mlp { hidden } => hidden,
        };
        Scratch {
            logits: vec![0.0; self.classes],
            hidden: vec![0.0; h],
            delta: vec![0.0; h],
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn shard_len(&self, client: usize) -> usize {
        self.shards[client].len()
    }

    /// Forward pass; leaves class probabilities in `s.logits` (and hidden
    /// activations in `s.hidden`) and returns the cross-entropy for `label`.
    fn forward(&self, w: &[f64], x: &SparseRow, label: u8, s: &mut Scratch) -> f64 {
        let (d, c) = (self.input_dim, self.classes);
        match self.arch {
            Architecture::Softmax => {
                for k in 0..c {
                    s.logits[k] = w[c * d + k] + x.dot(&w[k * d..(k + 1) * d]);
                }
            }
            Architecture::Mlp { hidden: h } => {
                for k in 0..h {
                    s.hidden[k] = (w[h * d + k] + x.dot(&w[k * d..(k + 1) * d])).tanh();
                }
                let w2 = h * d + h;
                let b2 = w2 + c * h;
                for k in 0..c {
                    let row = &w[w2 + k * h..w2 + (k + 1) * h];
                    s.logits[k] = w[b2 + k] + row.iter().zip(&s.hidden).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        let label = usize::from(label);
        let z = s.logits[label];
        let lse = softmax_in_place(&mut s.logits);
        lse - z
    }

    /// Adds `weight · ∇ℓ(w; x, label)` to `grad` and returns `ℓ`.
    fn accumulate(&self, w: &[f64], i: usize, weight: f64, grad: &mut [f64], s: &mut Scratch) -> f64 {
        let x = &self.rows[i];
        let label = self.labels[i];
        let loss = self.forward(w, x, label, s);
        s.logits[usize::from(label)] -= 1.0;
        let (d, c) = (self.input_dim, self.classes);
        match self.arch {
            Architecture::Softmax => {
                for k in 0..c {
                    let r = weight * s.logits[k];
                    x.axpy(r, &mut grad[k * d..(k + 1) * d]);
                    grad[c * d + k] += r;
                }
            }
            Architecture::Mlp { hidden: h } => {
                let w2 = h * d + h;
                let b2 = w2 + c * h;
                s.delta.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..c {
                    let r = s.logits[k];
                    let row = &w[w2 + k * h..w2 + (k + 1) * h];
                    for q in 0..h {
                        grad[w2 + k * h + q] += weight * r * s.hidden[q];
                        s.delta[q] += r * row[q];
                    }
                    grad[b2 + k] += weight * r;
                }
                for q in 0..h {
                    let dq = weight * s.delta[q] * (1.0 - s.hidden[q] * s.hidden[q]);
                    x.axpy(dq, &mut grad[q * d..(q + 1) * d]);
                    grad[h * d + q] += dq;
                }
            }
        }
        loss
    }

    fn shard_gradient(&self, client: usize, w: &[f64], grad: &mut [f64], weight: f64, s: &mut Scratch) {
        let shard = &self.shards[client];
        let wt = weight / shard.len() as f64;
        for &i in shard {
            self.accumulate(w, i, wt, grad, s);
        }
    }

    /// Mean cross-entropy of `w` on an arbitrary dataset with the same shape.
    pub fn dataset_loss(&self, w: &[f64], data: &LabeledDataset) -> Result<f64> {
        self.check_shape(data)?;
        let mut s = self.scratch();
        let total: f64 = (0..data.len())
            .map(|i| self.forward(w, &SparseRow::from_dense(data.features(i)), data.labels()[i], &mut s))
            .sum();
        Ok(total / data.len() as f64)
    }

    /// Fraction of `data` whose arg-max prediction equals the label.
    pub fn accuracy(&self, w: &[f64], data: &LabeledDataset) -> Result<f64> {
        self.check_shape(data)?;
        let mut s = self.scratch();
        let mut correct = 0usize;
        for i in 0..data.len() {
            self.forward(w, &SparseRow::from_dense(data.features(i)), data.labels()[i], &mut s);
            let pred = s
                .logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(k, _)| k)
                .expect("classes >= 1");
            correct += usize::from(pred == usize::from(data.labels()[i]));
        }
        Ok(correct as f64 / data.len() as f64)
    }

    fn check_shape(&self, data: &LabeledDataset) -> Result<()> {
        if data.input_dim() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: data.input_dim(),
            });
        }
        if data.classes() != self.classes {
            return Err(Error::DimensionMismatch {
                expected: self.classes,
                actual: data.classes(),
            });
        }
        Ok(())
    }

    fn param_count(arch: Architecture, d: usize, c: usize) -> usize {
        match arch {
            Architecture::Softmax => c * (d + 1),
            Architecture::Mlp { hidden: h } => h * (d + 1) + c * (h + 1),
        }
    }
}

/// Builds the task and records empirical constants at the initial point
/// returned by [`GradientTask::initial_point`] with a fixed seed.
pub fn make_softmax_task(
    data: &LabeledDataset,
    partition: &DirichletPartition,
    arch: Architecture,
) -> Result<SoftmaxTask> {
    partition.validate(data.len())?;
    if let Architecture::Mlp { hidden: 0 } = arch {
        return Err(Error::param("hidden", "MLP needs at least one hidden unit"));
    }
    let mut task = SoftmaxTask {
        arch,
        input_dim: data.input_dim(),
        classes: data.classes(),
        rows: sparse_rows(data),
        labels: data.labels().to_vec(),
        shards: partition.assignment.clone(),
        metadata: TaskMetadata {
            grad_bound: 0.0,
            sigma: 0.0,
            smoothness: None,
            loss_lower_bound: Some(0.0),
            noise_class: NoiseClass::Bounded,
            estimated: true,
        },
    };
    let w0 = task.initial_point(&mut crate::rng::seeded(0));
    task.metadata.grad_bound = estimate_grad_bound(&task, &w0);
    task.metadata.sigma = estimate_sigma(&task, &w0);
    task.metadata.smoothness = Some(match arch {
        // Hessian is (diag p − ppᵀ) ⊗ x̃x̃ᵀ with ‖diag p − ppᵀ‖ ≤ ½
        Architecture::Softmax => 0.5 * task.rows.iter().map(|r| r.sq_norm() + 1.0).fold(0.0, f64::max),
        Architecture::Mlp { .. } => estimate_smoothness(&task, &w0),
    });
    Ok(task)
}

/// `max_{m,i} |∇f_{mi}(w)|`.
fn estimate_grad_bound(task: &SoftmaxTask, w: &[f64]) -> f64 {
    let mut s = task.scratch();
    let mut best = 0.0f64;
    let mut g = vec![0.0; task.dim()];
    for m in 0..task.shards.len() {
        g.iter_mut().for_each(|v| *v = 0.0);
        task.shard_gradient(m, w, &mut g, 1.0, &mut s);
        best = g.iter().fold(best, |b, v| b.max(v.abs()));
    }
    best
}

/// Largest per-coordinate standard deviation of single-sample gradients,
/// measured on up to 1000 evenly spaced samples.
fn estimate_sigma(task: &SoftmaxTask, w: &[f64]) -> f64 {
    let n = task.rows.len();
    let probe = n.min(1000);
    let step = n / probe;
    let dim = task.dim();
    let (mut sum, mut sq) = (vec![0.0; dim], vec![0.0; dim]);
    let mut g = vec![0.0; dim];
    let mut s = task.scratch();
    for k in 0..probe {
        g.iter_mut().for_each(|v| *v = 0.0);
        task.accumulate(w, k * step, 1.0, &mut g, &mut s);
        for ((a, b), v) in sum.iter_mut().zip(sq.iter_mut()).zip(&g) {
            *a += v;
            *b += v * v;
        }
    }
    let p = probe as f64;
    sum.iter()
        .zip(&sq)
        .map(|(a, b)| (b / p - (a / p).powi(2)).max(0.0).sqrt())
        .fold(0.0, f64::max)
}

/// `max ‖∇F(w+δ) − ∇F(w)‖ / ‖δ‖` over a few random perturbations of size 1e-3.
fn estimate_smoothness(task: &SoftmaxTask, w: &[f64]) -> f64 {
    let mut rng = crate::rng::seeded(1);
    let base = task.gradient(w);
    let mut best = 0.0f64;
    for _ in 0..4 {
        let delta: Vec<f64> = (0..w.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            })
            .collect();
        let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = 1e-3 / norm;
        let moved: Vec<f64> = w.iter().zip(&delta).map(|(a, b)| a + scale * b).collect();
        let g = task.gradient(&moved);
        let diff = g.iter().zip(&base).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        best = best.max(diff / 1e-3);
    }
    best
}

impl GradientTask for SoftmaxTask {
    fn dim(&self) -> usize {
        Self::param_count(self.arch, self.input_dim, self.classes)
    }

    fn num_clients(&self) -> usize {
        self.shards.len()
    }

    fn loss(&self, w: &[f64]) -> f64 {
        let mut s = self.scratch();
        let m = self.shards.len() as f64;
        self.shards
            .iter()
            .map(|shard| {
                shard
                    .iter()
                    .map(|&i| self.forward(w, &self.rows[i], self.labels[i], &mut s))
                    .sum::<f64>()
                    / shard.len() as f64
            })
            .sum::<f64>()
            / m
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        let mut s = self.scratch();
        let weight = 1.0 / self.shards.len() as f64;
        for m in 0..self.shards.len() {
            self.shard_gradient(m, w, &mut g, weight, &mut s);
        }
        g
    }

    fn client_gradient(&self, client: usize, w: &[f64]) -> Result<Vec<f64>> {
        check_client(client, self.shards.len())?;
        let mut g = vec![0.0; self.dim()];
        self.shard_gradient(client, w, &mut g, 1.0, &mut self.scratch());
        Ok(g)
    }

    fn stochastic_gradient(&self, client: usize, w: &[f64], rng: &mut SimRng) -> Result<Vec<f64>> {
        self.minibatch_gradient(client, w, 1, rng)
    }

    /// Draws `n` distinct samples from the shard; the whole shard when `n`
    /// reaches its size.
    fn minibatch_gradient(&self, client: usize, w: &[f64], n: usize, rng: &mut SimRng) -> Result<Vec<f64>> {
        check_client(client, self.shards.len())?;
        if n == 0 {
            return Err(Error::param("n", "mini-batch size must be >= 1"));
        }
        let shard = &self.shards[client];
        let mut g = vec![0.0; self.dim()];
        let mut s = self.scratch();
        if n >= shard.len() {
            self.shard_gradient(client, w, &mut g, 1.0, &mut s);
        } else {
            let weight = 1.0 / n as f64;
            for k in index::sample(rng, shard.len(), n) {
                self.accumulate(w, shard[k], weight, &mut g, &mut s);
            }
        }
        Ok(g)
    }

    fn metadata(&self) -> &TaskMetadata {
        &self.metadata
    }

    /// Zeros for softmax; `N(0, 1/fan_in)` weights and zero biases for the MLP.
    fn initial_point(&self, rng: &mut SimRng) -> Vec<f64> {
        let mut w = vec![0.0; self.dim()];
        if let Architecture::Mlp { hidden: h } = self.arch {
            let d = self.input_dim;
            let s1 = 1.0 / (d as f64).sqrt();
            let s2 = 1.0 / (h as f64).sqrt();
            let w2 = h * d + h;
            for (k, v) in w.iter_mut().enumerate() {
                let scale = if k < h * d {
                    s1
                } else if k >= w2 && k < w2 + self.classes * h {
                    s2
                } else {
                    continue;
                };
                let z: f64 = StandardNormal.sample(rng);
                *v = scale * z;
            }
        }
        w
    }
}
