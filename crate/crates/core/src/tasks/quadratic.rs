//! Synthetic quadratic objective with exactly known constants.
//!
//! `f_m(w) = ½‖w − a_m‖²`, so `∇f_m(w) = w − a_m`, `L = 1`, and the global
//! minimizer is the mean optimum `ā`. Gradients are only bounded on a compact
//! domain; the declared `B₀` holds for `‖w‖_∞ ≤ domain_radius`.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::tasks::{check_client, GradientTask, NoiseClass, TaskMetadata};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    optima: Vec<Vec<f64>>,
    mean_optimum: Vec<f64>,
    sigma: f64,
    domain_radius: f64,
    metadata: TaskMetadata,
}

impl QuadraticTask {
    /// Builds the task from explicit client optima `a_m`.
    pub fn from_optima(optima: Vec<Vec<f64>>, sigma: f64, domain_radius: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::param("sigma", format!("must be finite and >= 0, got {sigma}")));
        }
        if !(domain_radius >= 0.0) || !domain_radius.is_finite() {
            return Err(Error::param("domain_radius", "must be finite and >= 0"));
        }
        let clients = optima.len();
        if clients == 0 {
            return Err(Error::param("M", "need at least one client"));
        }
        let dim = optima[0].len();
        if dim == 0 {
            return Err(Error::param("d", "dimension must be >= 1"));
        }
        for a in &optima {
            if a.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: a.len(),
                });
            }
            if let Some((index, &value)) = a.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite { index, value });
            }
        }
        let mut mean_optimum = vec![0.0; dim];
        for a in &optima {
            for (s, x) in mean_optimum.iter_mut().zip(a) {
                *s += x;
            }
        }
        mean_optimum.iter_mut().for_each(|s| *s /= clients as f64);
        let max_abs = optima.iter().flat_map(|a| a.iter()).fold(0.0f64, |m, x| m.max(x.abs()));
        let f_star = optima.iter().map(|a| 0.5 * sq_dist(&mean_optimum, a)).sum::<f64>() / clients as f64;
        let metadata = TaskMetadata {
            grad_bound: domain_radius + max_abs,
            sigma,
            smoothness: Some(1.0),
            loss_lower_bound: Some(f_star),
            noise_class: NoiseClass::Gaussian,
            estimated: false,
        };
        Ok(QuadraticTask {
            optima,
            mean_optimum,
            sigma,
            domain_radius,
            metadata,
        })
    }

    pub fn optima(&self) -> &[Vec<f64>] {
        &self.optima
    }

    /// Global minimizer `ā`.
    pub fn minimizer(&self) -> &[f64] {
        &self.mean_optimum
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Client optima are `a_m ~ heterogeneity · N(0, I_d)`.
pub fn make_quadratic_task(
    clients: usize,
    dim: usize,
    heterogeneity: f64,
    sigma: f64,
    domain_radius: f64,
    rng: &mut SimRng,
) -> Result<QuadraticTask> {
    if !(heterogeneity >= 0.0) || !heterogeneity.is_finite() {
        return Err(Error::param("heterogeneity", "must be finite and >= 0"));
    }
    let optima = (0..clients)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    heterogeneity * z
                })
                .collect()
        })
        .collect();
    QuadraticTask::from_optima(optima, sigma, domain_radius)
}

impl GradientTask for QuadraticTask {
    fn dim(&self) -> usize {
        self.mean_optimum.len()
    }

    fn num_clients(&self) -> usize {
        self.optima.len()
    }

    fn loss(&self, w: &[f64]) -> f64 {
        0.5 * sq_dist(w, &self.mean_optimum) + self.metadata.loss_lower_bound.unwrap_or(0.0)
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        w.iter().zip(&self.mean_optimum).map(|(x, a)| x - a).collect()
    }

    fn client_gradient(&self, client: usize, w: &[f64]) -> Result<Vec<f64>> {
        check_client(client, self.optima.len())?;
        Ok(w.iter().zip(&self.optima[client]).map(|(x, a)| x - a).collect())
    }

    fn stochastic_gradient(&self, client: usize, w: &[f64], rng: &mut SimRng) -> Result<Vec<f64>> {
        self.minibatch_gradient(client, w, 1, rng)
    }

    /// The mean of `n` iid `N(0, σ²)` perturbations is one `N(0, σ²/n)` draw.
    fn minibatch_gradient(&self, client: usize, w: &[f64], n: usize, rng: &mut SimRng) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::param("n", "mini-batch size must be >= 1"));
        }
        let mut g = self.client_gradient(client, w)?;
        if self.sigma > 0.0 {
            let scale = self.sigma / (n as f64).sqrt();
            for x in g.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *x += scale * z;
            }
        }
        Ok(g)
    }

    fn metadata(&self) -> &TaskMetadata {
        &self.metadata
    }
}
