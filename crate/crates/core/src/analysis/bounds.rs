//! Closed-form sign-error thresholds and convergence bounds.
//!
//! Notation: `c ∈ (0, 3/5)` is the confidence constant,
//!
//! ```text
//! c₀ = max{ √(8σ²/n · ln(6/c)), √(8(B+β)²/p² · ln(6/(3−5c))) }
//! ```
//!
//! and a static adversary is "large" in round `t` when
//! `τ(t) > (2/p²) ln(6/c)`. Adaptive adversaries and small static ones share
//! the same formulas.

use std::f64::consts::PI;

use serde::Serialize;

use crate::adversary::{FaultMode, TauSchedule};
use crate::error::{Error, Result};
use crate::orchestrator::ExperimentConfig;
use crate::tasks::{GradientTask, NoiseClass};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundInputs {
    pub d: usize,
    #[serde(rename = "M")]
    pub clients: usize,
    #[serde(rename = "T")]
    pub rounds: usize,
    pub p: f64,
    pub n: usize,
    pub c: f64,
    #[serde(rename = "B")]
    pub clip_bound: f64,
    pub beta: f64,
    pub sigma: f64,
    #[serde(rename = "B0")]
    pub grad_bound: f64,
    #[serde(rename = "L")]
    pub smoothness: Option<f64>,
    #[serde(rename = "F0")]
    pub f0: f64,
    #[serde(rename = "F_star")]
    pub f_star: Option<f64>,
    pub tau: TauSchedule,
    pub mode: FaultMode,
    pub noise_class: NoiseClass,
}

/// Which of the two adversary cases applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    AdaptiveOrSmallStatic,
    LargeStatic,
}

impl BoundInputs {
    /// Collects inputs from a run configuration, its task, and `F(w(0))`.
    pub fn from_config(config: &ExperimentConfig, task: &dyn GradientTask, f0: f64) -> Self {
        let md = task.metadata();
        BoundInputs {
            d: task.dim(),
            clients: config.clients,
            rounds: config.rounds,
            p: config.p,
            n: config.n,
            c: config.c,
            clip_bound: config.clip_bound,
            beta: config.beta,
            sigma: md.sigma,
            grad_bound: md.grad_bound,
            smoothness: md.smoothness,
            f0,
            f_star: md.loss_lower_bound,
            tau: config.adversary.tau.clone(),
            mode: config.adversary.mode,
            noise_class: md.noise_class,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::BoundUnavailable(what.to_string()));
        if !(self.c > 0.0 && self.c < 0.6) {
            return bad("c must lie in (0, 3/5)");
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad("p must lie in (0, 1]");
        }
        if self.d == 0 || self.clients == 0 || self.rounds == 0 || self.n == 0 {
            return bad("d, M, T and n must be >= 1");
        }
        if !(self.clip_bound > 0.0) || !(self.beta >= 0.0) || !(self.sigma >= 0.0) {
            return bad("need B > 0, beta >= 0, sigma >= 0");
        }
        if self.tau.max() > self.clients {
            return bad("tau exceeds M");
        }
        if self.noise_class != NoiseClass::Bounded {
            // B = (1 + ε₀)B₀ with ε₀ > σ/B₀, i.e. B − B₀ > σ
            if !(self.grad_bound > 0.0) {
                return bad("B0 must be > 0");
            }
            let eps0 = self.clip_bound / self.grad_bound - 1.0;
            if !(eps0 > self.sigma / self.grad_bound) {
                return Err(Error::BoundUnavailable(format!(
                    "need epsilon0 = B/B0 - 1 > sigma/B0, got {eps0} <= {}",
                    self.sigma / self.grad_bound
                )));
            }
        }
        Ok(())
    }

    fn width(&self) -> f64 {
        self.clip_bound + self.beta
    }

    /// `(2/p²) ln(6/c)`.
    pub fn large_tau_cutoff(&self) -> f64 {
        2.0 / (self.p * self.p) * (6.0 / self.c).ln()
    }

    pub fn branch_at(&self, t: usize) -> Branch {
        match self.mode {
            FaultMode::Adaptive => Branch::AdaptiveOrSmallStatic,
            FaultMode::Static if self.tau.at(t) as f64 > self.large_tau_cutoff() => Branch::LargeStatic,
            FaultMode::Static => Branch::AdaptiveOrSmallStatic,
        }
    }

    /// The branch shared by all rounds; mixed schedules have none.
    pub fn branch(&self) -> Result<Branch> {
        let first = self.branch_at(0);
        if (1..self.rounds).any(|t| self.branch_at(t) != first) {
            return Err(Error::BoundUnavailable(
                "static tau schedule crosses the (2/p^2) ln(6/c) cutoff".into(),
            ));
        }
        Ok(first)
    }
}

pub fn c0(inputs: &BoundInputs) -> Result<f64> {
    let c = inputs.c;
    if !(c > 0.0 && c < 0.6) {
        return Err(Error::BoundUnavailable(format!("c must lie in (0, 3/5), got {c}")));
    }
    let noise = (8.0 * inputs.sigma * inputs.sigma / inputs.n as f64 * (6.0 / c).ln()).sqrt();
    let w = inputs.width();
    let sampling = (8.0 * w * w / (inputs.p * inputs.p) * (6.0 / (3.0 - 5.0 * c)).ln()).sqrt();
    Ok(noise.max(sampling))
}

fn tail_factor(n: usize) -> f64 {
    (-(n as f64) / 2.0).exp()
}

/// Right-hand side of the per-coordinate condition on `|∇F_i(w(t))|` above
/// which `P(g̃_i ≠ sign ∇F_i) ≤ (1−c)/2`.
pub fn signerr_threshold(inputs: &BoundInputs, t: usize) -> Result<f64> {
    inputs.validate()?;
    let w = inputs.width();
    let m = inputs.clients as f64;
    let tau = inputs.tau.at(t) as f64;
    let branch = inputs.branch_at(t);
    let byz = match branch {
        Branch::AdaptiveOrSmallStatic => 2.0 * w / inputs.p * tau / m,
        Branch::LargeStatic => 3.0 * w * tau / m,
    };
    let gaussian_tail = w / (2.0 * (2.0 * PI).sqrt()) * tail_factor(inputs.n);
    let tail = match (inputs.noise_class, branch) {
        (NoiseClass::SubGaussian, _) => 2.0 * w * tail_factor(inputs.n),
        (NoiseClass::Gaussian, _) => gaussian_tail,
        (NoiseClass::Bounded, Branch::AdaptiveOrSmallStatic) => 0.0,
        // the bounded-noise statement keeps this term in the large static case
        (NoiseClass::Bounded, Branch::LargeStatic) => gaussian_tail,
    };
    Ok(byz + tail + c0(inputs)? / m.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceBound {
    pub value: f64,
    pub branch: Branch,
    pub c0: f64,
    /// `(F(w(0)) − F*)√d/√T`.
    pub initial_gap: f64,
    /// `L√d/(2√T)`.
    pub smoothness: f64,
    /// `2d·c₀/√M`.
    pub sampling: f64,
    pub noise_tail: f64,
    /// Byzantine term: `4d(B+β)Στ/(pTM)` or `6d(B+β)Στ/(TM)`.
    pub byzantine: f64,
}

/// Upper bound on `(1/T) Σ_t E‖∇F(w(t))‖₁` under `η = 1/√(dT)`.
pub fn bound_convergence(inputs: &BoundInputs) -> Result<ConvergenceBound> {
    inputs.validate()?;
    let l = inputs
        .smoothness
        .ok_or_else(|| Error::BoundUnavailable("smoothness constant L unknown".into()))?;
    let f_star = inputs
        .f_star
        .ok_or_else(|| Error::BoundUnavailable("loss lower bound F* unknown".into()))?;
    let branch = inputs.branch()?;
    let d = inputs.d as f64;
    let t = inputs.rounds as f64;
    let m = inputs.clients as f64;
    let w = inputs.width();
    let c0 = c0(inputs)?;
    let initial_gap = (inputs.f0 - f_star) * d.sqrt() / t.sqrt();
    let smoothness = l * d.sqrt() / (2.0 * t.sqrt());
    let sampling = 2.0 * d * c0 / m.sqrt();
    let noise_tail = match inputs.noise_class {
        NoiseClass::SubGaussian => 4.0 * d * w * tail_factor(inputs.n),
        NoiseClass::Gaussian => d / (2.0 * PI).sqrt() * w * tail_factor(inputs.n),
        NoiseClass::Bounded => 0.0,
    };
    let tau_sum = inputs.tau.total(inputs.rounds) as f64;
    let byzantine = match branch {
        Branch::AdaptiveOrSmallStatic => 4.0 * d * w * tau_sum / (inputs.p * t * m),
        Branch::LargeStatic => 6.0 * d * w * tau_sum / (t * m),
    };
    let value = (initial_gap + smoothness + sampling + noise_tail + byzantine) / inputs.c;
    Ok(ConvergenceBound {
        value,
        branch,
        c0,
        initial_gap,
        smoothness,
        sampling,
        noise_tail,
        byzantine,
    })
}
