//! Monte Carlo audit of the scalar compressor's privacy loss.
//!
//! For each adjacent pair `(g, g′)` with `|g − g′| ≤ 1`, both outcome
//! probabilities are computed exactly and estimated from independent draws.
//! The log-ratio reported for a pair is the larger of the two outcomes'
//! `|ln P(o | g) − ln P(o | g′)|`. A `d`-dimensional release composes the
//! per-coordinate figure `d` times.

use serde::Serialize;

use crate::compressor::{
    compress_scalar, coordinate_epsilon_restricted, epsilon_worst_case, outcome_probability, CompressorParams, Epsilon,
    Sign,
};
use crate::error::{Error, Result};
use crate::rng::derive_rng;

/// Smallest number of draws per point the audit accepts.
pub const MIN_AUDIT_SAMPLES: usize = 100_000;
/// Width of the statistical slack, in standard errors.
pub const SLACK_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NonPrivate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairAudit {
    pub g: f64,
    pub g_prime: f64,
    /// Exact `P(+1 | g)` and `P(+1 | g′)`.
    pub p_plus: (f64, f64),
    /// Empirical `P(+1 | g)` and `P(+1 | g′)`.
    pub p_plus_empirical: (f64, f64),
    pub analytic_log_ratio: f64,
    pub empirical_log_ratio: f64,
    /// Delta-method standard error of `empirical_log_ratio`.
    pub std_error: f64,
    /// Per-pair refinement `max_{x ∈ {g, g′}} ln(1 + 1/(β + dist(x, exterior)))`.
    pub refined_cap: Option<f64>,
}

/// A pair whose outcome has probability zero on one side only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub g: f64,
    pub g_prime: f64,
    pub outcome: Sign,
    /// `P(outcome | g) = 0`.
    pub p_at_g: f64,
    /// `P(outcome | g′) > 0`.
    pub p_at_g_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    #[serde(rename = "B")]
    pub clip_bound: f64,
    pub beta: f64,
    pub samples: usize,
    pub slack_sigmas: f64,
    pub pairs: Vec<PairAudit>,
    pub analytic_max: f64,
    pub empirical_max: f64,
    /// `ln((2B+β)/β)` per coordinate.
    pub cap: Epsilon,
    pub witness: Option<Witness>,
    pub verdict: Verdict,
}

/// `points` values evenly spaced on `[−2B, 2B]`, each paired with the point
/// one unit above it (one unit below at the top end).
pub fn default_pair_grid(clip_bound: f64, points: usize) -> Vec<(f64, f64)> {
    let lo = -2.0 * clip_bound;
    let hi = 2.0 * clip_bound;
    (0..points)
        .map(|k| {
            let g = if points == 1 {
                0.0
            } else {
                lo + (hi - lo) * k as f64 / (points - 1) as f64
            };
            let other = if g + 1.0 <= hi { g + 1.0 } else { g - 1.0 };
            (g, other)
        })
        .collect()
}

fn log_ratio(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a.ln() - b.ln()).abs()
    }
}

/// Largest outcome log-ratio, the outcome achieving it, and its standard error.
fn worst_outcome(p1: f64, p2: f64, samples: f64) -> (f64, f64) {
    let se = |p: f64| ((1.0 - p) / (samples * p)).sqrt();
    let plus = log_ratio(p1, p2);
    let minus = log_ratio(1.0 - p1, 1.0 - p2);
    if plus >= minus {
        (plus, (se(p1).powi(2) + se(p2).powi(2)).sqrt())
    } else {
        (minus, (se(1.0 - p1).powi(2) + se(1.0 - p2).powi(2)).sqrt())
    }
}

/// The zero-probability pair whose other side has the largest probability.
fn find_witness(params: &CompressorParams, pairs: &[(f64, f64)]) -> Result<Option<Witness>> {
    let mut best: Option<Witness> = None;
    for &(a, b) in pairs {
        for outcome in [Sign::Minus, Sign::Plus] {
            for (g, h) in [(a, b), (b, a)] {
                let pg = outcome_probability(g, outcome, params)?;
                let ph = outcome_probability(h, outcome, params)?;
                if pg == 0.0 && ph > 0.0 && best.as_ref().is_none_or(|w| ph > w.p_at_g_prime) {
                    best = Some(Witness {
                        g,
                        g_prime: h,
                        outcome,
                        p_at_g: pg,
                        p_at_g_prime: ph,
                    });
                }
            }
        }
    }
    Ok(best)
}

/// Audits `params` on `pairs` with `samples` draws per point. Point `k` of
/// pair `j` draws from the generator keyed `(seed, j, k)`.
pub fn audit_dp(params: &CompressorParams, pairs: &[(f64, f64)], samples: usize, seed: u64) -> Result<AuditReport> {
    if pairs.is_empty() {
        return Err(Error::param("pairs", "audit grid is empty"));
    }
    if samples < MIN_AUDIT_SAMPLES {
        return Err(Error::param(
            "samples",
            format!("need at least {MIN_AUDIT_SAMPLES} draws per point, got {samples}"),
        ));
    }
    for &(g, h) in pairs {
        if !g.is_finite() || !h.is_finite() || (g - h).abs() > 1.0 {
            return Err(Error::param("pairs", format!("({g}, {h}) is not an adjacent pair")));
        }
    }
    let cap = epsilon_worst_case(params, 1);
    let n = samples as f64;
    let mut audits = Vec::with_capacity(pairs.len());
    for (j, &(g, h)) in pairs.iter().enumerate() {
        let p1 = outcome_probability(g, Sign::Plus, params)?;
        let p2 = outcome_probability(h, Sign::Plus, params)?;
        let mut freq = [0.0; 2];
        for (k, x) in [g, h].into_iter().enumerate() {
            let mut rng = derive_rng(seed, j as u64, k as u64);
            let plus = (0..samples)
                .filter(|_| compress_scalar(x, params, &mut rng) == Sign::Plus)
                .count();
            freq[k] = plus as f64 / n;
        }
        let analytic = log_ratio(p1, p2).max(log_ratio(1.0 - p1, 1.0 - p2));
        let (empirical, std_error) = worst_outcome(freq[0], freq[1], n);
        let refined_cap = if params.is_private() {
            Some(coordinate_epsilon_restricted(g, params)?.max(coordinate_epsilon_restricted(h, params)?))
        } else {
            None
        };
        audits.push(PairAudit {
            g,
            g_prime: h,
            p_plus: (p1, p2),
            p_plus_empirical: (freq[0], freq[1]),
            analytic_log_ratio: analytic,
            empirical_log_ratio: empirical,
            std_error,
            refined_cap,
        });
    }
    let analytic_max = audits.iter().map(|a| a.analytic_log_ratio).fold(0.0, f64::max);
    let empirical_max = audits.iter().map(|a| a.empirical_log_ratio).fold(0.0, f64::max);

    let (witness, verdict) = match cap {
        Epsilon::NonPrivate => {
            // (B, B − 1) always gives a witness with P(g′) = 1/(2B)
            let b = params.clip_bound();
            let mut candidates = pairs.to_vec();
            candidates.push((b, b - 1.0));
            let witness = find_witness(params, &candidates)?.expect("beta = 0 puts zero mass on -1 at g = B");
            (Some(witness), Verdict::NonPrivate)
        }
        Epsilon::Private(eps) => {
            let ok = audits.iter().all(|a| {
                let slack = SLACK_SIGMAS * a.std_error;
                let refined = a.refined_cap.unwrap_or(f64::INFINITY);
                a.empirical_log_ratio <= eps + slack && a.empirical_log_ratio <= refined + slack
            });
            (None, if ok { Verdict::Pass } else { Verdict::Fail })
        }
    };

    Ok(AuditReport {
        clip_bound: params.clip_bound(),
        beta: params.beta(),
        samples,
        slack_sigmas: SLACK_SIGMAS,
        pairs: audits,
        analytic_max,
        empirical_max,
        cap,
        witness,
        verdict,
    })
}

impl AuditReport {
    /// Composition of the per-coordinate cap over `d` coordinates.
    pub fn composed_cap(&self, dim: usize) -> Epsilon {
        match self.cap {
            Epsilon::Private(e) => Epsilon::Private(e * dim as f64),
            Epsilon::NonPrivate => Epsilon::NonPrivate,
        }
    }
}
