//! Mobile Byzantine faults.
//!
//! Each round the adversary picks a fault set `B(t)` of at most `τ(t)`
//! clients. A static adversary picks uniformly from all `M` clients without
//! seeing who was sampled; an adaptive one picks from the sampled set `S(t)`
//! and takes all of it when `|S(t)| ≤ τ(t)`. Faulty sampled clients replace
//! their report according to the configured attack.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compressor::Sign;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    #[default]
    Static,
    Adaptive,
}

/// `τ(t)`: a constant, or an explicit per-round list whose last entry
/// repeats past its end.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSchedule {
    Constant(usize),
    PerRound(Vec<usize>),
}

impl Default for TauSchedule {
    fn default() -> Self {
        TauSchedule::Constant(0)
    }
}

impl TauSchedule {
    pub fn at(&self, t: usize) -> usize {
        match self {
            TauSchedule::Constant(tau) => *tau,
            TauSchedule::PerRound(list) => list.get(t).or(list.last()).copied().unwrap_or(0),
        }
    }

    pub fn max(&self) -> usize {
        match self {
            TauSchedule::Constant(tau) => *tau,
            TauSchedule::PerRound(list) => list.iter().copied().max().unwrap_or(0),
        }
    }

    /// `Σ_{t<rounds} τ(t)`.
    pub fn total(&self, rounds: usize) -> usize {
        (0..rounds).map(|t| self.at(t)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum Attack {
    /// Negation of the report the client would have sent honestly.
    #[default]
    SignFlip,
    /// Negation of the sign of the client's true local gradient.
    TrueSignFlip,
    /// Independent uniform `±1` per coordinate.
    RandomSign,
    /// The same sign in every coordinate.
    ConstantSign(Sign),
    /// `0.5` in every coordinate, which the server must discard.
    OutOfAlphabet,
    /// Sends nothing; the server reads the message as all zeros.
    Silent,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default)]
    pub mode: FaultMode,
    #[serde(default)]
    pub tau: TauSchedule,
    #[serde(default)]
    pub attack: Attack,
}

impl AdversarySpec {
    pub fn none() -> Self {
        AdversarySpec::default()
    }

    pub fn validate(&self, clients: usize) -> Result<()> {
        let tau = self.tau.max();
        if tau > clients {
            return Err(Error::TauExceedsClients { tau, clients });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultAssignment {
    pub round: usize,
    /// Faulty clients in ascending order.
    pub byzantine: Vec<usize>,
}

impl FaultAssignment {
    pub fn contains(&self, client: usize) -> bool {
        self.byzantine.binary_search(&client).is_ok()
    }
}

/// Chooses `B(t)`. `sampled` is `S(t)` in ascending order; a static
/// adversary ignores it.
pub fn choose_faults<R: Rng + ?Sized>(
    spec: &AdversarySpec,
    t: usize,
    clients: usize,
    sampled: &[usize],
    rng: &mut R,
) -> Result<FaultAssignment> {
    let tau = spec.tau.at(t);
    if tau > clients {
        return Err(Error::TauExceedsClients { tau, clients });
    }
    let mut byzantine: Vec<usize> = match spec.mode {
        FaultMode::Static => index::sample(rng, clients, tau).into_vec(),
        FaultMode::Adaptive => {
            if sampled.len() <= tau {
                sampled.to_vec()
            } else {
                index::sample(rng, sampled.len(), tau)
                    .into_iter()
                    .map(|k| sampled[k])
                    .collect()
            }
        }
    };
    byzantine.sort_unstable();
    Ok(FaultAssignment { round: t, byzantine })
}

/// Builds a faulty client's message. `honest` is the report the client
/// would have sent and `true_sign` the sign of its true local gradient.
pub fn corrupt<R: Rng + ?Sized>(honest: &[Sign], attack: Attack, true_sign: &[Sign], rng: &mut R) -> Vec<f64> {
    match attack {
        Attack::SignFlip => honest.iter().map(|&s| (-s).as_f64()).collect(),
        Attack::TrueSignFlip => true_sign.iter().map(|&s| (-s).as_f64()).collect(),
        Attack::RandomSign => honest
            .iter()
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect(),
        Attack::ConstantSign(s) => vec![s.as_f64(); honest.len()],
        Attack::OutOfAlphabet => vec![0.5; honest.len()],
        Attack::Silent => vec![0.0; honest.len()],
    }
}
