//! Clipping, the β-stochastic sign compressor, the randomized flip, and the
//! closed-form privacy budgets that go with them.
//!
//! A coordinate `g` is clipped to `[-B, B]` and mapped to `+1` with probability
//! `(B + β + clip(g, B)) / (2B + 2β)`. With `β > 0` the output distribution of
//! every coordinate stays bounded away from 0 and 1, which is what makes the
//! mechanism differentially private; `β = 0` is representable but reported as
//! [`Epsilon::NonPrivate`].

use std::fmt;
use std::ops::Neg;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clipping bound `B` and privacy budget `β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct CompressorParams {
    clip_bound: f64,
    beta: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    #[serde(rename = "B")]
    clip_bound: f64,
    beta: f64,
}

impl TryFrom<RawParams> for CompressorParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        CompressorParams::new(raw.clip_bound, raw.beta)
    }
}

impl From<CompressorParams> for RawParams {
    fn from(p: CompressorParams) -> Self {
        RawParams {
            clip_bound: p.clip_bound,
            beta: p.beta,
        }
    }
}

impl CompressorParams {
    pub fn new(clip_bound: f64, beta: f64) -> Result<Self> {
        if !(clip_bound.is_finite() && clip_bound > 0.0) {
            return Err(Error::param("B", format!("must be finite and > 0, got {clip_bound}")));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::param("beta", format!("must be finite and >= 0, got {beta}")));
        }
        Ok(CompressorParams { clip_bound, beta })
    }

    /// The recommended clip `B = (1 + ε₀)·B₀` for a true-gradient bound `B₀`.
    pub fn from_gradient_bound(grad_bound: f64, margin: f64, beta: f64) -> Result<Self> {
        if !(margin.is_finite() && margin > 0.0) {
            return Err(Error::param("epsilon0", format!("must be > 0, got {margin}")));
        }
        Self::new((1.0 + margin) * grad_bound, beta)
    }

    pub fn clip_bound(&self) -> f64 {
        self.clip_bound
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn is_private(&self) -> bool {
        self.beta > 0.0
    }

    /// Probability that the flip mechanism keeps its input.
    pub fn keep_probability(&self) -> f64 {
        // (2B+β)/(2(B+β)) written as 1/2 + B/(2(B+β))
        0.5 + 0.5 * (self.clip_bound / (self.clip_bound + self.beta))
    }

    /// Smallest attainable probability of either output.
    pub fn min_outcome_probability(&self) -> f64 {
        0.5 * (self.beta / (self.clip_bound + self.beta))
    }
}

/// A client-side sign report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Sign {
    Minus,
    Plus,
}

impl Sign {
    pub fn value(self) -> i8 {
        match self {
            Sign::Minus => -1,
            Sign::Plus => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }

    pub fn from_value(v: i64) -> Result<Self> {
        match v {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            other => Err(Error::InvalidSign(other)),
        }
    }
}

impl Neg for Sign {
    type Output = Sign;

    fn neg(self) -> Sign {
        match self {
            Sign::Minus => Sign::Plus,
            Sign::Plus => Sign::Minus,
        }
    }
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        s.value()
    }
}

impl TryFrom<i8> for Sign {
    type Error = Error;

    fn try_from(v: i8) -> Result<Self> {
        Sign::from_value(i64::from(v))
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Minus => "-1",
            Sign::Plus => "+1",
        })
    }
}

/// Privacy loss of a mechanism. `β = 0` has no finite ε.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    Private(f64),
    NonPrivate,
}

impl Epsilon {
    pub fn value(self) -> Option<f64> {
        match self {
            Epsilon::Private(e) => Some(e),
            Epsilon::NonPrivate => None,
        }
    }

    /// Basic sequential composition over `rounds` identical releases.
    pub fn compose(self, rounds: u64) -> Epsilon {
        match self {
            Epsilon::Private(e) => Epsilon::Private(e * rounds as f64),
            Epsilon::NonPrivate => Epsilon::NonPrivate,
        }
    }
}

impl Serialize for Epsilon {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Epsilon::Private(e) => s.serialize_f64(*e),
            Epsilon::NonPrivate => s.serialize_str("non-private"),
        }
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Epsilon::Private(e) => write!(f, "{e}"),
            Epsilon::NonPrivate => f.write_str("non-private"),
        }
    }
}

fn check_finite(index: usize, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { index, value })
    }
}

pub fn clip(g: f64, clip_bound: f64) -> Result<f64> {
    if !(clip_bound.is_finite() && clip_bound > 0.0) {
        return Err(Error::param("B", format!("must be finite and > 0, got {clip_bound}")));
    }
    check_finite(0, g)?;
    Ok(clip_unchecked(g, clip_bound))
}

#[inline]
pub(crate) fn clip_unchecked(g: f64, clip_bound: f64) -> f64 {
    g.min(clip_bound).max(-clip_bound)
}

#[inline]
fn plus_probability(g: f64, params: &CompressorParams) -> f64 {
    // (1 + clip/(B+β))/2 equals (B+β+clip)/(2B+2β) and is exact whenever
    // the ratio is.
    let ratio = clip_unchecked(g, params.clip_bound) / (params.clip_bound + params.beta);
    (0.5 + 0.5 * ratio).clamp(0.0, 1.0)
}

/// Probability that the compressor emits `+1` for coordinate value `g`.
pub fn prob_plus_one(g: f64, params: &CompressorParams) -> Result<f64> {
    check_finite(0, g)?;
    Ok(plus_probability(g, params))
}

/// Probability of a specific outcome for coordinate value `g`.
pub fn outcome_probability(g: f64, outcome: Sign, params: &CompressorParams) -> Result<f64> {
    let p = prob_plus_one(g, params)?;
    Ok(match outcome {
        Sign::Plus => p,
        Sign::Minus => 1.0 - p,
    })
}

/// Compresses one coordinate using exactly one uniform draw.
#[inline]
pub fn compress_scalar<R: Rng + ?Sized>(g: f64, params: &CompressorParams, rng: &mut R) -> Sign {
    let u: f64 = rng.gen();
    if u < plus_probability(g, params) {
        Sign::Plus
    } else {
        Sign::Minus
    }
}

/// Applies the compressor coordinate-wise. Consumes one uniform per coordinate.
pub fn compress<R: Rng + ?Sized>(g: &[f64], params: &CompressorParams, rng: &mut R) -> Result<Vec<Sign>> {
    for (i, &x) in g.iter().enumerate() {
        check_finite(i, x)?;
    }
    Ok(g.iter().map(|&x| compress_scalar(x, params, rng)).collect())
}

/// Deterministic sign baseline. Zero (either sign) maps to `+1`.
pub fn compress_deterministic_sign(g: &[f64]) -> Result<Vec<Sign>> {
    g.iter()
        .enumerate()
        .map(|(i, &x)| {
            check_finite(i, x)?;
            Ok(if x < 0.0 { Sign::Minus } else { Sign::Plus })
        })
        .collect()
}

/// Randomized sign flip: keeps `b` with probability `(2B+β)/(2(B+β))`.
pub fn flip<R: Rng + ?Sized>(b: Sign, params: &CompressorParams, rng: &mut R) -> Result<Sign> {
    if !params.is_private() {
        return Err(Error::FlipRequiresPrivacy);
    }
    let u: f64 = rng.gen();
    Ok(if u < params.keep_probability() { b } else { -b })
}

/// Worst-case budget `d·ln((2B+β)/β)` over all gradients.
pub fn epsilon_worst_case(params: &CompressorParams, dim: usize) -> Epsilon {
    if !params.is_private() {
        return Epsilon::NonPrivate;
    }
    let b = params.clip_bound;
    let beta = params.beta;
    Epsilon::Private(dim as f64 * ((2.0 * b + beta) / beta).ln())
}

/// Distance from `g` to the exterior region `(-∞, -B) ∪ (B, ∞)`.
pub fn dist_to_exterior(g: f64, clip_bound: f64) -> f64 {
    (clip_bound - g.abs()).max(0.0)
}

/// Per-coordinate budget `ln(1 + 1/(β + dist(g, exterior)))`.
pub fn coordinate_epsilon_restricted(g: f64, params: &CompressorParams) -> Result<f64> {
    if !params.is_private() {
        return Err(Error::param("beta", "restricted budget requires beta > 0"));
    }
    check_finite(0, g)?;
    Ok((1.0 / (params.beta + dist_to_exterior(g, params.clip_bound))).ln_1p())
}

/// Budget restricted to a caller-supplied gradient set:
/// `max_g Σ_i ln(1 + 1/(β + dist(g_i, exterior)))`.
pub fn epsilon_restricted(params: &CompressorParams, grads: &[Vec<f64>]) -> Result<f64> {
    if grads.is_empty() {
        return Err(Error::EmptyGradientSet);
    }
    let mut best = f64::NEG_INFINITY;
    for g in grads {
        let mut total = 0.0;
        for (i, &x) in g.iter().enumerate() {
            check_finite(i, x)?;
            total += coordinate_epsilon_restricted(x, params)?;
        }
        best = best.max(total);
    }
    Ok(best)
}

/// Sequential composition of `rounds` releases at `per_round` each.
pub fn compose_epsilon(per_round: f64, rounds: u64) -> Result<f64> {
    if !(per_round.is_finite() && per_round >= 0.0) {
        return Err(Error::param("per_round_eps", format!("must be >= 0, got {per_round}")));
    }
    Ok(per_round * rounds as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn params(b: f64, beta: f64) -> CompressorParams {
        CompressorParams::new(b, beta).unwrap()
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(0.5, 1.0).unwrap(), 0.5);
        assert_eq!(clip(5.0, 1.0).unwrap(), 1.0);
        assert_eq!(clip(-3.0, 1.0).unwrap(), -1.0);
    }

    #[test]
    fn clip_rejects_bad_inputs() {
        assert!(clip(0.5, 0.0).is_err());
        assert!(clip(0.5, -1.0).is_err());
        assert!(clip(f64::NAN, 1.0).is_err());
        assert!(clip(f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(CompressorParams::new(0.0, 0.1).is_err());
        assert!(CompressorParams::new(1.0, -0.1).is_err());
        assert!(CompressorParams::new(f64::NAN, 0.1).is_err());
        let p = CompressorParams::new(1.0, 0.0).unwrap();
        assert!(!p.is_private());
        let rec = CompressorParams::from_gradient_bound(2.0, 0.5, 0.0).unwrap();
        assert_eq!(rec.clip_bound(), 3.0);
    }

    #[test]
    fn params_json_roundtrip_validates() {
        let p: CompressorParams = serde_json::from_str(r#"{"B":0.5,"beta":0.25}"#).unwrap();
        assert_eq!(p, params(0.5, 0.25));
        assert!(serde_json::from_str::<CompressorParams>(r#"{"B":0.0,"beta":0.25}"#).is_err());
    }

    #[test]
    fn figure_one_probabilities_are_exact() {
        let p = params(0.1, 0.1);
        assert_eq!(prob_plus_one(0.1, &p).unwrap(), 0.75);
        assert_eq!(prob_plus_one(-0.05, &p).unwrap(), 0.375);
        assert_eq!(p.keep_probability(), 0.75);
    }

    #[test]
    fn symmetric_point_is_half() {
        for (b, beta) in [(1.0, 0.0), (0.3, 2.0), (1e-3, 1e3)] {
            assert_eq!(prob_plus_one(0.0, &params(b, beta)).unwrap(), 0.5);
        }
    }

    #[test]
    fn probability_range_and_saturation() {
        let p = params(1.0, 0.5);
        let lo = 0.5 / 3.0;
        let hi = 2.5 / 3.0;
        for i in -40..=40 {
            let g = i as f64 * 0.1;
            let q = prob_plus_one(g, &p).unwrap();
            assert!(q >= lo - 1e-15 && q <= hi + 1e-15, "g={g} q={q}");
        }
        let np = params(1.0, 0.0);
        assert_eq!(prob_plus_one(1.0, &np).unwrap(), 1.0);
        assert_eq!(prob_plus_one(-1.0, &np).unwrap(), 0.0);
    }

    #[test]
    fn saturated_coordinates_are_deterministic_without_privacy() {
        let p = params(1.0, 0.0);
        let mut rng = seeded(3);
        for _ in 0..1000 {
            let s = compress(&[11.0, -11.0], &p, &mut rng).unwrap();
            assert_eq!(s, vec![Sign::Plus, Sign::Minus]);
        }
    }

    #[test]
    fn compress_rejects_non_finite() {
        let mut rng = seeded(0);
        let err = compress(&[0.0, f64::NAN], &params(1.0, 1.0), &mut rng).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
    }

    #[test]
    fn compress_monte_carlo_frequency() {
        let p = params(0.1, 0.1);
        let mut rng = seeded(11);
        let n = 1_000_000;
        let plus = (0..n)
            .filter(|_| compress_scalar(0.1, &p, &mut rng) == Sign::Plus)
            .count();
        let freq = plus as f64 / n as f64;
        assert!((freq - 0.75).abs() < 0.002, "freq={freq}");
    }

    #[test]
    fn compress_is_deterministic_per_seed() {
        let p = params(1.0, 0.3);
        let g: Vec<f64> = (0..64).map(|i| (i as f64 - 32.0) / 20.0).collect();
        let a = compress(&g, &p, &mut seeded(5)).unwrap();
        let b = compress(&g, &p, &mut seeded(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_sign_ties() {
        assert_eq!(
            compress_deterministic_sign(&[2.0, -0.1]).unwrap(),
            vec![Sign::Plus, Sign::Minus]
        );
        assert_eq!(compress_deterministic_sign(&[0.0]).unwrap(), vec![Sign::Plus]);
        assert_eq!(compress_deterministic_sign(&[-0.0]).unwrap(), vec![Sign::Plus]);
        assert!(compress_deterministic_sign(&[f64::NAN]).is_err());
    }

    #[test]
    fn flip_requires_privacy() {
        let mut rng = seeded(1);
        assert!(matches!(
            flip(Sign::Plus, &params(1.0, 0.0), &mut rng),
            Err(Error::FlipRequiresPrivacy)
        ));
    }

    #[test]
    fn flip_rate_monte_carlo() {
        let p = params(0.1, 0.1);
        let mut rng = seeded(12);
        let n = 1_000_000;
        let flips = (0..n)
            .filter(|_| flip(Sign::Plus, &p, &mut rng).unwrap() == Sign::Minus)
            .count();
        let rate = flips as f64 / n as f64;
        assert!((rate - 0.25).abs() < 0.002, "rate={rate}");
    }

    #[test]
    fn worst_case_epsilon_table_values() {
        for (ratio, expected) in [(0.1, 3.0445), (1.0, 1.0986), (5.0, 0.3365), (10.0, 0.1823)] {
            let p = params(1.0, ratio);
            let e = epsilon_worst_case(&p, 1).value().unwrap();
            assert!((e - expected).abs() < 1e-4, "ratio={ratio} e={e}");
            let e7 = epsilon_worst_case(&p, 7).value().unwrap();
            assert!((e7 - 7.0 * e).abs() < 1e-12);
        }
        assert_eq!(epsilon_worst_case(&params(1.0, 0.0), 3), Epsilon::NonPrivate);
    }

    #[test]
    fn restricted_epsilon_examples() {
        let p = params(1.0, 1.0);
        // dist(0, exterior) = 1 -> ln(1 + 1/2)
        let e = epsilon_restricted(&p, &[vec![0.0]]).unwrap();
        assert!((e - 1.5f64.ln()).abs() < 1e-15);
        // all coordinates outside the clip box -> d * ln(1 + 1/beta)
        let p = params(0.5, 0.25);
        let e = epsilon_restricted(&p, &[vec![0.5, -3.0, 9.0]]).unwrap();
        assert!((e - 3.0 * 5.0f64.ln()).abs() < 1e-12);
        assert!(matches!(epsilon_restricted(&p, &[]), Err(Error::EmptyGradientSet)));
        assert!(epsilon_restricted(&params(1.0, 0.0), &[vec![0.0]]).is_err());
    }

    #[test]
    fn restricted_takes_max_over_set() {
        let p = params(1.0, 1.0);
        let a = epsilon_restricted(&p, &[vec![0.0, 0.0]]).unwrap();
        let b = epsilon_restricted(&p, &[vec![2.0, 2.0]]).unwrap();
        let both = epsilon_restricted(&p, &[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(both, a.max(b));
    }

    #[test]
    fn composition() {
        assert!((compose_epsilon(1.1, 10).unwrap() - 11.0).abs() < 1e-12);
        assert_eq!(compose_epsilon(0.0, 99).unwrap(), 0.0);
        assert!(compose_epsilon(-1.0, 2).is_err());
        // T identical rounds in d coordinates == one release in d*T coordinates
        let p = params(0.7, 0.2);
        let per_round = epsilon_worst_case(&p, 5).value().unwrap();
        let composed = compose_epsilon(per_round, 12).unwrap();
        let flat = epsilon_worst_case(&p, 60).value().unwrap();
        assert!((composed - flat).abs() < 1e-9);
        assert_eq!(Epsilon::NonPrivate.compose(3), Epsilon::NonPrivate);
    }

    #[test]
    fn epsilon_serializes_marker() {
        assert_eq!(serde_json::to_string(&Epsilon::NonPrivate).unwrap(), "\"non-private\"");
        assert_eq!(serde_json::to_string(&Epsilon::Private(1.5)).unwrap(), "1.5");
    }
}
