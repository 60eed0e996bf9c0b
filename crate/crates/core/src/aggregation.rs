//! Server-side aggregation of sign reports.
//!
//! All four rules operate per coordinate on a multiset of `±1` values. Such a
//! multiset is fully described by its counts of `-1` and `+1`, so sorting is a
//! counting sort: the sorted column is `minus` copies of `-1` followed by
//! `plus` copies of `+1`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compressor::Sign;
use crate::error::{Error, Result};

/// Reports from the participating clients: one row per client, one column per
/// coordinate, every entry exactly `±1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Sign>,
}

impl SignMatrix {
    pub fn new(rows: Vec<Vec<Sign>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in &rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(SignMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Builds a matrix from integer rows, rejecting anything outside `{-1, +1}`.
    pub fn from_values(rows: &[Vec<i8>]) -> Result<Self> {
        let rows = rows
            .iter()
            .map(|r| r.iter().map(|&v| Sign::try_from(v)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> Sign {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[Sign] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn negated(&self) -> SignMatrix {
        SignMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&s| -s).collect(),
        }
    }

    pub fn tallies(&self) -> Vec<Tally> {
        let mut out = vec![Tally::default(); self.cols];
        for r in 0..self.rows {
            for (t, &s) in out.iter_mut().zip(self.row(r)) {
                t.push(s);
            }
        }
        out
    }

    fn non_empty_tallies(&self) -> Result<Vec<Tally>> {
        if self.rows == 0 {
            return Err(Error::EmptyMatrix);
        }
        Ok(self.tallies())
    }
}

/// Counts of `-1` and `+1` in one column.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub minus: usize,
    pub plus: usize,
}

impl Tally {
    pub fn new(minus: usize, plus: usize) -> Self {
        Tally { minus, plus }
    }

    pub fn push(&mut self, s: Sign) {
        match s {
            Sign::Minus => self.minus += 1,
            Sign::Plus => self.plus += 1,
        }
    }

    pub fn len(&self) -> usize {
        self.minus + self.plus
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Element at 0-based rank `i` of the sorted column.
    fn at_rank(&self, i: usize) -> f64 {
        if i < self.minus {
            -1.0
        } else {
            1.0
        }
    }

    pub fn mean(&self) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        Some((self.plus as f64 - self.minus as f64) / self.len() as f64)
    }

    /// k-trimmed mean. `None` when the column is empty; when trimming removes
    /// everything, returns `±1` uniformly at random (one draw from `rng`).
    pub fn trimmed<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Option<f64> {
        let n = self.len();
        if n == 0 {
            return None;
        }
        if 2 * k >= n {
            return Some(if rng.gen::<bool>() { 1.0 } else { -1.0 });
        }
        // kept ranks are [k, n - k)
        let hi = n - k;
        let kept_minus = self.minus.min(hi).saturating_sub(k);
        let kept = hi - k;
        let kept_plus = kept - kept_minus;
        Some((kept_plus as f64 - kept_minus as f64) / kept as f64)
    }

    pub fn median(&self) -> Option<f64> {
        let n = self.len();
        if n == 0 {
            return None;
        }
        if n % 2 == 1 {
            // rank ceil(n/2), 1-based
            Some(self.at_rank(n / 2))
        } else {
            Some(0.5 * (self.at_rank(n / 2 - 1) + self.at_rank(n / 2)))
        }
    }

    pub fn majority(&self) -> i8 {
        match self.plus.cmp(&self.minus) {
            std::cmp::Ordering::Greater => 1,
            std::cmp::Ordering::Less => -1,
            std::cmp::Ordering::Equal => 0,
        }
    }
}

/// Coordinate-wise aggregate sign, entries in `{-1, 0, +1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AggregateSign(pub Vec<i8>);

impl AggregateSign {
    pub fn zeros(dim: usize) -> Self {
        AggregateSign(vec![0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn zero_count(&self) -> usize {
        self.0.iter().filter(|&&v| v == 0).count()
    }

    pub fn negated(&self) -> AggregateSign {
        AggregateSign(self.0.iter().map(|&v| -v).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    Mean,
    Trimmed(usize),
    Median,
    Majority,
}

pub fn agg_mean(m: &SignMatrix) -> Result<Vec<f64>> {
    Ok(m.non_empty_tallies()?.iter().map(|t| t.mean().unwrap()).collect())
}

pub fn agg_trimmed<R: Rng + ?Sized>(m: &SignMatrix, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    Ok(m.non_empty_tallies()?
        .iter()
        .map(|t| t.trimmed(k, rng).unwrap())
        .collect())
}

pub fn agg_median(m: &SignMatrix) -> Result<Vec<f64>> {
    Ok(m.non_empty_tallies()?.iter().map(|t| t.median().unwrap()).collect())
}

pub fn agg_majority(m: &SignMatrix) -> Result<AggregateSign> {
    Ok(AggregateSign(
        m.non_empty_tallies()?.iter().map(Tally::majority).collect(),
    ))
}

/// Strict coordinate-wise sign: `+1` if positive, `-1` if negative, `0` at zero.
pub fn extract_sign(v: &[f64]) -> Result<AggregateSign> {
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            if !x.is_finite() {
                return Err(Error::NonFinite { index: i, value: x });
            }
            Ok(if x > 0.0 {
                1
            } else if x < 0.0 {
                -1
            } else {
                0
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(AggregateSign)
}

fn sign_of(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Aggregates per-coordinate tallies (possibly of different sizes after
/// filtering) and takes the sign. Empty columns yield `0`.
pub fn aggregate_tallies<R: Rng + ?Sized>(rule: AggregationRule, tallies: &[Tally], rng: &mut R) -> AggregateSign {
    AggregateSign(
        tallies
            .iter()
            .map(|t| {
                if t.is_empty() {
                    return 0;
                }
                match rule {
                    AggregationRule::Mean => sign_of(t.mean().unwrap()),
                    AggregationRule::Trimmed(k) => sign_of(t.trimmed(k, rng).unwrap()),
                    AggregationRule::Median => sign_of(t.median().unwrap()),
                    AggregationRule::Majority => t.majority(),
                }
            })
            .collect(),
    )
}

/// Checks that mean, median, majority, and every listed trimmed mean produce
/// the same signs on `m`. Every `k` must satisfy `k < |S|/2`.
pub fn equivalence_oracle(m: &SignMatrix, k_values: &[usize]) -> Result<bool> {
    if m.rows() == 0 {
        return Err(Error::EmptyMatrix);
    }
    if let Some(&k) = k_values.iter().find(|&&k| 2 * k >= m.rows()) {
        return Err(Error::TrimTooLarge { k, rows: m.rows() });
    }
    let reference = agg_majority(m)?;
    if extract_sign(&agg_mean(m)?)? != reference || extract_sign(&agg_median(m)?)? != reference {
        return Ok(false);
    }
    // k < |S|/2 never reaches the random branch, so any generator will do.
    let mut rng = crate::rng::seeded(0);
    for &k in k_values {
        if extract_sign(&agg_trimmed(m, k, &mut rng)?)? != reference {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Largest `|S| · d` the exhaustive sweep will enumerate (2^24 matrices).
pub const MAX_SWEEP_BITS: usize = 24;
/// Largest client count accepted by the exhaustive sweep.
pub const MAX_SWEEP_ROWS: usize = 12;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SweepReport {
    pub max_rows: usize,
    pub max_cols: usize,
    pub matrices: u64,
    pub checks: u64,
    pub failures: u64,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Enumerates every `±1` matrix with `1..=max_rows` rows and `1..=max_cols`
/// columns and runs [`equivalence_oracle`] with every admissible `k`.
pub fn exhaustive_sweep(max_rows: usize, max_cols: usize) -> Result<SweepReport> {
    if max_rows == 0 || max_cols == 0 {
        return Err(Error::param("max_clients/max_dim", "must be >= 1"));
    }
    if max_rows > MAX_SWEEP_ROWS {
        return Err(Error::param(
            "max_clients",
            format!("enumeration guard: {max_rows} > {MAX_SWEEP_ROWS}"),
        ));
    }
    if max_rows * max_cols > MAX_SWEEP_BITS {
        return Err(Error::param(
            "max_dim",
            format!("enumeration guard: {max_rows}x{max_cols} exceeds {MAX_SWEEP_BITS} sign bits"),
        ));
    }
    let mut report = SweepReport {
        max_rows,
        max_cols,
        ..Default::default()
    };
    for rows in 1..=max_rows {
        let ks: Vec<usize> = (0..).take_while(|k| 2 * k < rows).collect();
        for cols in 1..=max_cols {
            let bits = rows * cols;
            for mask in 0u64..(1u64 << bits) {
                let m = matrix_from_mask(mask, rows, cols);
                report.matrices += 1;
                report.checks += 3 + ks.len() as u64;
                if !equivalence_oracle(&m, &ks)? {
                    report.failures += 1;
                }
            }
        }
    }
    Ok(report)
}

fn matrix_from_mask(mask: u64, rows: usize, cols: usize) -> SignMatrix {
    let data = (0..rows * cols)
        .map(|b| if mask >> b & 1 == 1 { Sign::Plus } else { Sign::Minus })
        .collect();
    SignMatrix { rows, cols, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn col(values: &[i8]) -> SignMatrix {
        SignMatrix::from_values(&values.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn rejects_bad_entries_and_ragged_rows() {
        assert!(matches!(
            SignMatrix::from_values(&[vec![1, 0]]),
            Err(Error::InvalidSign(0))
        ));
        assert!(SignMatrix::from_values(&[vec![1, 1], vec![1]]).is_err());
    }

    #[test]
    fn mean_examples() {
        let m = agg_mean(&col(&[1, 1, -1])).unwrap();
        assert!((m[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(agg_mean(&col(&[1, -1])).unwrap(), vec![0.0]);
        let single = SignMatrix::from_values(&[vec![1, -1]]).unwrap();
        assert_eq!(agg_mean(&single).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn empty_matrix_is_an_error() {
        let empty = SignMatrix::new(vec![]).unwrap();
        assert!(matches!(agg_mean(&empty), Err(Error::EmptyMatrix)));
        assert!(matches!(agg_median(&empty), Err(Error::EmptyMatrix)));
        assert!(matches!(agg_majority(&empty), Err(Error::EmptyMatrix)));
        assert!(matches!(
            agg_trimmed(&empty, 0, &mut seeded(0)),
            Err(Error::EmptyMatrix)
        ));
    }

    #[test]
    fn trimmed_examples() {
        let mut rng = seeded(0);
        // sorted (-1, +1, +1), trim one each end -> {+1}
        assert_eq!(agg_trimmed(&col(&[1, 1, -1]), 1, &mut rng).unwrap(), vec![1.0]);
        assert_eq!(agg_trimmed(&col(&[1, -1]), 0, &mut rng).unwrap(), vec![0.0]);
    }

    #[test]
    fn trimmed_empty_remainder_is_uniform() {
        let m = col(&[1, -1]);
        let mut rng = seeded(9);
        let n = 20_000;
        let mut plus = 0;
        for _ in 0..n {
            let v = agg_trimmed(&m, 1, &mut rng).unwrap()[0];
            assert!(v == 1.0 || v == -1.0);
            if v > 0.0 {
                plus += 1;
            }
        }
        let freq = plus as f64 / n as f64;
        // 4 standard errors of a fair coin
        assert!((freq - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(), "freq={freq}");
    }

    #[test]
    fn trimmed_matches_sorted_reference() {
        // Independent reference: materialize, sort, slice.
        let mut rng = seeded(0);
        for minus in 0..6usize {
            for plus in 0..6usize {
                let n = minus + plus;
                if n == 0 {
                    continue;
                }
                let mut values: Vec<f64> = std::iter::repeat_n(-1.0, minus)
                    .chain(std::iter::repeat_n(1.0, plus))
                    .collect();
                values.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for k in 0..n.div_ceil(2) {
                    let kept = &values[k..n - k];
                    let expected = kept.iter().sum::<f64>() / kept.len() as f64;
                    let got = Tally::new(minus, plus).trimmed(k, &mut rng).unwrap();
                    assert!((got - expected).abs() < 1e-15, "{minus} {plus} {k}");
                }
            }
        }
    }

    #[test]
    fn median_examples() {
        assert_eq!(agg_median(&col(&[1, 1, -1])).unwrap(), vec![1.0]);
        assert_eq!(agg_median(&col(&[1, -1])).unwrap(), vec![0.0]);
        assert_eq!(agg_median(&col(&[-1])).unwrap(), vec![-1.0]);
    }

    #[test]
    fn majority_examples() {
        assert_eq!(agg_majority(&col(&[1, 1, -1])).unwrap().0, vec![1]);
        assert_eq!(agg_majority(&col(&[1, -1])).unwrap().0, vec![0]);
        assert_eq!(agg_majority(&col(&[-1, -1, -1])).unwrap().0, vec![-1]);
    }

    #[test]
    fn extract_sign_examples() {
        assert_eq!(extract_sign(&[0.33, -0.5, 0.0]).unwrap().0, vec![1, -1, 0]);
        assert_eq!(extract_sign(&[1e-300]).unwrap().0, vec![1]);
        assert!(extract_sign(&[f64::NAN]).is_err());
    }

    #[test]
    fn oracle_examples() {
        assert!(equivalence_oracle(&col(&[1, 1, -1]), &[0, 1]).unwrap());
        assert!(matches!(
            equivalence_oracle(&col(&[1, -1]), &[1]),
            Err(Error::TrimTooLarge { k: 1, rows: 2 })
        ));
    }

    #[test]
    fn aggregate_tallies_handles_empty_columns() {
        let t = [Tally::new(0, 0), Tally::new(2, 1), Tally::new(1, 1)];
        let mut rng = seeded(0);
        for rule in [
            AggregationRule::Mean,
            AggregationRule::Median,
            AggregationRule::Majority,
            AggregationRule::Trimmed(1),
        ] {
            let s = aggregate_tallies(rule, &t, &mut rng);
            assert_eq!(s.0[0], 0);
            assert_eq!(s.0[1], -1);
        }
    }

    #[test]
    fn sweep_small_and_guards() {
        let r = exhaustive_sweep(5, 2).unwrap();
        assert!(r.passed());
        // sum over s=1..5 of 2^s + 2^(2s)
        let expected: u64 = (1..=5).map(|s| (1u64 << s) + (1u64 << (2 * s))).sum();
        assert_eq!(r.matrices, expected);
        assert!(exhaustive_sweep(1, 1).unwrap().passed());
        assert!(exhaustive_sweep(20, 4).is_err());
        assert!(exhaustive_sweep(12, 3).is_err());
        assert!(exhaustive_sweep(0, 1).is_err());
    }

    #[test]
    fn rule_json_shape() {
        let r: AggregationRule = serde_json::from_str(r#"{"trimmed":2}"#).unwrap();
        assert_eq!(r, AggregationRule::Trimmed(2));
        let r: AggregationRule = serde_json::from_str(r#""majority""#).unwrap();
        assert_eq!(r, AggregationRule::Majority);
    }
}
