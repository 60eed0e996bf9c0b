//! Non-IID client partitioning driven by Dirichlet class mixes.
//!
//! Two modes are offered:
//!
//! * `Unbalanced`: for every class, a vector `q ~ Dir(α·1_M)` splits that
//!   class's samples across clients. Shard sizes vary.
//! * `Balanced` (default): every client holds `⌊N/M⌋` or `⌈N/M⌉` samples.
//!   Each client draws a class mix `p_m ~ Dir(α·1_C)`; the matrix of desired
//!   counts is fitted to the exact shard sizes and class totals by iterative
//!   proportional scaling and then rounded with both margins preserved.
//!
//! Dirichlet vectors are built from independent `Gamma(α, 1)` draws divided
//! by their sum. In unbalanced mode a client left empty takes one sample from
//! the currently largest shard.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    #[default]
    Balanced,
    Unbalanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletPartition {
    pub alpha: f64,
    pub mode: PartitionMode,
    /// Sample indices held by each client, in ascending order.
    pub assignment: Vec<Vec<usize>>,
    /// Realized class composition of each shard; each row sums to 1.
    pub class_proportions: Vec<Vec<f64>>,
}

impl DirichletPartition {
    pub fn num_clients(&self) -> usize {
        self.assignment.len()
    }

    pub fn shard(&self, client: usize) -> &[usize] {
        &self.assignment[client]
    }

    /// Checks that the shards are non-empty and cover `0..n` exactly once.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (m, shard) in self.assignment.iter().enumerate() {
            if shard.is_empty() {
                return Err(Error::EmptyShard(m));
            }
            for &i in shard {
                if i >= n {
                    return Err(Error::param(
                        "assignment",
                        format!("client {m} holds index {i} outside dataset of {n}"),
                    ));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::param("assignment", format!("sample {i} assigned twice")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|&s| !s) {
            return Err(Error::param("assignment", format!("sample {i} unassigned")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses an exported partition and checks it against a dataset of `n` samples.
    pub fn from_json(text: &str, n: usize) -> Result<Self> {
        let p: DirichletPartition = serde_json::from_str(text)?;
        if !(p.alpha > 0.0) {
            return Err(Error::param("alpha", "must be positive"));
        }
        p.validate(n)?;
        Ok(p)
    }
}

fn dirichlet(alpha: f64, k: usize, rng: &mut SimRng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha checked positive");
    let mut v: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = v.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        v.iter_mut().for_each(|x| *x /= sum);
    } else {
        // every draw underflowed: the limit of Dir(α→0) is a random vertex
        v.iter_mut().for_each(|x| *x = 0.0);
        v[rng.gen_range(0..k)] = 1.0;
    }
    v
}

/// Rounds `weights · total` to integers summing to `total` (largest remainder).
fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn class_totals(labels: &[u8], classes: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[usize::from(l)].push(i);
    }
    by_class
}

/// Fits a positive `rows × cols` matrix to the given margins and rounds it to
/// integers that hit both margins exactly.
fn fit_counts(weights: &[Vec<f64>], row_sums: &[usize], col_sums: &[usize]) -> Vec<Vec<usize>> {
    let rows = row_sums.len();
    let cols = col_sums.len();
    let mut x: Vec<Vec<f64>> = weights
        .iter()
        .map(|r| r.iter().map(|&w| w.max(1e-12)).collect())
        .collect();
    for _ in 0..500 {
        for (r, &target) in x.iter_mut().zip(row_sums) {
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v *= target as f64 / s);
        }
        let mut worst = 0.0f64;
        for c in 0..cols {
            let s: f64 = x.iter().map(|r| r[c]).sum();
            let f = if s > 0.0 { col_sums[c] as f64 / s } else { 0.0 };
            worst = worst.max((s - col_sums[c] as f64).abs());
            x.iter_mut().for_each(|r| r[c] *= f);
        }
        if worst < 1e-9 {
            break;
        }
    }
    let mut counts: Vec<Vec<usize>> = x
        .iter()
        .map(|r| r.iter().map(|v| v.floor() as usize).collect())
        .collect();
    // flooring can overshoot only through float error; clip against margins first
    for c in 0..cols {
        let mut s: usize = counts.iter().map(|r| r[c]).sum();
        for r in counts.iter_mut() {
            while s > col_sums[c] && r[c] > 0 {
                r[c] -= 1;
                s -= 1;
            }
        }
    }
    for (r, &target) in counts.iter_mut().zip(row_sums) {
        let mut s: usize = r.iter().sum();
        for v in r.iter_mut() {
            while s > target && *v > 0 {
                *v -= 1;
                s -= 1;
            }
        }
    }
    let mut row_def: Vec<usize> = (0..rows)
        .map(|m| row_sums[m] - counts[m].iter().sum::<usize>())
        .collect();
    let mut col_def: Vec<usize> = (0..cols)
        .map(|c| col_sums[c] - counts.iter().map(|r| r[c]).sum::<usize>())
        .collect();
    let mut cells: Vec<(usize, usize)> = (0..rows).flat_map(|m| (0..cols).map(move |c| (m, c))).collect();
    cells.sort_by(|&(a, b), &(c, d)| {
        let fa = x[a][b] - x[a][b].floor();
        let fb = x[c][d] - x[c][d].floor();
        fb.total_cmp(&fa).then((a, b).cmp(&(c, d)))
    });
    for (m, c) in cells {
        if row_def[m] > 0 && col_def[c] > 0 {
            counts[m][c] += 1;
            row_def[m] -= 1;
            col_def[c] -= 1;
        }
    }
    // the deficits have equal totals, so any remaining pair can absorb one unit
    for m in 0..rows {
        for c in 0..cols {
            let k = row_def[m].min(col_def[c]);
            counts[m][c] += k;
            row_def[m] -= k;
            col_def[c] -= k;
        }
    }
    counts
}

pub fn dirichlet_partition(
    labels: &[u8],
    clients: usize,
    alpha: f64,
    mode: PartitionMode,
    rng: &mut SimRng,
) -> Result<DirichletPartition> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::param(
            "alpha",
            format!("must be a positive finite real, got {alpha}"),
        ));
    }
    if clients == 0 {
        return Err(Error::param("M", "need at least one client"));
    }
    if clients > labels.len() {
        return Err(Error::TooFewSamples {
            samples: labels.len(),
            clients,
        });
    }
    let classes = labels.iter().map(|&l| usize::from(l) + 1).max().unwrap_or(0);
    let mut by_class = class_totals(labels, classes);
    for idx in by_class.iter_mut() {
        idx.shuffle(rng);
    }
    let totals: Vec<usize> = by_class.iter().map(Vec::len).collect();

    // counts[m][c]: samples of class c handed to client m
    let counts = match mode {
        PartitionMode::Unbalanced => {
            let mut counts = vec![vec![0usize; classes]; clients];
            for (c, &n_c) in totals.iter().enumerate() {
                let q = dirichlet(alpha, clients, rng);
                for (m, k) in apportion(&q, n_c).into_iter().enumerate() {
                    counts[m][c] = k;
                }
            }
            counts
        }
        PartitionMode::Balanced => {
            let n = labels.len();
            let sizes: Vec<usize> = (0..clients)
                .map(|m| n / clients + usize::from(m < n % clients))
                .collect();
            let mixes: Vec<Vec<f64>> = (0..clients).map(|_| dirichlet(alpha, classes, rng)).collect();
            fit_counts(&mixes, &sizes, &totals)
        }
    };

    let mut cursor = vec![0usize; classes];
    let mut assignment: Vec<Vec<usize>> = counts
        .iter()
        .map(|row| {
            let mut shard = Vec::new();
            for (c, &k) in row.iter().enumerate() {
                shard.extend_from_slice(&by_class[c][cursor[c]..cursor[c] + k]);
                cursor[c] += k;
            }
            shard
        })
        .collect();

    // repair: an empty client takes one sample from the largest shard
    for m in 0..clients {
        if assignment[m].is_empty() {
            let donor = (0..clients)
                .max_by(|&a, &b| assignment[a].len().cmp(&assignment[b].len()).then(b.cmp(&a)))
                .expect("clients >= 1");
            let sample = assignment[donor].pop().expect("largest shard is non-empty");
            assignment[m].push(sample);
        }
    }

    let class_proportions = assignment
        .iter_mut()
        .map(|shard| {
            shard.sort_unstable();
            let mut row = vec![0.0; classes];
            for &i in shard.iter() {
                row[usize::from(labels[i])] += 1.0;
            }
            let len = shard.len() as f64;
            row.iter_mut().for_each(|v| *v /= len);
            row
        })
        .collect();

    Ok(DirichletPartition {
        alpha,
        mode,
        assignment,
        class_proportions,
    })
}
