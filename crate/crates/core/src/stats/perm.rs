//! Two-sample permutation tests.
//!
//! The regime label (old vs new) is tested for independence from the value by
//! reshuffling labels over the pooled sample.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const MIN_PERMUTATIONS: usize = 100;

/// Full enumeration is refused above this many label splits.
pub const MAX_EXACT_SPLITS: u64 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatistic {
    /// |mean(a) - mean(b)|, two-sided.
    MeanDiff,
    /// mean(b) - mean(a), one-sided (large when `b` sits above `a`).
    MeanShift,
    /// Two-sample Kolmogorov-Smirnov distance.
    Ks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermTestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Pooled sample with precomputed structure for fast re-evaluation under relabelling.
struct Pooled {
    values: Vec<f64>,
    /// End index (exclusive) of each run of equal values in `values` (sorted for KS).
    tie_ends: Vec<usize>,
    n_a: usize,
}

impl Pooled {
    fn new(a: &[f64], b: &[f64], statistic: TestStatistic) -> Self {
        let mut values: Vec<f64> = a.iter().chain(b).copied().collect();
        let mut tie_ends = Vec::new();
        if statistic == TestStatistic::Ks {
            // Labels travel with positions, so sorting the pooled values only
            // changes which positions count as "a"; the caller labels by index.
            values.sort_unstable_by(f64::total_cmp);
            for i in 1..=values.len() {
                if i == values.len() || values[i] != values[i - 1] {
                    tie_ends.push(i);
                }
            }
        }
        Self {
            values,
            tie_ends,
            n_a: a.len(),
        }
    }

    fn statistic(&self, is_a: &[bool], statistic: TestStatistic) -> f64 {
        let n_a = self.n_a as f64;
        let n_b = (self.values.len() - self.n_a) as f64;
        match statistic {
            TestStatistic::MeanDiff | TestStatistic::MeanShift => {
                let (mut sa, mut sb) = (0.0, 0.0);
                for (v, &in_a) in self.values.iter().zip(is_a) {
                    if in_a {
                        sa += v;
                    } else {
                        sb += v;
                    }
                }
                let shift = sb / n_b - sa / n_a;
                if statistic == TestStatistic::MeanDiff {
                    shift.abs()
                } else {
                    shift
                }
            }
            TestStatistic::Ks => {
                let (mut ca, mut cb) = (0usize, 0usize);
                let mut start = 0;
                let mut best: f64 = 0.0;
                for &end in &self.tie_ends {
                    for &in_a in &is_a[start..end] {
                        if in_a {
                            ca += 1;
                        } else {
                            cb += 1;
                        }
                    }
                    start = end;
                    best = best.max((ca as f64 / n_a - cb as f64 / n_b).abs());
                }
                best
            }
        }
    }
}

fn observed_labels(a: &[f64], b: &[f64], statistic: TestStatistic) -> Vec<bool> {
    if statistic != TestStatistic::Ks {
        return (0..a.len() + b.len()).map(|i| i < a.len()).collect();
    }
    // Sorted pooled order with labels; stable so equal values keep a-before-b,
    // which does not matter because the KS statistic is read at tie ends.
    let mut tagged: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    tagged.sort_by(|x, y| x.0.total_cmp(&y.0));
    tagged.into_iter().map(|(_, l)| l).collect()
}

fn check_samples(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientSamples("permutation test needs two non-empty samples".into()));
    }
    Ok(())
}

/// Monte-Carlo permutation test with add-one smoothing:
/// `p = (1 + #{permuted statistic >= observed}) / (n_perm + 1)`.
pub fn perm_test(
    a: &[f64],
    b: &[f64],
    statistic: TestStatistic,
    n_perm: usize,
    seed: u64,
) -> Result<PermTestResult> {
    check_samples(a, b)?;
    if n_perm < MIN_PERMUTATIONS {
        return Err(Error::Config(format!(
            "permutation test needs at least {MIN_PERMUTATIONS} permutations, got {n_perm}"
        )));
    }
    let pooled = Pooled::new(a, b, statistic);
    let mut labels = observed_labels(a, b, statistic);
    let observed = pooled.statistic(&labels, statistic);
    let tolerance = 1e-12 * observed.abs().max(1e-300);
    let mut rng = seed::rng(seed);
    let mut extreme = 0usize;
    for _ in 0..n_perm {
        labels.shuffle(&mut rng);
        if pooled.statistic(&labels, statistic) >= observed - tolerance {
            extreme += 1;
        }
    }
    Ok(PermTestResult {
        statistic: observed,
        p_value: (1 + extreme) as f64 / (n_perm + 1) as f64,
    })
}

/// Permutation p-value of the two-sample test (see [`perm_test`]).
pub fn two_sample_perm_test(
    a: &[f64],
    b: &[f64],
    statistic: TestStatistic,
    n_perm: usize,
    seed: u64,
) -> Result<f64> {
    Ok(perm_test(a, b, statistic, n_perm, seed)?.p_value)
}

/// Exact permutation test over every split of the pooled sample into groups of
/// the original sizes: `p = #{splits with statistic >= observed} / #splits`.
pub fn exact_perm_test(a: &[f64], b: &[f64], statistic: TestStatistic) -> Result<PermTestResult> {
    check_samples(a, b)?;
    let n = a.len() + b.len();
    let splits = binomial(n as u64, a.len() as u64);
    if splits > MAX_EXACT_SPLITS {
        return Err(Error::Config(format!(
            "exact permutation test would enumerate {splits} splits (limit {MAX_EXACT_SPLITS})"
        )));
    }
    let pooled = Pooled::new(a, b, statistic);
    let observed_labels = observed_labels(a, b, statistic);
    let observed = pooled.statistic(&observed_labels, statistic);
    let tolerance = 1e-12 * observed.abs().max(1e-300);
    let mut chosen: Vec<usize> = (0..a.len()).collect();
    let mut labels = vec![false; n];
    let mut extreme = 0u64;
    let mut total = 0u64;
    loop {
        labels.iter_mut().for_each(|l| *l = false);
        for &c in &chosen {
            labels[c] = true;
        }
        total += 1;
        if pooled.statistic(&labels, statistic) >= observed - tolerance {
            extreme += 1;
        }
        if !next_combination(&mut chosen, n) {
            break;
        }
    }
    Ok(PermTestResult {
        statistic: observed,
        p_value: extreme as f64 / total as f64,
    })
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let pooled = Pooled::new(a, b, TestStatistic::Ks);
    pooled.statistic(&observed_labels(a, b, TestStatistic::Ks), TestStatistic::Ks)
}
