//! One-dimensional KL divergence estimators.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Streams with at most this many distinct pooled values are scored with the
/// discrete estimator by [`kl_divergence_auto`].
pub const DISCRETE_FALLBACK_MAX_DISTINCT: usize = 10;

const JITTER_REL: f64 = 1e-9;
const JITTER_SEED_P: u64 = 0x5eed_0001;
const JITTER_SEED_Q: u64 = 0x5eed_0002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KlEstimator {
    /// k-nearest-neighbour estimator on continuous samples.
    Knn { k: usize },
    /// Plug-in estimator on the empirical distributions of exact values.
    Discrete,
    /// Plug-in estimator on `bins` equal-frequency bins of the pooled samples,
    /// minus the Miller-Madow bias term. Near zero with small spread when both
    /// samples come from one distribution, which suits drift thresholds.
    Binned { bins: usize },
}

/// Estimator used by drift detection.
pub const DRIFT_ESTIMATOR: KlEstimator = KlEstimator::Binned { bins: 10 };

impl Default for KlEstimator {
    fn default() -> Self {
        KlEstimator::Knn { k: 5 }
    }
}

/// Estimate D(p || q) in nats from samples of each distribution.
///
/// The k-NN estimate can be negative through estimator bias; it is returned as is.
pub fn kl_divergence(p: &[f64], q: &[f64], estimator: KlEstimator) -> Result<f64> {
    match estimator {
        KlEstimator::Knn { k } => {
            let reference = KnnReference::new(q, k)?;
            reference.divergence_from(p)
        }
        KlEstimator::Discrete => discrete_kl(p, q, 0.0),
        KlEstimator::Binned { bins } => binned_kl(p, q, bins),
    }
}

/// [`kl_divergence`] with the discrete fallback: when the pooled samples hold at
/// most [`DISCRETE_FALLBACK_MAX_DISTINCT`] distinct values, the plug-in estimator
/// with add-one-half smoothing is used regardless of `estimator`.
pub fn kl_divergence_auto(p: &[f64], q: &[f64], estimator: KlEstimator) -> Result<f64> {
    if is_low_cardinality(p, q) {
        return discrete_kl(p, q, 0.5);
    }
    kl_divergence(p, q, estimator)
}

pub(crate) fn is_low_cardinality(p: &[f64], q: &[f64]) -> bool {
    let mut distinct = std::collections::HashSet::new();
    for v in p.iter().chain(q) {
        distinct.insert(v.to_bits());
        if distinct.len() > DISCRETE_FALLBACK_MAX_DISTINCT {
            return false;
        }
    }
    true
}

fn discrete_kl(p: &[f64], q: &[f64], pseudo_count: f64) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::InsufficientSamples("discrete KL needs non-empty samples".into()));
    }
    // Keyed by a total-order bit pattern so -0.0 and 0.0 stay distinct categories.
    let mut counts: BTreeMap<u64, (f64, f64, f64)> = BTreeMap::new();
    for &v in p {
        counts.entry(v.to_bits()).or_insert((v, 0.0, 0.0)).1 += 1.0;
    }
    for &v in q {
        counts.entry(v.to_bits()).or_insert((v, 0.0, 0.0)).2 += 1.0;
    }
    let support = counts.len() as f64;
    let p_total = p.len() as f64 + pseudo_count * support;
    let q_total = q.len() as f64 + pseudo_count * support;
    let mut total = 0.0;
    for (value, cp, cq) in counts.values() {
        let cp = cp + pseudo_count;
        let cq = cq + pseudo_count;
        if cp == 0.0 {
            continue;
        }
        if cq == 0.0 {
            return Err(Error::SupportViolation(*value));
        }
        let pp = cp / p_total;
        let qq = cq / q_total;
        total += pp * (pp / qq).ln();
    }
    Ok(total)
}

fn binned_kl(p: &[f64], q: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::Config(format!("binned KL needs at least 2 bins, got {bins}")));
    }
    if p.len() < bins || q.len() < bins {
        return Err(Error::InsufficientSamples(format!(
            "binned KL with {bins} bins needs at least {bins} samples per side"
        )));
    }
    let mut pooled: Vec<f64> = p.iter().chain(q).copied().collect();
    pooled.sort_unstable_by(f64::total_cmp);
    let mut edges: Vec<f64> = (1..bins).map(|i| pooled[i * pooled.len() / bins]).collect();
    edges.dedup();
    let used = edges.len() + 1;
    let count = |xs: &[f64]| {
        let mut c = vec![0.0; used];
        for &v in xs {
            c[edges.partition_point(|e| *e <= v)] += 1.0;
        }
        c
    };
    let (cp, cq) = (count(p), count(q));
    let (n, m) = (p.len() as f64, q.len() as f64);
    let half = 0.5 * used as f64;
    let plug_in: f64 = cp
        .iter()
        .zip(&cq)
        .map(|(a, b)| {
            let pp = (a + 0.5) / (n + half);
            let qq = (b + 0.5) / (m + half);
            pp * (pp / qq).ln()
        })
        .sum();
    Ok(plug_in - (used as f64 - 1.0) / 2.0 * (1.0 / n + 1.0 / m))
}

/// A jittered, sorted reference sample `q` for repeated k-NN divergence
/// estimates D(p || q) against different `p`.
///
/// Every value receives a deterministic perturbation of relative size 1e-9
/// (scaled by the reference's mean magnitude so zeros are perturbed too). This
/// breaks exact ties, which otherwise give zero neighbour distances; because
/// both samples get the same jitter width, duplicated atoms contribute their
/// log mass ratio as they should.
#[derive(Debug, Clone)]
pub struct KnnReference {
    sorted: Vec<f64>,
    k: usize,
    scale: f64,
}

impl KnnReference {
    pub fn new(q: &[f64], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("k-NN estimator needs k >= 1".into()));
        }
        if q.len() < k + 1 {
            return Err(Error::InsufficientSamples(format!(
                "k-NN KL needs at least {} reference samples, got {}",
                k + 1,
                q.len()
            )));
        }
        let mean_abs = q.iter().map(|v| v.abs()).sum::<f64>() / q.len() as f64;
        let scale = if mean_abs > 0.0 && mean_abs.is_finite() { mean_abs } else { 1.0 };
        let sorted = jittered_sorted(q, scale, JITTER_SEED_Q);
        Ok(Self { sorted, k, scale })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Estimate D(p || reference).
    pub fn divergence_from(&self, p: &[f64]) -> Result<f64> {
        let k = self.k;
        if p.len() < k + 1 {
            return Err(Error::InsufficientSamples(format!(
                "k-NN KL needs at least {} samples, got {}",
                k + 1,
                p.len()
            )));
        }
        let p_sorted = jittered_sorted(p, self.scale, JITTER_SEED_Q ^ JITTER_SEED_P);
        let n = p_sorted.len();
        let m = self.sorted.len();
        let mut log_ratio_sum = 0.0;
        // Insertion point of p_sorted[i] into the reference advances monotonically.
        let mut pos = 0usize;
        for (i, &x) in p_sorted.iter().enumerate() {
            while pos < m && self.sorted[pos] < x {
                pos += 1;
            }
            let rho = kth_distance(&p_sorted, x, i.checked_sub(1), i + 1, k);
            let nu = kth_distance(&self.sorted, x, pos.checked_sub(1), pos, k);
            log_ratio_sum += nu.max(f64::MIN_POSITIVE).ln() - rho.max(f64::MIN_POSITIVE).ln();
        }
        Ok(log_ratio_sum / n as f64 + (m as f64 / (n as f64 - 1.0)).ln())
    }
}

fn jittered_sorted(values: &[f64], scale: f64, stream: u64) -> Vec<f64> {
    let mut rng = seed::rng(stream);
    let mut out: Vec<f64> = values
        .iter()
        .map(|&v| {
            let u: f64 = rng.random::<f64>() - 0.5;
            v + JITTER_REL * (v.abs() + scale) * u
        })
        .collect();
    out.sort_unstable_by(f64::total_cmp);
    out
}

/// Distance from `x` to its k-th nearest neighbour in `sorted`, walking outward
/// from `left` (inclusive, moving down) and `right` (inclusive, moving up).
fn kth_distance(sorted: &[f64], x: f64, mut left: Option<usize>, mut right: usize, k: usize) -> f64 {
    let mut dist = 0.0;
    for _ in 0..k {
        let dl = left.map(|l| x - sorted[l]);
        let dr = sorted.get(right).map(|r| r - x);
        match (dl, dr) {
            (Some(a), Some(b)) if a <= b => {
                dist = a;
                left = left.and_then(|l| l.checked_sub(1));
            }
            (Some(a), None) => {
                dist = a;
                left = left.and_then(|l| l.checked_sub(1));
            }
            (_, Some(b)) => {
                dist = b;
                right += 1;
            }
            (None, None) => break,
        }
    }
    dist.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn binned_identical_samples_give_minus_the_correction() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let d = kl_divergence(&v, &v, KlEstimator::Binned { bins: 10 }).unwrap();
        assert!((d + 9.0 / 2.0 * (2.0 / 1000.0)).abs() < 1e-12, "{d}");
    }

    #[test]
    fn binned_sees_a_mean_shift_and_rejects_one_bin() {
        let mut rng = seed::rng(3);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let p: Vec<f64> = (0..5000).map(|_| normal.sample(&mut rng)).collect();
        let q: Vec<f64> = (0..5000).map(|_| normal.sample(&mut rng) + 1.0).collect();
        let d = kl_divergence(&p, &q, KlEstimator::Binned { bins: 10 }).unwrap();
        // Binning loses some information, so the estimate sits below the true 0.5.
        assert!((0.35..0.55).contains(&d), "{d}");
        assert!(kl_divergence(&p, &q, KlEstimator::Binned { bins: 1 }).is_err());
    }

    #[test]
    fn discrete_identical_samples_is_exactly_zero() {
        let p = [1.0, 2.0, 2.0, 3.5, 7.0];
        assert_eq!(kl_divergence(&p, &p, KlEstimator::Discrete).unwrap(), 0.0);
    }

    #[test]
    fn discrete_matches_direct_formula() {
        let p = [0.0, 1.0];
        let q = [0.0, 1.0, 1.0, 1.0];
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        let got = kl_divergence(&p, &q, KlEstimator::Discrete).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.1438).abs() < 1e-4);
    }

    #[test]
    fn discrete_support_violation() {
        let err = kl_divergence(&[0.0, 5.0], &[0.0, 1.0], KlEstimator::Discrete).unwrap_err();
        assert!(matches!(err, Error::SupportViolation(v) if v == 5.0));
    }

    #[test]
    fn knn_insufficient_samples() {
        let q: Vec<f64> = (0..5).map(f64::from).collect();
        assert!(kl_divergence(&q, &q, KlEstimator::Knn { k: 5 }).is_err());
    }

    #[test]
    fn kth_distance_excludes_self() {
        let s = [0.0, 1.0, 3.0, 6.0];
        assert_eq!(kth_distance(&s, 1.0, Some(0), 2, 1), 1.0);
        assert_eq!(kth_distance(&s, 1.0, Some(0), 2, 2), 2.0);
        assert_eq!(kth_distance(&s, 1.0, Some(0), 2, 3), 5.0);
        assert_eq!(kth_distance(&s, -1.0, None, 0, 2), 2.0);
    }

    #[test]
    fn knn_gaussian_mean_shift() {
        let mut rng = seed::rng(11);
        let a = Normal::new(0.0, 1.0).unwrap();
        let b = Normal::new(1.0, 1.0).unwrap();
        let p: Vec<f64> = (0..10_000).map(|_| a.sample(&mut rng)).collect();
        let q: Vec<f64> = (0..10_000).map(|_| b.sample(&mut rng)).collect();
        let d = kl_divergence(&p, &q, KlEstimator::Knn { k: 5 }).unwrap();
        assert!((d - 0.5).abs() < 0.08, "{d}");
    }

    #[test]
    fn knn_handles_heavy_ties_like_discrete() {
        // Two-atom distributions: the tie-broken k-NN estimate approaches the
        // discrete divergence.
        let p: Vec<f64> = (0..4000).map(|i| if i % 2 == 0 { 0.0 } else { 1.0 }).collect();
        let q: Vec<f64> = (0..4000).map(|i| if i % 4 == 0 { 0.0 } else { 1.0 }).collect();
        let exact = kl_divergence(&p, &q, KlEstimator::Discrete).unwrap();
        let knn = kl_divergence(&p, &q, KlEstimator::Knn { k: 5 }).unwrap();
        assert!((knn - exact).abs() < 0.05, "knn {knn} exact {exact}");
    }

    #[test]
    fn auto_uses_smoothed_discrete_for_few_values() {
        let p = [0.0, 0.0, 1.0, 2.0];
        let q = [0.0, 1.0, 1.0, 1.0];
        // Plain discrete fails on value 2; the fallback smooths it.
        assert!(kl_divergence(&p, &q, KlEstimator::Discrete).is_err());
        let d = kl_divergence_auto(&p, &q, KlEstimator::default()).unwrap();
        assert!(d.is_finite() && d > 0.0);
    }
}
