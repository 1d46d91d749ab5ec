//! Change attribution over a dataflow graph.
//!
//! Given OLD and NEW windows and a target stream whose distribution shifted:
//!
//! 1. collect the backward closure of the target (every stream that can
//!    influence it);
//! 2. test each of those streams' mechanisms for a change between windows;
//! 3. fit OLD and NEW mechanism sets and define the game
//!    `v(T) = KL(target under hybrid(T) || target under hybrid(∅))`, where
//!    `hybrid(T)` takes NEW mechanisms for the streams in `T` and OLD ones
//!    elsewhere;
//! 4. score every stream by its Shapley value in that game and normalise the
//!    absolute scores into probabilities.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::dataset::{impute_absent, ImputePolicy, WindowedDataset};
use crate::error::{Error, Result};
use crate::graph::{DataflowGraph, StreamId};
use crate::mechanisms::{fit_conditional, ConditionalModel, HybridSampler, Mechanism, MechanismSet};
use crate::seed;
use crate::stats::kl::{is_low_cardinality, kl_divergence_auto, KnnReference, DRIFT_ESTIMATOR};
use crate::stats::{perm_test, shapley, DeviationResult, KlEstimator, ShapleyGame, TestStatistic};

pub use crate::stats::ShapleyMode;

pub const MIN_HYBRID_SAMPLES: usize = 1000;
/// Residuals within this fraction of a stream's largest magnitude count as zero
/// in the mechanism-change test.
const EXACT_FIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayerPolicy {
    /// Every ancestor of the target is a player.
    #[default]
    AllAncestors,
    /// Only ancestors whose mechanism-change test fired.
    ChangedOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributionConfig {
    pub shapley_mode: ShapleyMode,
    pub n_hybrid_samples: usize,
    pub kl_estimator: KlEstimator,
    pub alpha: f64,
    pub master_seed: u64,
    pub player_policy: PlayerPolicy,
    /// Permutations per mechanism-change test.
    pub n_permutations: usize,
    pub impute: ImputePolicy,
    /// Conditional family for non-root streams without an override.
    pub conditional_model: ConditionalModel,
    pub model_overrides: BTreeMap<String, ConditionalModel>,
    /// Streams whose change test did not fire keep their OLD mechanism in the
    /// NEW set, so only detected changes can move the hybrid target.
    pub gate_unchanged: bool,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            shapley_mode: ShapleyMode::Exact,
            n_hybrid_samples: 10_000,
            kl_estimator: KlEstimator::default(),
            alpha: 0.05,
            master_seed: 0,
            player_policy: PlayerPolicy::AllAncestors,
            n_permutations: 999,
            impute: ImputePolicy::Zero,
            conditional_model: ConditionalModel::Linear,
            model_overrides: BTreeMap::new(),
            gate_unchanged: true,
        }
    }
}

impl AttributionConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_hybrid_samples < MIN_HYBRID_SAMPLES {
            return Err(Error::Config(format!(
                "n_hybrid_samples must be at least {MIN_HYBRID_SAMPLES}, got {}",
                self.n_hybrid_samples
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let KlEstimator::Knn { k } = self.kl_estimator {
            if k == 0 || k >= self.n_hybrid_samples {
                return Err(Error::Config(format!("invalid k-NN neighbour count {k}")));
            }
        }
        if let KlEstimator::Binned { bins } = self.kl_estimator {
            if bins < 2 || bins > self.n_hybrid_samples {
                return Err(Error::Config(format!("invalid bin count {bins}")));
            }
        }
        Ok(())
    }

    pub fn model_for(&self, s: &StreamId) -> ConditionalModel {
        self.model_overrides
            .get(s.as_str())
            .copied()
            .unwrap_or(self.conditional_model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub stream: String,
    pub score: f64,
    pub probability: f64,
    /// Monte-Carlo standard error of the score (0 under exact enumeration).
    pub score_std_error: f64,
    /// Whether the stream took part in the Shapley game.
    pub player: bool,
    pub deviation: DeviationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub target: String,
    /// KL divergence of the NEW target column from the OLD one.
    pub delta_y: f64,
    /// v(all players): the divergence the hybrid game attributes in total.
    pub efficiency_total: f64,
    /// How scores were turned into probabilities.
    pub normalisation: String,
    /// All scores were exactly zero; probabilities are uniform.
    pub degenerate: bool,
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
    pub seed: u64,
    pub config: AttributionConfig,
}

impl AttributionReport {
    /// Row with the highest probability (first on ties).
    pub fn top(&self) -> Option<&ReportRow> {
        self.rows
            .iter()
            .reduce(|best, r| if r.probability > best.probability { r } else { best })
    }

    pub fn row(&self, stream: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.stream == stream)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialisation is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probabilities {
    pub values: IndexMap<String, f64>,
    pub degenerate: bool,
}

/// `|score_i| / Σ_j |score_j|`; uniform (and flagged) when every score is zero.
pub fn scores_to_probabilities(scores: &IndexMap<String, f64>) -> Probabilities {
    let total: f64 = scores.values().map(|s| s.abs()).sum();
    if total == 0.0 || !total.is_finite() {
        let u = if scores.is_empty() { 0.0 } else { 1.0 / scores.len() as f64 };
        return Probabilities {
            values: scores.keys().map(|k| (k.clone(), u)).collect(),
            degenerate: true,
        };
    }
    Probabilities {
        values: scores.iter().map(|(k, s)| (k.clone(), s.abs() / total)).collect(),
        degenerate: false,
    }
}

fn target_values(ds: &WindowedDataset, target: &str) -> Result<Vec<f64>> {
    let col = ds
        .column(target)
        .ok_or_else(|| Error::Dataset(format!("{} window has no column {target}", ds.window())))?;
    Ok(col.iter().map(|v| v.unwrap_or(0.0)).collect())
}

/// True iff the estimated KL divergence of the NEW target from the OLD target
/// exceeds `threshold`. ABSENT target cells count as 0.
///
/// Uses the bias-corrected binned estimator: the k-NN estimate scatters by a
/// few hundredths of a nat between two windows of one process, which swamps
/// small thresholds.
pub fn detect_drift(old: &WindowedDataset, new: &WindowedDataset, target: &str, threshold: f64) -> Result<bool> {
    detect_drift_with(old, new, target, threshold, DRIFT_ESTIMATOR)
}

pub fn detect_drift_with(
    old: &WindowedDataset,
    new: &WindowedDataset,
    target: &str,
    threshold: f64,
    estimator: KlEstimator,
) -> Result<bool> {
    let o = target_values(old, target)?;
    let n = target_values(new, target)?;
    Ok(kl_divergence_auto(&n, &o, estimator)? > threshold)
}

fn stream_key(graph: &DataflowGraph, s: &str) -> Result<u64> {
    Ok(graph.stream_index(s)? as u64)
}

/// Test whether the mechanism of `s` differs between the two (imputed) windows.
///
/// Roots compare marginals; other streams fit one linear conditional on the
/// pooled windows and compare the OLD rows' residuals with the NEW rows'.
/// Both use a KS permutation test.
pub fn mechanism_deviation(
    graph: &DataflowGraph,
    old: &WindowedDataset,
    new: &WindowedDataset,
    s: &str,
    config: &AttributionConfig,
) -> Result<DeviationResult> {
    let parents = graph.parents_of(s)?;
    let old_values = old.values(s)?;
    let new_values = new.values(s)?;
    let (a, b) = if parents.is_empty() {
        (old_values, new_values)
    } else {
        let n_old = old_values.len();
        let pooled_y: Vec<f64> = old_values.iter().chain(&new_values).copied().collect();
        let pooled_x: Vec<Vec<f64>> = parents
            .iter()
            .map(|p| Ok(old.values(p.as_str())?.into_iter().chain(new.values(p.as_str())?).collect()))
            .collect::<Result<_>>()?;
        let refs: Vec<&[f64]> = pooled_x.iter().map(Vec::as_slice).collect();
        let fitted = fit_conditional(&refs, &pooled_y, ConditionalModel::Linear).map_err(|e| Error::Fit {
            stream: s.to_string(),
            reason: e.to_string(),
        })?;
        let Mechanism::AdditiveNoise { mut residuals, .. } = fitted else {
            unreachable!("conditional fit yields an additive-noise mechanism")
        };
        // An exact pooled fit leaves only rounding noise, which must not read as a change.
        let scale = pooled_y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for r in &mut residuals {
            if r.abs() <= EXACT_FIT_TOLERANCE * scale {
                *r = 0.0;
            }
        }
        let tail = residuals.split_off(n_old);
        (residuals, tail)
    };
    let test = perm_test(
        &a,
        &b,
        TestStatistic::Ks,
        config.n_permutations,
        seed::derive(config.master_seed, "deviation", stream_key(graph, s)?),
    )?;
    Ok(DeviationResult {
        stream: s.to_string(),
        statistic: test.statistic,
        p_value: test.p_value,
        changed: test.p_value < config.alpha,
    })
}

/// Value-function estimator: divergence of hybrid samples from a fixed baseline.
enum Baseline {
    Knn(KnnReference),
    Samples(Vec<f64>, KlEstimator),
}

impl Baseline {
    fn new(samples: Vec<f64>, estimator: KlEstimator) -> Result<Self> {
        match estimator {
            KlEstimator::Knn { k } if !is_low_cardinality(&samples, &[]) => {
                Ok(Baseline::Knn(KnnReference::new(&samples, k)?))
            }
            other => Ok(Baseline::Samples(samples, other)),
        }
    }

    fn divergence(&self, p: &[f64]) -> Result<f64> {
        match self {
            Baseline::Knn(reference) => reference.divergence_from(p),
            Baseline::Samples(q, estimator) => kl_divergence_auto(p, q, *estimator),
        }
    }
}

/// Run the full attribution for `target`.
pub fn attribute_change(
    graph: &DataflowGraph,
    old: &WindowedDataset,
    new: &WindowedDataset,
    target: &str,
    config: &AttributionConfig,
) -> Result<AttributionReport> {
    config.validate()?;
    let graph = graph.with_target(target)?;
    let old = impute_absent(old, config.impute)?;
    let new = impute_absent(new, config.impute)?;
    let ancestors = graph.ancestors_of_target(target)?;
    for s in &ancestors {
        for ds in [&old, &new] {
            if ds.column(s.as_str()).is_none() {
                return Err(Error::Dataset(format!(
                    "{} window has no column for ancestor stream {s}",
                    ds.window()
                )));
            }
        }
    }

    let deviations: Vec<DeviationResult> = ancestors
        .iter()
        .map(|s| mechanism_deviation(&graph, &old, &new, s.as_str(), config))
        .collect::<Result<_>>()?;

    let players: Vec<usize> = match config.player_policy {
        PlayerPolicy::AllAncestors => (0..ancestors.len()).collect(),
        PlayerPolicy::ChangedOnly => (0..ancestors.len()).filter(|&i| deviations[i].changed).collect(),
    };

    let model_for = |s: &StreamId| config.model_for(s);
    let old_set = MechanismSet::fit(&graph, &old, &ancestors, model_for)?;
    let mut new_set = MechanismSet::fit(&graph, &new, &ancestors, model_for)?;
    if config.gate_unchanged {
        let unchanged: Vec<StreamId> = ancestors
            .iter()
            .zip(&deviations)
            .filter(|(_, d)| !d.changed)
            .map(|(s, _)| s.clone())
            .collect();
        new_set = new_set.with_mechanisms_from(&old_set, &unchanged)?;
    }
    let mut warnings = Vec::new();
    for (set, label) in [(&old_set, "old"), (&new_set, "new")] {
        for s in set.rank_deficient_streams() {
            warnings.push(format!(
                "{label} mechanism for {s}: rank-deficient design, minimum-norm solution used"
            ));
        }
    }

    let sampler = HybridSampler::new(&graph, &old_set, &new_set)?;
    let n = config.n_hybrid_samples;
    let seed = config.master_seed;
    let baseline_samples = sampler.sample(|_| false, n, seed::derive(seed, "baseline", 0));
    let baseline = Baseline::new(baseline_samples, config.kl_estimator)?;

    let ancestor_mask = |coalition: u64| -> u64 {
        players
            .iter()
            .enumerate()
            .filter(|(bit, _)| coalition & (1 << bit) != 0)
            .fold(0u64, |m, (_, &a)| m | (1 << a))
    };
    let value_fn = |coalition: u64| -> f64 {
        if coalition == 0 {
            return 0.0;
        }
        let mask = ancestor_mask(coalition);
        let replaced = |s: &StreamId| {
            let i = ancestors.iter().position(|a| a == s).expect("sampler streams are ancestors");
            mask & (1 << i) != 0
        };
        let samples = sampler.sample(replaced, n, seed::derive(seed, "hybrid", mask));
        baseline.divergence(&samples).unwrap_or(f64::NAN)
    };

    let (scores, std_errors, efficiency_total) = if players.is_empty() {
        (vec![0.0; ancestors.len()], vec![0.0; ancestors.len()], 0.0)
    } else {
        let game = ShapleyGame {
            players: players.iter().map(|&i| ancestors[i].to_string()).collect(),
            value_fn,
            mode: config.shapley_mode,
        };
        let values = shapley(&game, seed::derive(seed, "shapley", 0))?;
        if values.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InsufficientSamples("hybrid divergence estimate was not finite".into()));
        }
        let mut scores = vec![0.0; ancestors.len()];
        let mut errors = vec![0.0; ancestors.len()];
        for (j, &i) in players.iter().enumerate() {
            scores[i] = values.scores[j];
            errors[i] = values.std_errors[j];
        }
        (scores, errors, values.grand_total)
    };

    let score_map: IndexMap<String, f64> = ancestors.iter().map(|s| s.to_string()).zip(scores.iter().copied()).collect();
    let probabilities = scores_to_probabilities(&score_map);
    let delta_y = kl_divergence_auto(
        &new.values(target)?,
        &old.values(target)?,
        config.kl_estimator,
    )?;

    let rows = ancestors
        .iter()
        .enumerate()
        .map(|(i, s)| ReportRow {
            stream: s.to_string(),
            score: scores[i],
            probability: probabilities.values[s.as_str()],
            score_std_error: std_errors[i],
            player: players.contains(&i),
            deviation: deviations[i].clone(),
        })
        .collect();

    Ok(AttributionReport {
        target: target.to_string(),
        delta_y,
        efficiency_total,
        normalisation: "abs-share".into(),
        degenerate: probabilities.degenerate,
        rows,
        warnings,
        seed,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(entries: &[(&str, f64)]) -> IndexMap<String, f64> {
        entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn probabilities_single_and_degenerate() {
        let p = scores_to_probabilities(&map(&[("x", -0.4)]));
        assert_eq!(p.values["x"], 1.0);
        assert!(!p.degenerate);

        let p = scores_to_probabilities(&map(&[("a", 0.0), ("b", 0.0), ("c", 0.0), ("d", 0.0)]));
        assert!(p.degenerate);
        assert!(p.values.values().all(|&v| v == 0.25));
    }

    #[test]
    fn probabilities_are_abs_shares() {
        let p = scores_to_probabilities(&map(&[("a", 1.0), ("b", -3.0)]));
        assert_eq!(p.values["a"], 0.25);
        assert_eq!(p.values["b"], 0.75);
    }

    #[test]
    fn config_validation() {
        assert!(AttributionConfig::default().validate().is_ok());
        let c = AttributionConfig {
            n_hybrid_samples: 999,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = AttributionConfig {
            alpha: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
