//! Repeated fault-localisation experiments.
//!
//! Each repeat simulates a fault-free OLD window and a faulty NEW window with
//! fresh seeds, runs the attribution, and keeps every stream's score. The
//! summary reports mean scores with 95% confidence intervals and Welch's t-test
//! of the top-scoring stream against each other stream.

use serde::{Deserialize, Serialize};

use crate::attribution::{attribute_change, AttributionConfig};
use crate::error::{Error, Result};
use crate::seed;
use crate::simulator::{simulate, FaultSpec, Pipeline, PipelineSpec};
use crate::stats::welch::{mean_and_variance, t_quantile};
use crate::stats::{welch_t_test, WelchResult};

pub const CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamScores {
    pub stream: String,
    pub mean: f64,
    /// Half-width of the 95% t-interval for the mean.
    pub ci_half_width: f64,
    /// One score per repeat.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub stream: String,
    pub welch: WelchResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub pipeline: Pipeline,
    pub fault: Option<String>,
    pub target: String,
    pub repeats: usize,
    pub n_units: usize,
    pub master_seed: u64,
    pub streams: Vec<StreamScores>,
    /// Stream with the highest mean score.
    pub winner: String,
    /// Welch's t-test of the winner's scores against every other stream's.
    pub comparisons: Vec<Comparison>,
    /// Observed target divergence per repeat.
    pub delta_y: Vec<f64>,
}

impl ExperimentSummary {
    pub fn stream(&self, s: &str) -> Option<&StreamScores> {
        self.streams.iter().find(|r| r.stream == s)
    }

    /// Largest Welch p-value of the winner against the other streams.
    pub fn max_p_value(&self) -> f64 {
        self.comparisons.iter().map(|c| c.welch.p).fold(0.0, f64::max)
    }

    /// The winner beats every other stream at level `alpha`.
    pub fn winner_significant(&self, alpha: f64) -> bool {
        !self.comparisons.is_empty()
            && self
                .comparisons
                .iter()
                .all(|c| c.welch.p < alpha && c.welch.t > 0.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serialisation is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Summarise per-stream score vectors (all the same length, at least 2).
pub fn summarise(streams: Vec<(String, Vec<f64>)>) -> Result<(Vec<StreamScores>, String, Vec<Comparison>)> {
    let repeats = streams.first().map_or(0, |(_, v)| v.len());
    if repeats < 2 {
        return Err(Error::Config("an experiment needs at least 2 repeats".into()));
    }
    let t = t_quantile(CONFIDENCE, (repeats - 1) as f64);
    let rows: Vec<StreamScores> = streams
        .into_iter()
        .map(|(stream, scores)| {
            let (mean, var) = mean_and_variance(&scores);
            StreamScores {
                stream,
                mean,
                ci_half_width: t * (var / repeats as f64).sqrt(),
                scores,
            }
        })
        .collect();
    let winner = rows
        .iter()
        .reduce(|best, r| if r.mean > best.mean { r } else { best })
        .expect("at least one stream");
    let comparisons = rows
        .iter()
        .filter(|r| r.stream != winner.stream)
        .map(|r| {
            Ok(Comparison {
                stream: r.stream.clone(),
                welch: welch_t_test(&winner.scores, &r.scores)?,
            })
        })
        .collect::<Result<_>>()?;
    let winner = winner.stream.clone();
    Ok((rows, winner, comparisons))
}

/// Run `repeats` independent localisation runs of `fault` on `spec`.
///
/// Repeat `r` simulates with seeds derived from `(config.master_seed, r)` and
/// attributes with its own derived master seed.
pub fn run_experiment(
    spec: &PipelineSpec,
    fault: Option<&FaultSpec>,
    repeats: usize,
    n_units: usize,
    config: &AttributionConfig,
) -> Result<ExperimentSummary> {
    if repeats < 2 {
        return Err(Error::Config("an experiment needs at least 2 repeats".into()));
    }
    if let Some(f) = fault {
        spec.resolve_fault(f)?;
    }
    let master = config.master_seed;
    let target = spec.target().to_string();
    let mut per_stream: Vec<(String, Vec<f64>)> = Vec::new();
    let mut delta_y = Vec::with_capacity(repeats);
    for r in 0..repeats as u64 {
        let old = simulate(spec, None, n_units, seed::derive(master, "old-window", r))?;
        let new = simulate(spec, fault, n_units, seed::derive(master, "new-window", r))?
            .with_window(crate::dataset::WindowLabel::New);
        let run_config = config.clone().with_seed(seed::derive(master, "attribution", r));
        let report = attribute_change(&spec.graph, &old, &new, &target, &run_config)?;
        if per_stream.is_empty() {
            per_stream = report.rows.iter().map(|row| (row.stream.clone(), Vec::new())).collect();
        }
        for (slot, row) in per_stream.iter_mut().zip(&report.rows) {
            slot.1.push(row.score);
        }
        delta_y.push(report.delta_y);
    }
    let (streams, winner, comparisons) = summarise(per_stream)?;
    Ok(ExperimentSummary {
        pipeline: spec.pipeline,
        fault: fault.map(ToString::to_string),
        target,
        repeats,
        n_units,
        master_seed: master,
        streams,
        winner,
        comparisons,
        delta_y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_picks_highest_mean_and_tests_it() {
        let (rows, winner, comparisons) = summarise(vec![
            ("a".into(), vec![0.1, 0.12, 0.11, 0.13]),
            ("b".into(), vec![0.0, 0.01, -0.01, 0.0]),
            ("c".into(), vec![0.02, 0.01, 0.03, 0.02]),
        ])
        .unwrap();
        assert_eq!(winner, "a");
        assert_eq!(comparisons.len(), 2);
        assert!(comparisons.iter().all(|c| c.welch.p < 0.01 && c.welch.t > 0.0));
        assert!(rows.iter().all(|r| r.ci_half_width >= 0.0));
        assert!((rows[0].mean - 0.115).abs() < 1e-12);
    }

    #[test]
    fn too_few_repeats() {
        assert!(summarise(vec![("a".into(), vec![1.0])]).is_err());
        let spec = Pipeline::Insurance.spec();
        assert!(run_experiment(&spec, None, 1, 100, &AttributionConfig::default()).is_err());
    }
}
