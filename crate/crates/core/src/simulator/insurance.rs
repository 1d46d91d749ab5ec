//! Car insurance claims pipeline.
//!
//! ```text
//! input -> calculate_claim_value_op -> calculate_claim_value
//! calculate_claim_value -> route_by_value_op -> low_value_claims | high_value_claims
//! low_value_claims -> classify_claim_complexity_op -> simple_claims | complex_claims
//! simple_claims -> simple_payout_op -> calculate_simple_claim_payout
//! complex_claims, high_value_claims -> complex_payout_op -> calculate_complex_claim_payout
//! both payouts -> merge_op -> output
//! ```

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};

use super::{unit_ids, Columns, ResolvedFault};
use crate::error::{Error, Result};
use crate::graph::{DataflowGraph, StreamId};
use crate::seed;

pub(super) const GRAPH: &str = r#"{
  "streams": [
    "input",
    "calculate_claim_value",
    "low_value_claims",
    "high_value_claims",
    "simple_claims",
    "complex_claims",
    "calculate_simple_claim_payout",
    "calculate_complex_claim_payout",
    "output"
  ],
  "nodes": [
    {"id": "calculate_claim_value_op", "inputs": ["input"], "outputs": ["calculate_claim_value"]},
    {"id": "route_by_value_op", "inputs": ["calculate_claim_value"], "outputs": ["low_value_claims", "high_value_claims"]},
    {"id": "classify_claim_complexity_op", "inputs": ["low_value_claims"], "outputs": ["simple_claims", "complex_claims"]},
    {"id": "simple_payout_op", "inputs": ["simple_claims"], "outputs": ["calculate_simple_claim_payout"]},
    {"id": "complex_payout_op", "inputs": ["complex_claims", "high_value_claims"], "outputs": ["calculate_complex_claim_payout"]},
    {"id": "merge_op", "inputs": ["calculate_simple_claim_payout", "calculate_complex_claim_payout"], "outputs": ["output"]}
  ],
  "target": "output"
}"#;

const RAW_LOG_MEAN: f64 = 9.0;
const RAW_LOG_SD: f64 = 0.5;
const ADJUSTMENT: (f64, f64) = (0.95, 1.05);
pub const HIGH_VALUE_THRESHOLD: f64 = 10_000.0;
pub const COMPLEXITY_THRESHOLD: f64 = 5_000.0;
const COMPLEXITY_NOISE: (f64, f64) = (0.8, 1.2);
const SIMPLE_PAYOUT: f64 = 0.9;
const COMPLEX_PAYOUT: f64 = 0.7;
pub(super) const DEFAULT_SHIFT: f64 = 1.5;

/// Behavioural change injected into one compute node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bug {
    /// classify_claim_complexity_op labels every claim simple.
    AllSimple,
    /// route_by_value_op sends every claim down the low-value branch.
    AllLowValue,
    /// calculate_claim_value_op scales values by an extra factor.
    ValueScale(f64),
    /// simple_payout_op pays this fraction instead of the usual one.
    SimplePayout(f64),
    /// complex_payout_op pays this fraction instead of the usual one.
    ComplexPayout(f64),
}

pub(super) fn bug(node: &str, params: &[f64]) -> Result<Bug> {
    let one = |default: f64| match params {
        [] => Ok(default),
        [v] if v.is_finite() => Ok(*v),
        other => Err(Error::InvalidFault(format!("{node} bug takes one factor, got {other:?}"))),
    };
    let none = || {
        if params.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidFault(format!("{node} bug takes no parameters")))
        }
    };
    match node {
        "classify_claim_complexity_op" => none().map(|_| Bug::AllSimple),
        "route_by_value_op" => none().map(|_| Bug::AllLowValue),
        "calculate_claim_value_op" => one(1.2).map(Bug::ValueScale),
        "simple_payout_op" => one(1.0).map(Bug::SimplePayout),
        "complex_payout_op" => one(1.0).map(Bug::ComplexPayout),
        _ => Err(Error::InvalidFault(format!("no logic bug is defined for node {node} of insurance"))),
    }
}

pub(super) fn simulate(
    graph: &DataflowGraph,
    fault: Option<&ResolvedFault>,
    n: usize,
    seed: u64,
) -> (Vec<String>, IndexMap<StreamId, Vec<Option<f64>>>) {
    let mut rng = seed::rng(seed);
    let raw_dist = LogNormal::new(RAW_LOG_MEAN, RAW_LOG_SD).expect("valid log-normal");
    let bug = match fault {
        Some(ResolvedFault::Bug(b)) => Some(*b),
        _ => None,
    };
    let input_factor = match fault {
        Some(ResolvedFault::Shift { factor, .. }) => *factor,
        _ => 1.0,
    };
    let mut cols = Columns::new(graph, n);
    for _ in 0..n {
        let raw = raw_dist.sample(&mut rng);
        let adjustment = rng.random_range(ADJUSTMENT.0..ADJUSTMENT.1);
        let complexity_noise = rng.random_range(COMPLEXITY_NOISE.0..COMPLEXITY_NOISE.1);

        let input = raw * input_factor;
        let mut value = input * adjustment;
        if let Some(Bug::ValueScale(f)) = bug {
            value *= f;
        }
        let high = value > HIGH_VALUE_THRESHOLD && bug != Some(Bug::AllLowValue);
        let (low_value, high_value) = if high { (None, Some(value)) } else { (Some(value), None) };
        let complex = low_value.is_some()
            && bug != Some(Bug::AllSimple)
            && value * complexity_noise > COMPLEXITY_THRESHOLD;
        let (simple, complex_claim) = match low_value {
            Some(v) if complex => (None, Some(v)),
            Some(v) => (Some(v), None),
            None => (None, None),
        };
        let simple_rate = match bug {
            Some(Bug::SimplePayout(f)) => f,
            _ => SIMPLE_PAYOUT,
        };
        let complex_rate = match bug {
            Some(Bug::ComplexPayout(f)) => f,
            _ => COMPLEX_PAYOUT,
        };
        let simple_payout = simple.map(|v| simple_rate * v);
        let complex_payout = complex_claim.or(high_value).map(|v| complex_rate * v);
        let output = simple_payout.or(complex_payout);

        cols.push(&[
            Some(input),
            Some(value),
            low_value,
            high_value,
            simple,
            complex_claim,
            simple_payout,
            complex_payout,
            output,
        ]);
    }
    (unit_ids(n), cols.finish())
}
