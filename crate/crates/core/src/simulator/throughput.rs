//! Throughput of a four-stage dashboard data path.
//!
//! Units are fixed 5-second windows and every stream carries the number of
//! messages a stage passed during the window. A stage's throughput is capped by
//! its upstream throughput and by how many messages its observed mean service
//! time allows within the window.

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Exp};

use super::{unit_ids, Columns, ResolvedFault};
use crate::error::{Error, Result};
use crate::graph::{DataflowGraph, StreamId};
use crate::seed;

pub(super) const GRAPH: &str = r#"{
  "streams": ["load_data", "parse_data", "build_quake_charts", "render"],
  "nodes": [
    {"id": "parse_data_op", "inputs": ["load_data"], "outputs": ["parse_data"]},
    {"id": "build_quake_charts_op", "inputs": ["parse_data"], "outputs": ["build_quake_charts"]},
    {"id": "render_op", "inputs": ["build_quake_charts"], "outputs": ["render"]}
  ],
  "target": "render"
}"#;

pub const WINDOW_SECONDS: f64 = 5.0;
const MEAN_SERVICE_SECONDS: f64 = 0.05;
/// Service-time draws for the source stage, which has no upstream count.
const SOURCE_DRAWS: u64 = 100;
const NOISE_SPAN: i64 = 2;
pub(super) const DEFAULT_DELAY: (f64, f64) = (0.5, 1.0);
/// Source speed-up factor for an input shift on `load_data`.
pub(super) const DEFAULT_SHIFT: f64 = 1.5;

/// Compute node behind a stage name: either a node id or the stream it produces.
pub(super) fn resolve_stage(graph: &DataflowGraph, location: &str) -> Result<String> {
    if graph.node(location).is_some() {
        return Ok(location.to_string());
    }
    if graph.contains_stream(location) {
        let producers: Vec<_> = graph.producers_of(location).collect();
        if let [only] = producers.as_slice() {
            return Ok(only.id.to_string());
        }
    }
    Err(Error::InvalidFault(format!(
        "latency targets a compute node of throughput; `{location}` is neither a node nor a stream with one producer"
    )))
}

fn stage_throughput(
    rng: &mut impl Rng,
    service: &Exp<f64>,
    draws: u64,
    delay: Option<(f64, f64)>,
    speedup: f64,
) -> u64 {
    if draws == 0 {
        return 0;
    }
    let mut total = 0.0;
    for _ in 0..draws {
        let mut t = service.sample(rng) / speedup;
        if let Some((lo, hi)) = delay {
            t += if hi > lo { rng.random_range(lo..hi) } else { lo };
        }
        total += t;
    }
    let mean = total / draws as f64;
    let capacity = (WINDOW_SECONDS / mean).floor() as i64;
    (capacity + rng.random_range(-NOISE_SPAN..=NOISE_SPAN)).max(0) as u64
}

pub(super) fn simulate(
    graph: &DataflowGraph,
    fault: Option<&ResolvedFault>,
    n: usize,
    seed: u64,
) -> (Vec<String>, IndexMap<StreamId, Vec<Option<f64>>>) {
    let service = Exp::new(1.0 / MEAN_SERVICE_SECONDS).expect("valid exponential");
    let delay_at = |node: &str| match fault {
        Some(ResolvedFault::Latency { node: at, lo, hi }) if at == node => Some((*lo, *hi)),
        _ => None,
    };
    let speedup = match fault {
        Some(ResolvedFault::Shift { factor, .. }) => *factor,
        _ => 1.0,
    };
    let mut cols = Columns::new(graph, n);
    for w in 0..n as u64 {
        // One generator per (stage, window): a fault only perturbs its own stage.
        let stage_rng = |stage: &str| seed::rng(seed::derive(seed, stage, w));
        let load = stage_throughput(&mut stage_rng("load_data"), &service, SOURCE_DRAWS, None, speedup);
        let parse = load.min(stage_throughput(
            &mut stage_rng("parse_data_op"),
            &service,
            load,
            delay_at("parse_data_op"),
            1.0,
        ));
        let build = parse.min(stage_throughput(
            &mut stage_rng("build_quake_charts_op"),
            &service,
            parse,
            delay_at("build_quake_charts_op"),
            1.0,
        ));
        let render = build.min(stage_throughput(
            &mut stage_rng("render_op"),
            &service,
            build,
            delay_at("render_op"),
            1.0,
        ));
        cols.push(&[load, parse, build, render].map(|v| Some(v as f64)));
    }
    (unit_ids(n), cols.finish())
}

#[cfg(test)]
mod tests {
    use super::super::{simulate as run, FaultSpec, Pipeline};

    #[test]
    fn downstream_never_exceeds_upstream() {
        let ds = run(&Pipeline::Throughput.spec(), None, 200, 4).unwrap();
        let streams = ["load_data", "parse_data", "build_quake_charts", "render"];
        let cols: Vec<Vec<f64>> = streams.iter().map(|s| ds.values(s).unwrap()).collect();
        for i in 0..200 {
            for w in cols.windows(2) {
                assert!(w[1][i] <= w[0][i]);
            }
        }
        let mean = cols[0].iter().sum::<f64>() / 200.0;
        assert!((80.0..120.0).contains(&mean), "{mean}");
    }

    #[test]
    fn latency_drops_downstream_throughput() {
        let spec = Pipeline::Throughput.spec();
        let clean = run(&spec, None, 200, 5).unwrap();
        let slow = run(&spec, Some(&FaultSpec::latency("build_quake_charts", 0.5, 1.0)), 200, 5).unwrap();
        let mean = |d: &crate::dataset::WindowedDataset, s: &str| d.values(s).unwrap().iter().sum::<f64>() / 200.0;
        for s in ["build_quake_charts", "render"] {
            assert!(mean(&slow, s) <= 0.75 * mean(&clean, s), "{s}");
        }
        // Upstream stages are untouched by the delay.
        assert_eq!(mean(&slow, "load_data"), mean(&clean, "load_data"));
    }
}
