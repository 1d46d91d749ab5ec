//! GC ratio over two DNA segments.
//!
//! The inputs `count1`, `count2` are the number of lines read from each
//! segment. Each segment splits its lines into GC and AT content, the two
//! contents are summed across segments, and the target is the GC share.

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use super::{unit_ids, Columns, ResolvedFault};
use crate::graph::{DataflowGraph, StreamId};
use crate::seed;

pub(super) const GRAPH: &str = r#"{
  "streams": ["count1", "count2", "gc1", "at1", "gc2", "at2", "gc_sum", "at_sum", "gc_ratio"],
  "nodes": [
    {"id": "segment1_content_op", "inputs": ["count1"], "outputs": ["gc1", "at1"]},
    {"id": "segment2_content_op", "inputs": ["count2"], "outputs": ["gc2", "at2"]},
    {"id": "sum_gc_op", "inputs": ["gc1", "gc2"], "outputs": ["gc_sum"]},
    {"id": "sum_at_op", "inputs": ["at1", "at2"], "outputs": ["at_sum"]},
    {"id": "ratio_op", "inputs": ["gc_sum", "at_sum"], "outputs": ["gc_ratio"]}
  ],
  "target": "gc_ratio"
}"#;

const COUNT_RANGE: (u64, u64) = (800, 1200);
pub const GC_PROBABILITY_1: f64 = 0.35;
pub const GC_PROBABILITY_2: f64 = 0.50;
/// A shifted count keeps its lower bound and widens its range by this factor.
pub(super) const DEFAULT_SHIFT: f64 = 2.0;

fn count_range(stream: &str, fault: Option<&ResolvedFault>) -> (u64, u64) {
    match fault {
        Some(ResolvedFault::Shift { stream: s, factor }) if s == stream => {
            let width = (COUNT_RANGE.1 - COUNT_RANGE.0) as f64 * factor;
            (COUNT_RANGE.0, COUNT_RANGE.0 + width.round() as u64)
        }
        _ => COUNT_RANGE,
    }
}

pub(super) fn simulate(
    graph: &DataflowGraph,
    fault: Option<&ResolvedFault>,
    n: usize,
    seed: u64,
) -> (Vec<String>, IndexMap<StreamId, Vec<Option<f64>>>) {
    let range1 = count_range("count1", fault);
    let range2 = count_range("count2", fault);
    let mut cols = Columns::new(graph, n);
    for u in 0..n as u64 {
        // Separate generators per segment so shifting one input leaves the other untouched.
        let mut rng1 = seed::rng(seed::derive(seed, "segment1", u));
        let mut rng2 = seed::rng(seed::derive(seed, "segment2", u));
        let count1 = rng1.random_range(range1.0..=range1.1);
        let count2 = rng2.random_range(range2.0..=range2.1);
        let gc1 = Binomial::new(count1, GC_PROBABILITY_1).expect("valid binomial").sample(&mut rng1);
        let gc2 = Binomial::new(count2, GC_PROBABILITY_2).expect("valid binomial").sample(&mut rng2);
        let at1 = count1 - gc1;
        let at2 = count2 - gc2;
        let gc_sum = gc1 + gc2;
        let at_sum = at1 + at2;
        let ratio = gc_sum as f64 / (gc_sum + at_sum) as f64;
        let f = |v: u64| Some(v as f64);
        cols.push(&[
            f(count1),
            f(count2),
            f(gc1),
            f(at1),
            f(gc2),
            f(at2),
            f(gc_sum),
            f(at_sum),
            Some(ratio),
        ]);
    }
    (unit_ids(n), cols.finish())
}
