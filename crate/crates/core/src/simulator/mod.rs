//! Deterministic simulator of three reference dataflow pipelines with fault
//! injection.
//!
//! * `insurance`: car insurance claims, routed by value and complexity to a payout.
//! * `gcratio`: GC ratio over two DNA segments whose line counts are the inputs.
//! * `throughput`: a four-stage chain whose streams carry per-window message
//!   counts (messages passing a stage in a fixed 5-second window).
//!
//! Every simulation is a pure function of `(pipeline, fault, n_units, seed)`.
//! Each unit draws its random inputs in a fixed order whether or not a fault is
//! active, so the same seed with and without a fault sees the same raw inputs.

mod gcratio;
mod insurance;
mod throughput;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{WindowLabel, WindowedDataset};
use crate::error::{Error, Result};
use crate::graph::{parse_graph, DataflowGraph};

pub use gcratio::{GC_PROBABILITY_1, GC_PROBABILITY_2};
pub use insurance::{COMPLEXITY_THRESHOLD, HIGH_VALUE_THRESHOLD};
pub use throughput::WINDOW_SECONDS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Insurance,
    Gcratio,
    Throughput,
}

impl Pipeline {
    pub const ALL: [Pipeline; 3] = [Pipeline::Insurance, Pipeline::Gcratio, Pipeline::Throughput];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Insurance => "insurance",
            Pipeline::Gcratio => "gcratio",
            Pipeline::Throughput => "throughput",
        }
    }

    pub fn spec(self) -> PipelineSpec {
        PipelineSpec::new(self)
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown pipeline `{s}` (expected insurance, gcratio or throughput)")))
    }
}

/// A reference pipeline: its graph plus the generator that fills it.
#[derive(Debug, Clone)]
pub struct PipelineSpec {
    pub pipeline: Pipeline,
    pub graph: DataflowGraph,
    /// Units per window used by the experiments.
    pub default_units: usize,
}

impl PipelineSpec {
    pub fn new(pipeline: Pipeline) -> Self {
        let (doc, default_units) = match pipeline {
            Pipeline::Insurance => (insurance::GRAPH, 1000),
            Pipeline::Gcratio => (gcratio::GRAPH, 1000),
            Pipeline::Throughput => (throughput::GRAPH, 200),
        };
        let graph = parse_graph(doc).expect("reference graphs are valid");
        Self {
            pipeline,
            graph,
            default_units,
        }
    }

    pub fn target(&self) -> &str {
        self.graph.target().as_str()
    }

    /// Check a fault against this pipeline and resolve defaulted parameters.
    pub fn resolve_fault(&self, fault: &FaultSpec) -> Result<ResolvedFault> {
        let graph = &self.graph;
        match fault.kind {
            FaultKind::LogicBug => {
                if graph.node(&fault.location).is_none() {
                    return Err(Error::InvalidFault(format!(
                        "logic bugs target a compute node; `{}` is not a node of {}",
                        fault.location, self.pipeline
                    )));
                }
                let bug = match self.pipeline {
                    Pipeline::Insurance => insurance::bug(&fault.location, &fault.params)?,
                    _ => {
                        return Err(Error::InvalidFault(format!(
                            "no logic bug is defined for node {} of {}",
                            fault.location, self.pipeline
                        )))
                    }
                };
                Ok(ResolvedFault::Bug(bug))
            }
            FaultKind::InputShift => {
                if !graph.contains_stream(&fault.location) || !graph.is_root(&fault.location)? {
                    return Err(Error::InvalidFault(format!(
                        "input shifts target a root stream; `{}` is not a root of {}",
                        fault.location, self.pipeline
                    )));
                }
                let factor = match fault.params.as_slice() {
                    [] => match self.pipeline {
                        Pipeline::Insurance => insurance::DEFAULT_SHIFT,
                        Pipeline::Gcratio => gcratio::DEFAULT_SHIFT,
                        Pipeline::Throughput => throughput::DEFAULT_SHIFT,
                    },
                    [f] if *f > 0.0 && f.is_finite() => *f,
                    other => {
                        return Err(Error::InvalidFault(format!(
                            "input shift takes one positive factor, got {other:?}"
                        )))
                    }
                };
                Ok(ResolvedFault::Shift {
                    stream: fault.location.clone(),
                    factor,
                })
            }
            FaultKind::Latency => {
                if self.pipeline != Pipeline::Throughput {
                    return Err(Error::InvalidFault("latency faults apply to the throughput pipeline only".into()));
                }
                let node = throughput::resolve_stage(graph, &fault.location)?;
                let (lo, hi) = match fault.params.as_slice() {
                    [] => throughput::DEFAULT_DELAY,
                    [lo, hi] if 0.0 <= *lo && lo <= hi && hi.is_finite() => (*lo, *hi),
                    other => {
                        return Err(Error::InvalidFault(format!(
                            "latency takes delay bounds lo,hi with 0 <= lo <= hi, got {other:?}"
                        )))
                    }
                };
                Ok(ResolvedFault::Latency { node, lo, hi })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    LogicBug,
    InputShift,
    Latency,
}

/// A simulator intervention, written `kind:location[:params]` on the command
/// line, e.g. `bug:classify_claim_complexity_op`, `shift:input:1.5`,
/// `latency:build_quake_charts:0.5,1.0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub location: String,
    pub params: Vec<f64>,
}

impl FaultSpec {
    pub fn logic_bug(node: &str) -> Self {
        Self {
            kind: FaultKind::LogicBug,
            location: node.into(),
            params: Vec::new(),
        }
    }

    pub fn input_shift(stream: &str, factor: f64) -> Self {
        Self {
            kind: FaultKind::InputShift,
            location: stream.into(),
            params: vec![factor],
        }
    }

    pub fn latency(stage: &str, lo: f64, hi: f64) -> Self {
        Self {
            kind: FaultKind::Latency,
            location: stage.into(),
            params: vec![lo, hi],
        }
    }
}

impl FromStr for FaultSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.splitn(3, ':');
        let kind = match parts.next() {
            Some("bug") => FaultKind::LogicBug,
            Some("shift") => FaultKind::InputShift,
            Some("latency") => FaultKind::Latency,
            _ => {
                return Err(Error::InvalidFault(format!(
                    "`{s}`: expected kind bug, shift or latency"
                )))
            }
        };
        let location = parts
            .next()
            .filter(|l| !l.is_empty())
            .ok_or_else(|| Error::InvalidFault(format!("`{s}`: missing location")))?
            .to_string();
        let params = match parts.next() {
            None => Vec::new(),
            Some(p) => p
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidFault(format!("`{s}`: bad parameter `{v}`")))
                })
                .collect::<Result<_>>()?,
        };
        Ok(Self { kind, location, params })
    }
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            FaultKind::LogicBug => "bug",
            FaultKind::InputShift => "shift",
            FaultKind::Latency => "latency",
        };
        write!(f, "{kind}:{}", self.location)?;
        if !self.params.is_empty() {
            let params: Vec<String> = self.params.iter().map(|p| p.to_string()).collect();
            write!(f, ":{}", params.join(","))?;
        }
        Ok(())
    }
}

/// A fault checked against a pipeline, with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedFault {
    Bug(insurance::Bug),
    Shift { stream: String, factor: f64 },
    Latency { node: String, lo: f64, hi: f64 },
}

/// Simulate `n_units` units of `spec`, optionally under `fault`. Fault-free runs
/// are labelled OLD, faulty runs NEW.
pub fn simulate(spec: &PipelineSpec, fault: Option<&FaultSpec>, n_units: usize, seed: u64) -> Result<WindowedDataset> {
    if n_units == 0 {
        return Err(Error::Config("n_units must be positive".into()));
    }
    let resolved = fault.map(|f| spec.resolve_fault(f)).transpose()?;
    let (unit_ids, columns) = match spec.pipeline {
        Pipeline::Insurance => insurance::simulate(&spec.graph, resolved.as_ref(), n_units, seed),
        Pipeline::Gcratio => gcratio::simulate(&spec.graph, resolved.as_ref(), n_units, seed),
        Pipeline::Throughput => throughput::simulate(&spec.graph, resolved.as_ref(), n_units, seed),
    };
    let window = if fault.is_some() { WindowLabel::New } else { WindowLabel::Old };
    WindowedDataset::new(window, unit_ids, columns)
}

/// Provenance record written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub pipeline: Pipeline,
    pub fault: Option<String>,
    pub seed: u64,
    pub n_units: usize,
    pub target: String,
    pub dataset: String,
    pub graph: String,
}

/// Per-unit column builder shared by the generators.
pub(crate) struct Columns {
    streams: Vec<String>,
    cols: Vec<Vec<Option<f64>>>,
}

impl Columns {
    pub(crate) fn new(graph: &DataflowGraph, n: usize) -> Self {
        let streams: Vec<String> = graph.streams().iter().map(ToString::to_string).collect();
        let cols = vec![Vec::with_capacity(n); streams.len()];
        Self { streams, cols }
    }

    /// Append one unit; `row` gives each stream's value in graph declaration order.
    pub(crate) fn push(&mut self, row: &[Option<f64>]) {
        debug_assert_eq!(row.len(), self.cols.len());
        for (c, v) in self.cols.iter_mut().zip(row) {
            c.push(*v);
        }
    }

    pub(crate) fn finish(self) -> indexmap::IndexMap<crate::graph::StreamId, Vec<Option<f64>>> {
        self.streams
            .into_iter()
            .map(|s| crate::graph::StreamId::new(s).expect("graph stream ids are valid"))
            .zip(self.cols)
            .collect()
    }
}

pub(crate) fn unit_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}
