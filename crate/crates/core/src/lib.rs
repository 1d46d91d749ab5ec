//! Root-cause localisation of output distribution shifts in dataflow systems.
//!
//! A dataflow graph is read as a causal graphical model: every data stream is a
//! random variable and every compute node a causal conditional. Given two
//! observation windows (before and after a suspected change), the attribution
//! engine fits one mechanism per stream in each window, builds hybrid models that
//! swap in subsets of the new mechanisms, and scores each stream with its Shapley
//! value in the game "how far does the target distribution move when these
//! mechanisms are replaced".
//!
//! The crate also ships a deterministic simulator of three reference pipelines
//! with fault injectors, plus an experiment harness that repeats localisation
//! runs and checks significance with Welch's t-test.

pub mod attribution;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod mechanisms;
pub mod report;
pub mod seed;
pub mod simulator;
pub mod stats;

pub use attribution::{
    attribute_change, detect_drift, detect_drift_with, mechanism_deviation, scores_to_probabilities,
    AttributionConfig, AttributionReport, PlayerPolicy, Probabilities, ReportRow, ShapleyMode,
};
pub use dataset::{impute_absent, load_window, summary_stats, ImputePolicy, WindowLabel, WindowedDataset};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentSummary};
pub use graph::{parse_graph, ComputeNode, DataflowGraph, NodeId, StreamId};
pub use mechanisms::{ConditionalModel, Mechanism, MechanismSet};
pub use simulator::{simulate, FaultKind, FaultSpec, Pipeline, PipelineSpec};
pub use stats::{DeviationResult, KlEstimator};
