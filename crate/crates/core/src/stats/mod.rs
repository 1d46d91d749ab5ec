//! Statistical primitives used by the attribution engine.

pub mod kl;
pub mod perm;
pub mod shapley;
pub mod welch;

use serde::{Deserialize, Serialize};

pub use kl::{kl_divergence, kl_divergence_auto, KlEstimator, KnnReference, DRIFT_ESTIMATOR};
pub use perm::{exact_perm_test, ks_statistic, perm_test, two_sample_perm_test, PermTestResult, TestStatistic};
pub use shapley::{shapley, Coalition, ShapleyGame, ShapleyMode, ShapleyValues, MAX_EXACT_PLAYERS};
pub use welch::{welch_t_test, WelchResult};

/// Verdict of the mechanism-change test for one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationResult {
    pub stream: String,
    pub statistic: f64,
    pub p_value: f64,
    /// `p_value < alpha`.
    pub changed: bool,
}
