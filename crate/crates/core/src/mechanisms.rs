//! Per-stream causal mechanisms and hybrid ancestral sampling.
//!
//! Root streams get an empirical marginal (uniform bootstrap from the observed
//! pool). Every other stream gets an additive-noise conditional
//! `value = f(parents) + noise`, where `f` is a regression fitted on one window
//! and the noise is resampled from that fit's residual pool.

use std::collections::HashSet;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{WindowLabel, WindowedDataset};
use crate::error::{Error, Result};
use crate::graph::{DataflowGraph, StreamId};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionalModel {
    /// Least squares with intercept.
    #[default]
    Linear,
    /// k-nearest-neighbour mean with k = ceil(sqrt(n)).
    Knn,
}

#[derive(Debug, Clone)]
pub enum Regression {
    Linear {
        intercept: f64,
        coefficients: Vec<f64>,
        /// The design was rank deficient and the minimum-norm solution was used.
        rank_deficient: bool,
    },
    Knn(KnnRegressor),
}

#[derive(Debug, Clone)]
pub enum Mechanism {
    RootEmpirical {
        pool: Vec<f64>,
    },
    AdditiveNoise {
        regression: Regression,
        residuals: Vec<f64>,
    },
}

/// Minimum training rows for a conditional with `k` parents.
pub fn min_rows(k: usize) -> usize {
    (k + 2).max(5)
}

/// Empirical marginal of a root stream.
pub fn fit_root(values: &[f64]) -> Result<Mechanism> {
    if values.is_empty() {
        return Err(Error::InsufficientSamples("root mechanism needs at least one value".into()));
    }
    Ok(Mechanism::RootEmpirical {
        pool: values.to_vec(),
    })
}

/// Additive-noise conditional of `values` on the parent columns.
pub fn fit_conditional(parents: &[&[f64]], values: &[f64], model: ConditionalModel) -> Result<Mechanism> {
    let k = parents.len();
    let n = values.len();
    if k == 0 {
        return Err(Error::Config("conditional mechanism needs at least one parent".into()));
    }
    if parents.iter().any(|p| p.len() != n) {
        return Err(Error::Config("parent columns and values differ in length".into()));
    }
    if n < min_rows(k) {
        return Err(Error::InsufficientSamples(format!(
            "{n} rows for {k} parent(s); need at least {}",
            min_rows(k)
        )));
    }
    let regression = match model {
        ConditionalModel::Linear => fit_linear(parents, values),
        ConditionalModel::Knn => Regression::Knn(KnnRegressor::fit(parents, values)),
    };
    let mut fitted = Vec::with_capacity(n);
    regression.predict(parents, &mut fitted);
    let residuals = values.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    Ok(Mechanism::AdditiveNoise { regression, residuals })
}

fn fit_linear(parents: &[&[f64]], values: &[f64]) -> Regression {
    let n = values.len();
    let k = parents.len();
    let means: Vec<f64> = parents.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
    let y_mean = values.iter().sum::<f64>() / n as f64;
    // Centre so the intercept absorbs the means and residuals sum to zero.
    let x = DMatrix::from_fn(n, k, |r, c| parents[c][r] - means[c]);
    let y = DVector::from_iterator(n, values.iter().map(|v| v - y_mean));
    let svd = x.svd(true, true);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * (n.max(k) as f64) * f64::EPSILON;
    let rank_deficient = max_sv == 0.0 || svd.singular_values.iter().any(|&s| s <= tol);
    let coefficients: Vec<f64> = if max_sv == 0.0 {
        vec![0.0; k]
    } else {
        svd.solve(&y, tol)
            .map(|b| b.iter().copied().collect())
            .unwrap_or_else(|_| vec![0.0; k])
    };
    let intercept = y_mean - coefficients.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Regression::Linear {
        intercept,
        coefficients,
        rank_deficient,
    }
}

impl Regression {
    /// Append f(x_r) for every row r of the parent columns to `out`.
    pub fn predict(&self, parents: &[&[f64]], out: &mut Vec<f64>) {
        let n = parents.first().map_or(0, |c| c.len());
        match self {
            Regression::Linear {
                intercept,
                coefficients,
                ..
            } => {
                out.extend((0..n).map(|r| {
                    intercept + coefficients.iter().zip(parents).map(|(b, c)| b * c[r]).sum::<f64>()
                }));
            }
            Regression::Knn(knn) => knn.predict_into(parents, out),
        }
    }

    pub fn is_rank_deficient(&self) -> bool {
        matches!(self, Regression::Linear { rank_deficient: true, .. })
    }
}

/// k-nearest-neighbour mean regression on standardised parents.
#[derive(Debug, Clone)]
pub struct KnnRegressor {
    k: usize,
    /// Row-major standardised training inputs.
    x: Vec<f64>,
    y: Vec<f64>,
    dims: usize,
    means: Vec<f64>,
    scales: Vec<f64>,
    /// Single-parent fast path: prefix sums of `y` in `x` order (x sorted).
    prefix: Vec<f64>,
}

impl KnnRegressor {
    fn fit(parents: &[&[f64]], values: &[f64]) -> Self {
        let n = values.len();
        let dims = parents.len();
        let k = ((n as f64).sqrt().ceil() as usize).clamp(1, n);
        let means: Vec<f64> = parents.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
        let scales: Vec<f64> = parents
            .iter()
            .zip(&means)
            .map(|(c, m)| {
                let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let mut rows: Vec<(Vec<f64>, f64)> = (0..n)
            .map(|r| {
                let x = (0..dims).map(|d| (parents[d][r] - means[d]) / scales[d]).collect();
                (x, values[r])
            })
            .collect();
        let mut prefix = Vec::new();
        if dims == 1 {
            rows.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]).then(a.1.total_cmp(&b.1)));
            prefix.reserve(n + 1);
            prefix.push(0.0);
            let mut acc = 0.0;
            for (_, y) in &rows {
                acc += y;
                prefix.push(acc);
            }
        }
        let x = rows.iter().flat_map(|(x, _)| x.iter().copied()).collect();
        let y = rows.iter().map(|(_, y)| *y).collect();
        Self {
            k,
            x,
            y,
            dims,
            means,
            scales,
            prefix,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn predict_into(&self, parents: &[&[f64]], out: &mut Vec<f64>) {
        let n = parents.first().map_or(0, |c| c.len());
        out.reserve(n);
        let mut query = vec![0.0; self.dims];
        let mut scratch: Vec<(f64, usize)> = Vec::new();
        for r in 0..n {
            for d in 0..self.dims {
                query[d] = (parents[d][r] - self.means[d]) / self.scales[d];
            }
            out.push(if self.dims == 1 {
                self.predict_1d(query[0])
            } else {
                self.predict_brute(&query, &mut scratch)
            });
        }
    }

    fn predict_1d(&self, q: f64) -> f64 {
        let n = self.y.len();
        let k = self.k;
        let pos = self.x.partition_point(|&v| v < q);
        // The k nearest points of a sorted line form a contiguous window.
        let mut lo = pos.saturating_sub(k);
        let mut hi = pos.min(n - k);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if q - self.x[mid] > self.x[mid + k] - q {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        (self.prefix[lo + k] - self.prefix[lo]) / k as f64
    }

    fn predict_brute(&self, q: &[f64], scratch: &mut Vec<(f64, usize)>) -> f64 {
        scratch.clear();
        scratch.extend(self.y.iter().enumerate().map(|(i, _)| {
            let row = &self.x[i * self.dims..(i + 1) * self.dims];
            let d2: f64 = row.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2, i)
        }));
        let k = self.k;
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < scratch.len() {
            scratch.select_nth_unstable_by(k - 1, cmp);
        }
        scratch[..k].iter().map(|&(_, i)| self.y[i]).sum::<f64>() / k as f64
    }
}

impl Mechanism {
    pub fn is_root(&self) -> bool {
        matches!(self, Mechanism::RootEmpirical { .. })
    }

    /// Draw `n` values given parent columns of length `n` (ignored for roots).
    pub fn sample(&self, parents: &[&[f64]], n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Mechanism::RootEmpirical { pool } => {
                (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
            }
            Mechanism::AdditiveNoise {
                regression,
                residuals,
            } => {
                let mut out = Vec::with_capacity(n);
                regression.predict(parents, &mut out);
                for v in &mut out {
                    *v += residuals[rng.random_range(0..residuals.len())];
                }
                out
            }
        }
    }

    pub fn diagnostic(&self, parents: &[StreamId]) -> MechanismDiagnostic {
        match self {
            Mechanism::RootEmpirical { pool } => MechanismDiagnostic {
                kind: "root_empirical".into(),
                parents: Vec::new(),
                model: None,
                intercept: None,
                coefficients: None,
                rank_deficient: false,
                noise: Moments::of(pool),
            },
            Mechanism::AdditiveNoise {
                regression,
                residuals,
            } => {
                let (model, intercept, coefficients) = match regression {
                    Regression::Linear {
                        intercept,
                        coefficients,
                        ..
                    } => ("linear", Some(*intercept), Some(coefficients.clone())),
                    Regression::Knn(_) => ("knn", None, None),
                };
                MechanismDiagnostic {
                    kind: "additive_noise".into(),
                    parents: parents.iter().map(ToString::to_string).collect(),
                    model: Some(model.into()),
                    intercept,
                    coefficients,
                    rank_deficient: regression.is_rank_deficient(),
                    noise: Moments::of(residuals),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
}

impl Moments {
    fn of(v: &[f64]) -> Self {
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        Self {
            n,
            mean,
            std_dev: var.sqrt(),
        }
    }
}

/// JSON-friendly summary of a fitted mechanism. `noise` summarises the root
/// pool or the residual pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismDiagnostic {
    pub kind: String,
    pub parents: Vec<String>,
    pub model: Option<String>,
    pub intercept: Option<f64>,
    pub coefficients: Option<Vec<f64>>,
    pub rank_deficient: bool,
    pub noise: Moments,
}

/// One fitted mechanism per analysed stream, all from the same window.
#[derive(Debug, Clone)]
pub struct MechanismSet {
    window: WindowLabel,
    mechanisms: IndexMap<StreamId, (Vec<StreamId>, Mechanism)>,
}

impl MechanismSet {
    /// Fit mechanisms for `streams` on an imputed dataset. `model_for` picks the
    /// conditional family per non-root stream.
    pub fn fit(
        graph: &DataflowGraph,
        data: &WindowedDataset,
        streams: &[StreamId],
        model_for: impl Fn(&StreamId) -> ConditionalModel,
    ) -> Result<Self> {
        let mut mechanisms = IndexMap::with_capacity(streams.len());
        for s in streams {
            let parents = graph.parents_of(s.as_str())?;
            let fit_err = |e: Error| Error::Fit {
                stream: s.to_string(),
                reason: e.to_string(),
            };
            let values = data.values(s.as_str()).map_err(fit_err)?;
            let mechanism = if parents.is_empty() {
                fit_root(&values).map_err(fit_err)?
            } else {
                let cols: Vec<Vec<f64>> = parents
                    .iter()
                    .map(|p| data.values(p.as_str()))
                    .collect::<Result<_>>()
                    .map_err(fit_err)?;
                let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
                fit_conditional(&refs, &values, model_for(s)).map_err(fit_err)?
            };
            mechanisms.insert(s.clone(), (parents, mechanism));
        }
        Ok(Self {
            window: data.window(),
            mechanisms,
        })
    }

    pub fn window(&self) -> WindowLabel {
        self.window
    }

    pub fn get(&self, s: &str) -> Option<&Mechanism> {
        self.mechanisms.get(s).map(|(_, m)| m)
    }

    pub fn len(&self) -> usize {
        self.mechanisms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mechanisms.is_empty()
    }

    /// Copy of this set in which each stream in `streams` takes its mechanism from `other`.
    pub fn with_mechanisms_from(&self, other: &MechanismSet, streams: &[StreamId]) -> Result<Self> {
        let mut out = self.clone();
        for s in streams {
            let entry = other
                .mechanisms
                .get(s)
                .ok_or_else(|| Error::MissingMechanism(s.to_string()))?;
            out.mechanisms.insert(s.clone(), entry.clone());
        }
        Ok(out)
    }

    /// Streams whose linear fit fell back to the minimum-norm solution.
    pub fn rank_deficient_streams(&self) -> Vec<StreamId> {
        self.mechanisms
            .iter()
            .filter(|(_, (_, m))| {
                matches!(m, Mechanism::AdditiveNoise { regression, .. } if regression.is_rank_deficient())
            })
            .map(|(s, _)| s.clone())
            .collect()
    }

    pub fn diagnostics(&self) -> IndexMap<String, MechanismDiagnostic> {
        self.mechanisms
            .iter()
            .map(|(s, (parents, m))| (s.to_string(), m.diagnostic(parents)))
            .collect()
    }
}

/// Ancestral sampling plan over the ancestors of the graph target, reusable
/// across replacement sets.
pub struct HybridSampler<'a> {
    /// Ancestors of the target in topological order.
    order: Vec<StreamId>,
    /// For each entry of `order`, indices (into `order`) of its parents.
    parent_slots: Vec<Vec<usize>>,
    old: Vec<&'a Mechanism>,
    new: Vec<&'a Mechanism>,
    target_slot: usize,
}

impl<'a> HybridSampler<'a> {
    pub fn new(graph: &DataflowGraph, old: &'a MechanismSet, new: &'a MechanismSet) -> Result<Self> {
        let target = graph.target().clone();
        let ancestors: HashSet<StreamId> = graph.ancestors_of_target(target.as_str())?.into_iter().collect();
        let order: Vec<StreamId> = graph
            .topological_order()?
            .into_iter()
            .filter(|s| ancestors.contains(s))
            .collect();
        let slot_of = |s: &StreamId| order.iter().position(|o| o == s).expect("parent of an ancestor is an ancestor");
        let mut parent_slots = Vec::with_capacity(order.len());
        let mut old_mechs = Vec::with_capacity(order.len());
        let mut new_mechs = Vec::with_capacity(order.len());
        for s in &order {
            parent_slots.push(graph.parents_of(s.as_str())?.iter().map(slot_of).collect());
            old_mechs.push(old.get(s.as_str()).ok_or_else(|| Error::MissingMechanism(s.to_string()))?);
            new_mechs.push(new.get(s.as_str()).ok_or_else(|| Error::MissingMechanism(s.to_string()))?);
        }
        let target_slot = slot_of(&target);
        Ok(Self {
            order,
            parent_slots,
            old: old_mechs,
            new: new_mechs,
            target_slot,
        })
    }

    /// Streams in sampling order.
    pub fn order(&self) -> &[StreamId] {
        &self.order
    }

    /// Sample `n` target values; stream `s` uses its NEW mechanism iff `replaced(s)`.
    pub fn sample(&self, replaced: impl Fn(&StreamId) -> bool, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed);
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(self.order.len());
        for (slot, s) in self.order.iter().enumerate() {
            let mechanism = if replaced(s) { self.new[slot] } else { self.old[slot] };
            let parents: Vec<&[f64]> = self.parent_slots[slot].iter().map(|&p| columns[p].as_slice()).collect();
            let values = mechanism.sample(&parents, n, &mut rng);
            columns.push(values);
        }
        columns.swap_remove(self.target_slot)
    }
}

/// Target samples from the hybrid model in which the streams in `replaced` use
/// NEW-window mechanisms and all other ancestors use OLD-window mechanisms.
pub fn sample_hybrid(
    graph: &DataflowGraph,
    old: &MechanismSet,
    new: &MechanismSet,
    replaced: &[StreamId],
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let sampler = HybridSampler::new(graph, old, new)?;
    let ancestors: HashSet<&StreamId> = sampler.order().iter().collect();
    if let Some(outside) = replaced.iter().find(|s| !ancestors.contains(s)) {
        return Err(Error::Config(format!(
            "replaced stream {outside} is not an ancestor of the target"
        )));
    }
    let replaced: HashSet<&StreamId> = replaced.iter().collect();
    Ok(sampler.sample(|s| replaced.contains(s), n, seed))
}
