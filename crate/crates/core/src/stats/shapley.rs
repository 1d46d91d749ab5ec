//! Shapley values of cooperative games over at most 64 players.
//!
//! Coalitions are bitmasks over the player list. The value function is evaluated
//! once per distinct coalition and the results are memoised by mask, so a
//! stochastic value function sees each coalition exactly once per call.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const MAX_EXACT_PLAYERS: usize = 14;

pub type Coalition = u64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapleyMode {
    /// Full 2^n enumeration.
    #[default]
    Exact,
    /// Average marginal contributions over `samples` random orderings.
    Permutation { samples: usize },
}

pub struct ShapleyGame<F> {
    pub players: Vec<String>,
    pub value_fn: F,
    pub mode: ShapleyMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyValues {
    pub players: Vec<String>,
    pub scores: Vec<f64>,
    /// Monte-Carlo standard errors; zero under exact enumeration.
    pub std_errors: Vec<f64>,
    /// v(all players) - v(empty coalition).
    pub grand_total: f64,
    pub evaluations: usize,
}

impl ShapleyValues {
    pub fn get(&self, player: &str) -> Option<f64> {
        self.players.iter().position(|p| p == player).map(|i| self.scores[i])
    }
}

fn evaluate_all<F>(masks: &[Coalition], value_fn: &F) -> HashMap<Coalition, f64>
where
    F: Fn(Coalition) -> f64 + Sync,
{
    masks.par_iter().map(|&m| (m, value_fn(m))).collect()
}

/// Shapley value of every player. `seed` drives the orderings in permutation mode.
pub fn shapley<F>(game: &ShapleyGame<F>, seed: u64) -> Result<ShapleyValues>
where
    F: Fn(Coalition) -> f64 + Sync,
{
    let n = game.players.len();
    if n == 0 {
        return Err(Error::Config("Shapley game needs at least one player".into()));
    }
    if n > 64 {
        return Err(Error::TooManyPlayers { got: n, max: 64 });
    }
    let full: Coalition = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    match game.mode {
        ShapleyMode::Exact => {
            if n > MAX_EXACT_PLAYERS {
                return Err(Error::TooManyPlayers {
                    got: n,
                    max: MAX_EXACT_PLAYERS,
                });
            }
            let masks: Vec<Coalition> = (0..=full).collect();
            let memo = evaluate_all(&masks, &game.value_fn);
            let values: Vec<f64> = masks.iter().map(|m| memo[m]).collect();
            let scores = exact_from_table(n, &values);
            Ok(ShapleyValues {
                players: game.players.clone(),
                scores,
                std_errors: vec![0.0; n],
                grand_total: values[full as usize] - values[0],
                evaluations: values.len(),
            })
        }
        ShapleyMode::Permutation { samples } => {
            if samples < 2 {
                return Err(Error::Config("permutation Shapley needs at least 2 orderings".into()));
            }
            let mut rng = seed::rng(seed);
            let mut order: Vec<usize> = (0..n).collect();
            let orderings: Vec<Vec<usize>> = (0..samples)
                .map(|_| {
                    order.shuffle(&mut rng);
                    order.clone()
                })
                .collect();
            let mut masks: Vec<Coalition> = orderings
                .iter()
                .flat_map(|o| {
                    o.iter().scan(0u64, |m, &p| {
                        *m |= 1 << p;
                        Some(*m)
                    })
                })
                .chain(std::iter::once(0))
                .collect();
            masks.sort_unstable();
            masks.dedup();
            let memo = evaluate_all(&masks, &game.value_fn);

            let mut sum = vec![0.0; n];
            let mut sum_sq = vec![0.0; n];
            for o in &orderings {
                let mut mask = 0u64;
                let mut prev = memo[&0];
                for &p in o {
                    mask |= 1 << p;
                    let cur = memo[&mask];
                    let delta = cur - prev;
                    sum[p] += delta;
                    sum_sq[p] += delta * delta;
                    prev = cur;
                }
            }
            let m = samples as f64;
            let scores: Vec<f64> = sum.iter().map(|s| s / m).collect();
            let std_errors = scores
                .iter()
                .zip(&sum_sq)
                .map(|(mean, sq)| ((sq / m - mean * mean).max(0.0) / (m - 1.0)).sqrt())
                .collect();
            Ok(ShapleyValues {
                players: game.players.clone(),
                scores,
                std_errors,
                grand_total: memo[&full] - memo[&0],
                evaluations: memo.len(),
            })
        }
    }
}

/// Shapley values from a complete table of coalition values indexed by mask.
pub fn exact_from_table(n: usize, values: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), 1 << n);
    // weight[s] = s! (n - s - 1)! / n!  for a coalition of size s not containing i
    let mut weight = vec![0.0; n];
    for (s, w) in weight.iter_mut().enumerate() {
        *w = 1.0 / (n as f64 * binomial_f64(n - 1, s));
    }
    let mut scores = vec![0.0; n];
    for mask in 0..values.len() {
        let size = (mask as u64).count_ones() as usize;
        for (i, score) in scores.iter_mut().enumerate() {
            let bit = 1usize << i;
            if mask & bit == 0 {
                *score += weight[size] * (values[mask | bit] - values[mask]);
            }
        }
    }
    scores
}

fn binomial_f64(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
