//! Choice-fraction propagation.
//!
//! Iterates `Z <- (1 - rho) Z0 + rho S Z` with `S = D^{-1/2} A D^{-1/2}`
//! from the observed choice fractions `Z0`, then predicts the argmax of a
//! chooser's row restricted to the offered items.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SocialGraph;
use crate::models::rank_by_score;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub rho: f64,
    pub max_iterations: usize,
    /// Stop once the sum of squared differences between iterates drops
    /// below this.
    pub tolerance: f64,
}

impl PropagationConfig {
    pub fn new(rho: f64) -> Self {
        Self { rho, ..Self::default() }
    }
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self { rho: 0.5, max_iterations: 256, tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub z: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn propagate(z0: &Array2<f64>, g: &SocialGraph, cfg: &PropagationConfig) -> Result<PropagationResult> {
    if !(0.0..=1.0).contains(&cfg.rho) {
        return Err(Error::Argument(format!("rho {} not in [0, 1]", cfg.rho)));
    }
    if z0.nrows() != g.n() {
        return Err(Error::Argument(format!("Z0 has {} rows, graph has {} nodes", z0.nrows(), g.n())));
    }
    let s = g.normalized_operator(false);
    let prior = z0 * (1.0 - cfg.rho);
    let mut z = z0.clone();
    for it in 1..=cfg.max_iterations {
        let mut next = s.mul(&z);
        next *= cfg.rho;
        next += &prior;
        let diff: f64 = next.iter().zip(z.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        z = next;
        if diff < cfg.tolerance {
            return Ok(PropagationResult { z, iterations: it, converged: true });
        }
    }
    Ok(PropagationResult { z, iterations: cfg.max_iterations, converged: false })
}

/// Highest-scoring item of `choice_set`, ties to the lower item index.
pub fn predict_choice(z_row: ArrayView1<'_, f64>, choice_set: &[usize]) -> Result<usize> {
    rank_choices(z_row, choice_set)?
        .first()
        .copied()
        .ok_or_else(|| Error::Argument("empty choice set".into()))
}

/// `choice_set` ordered by decreasing score, ties by ascending item index.
pub fn rank_choices(z_row: ArrayView1<'_, f64>, choice_set: &[usize]) -> Result<Vec<usize>> {
    if choice_set.is_empty() {
        return Err(Error::Argument("empty choice set".into()));
    }
    if let Some(&bad) = choice_set.iter().find(|&&i| i >= z_row.len()) {
        return Err(Error::Argument(format!("item {bad} out of range")));
    }
    Ok(rank_by_score(choice_set.iter().map(|&i| (i, z_row[i])).collect()))
}
