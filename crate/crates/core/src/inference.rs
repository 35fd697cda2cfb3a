//! Beliefs and interference estimates from multi-scale aggregates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::MultiScaleEstimate;
use crate::dynamics::OccupancyModel;
use crate::hierarchy::{AggregationTree, HierarchyError};
use crate::topology::InterferenceMatrix;

/// Largest network handled by [`exact_belief`].
pub const MAX_EXACT_CELLS: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("tree has {tree} cells but the INR matrix has {phi}")]
    SizeMismatch { tree: usize, phi: usize },
    #[error("exact belief limited to {MAX_EXACT_CELLS} cells, got {0}")]
    TooLarge(usize),
    #[error("exact belief requires one aggregate per level ({expected}), got {got}")]
    LevelCount { expected: usize, got: usize },
    #[error("level-{level} aggregate {sigma} is not a count in [0, {size}]")]
    InfeasibleAggregate { level: usize, sigma: f64, size: usize },
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

/// `mu^delta` with `0^0 = 1`.
pub fn ring_weight(mu: f64, delta: u32) -> f64 {
    mu.powi(delta as i32)
}

/// Per-cell coupling totals, split by ring and damped by the ring delays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayCompensatedWeights {
    /// `phi_tot[i]`: sum over all cells `j` of `phi[j][i] / phi[i][i]`.
    pub phi_tot: Vec<f64>,
    /// `phi_del[i][L]`: ring-`L` coupling of cell `i`, each term damped by `mu^delta_j`.
    pub phi_del: Vec<Vec<f64>>,
    /// `ring_size[i][L]`: number of cells at h-distance `L` from `i`.
    pub ring_size: Vec<Vec<usize>>,
}

pub fn compute_weights(tree: &AggregationTree, phi: &InterferenceMatrix, mu: f64) -> Result<DelayCompensatedWeights, InferenceError> {
    let n = tree.n_cells();
    if n != phi.n_cells() {
        return Err(InferenceError::SizeMismatch {
            tree: n,
            phi: phi.n_cells(),
        });
    }
    let mut phi_tot = Vec::with_capacity(n);
    let mut phi_del = Vec::with_capacity(n);
    let mut ring_size = Vec::with_capacity(n);
    for i in 0..n {
        phi_tot.push((0..n).map(|j| phi.coupling(j, i)).sum());
        let rings = tree.ring_sets(i)?;
        phi_del.push(
            rings
                .iter()
                .enumerate()
                .map(|(l, ring)| ring.iter().map(|&j| ring_weight(mu, tree.delay(j, l)) * phi.coupling(j, i)).sum())
                .collect(),
        );
        ring_size.push(rings.iter().map(Vec::len).collect());
    }
    Ok(DelayCompensatedWeights {
        phi_tot,
        phi_del,
        ring_size,
    })
}

/// Probability that a ring member is occupied now, given the ring's
/// delay-mismatched aggregate and the member's delay.
pub fn marginal_occupancy(sigma: f64, ring_size: usize, delta: u32, model: &OccupancyModel) -> f64 {
    model.pi_b + ring_weight(model.mu, delta) * (sigma / ring_size as f64 - model.pi_b)
}

/// Expected PU interference at cell `i` from its multi-scale estimate.
/// Empty rings contribute nothing; cells outside the tree stay at the prior.
pub fn estimate_ip_cell(sigma: &[f64], weights: &DelayCompensatedWeights, i: usize, model: &OccupancyModel) -> f64 {
    let mut ip = model.pi_b * weights.phi_tot[i];
    for (l, &s) in sigma.iter().enumerate() {
        let size = weights.ring_size[i][l];
        if size > 0 {
            ip += (s / size as f64 - model.pi_b) * weights.phi_del[i][l];
        }
    }
    ip.max(0.0)
}

pub fn estimate_ip(est: &MultiScaleEstimate, weights: &DelayCompensatedWeights, model: &OccupancyModel) -> Vec<f64> {
    est.sigma
        .iter()
        .enumerate()
        .map(|(i, s)| estimate_ip_cell(s, weights, i, model))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsMode {
    /// Previous frame's traffic of every other cell is known exactly.
    #[default]
    Oracle,
    /// Aggregated traffic through the tree, without delay compensation.
    Hierarchical,
}

/// SU interference at cell `i` from the other cells' traffic.
pub fn estimate_is_oracle(phi: &InterferenceMatrix, a_prev: &[f64], i: usize) -> f64 {
    a_prev
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, &a)| phi.coupling(j, i) * a)
        .sum()
}

/// Ring-average template applied to aggregated traffic, prior 0 and no
/// delay damping. `undelayed` must come from [`compute_weights`] with `mu = 1`.
pub fn estimate_is_hierarchical(sigma_a: &[f64], undelayed: &DelayCompensatedWeights, i: usize) -> f64 {
    sigma_a
        .iter()
        .enumerate()
        .skip(1)
        .filter(|&(l, _)| undelayed.ring_size[i][l] > 0)
        .map(|(l, &s)| s / undelayed.ring_size[i][l] as f64 * undelayed.phi_del[i][l])
        .sum::<f64>()
        .max(0.0)
}

/// Joint belief over all occupancy vectors, indexed by bitmask (bit `j` set
/// means cell `j` occupied).
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefTable {
    n_cells: usize,
    probs: Vec<f64>,
}

impl BeliefTable {
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn prob(&self, mask: usize) -> f64 {
        self.probs[mask]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `P(b_j = 1)`.
    pub fn marginal(&self, j: usize) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(mask, _)| mask >> j & 1 == 1)
            .map(|(_, p)| p)
            .sum()
    }

    /// Expectation of `f(mask)` under the belief.
    pub fn expect(&self, mut f: impl FnMut(usize) -> f64) -> f64 {
        self.probs.iter().enumerate().map(|(mask, p)| p * f(mask)).sum()
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, r| acc * (n - r) as f64 / (r + 1) as f64)
}

/// `P(b_now = now | b_then = then)` after `delta` frames.
fn transition(model: &OccupancyModel, then: bool, now: bool, delta: u32) -> f64 {
    let p1 = model.k_step_marginal(if then { 1.0 } else { 0.0 }, delta);
    if now {
        p1
    } else {
        1.0 - p1
    }
}

/// Exact joint belief of cell `i` under noiseless sensing, where each ring's
/// delayed aggregate is observed directly. Rings are independent; inside a
/// ring every delayed configuration with the observed count is equally
/// likely and each member then evolves for its own delay.
pub fn exact_belief(tree: &AggregationTree, i: usize, sigma: &[f64], model: &OccupancyModel) -> Result<BeliefTable, InferenceError> {
    let n = tree.n_cells();
    if n > MAX_EXACT_CELLS {
        return Err(InferenceError::TooLarge(n));
    }
    let rings = tree.ring_sets(i)?;
    if sigma.len() != rings.len() {
        return Err(InferenceError::LevelCount {
            expected: rings.len(),
            got: sigma.len(),
        });
    }

    // Per-ring law over the current bits of the ring members, indexed by the
    // sub-mask over the ring's member list.
    let mut ring_laws: Vec<(Vec<usize>, Vec<f64>)> = Vec::with_capacity(rings.len());
    let mut in_ring = vec![false; n];
    for (l, ring) in rings.iter().enumerate() {
        let size = ring.len();
        if size == 0 {
            continue;
        }
        let x = sigma[l].round();
        if (sigma[l] - x).abs() > 1e-9 || x < 0.0 || x > size as f64 {
            return Err(InferenceError::InfeasibleAggregate {
                level: l,
                sigma: sigma[l],
                size,
            });
        }
        let x = x as u32;
        let weight = 1.0 / binomial(size, x as usize);
        let mut law = vec![0.0; 1 << size];
        for then in 0usize..(1 << size) {
            if then.count_ones() != x {
                continue;
            }
            for (now, slot) in law.iter_mut().enumerate() {
                let mut p = weight;
                for (k, &j) in ring.iter().enumerate() {
                    p *= transition(model, then >> k & 1 == 1, now >> k & 1 == 1, tree.delay(j, l));
                }
                *slot += p;
            }
        }
        for &j in ring {
            in_ring[j] = true;
        }
        ring_laws.push((ring.clone(), law));
    }

    let outside: Vec<usize> = (0..n).filter(|&j| !in_ring[j]).collect();
    let mut probs = vec![0.0; 1 << n];
    for (mask, slot) in probs.iter_mut().enumerate() {
        let mut p = 1.0;
        for (members, law) in &ring_laws {
            let sub = members
                .iter()
                .enumerate()
                .fold(0usize, |acc, (k, &j)| acc | ((mask >> j & 1) << k));
            p *= law[sub];
        }
        for &j in &outside {
            p *= if mask >> j & 1 == 1 { model.pi_b } else { 1.0 - model.pi_b };
        }
        *slot = p;
    }
    Ok(BeliefTable { n_cells: n, probs })
}
