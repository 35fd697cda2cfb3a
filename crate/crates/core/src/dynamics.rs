//! Two-state Markov PU occupancy and SU population processes.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::Population;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("transition probabilities must lie in [0, 1], got nu1 = {nu1}, nu0 = {nu0}")]
    OutOfRange { nu1: f64, nu0: f64 },
    #[error("memory 1 - nu1 - nu0 = {0} outside the supported range [0, 1)")]
    UnsupportedMemory(f64),
    #[error("memory {given} inconsistent with 1 - nu1 - nu0 = {expected}")]
    InconsistentMemory { given: f64, expected: f64 },
    #[error("constant SU population must be at least 1")]
    EmptyPopulation,
}

/// Per-cell two-state Markov chain for PU activity.
///
/// The static chain (`nu1 = nu0 = 0`, memory 1) is accepted for testing; its
/// steady state is taken as the empty spectrum, `pi_b = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OccupancyModel {
    pub nu1: f64,
    pub nu0: f64,
    pub mu: f64,
    pub pi_b: f64,
}

impl OccupancyModel {
    pub fn new(nu1: f64, nu0: f64) -> Result<Self, DynamicsError> {
        if !((0.0..=1.0).contains(&nu1) && (0.0..=1.0).contains(&nu0)) {
            return Err(DynamicsError::OutOfRange { nu1, nu0 });
        }
        let mu = 1.0 - nu1 - nu0;
        let is_static = nu1 == 0.0 && nu0 == 0.0;
        if !is_static && !(0.0..1.0).contains(&mu) {
            return Err(DynamicsError::UnsupportedMemory(mu));
        }
        let pi_b = if is_static { 0.0 } else { nu1 / (nu1 + nu0) };
        Ok(Self { nu1, nu0, mu, pi_b })
    }

    /// Like [`OccupancyModel::new`] but also checks an explicitly supplied
    /// memory against the transition probabilities.
    pub fn with_memory(nu1: f64, nu0: f64, mu: f64) -> Result<Self, DynamicsError> {
        let model = Self::new(nu1, nu0)?;
        if (model.mu - mu).abs() > 1e-12 {
            return Err(DynamicsError::InconsistentMemory {
                given: mu,
                expected: model.mu,
            });
        }
        Ok(model)
    }

    /// Occupancy rates used in the reference experiments (`pi_b = 0.05`, `mu = 0.9`).
    pub fn reference() -> Self {
        Self::new(0.005, 0.095).expect("reference rates are valid")
    }

    /// `P(b_t = 1)` given `P(b_{t-delta} = 1) = b_prob`.
    pub fn k_step_marginal(&self, b_prob: f64, delta: u32) -> f64 {
        self.pi_b + self.mu.powi(delta as i32) * (b_prob - self.pi_b)
    }

    /// Probability that a cell occupied w.p. `b_prob` is occupied next frame.
    pub fn step_prob(&self, b_prob: f64) -> f64 {
        b_prob * (1.0 - self.nu0) + (1.0 - b_prob) * self.nu1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyState {
    pub b: Vec<u8>,
    pub t: u64,
}

impl OccupancyState {
    pub fn active(&self, i: usize) -> bool {
        self.b[i] == 1
    }
}

/// Draws an initial state from the stationary distribution.
pub fn sample_steady_state<R: Rng + ?Sized>(model: &OccupancyModel, n_cells: usize, rng: &mut R) -> OccupancyState {
    let b = (0..n_cells).map(|_| rng.random_bool(model.pi_b) as u8).collect();
    OccupancyState { b, t: 0 }
}

/// Advances every cell by one independent Markov transition.
pub fn step_occupancy<R: Rng + ?Sized>(model: &OccupancyModel, state: &OccupancyState, rng: &mut R) -> OccupancyState {
    let b = state
        .b
        .iter()
        .map(|&bit| {
            let flip = if bit == 1 { model.nu0 } else { model.nu1 };
            if rng.random_bool(flip) {
                1 - bit
            } else {
                bit
            }
        })
        .collect();
    OccupancyState { b, t: state.t + 1 }
}

/// How the number of SUs per cell is modelled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PopulationMode {
    /// `m` SUs in every cell at every frame.
    Constant { m: u32 },
    /// Unboundedly many SUs: `1/M` terms vanish, traffic is capped at
    /// `a_max`, and `sensors` SUs take part in local sensing.
    Dense {
        #[serde(default = "default_a_max")]
        a_max: f64,
        #[serde(default = "default_sensors")]
        sensors: u32,
    },
}

fn default_a_max() -> f64 {
    10.0
}

fn default_sensors() -> u32 {
    10
}

impl Default for PopulationMode {
    fn default() -> Self {
        PopulationMode::Dense {
            a_max: default_a_max(),
            sensors: default_sensors(),
        }
    }
}

impl PopulationMode {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        match *self {
            PopulationMode::Constant { m: 0 } => Err(DynamicsError::EmptyPopulation),
            PopulationMode::Dense { sensors: 0, .. } => Err(DynamicsError::EmptyPopulation),
            _ => Ok(()),
        }
    }

    /// Number of SUs contributing a local measurement each frame.
    pub fn sensing_count(&self) -> u32 {
        match *self {
            PopulationMode::Constant { m } => m,
            PopulationMode::Dense { sensors, .. } => sensors,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuPopulation {
    pub m: Vec<Population>,
}

/// SU population at frame `t`. Both supported modes are stationary and
/// identical across cells, so neither `t` nor `rng` changes the outcome; they
/// are kept for time-varying modes.
pub fn sample_su_population<R: Rng + ?Sized>(mode: &PopulationMode, n_cells: usize, _t: u64, _rng: &mut R) -> SuPopulation {
    let p = match *mode {
        PopulationMode::Constant { m } => Population::Finite(m),
        PopulationMode::Dense { a_max, .. } => Population::Dense { a_max },
    };
    SuPopulation { m: vec![p; n_cells] }
}
