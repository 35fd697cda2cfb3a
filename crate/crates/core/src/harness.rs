//! Frame loop, fading evaluation and Monte Carlo sweeps.
//!
//! Occupancy, sensing and every scheme's network-state estimate do not depend
//! on the traffic decisions, so they are generated once per trial and shared
//! by all schemes and grid points (common random numbers). Only the control
//! loop, whose SU interference feeds back from the previous frame, runs per
//! grid point.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{self, AggregationError, NodeBuffers};
use crate::control::{self, ConsensusGraph, ControlError, ControlParams, Population};
use crate::dynamics::{self, DynamicsError, OccupancyModel, PopulationMode};
use crate::hierarchy::{self, AggregationTree, HierarchyError, TreeParams};
use crate::inference::{self, DelayCompensatedWeights, InferenceError, IsMode};
use crate::rng::{derive_seed, stream, tag, SimRng};
use crate::sensing::{self, LocalBelief, SensingError, SensorModel};
use crate::topology::{self, InterferenceMatrix, NetworkTopology, PathlossParams, Point, TopologyError, TopologySpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("{field}: {msg}"))
}

/// `n` points spaced evenly in log10 between `10^lo` and `10^hi`.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linspace(lo, hi, n).into_iter().map(|e| 10f64.powf(e)).collect()
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Interference-matched aggregation tree.
    Ibt,
    /// Random-association tree.
    Rt,
    /// True occupancy of every cell, delayed by distance.
    FullNsi,
    /// True current occupancy within a radius, prior beyond.
    RadiusNsi,
    /// Constant access probability.
    Uncoordinated,
    /// Gossip averaging of local estimates.
    Consensus,
}

impl Scheme {
    pub fn label(&self) -> &'static str {
        match self {
            Scheme::Ibt => "ibt",
            Scheme::Rt => "rt",
            Scheme::FullNsi => "full_nsi",
            Scheme::RadiusNsi => "radius_nsi",
            Scheme::Uncoordinated => "uncoordinated",
            Scheme::Consensus => "consensus",
        }
    }

    fn uses_tree(&self) -> bool {
        matches!(self, Scheme::Ibt | Scheme::Rt)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Throughput bound evaluated at the committed decisions.
    #[default]
    AnalyticLb,
    /// Per-user placement with Rayleigh fading and SINR success counting.
    FadingMc,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupancyConfig {
    pub nu1: f64,
    pub nu0: f64,
    /// Optional explicit memory, checked against `1 - nu1 - nu0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self {
            nu1: 0.005,
            nu0: 0.095,
            mu: None,
        }
    }
}

impl OccupancyConfig {
    pub fn model(&self) -> Result<OccupancyModel, DynamicsError> {
        match self.mu {
            Some(mu) => OccupancyModel::with_memory(self.nu1, self.nu0, mu),
            None => OccupancyModel::new(self.nu1, self.nu0),
        }
    }
}

fn default_lambda_grid() -> Vec<f64> {
    logspace(-3.0, 3.0, 13)
}

fn default_ptx_grid() -> Vec<f64> {
    linspace(0.0, 1.0, 11)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default = "default_sinr_db")]
    pub sinr_th_db: f64,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_ptx_grid")]
    pub p_tx_grid: Vec<f64>,
}

fn default_sinr_db() -> f64 {
    5.0
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            sinr_th_db: default_sinr_db(),
            lambda_grid: default_lambda_grid(),
            p_tx_grid: default_ptx_grid(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    /// Frames of delay per meter of distance.
    #[serde(default)]
    pub gamma_delay: f64,
    /// Aggregation budget per cell; absent means unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_max: Option<f64>,
}

impl TreeConfig {
    fn params(&self, c_max: Option<f64>) -> TreeParams {
        TreeParams {
            gamma_delay: self.gamma_delay,
            c_max: c_max.unwrap_or(f64::INFINITY),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// Radius in meters for `radius_nsi`; absent means every cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default = "default_degree")]
    pub consensus_degree: usize,
    #[serde(default = "default_rounds")]
    pub consensus_rounds: usize,
}

fn default_degree() -> usize {
    5
}

fn default_rounds() -> usize {
    10
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            radius: None,
            consensus_degree: default_degree(),
            consensus_rounds: default_rounds(),
        }
    }
}

/// Budgets swept by [`run_cost_sweep`]: `c_max` for tree schemes, radius in
/// meters for `radius_nsi`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSweepConfig {
    #[serde(default)]
    pub c_max_grid: Vec<f64>,
    #[serde(default)]
    pub radius_grid: Vec<f64>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub trials: usize,
    pub frames: usize,
    pub topology: TopologySpec,
    #[serde(default)]
    pub pathloss: PathlossParams,
    #[serde(default)]
    pub occupancy: OccupancyConfig,
    #[serde(default)]
    pub sensor: SensorModel,
    #[serde(default)]
    pub population: PopulationMode,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub tree: TreeConfig,
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub evaluation: EvalMode,
    #[serde(default)]
    pub is_mode: IsMode,
    #[serde(default)]
    pub baselines: BaselineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_sweep: Option<CostSweepConfig>,
}

impl ExperimentConfig {
    /// Small analytic run on an 8x8 grid; handy as a starting point.
    pub fn desk_default() -> Self {
        Self {
            seed: 1,
            trials: 4,
            frames: 300,
            topology: TopologySpec::grid(64, 800.0, 800.0, 1),
            pathloss: PathlossParams::default(),
            occupancy: OccupancyConfig::default(),
            sensor: SensorModel::noiseless(),
            population: PopulationMode::default(),
            control: ControlConfig::default(),
            tree: TreeConfig::default(),
            schemes: vec![Scheme::Ibt, Scheme::Rt, Scheme::FullNsi, Scheme::Uncoordinated],
            evaluation: EvalMode::AnalyticLb,
            is_mode: IsMode::Oracle,
            baselines: BaselineConfig::default(),
            cost_sweep: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(config_err("trials", "must be at least 1"));
        }
        if self.frames == 0 {
            return Err(config_err("frames", "must be at least 1"));
        }
        if self.schemes.is_empty() {
            return Err(config_err("schemes", "must list at least one scheme"));
        }
        let grid_schemes = self.schemes.iter().any(|s| *s != Scheme::Uncoordinated);
        if grid_schemes && self.control.lambda_grid.is_empty() {
            return Err(config_err("control.lambda_grid", "must not be empty"));
        }
        if let Some(l) = self.control.lambda_grid.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(config_err("control.lambda_grid", format!("entries must be positive, got {l}")));
        }
        if self.schemes.contains(&Scheme::Uncoordinated) {
            if self.control.p_tx_grid.is_empty() {
                return Err(config_err("control.p_tx_grid", "must not be empty"));
            }
            if let Some(p) = self.control.p_tx_grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(config_err("control.p_tx_grid", format!("entries must lie in [0, 1], got {p}")));
            }
        }
        if !self.control.sinr_th_db.is_finite() {
            return Err(config_err("control.sinr_th_db", "must be finite"));
        }
        self.pathloss.validate().map_err(|e| config_err("pathloss", e))?;
        self.occupancy.model().map_err(|e| config_err("occupancy", e))?;
        self.sensor.validate().map_err(|e| config_err("sensor", e))?;
        self.population.validate().map_err(|e| config_err("population", e))?;
        if let PopulationMode::Dense { a_max, .. } = self.population {
            if !(a_max > 0.0 && a_max.is_finite()) {
                return Err(config_err("population.a_max", "must be positive and finite"));
            }
        }
        if !(self.tree.gamma_delay >= 0.0 && self.tree.gamma_delay.is_finite()) {
            return Err(config_err("tree.gamma_delay", "must be finite and non-negative"));
        }
        if let Some(c) = self.tree.c_max {
            if !(c > 0.0) {
                return Err(config_err("tree.c_max", "must be positive"));
            }
        }
        if let Some(r) = self.baselines.radius {
            if !(r >= 0.0) {
                return Err(config_err("baselines.radius", "must be non-negative"));
            }
        }
        if self.schemes.contains(&Scheme::Consensus) && self.baselines.consensus_degree == 0 {
            return Err(config_err("baselines.consensus_degree", "must be at least 1"));
        }
        if self.topology.n_cells == 0 {
            return Err(config_err("topology.n_cells", "must be at least 1"));
        }
        if self.evaluation == EvalMode::FadingMc && !matches!(self.population, PopulationMode::Constant { .. }) {
            return Err(config_err(
                "population",
                "fading evaluation places individual SUs and needs mode = \"constant\"",
            ));
        }
        if let Some(sweep) = &self.cost_sweep {
            if sweep.c_max_grid.iter().any(|c| !(*c > 0.0)) {
                return Err(config_err("cost_sweep.c_max_grid", "entries must be positive"));
            }
            if sweep.radius_grid.iter().any(|r| !(*r >= 0.0)) {
                return Err(config_err("cost_sweep.radius_grid", "entries must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn control_params(&self, lambda: f64) -> Result<ControlParams, ControlError> {
        ControlParams::new(lambda, crate::db_to_linear(self.control.sinr_th_db))
    }

    fn population(&self) -> Population {
        match self.population {
            PopulationMode::Constant { m } => Population::Finite(m),
            PopulationMode::Dense { a_max, .. } => Population::Dense { a_max },
        }
    }

    fn grid_for(&self, scheme: Scheme) -> &[f64] {
        if scheme == Scheme::Uncoordinated {
            &self.control.p_tx_grid
        } else {
            &self.control.lambda_grid
        }
    }
}

/// One scheme with its budget (`c_max` for trees, radius for `radius_nsi`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Variant {
    pub scheme: Scheme,
    pub budget: Option<f64>,
    /// Reported in the `cost_param` column; `None` outside cost sweeps.
    pub cost_param: Option<f64>,
}

/// Per-user geometry for fading evaluation.
#[derive(Clone, Debug)]
pub struct RealisticLayout {
    pub sus_per_cell: usize,
    pub su_cell: Vec<usize>,
    pub su_tx: Vec<Point>,
    pub su_rx: Vec<Point>,
    pub pu_rx: Vec<Point>,
    /// `to_su[n * K + k]`: gain from SU transmitter `k` to SU receiver `n`.
    to_su: Vec<f64>,
    /// `pu_to_su[n * N + j]`: gain from PU transmitter `j` to SU receiver `n`.
    pu_to_su: Vec<f64>,
    /// `to_pu[j * K + k]`: gain from SU transmitter `k` to PU receiver `j`.
    to_pu: Vec<f64>,
}

const MIN_LINK_M: f64 = 1.0;

/// Unit-mean Rayleigh power gain.
fn fade<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

fn point_in_disk<R: Rng + ?Sized>(c: Point, radius: f64, rng: &mut R) -> Point {
    loop {
        let r = radius * rng.random::<f64>().sqrt();
        let th = std::f64::consts::TAU * rng.random::<f64>();
        let p = Point::new(c.x + r * th.cos(), c.y + r * th.sin());
        if p.dist(&c) >= MIN_LINK_M.min(radius) {
            return p;
        }
    }
}

impl RealisticLayout {
    /// SU transmitters uniform in their cell's region, each receiver within
    /// the reference distance of its transmitter, PU receivers within the
    /// cell radius of the PU transmitter at the cell center.
    pub fn generate(topology: &NetworkTopology, pathloss: &PathlossParams, sus_per_cell: usize, rng: &mut SimRng) -> Self {
        let n = topology.n_cells();
        let (w, h) = topology.area;
        let mut su_cell = Vec::with_capacity(n * sus_per_cell);
        let mut su_tx = Vec::with_capacity(n * sus_per_cell);
        let mut su_rx = Vec::with_capacity(n * sus_per_cell);
        for cell in 0..n {
            for _ in 0..sus_per_cell {
                let tx = loop {
                    let p = Point::new(w * rng.random::<f64>(), h * rng.random::<f64>());
                    if topology.nearest_cell(p) == cell {
                        break p;
                    }
                };
                su_cell.push(cell);
                su_tx.push(tx);
                su_rx.push(point_in_disk(tx, pathloss.ref_distance_m, rng));
            }
        }
        let pu_rx: Vec<Point> = topology
            .centers
            .iter()
            .map(|&c| point_in_disk(c, topology.cell_radius, rng))
            .collect();

        let gain = |a: Point, b: Point| pathloss.inr(a.dist(&b).max(MIN_LINK_M), topology.clear_path(a, b));
        let k = su_tx.len();
        let mut to_su = Vec::with_capacity(k * k);
        let mut pu_to_su = Vec::with_capacity(k * n);
        for &rx in &su_rx {
            to_su.extend(su_tx.iter().map(|&tx| gain(tx, rx)));
            pu_to_su.extend(topology.centers.iter().map(|&tx| gain(tx, rx)));
        }
        let mut to_pu = Vec::with_capacity(n * k);
        for &rx in &pu_rx {
            to_pu.extend(su_tx.iter().map(|&tx| gain(tx, rx)));
        }
        Self {
            sus_per_cell,
            su_cell,
            su_tx,
            su_rx,
            pu_rx,
            to_su,
            pu_to_su,
            to_pu,
        }
    }

    pub fn n_sus(&self) -> usize {
        self.su_tx.len()
    }

    pub fn su_gain(&self, tx: usize, rx: usize) -> f64 {
        self.to_su[rx * self.n_sus() + tx]
    }
}

/// Successes of one frame under Rayleigh fading.
#[derive(Clone, Debug, PartialEq)]
pub struct FadingOutcome {
    pub su_successes: Vec<u32>,
    /// Sum over active PU receivers of the received SU interference (INR units).
    pub pu_interference: f64,
}

/// Whether a link with mean gain `own` beats `sinr_th` against interferers
/// with mean gains `interferers`, all under unit-mean Rayleigh power fading.
pub fn sinr_success<R: Rng + ?Sized>(own: f64, interferers: &[f64], sinr_th: f64, rng: &mut R) -> bool {
    let s = own * fade(rng);
    let i: f64 = interferers.iter().map(|&g| g * fade(rng)).sum();
    s / (1.0 + i) > sinr_th
}

pub fn eval_fading_success<R: Rng + ?Sized>(
    layout: &RealisticLayout,
    active: &[bool],
    b: &[u8],
    sinr_th: f64,
    rng: &mut R,
) -> FadingOutcome {
    let n_cells = b.len();
    let k_all = layout.n_sus();
    let act: Vec<usize> = (0..k_all).filter(|&k| active[k]).collect();
    let pus: Vec<usize> = (0..n_cells).filter(|&j| b[j] == 1).collect();
    let mut su_successes = vec![0u32; n_cells];
    for &rx in &act {
        let row = &layout.to_su[rx * k_all..(rx + 1) * k_all];
        let own = row[rx] * fade(rng);
        let mut interference = 0.0;
        for &tx in &act {
            if tx != rx {
                interference += row[tx] * fade(rng);
            }
        }
        for &j in &pus {
            interference += layout.pu_to_su[rx * n_cells + j] * fade(rng);
        }
        if own / (1.0 + interference) > sinr_th {
            su_successes[layout.su_cell[rx]] += 1;
        }
    }
    let mut pu_interference = 0.0;
    for &j in &pus {
        let row = &layout.to_pu[j * k_all..(j + 1) * k_all];
        for &tx in &act {
            pu_interference += row[tx] * fade(rng);
        }
    }
    FadingOutcome {
        su_successes,
        pu_interference,
    }
}

/// Exogenous state of one trial: geometry, occupancy and local estimates.
pub struct TrialWorld {
    pub trial: usize,
    pub seed: u64,
    pub topology: NetworkTopology,
    pub phi: InterferenceMatrix,
    pub model: OccupancyModel,
    pub phi_tot: Vec<f64>,
    /// `b[t][i]`.
    pub b: Vec<Vec<u8>>,
    /// `b_hat[t][i]`: local posterior.
    pub b_hat: Vec<Vec<f64>>,
    pub layout: Option<RealisticLayout>,
}

impl TrialWorld {
    pub fn build(cfg: &ExperimentConfig, trial: usize) -> Result<Self, HarnessError> {
        let seed = derive_seed(cfg.seed, &[trial as u64]);
        let topology = topology::build_topology(&cfg.topology, &mut stream(cfg.seed, &[trial as u64, tag::TOPOLOGY]), seed)?;
        let phi = topology::compute_phi(&topology, &cfg.pathloss)?;
        let model = cfg.occupancy.model()?;
        let n = topology.n_cells();
        let phi_tot = (0..n).map(|i| (0..n).map(|j| phi.coupling(j, i)).sum()).collect();
        let layout = match (cfg.evaluation, cfg.population) {
            (EvalMode::FadingMc, PopulationMode::Constant { m }) => Some(RealisticLayout::generate(
                &topology,
                &cfg.pathloss,
                m as usize,
                &mut stream(cfg.seed, &[trial as u64, tag::PLACEMENT]),
            )),
            _ => None,
        };
        Ok(Self {
            trial,
            seed,
            topology,
            phi,
            model,
            phi_tot,
            b: vec![],
            b_hat: vec![],
            layout,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.topology.n_cells()
    }

    /// Draws `total` frames of occupancy and local sensing.
    pub fn generate(&mut self, cfg: &ExperimentConfig, total: usize) -> Result<(), HarnessError> {
        let n = self.n_cells();
        let mut occ_rng = stream(cfg.seed, &[self.trial as u64, tag::OCCUPANCY]);
        let mut sense_rng = stream(cfg.seed, &[self.trial as u64, tag::SENSING]);
        let m = cfg.population.sensing_count();
        let mut state = dynamics::sample_steady_state(&self.model, n, &mut occ_rng);
        let mut beliefs = vec![LocalBelief::steady(&self.model); n];
        self.b = Vec::with_capacity(total);
        self.b_hat = Vec::with_capacity(total);
        for t in 0..total {
            if t > 0 {
                state = dynamics::step_occupancy(&self.model, &state, &mut occ_rng);
            }
            let mut est = Vec::with_capacity(n);
            for (i, belief) in beliefs.iter_mut().enumerate() {
                let xi = sensing::sample_detection_count(&cfg.sensor, state.active(i), m, &mut sense_rng);
                est.push(belief.observe(&cfg.sensor, &self.model, xi, m)?);
            }
            self.b.push(state.b.clone());
            self.b_hat.push(est);
        }
        Ok(())
    }
}

/// A scheme's structures and its per-frame PU interference estimates.
pub struct PreparedScheme {
    pub variant: Variant,
    pub tree: Option<AggregationTree>,
    /// Weights with `mu = 1` for hierarchical SU interference.
    undelayed: Option<DelayCompensatedWeights>,
    /// `ip[t][i]`; `None` for schemes that ignore network state.
    pub ip: Option<Vec<Vec<f64>>>,
    pub warmup: usize,
    pub agg_cost: f64,
    full_delays: Option<Vec<u32>>,
    consensus: Option<ConsensusGraph>,
}

impl PreparedScheme {
    pub fn new(cfg: &ExperimentConfig, world: &TrialWorld, variant: Variant, index: usize) -> Result<Self, HarnessError> {
        let n = world.n_cells();
        let mut prepared = Self {
            variant,
            tree: None,
            undelayed: None,
            ip: None,
            warmup: 0,
            agg_cost: 0.0,
            full_delays: None,
            consensus: None,
        };
        match variant.scheme {
            Scheme::Ibt | Scheme::Rt => {
                let params = cfg.tree.params(variant.budget);
                let tree = if variant.scheme == Scheme::Ibt {
                    hierarchy::build_ibt(&world.topology, &world.phi, world.model.mu, &params)?
                } else {
                    let mut rng = stream(cfg.seed, &[world.trial as u64, tag::TREE, index as u64]);
                    hierarchy::build_random_tree(&world.topology, &params, &mut rng)?
                };
                prepared.warmup = tree.max_delay() as usize;
                prepared.agg_cost = tree.cost_per_cell();
                if cfg.is_mode == IsMode::Hierarchical {
                    prepared.undelayed = Some(inference::compute_weights(&tree, &world.phi, 1.0)?);
                }
                prepared.tree = Some(tree);
            }
            Scheme::FullNsi => {
                let g = cfg.tree.gamma_delay;
                let delays: Vec<u32> = (0..n * n)
                    .map(|k| (g * world.topology.distance(k / n, k % n)).ceil() as u32)
                    .collect();
                prepared.warmup = delays.iter().copied().max().unwrap_or(0) as usize;
                prepared.agg_cost = (n - 1) as f64;
                prepared.full_delays = Some(delays);
            }
            Scheme::RadiusNsi => {
                prepared.agg_cost = control::radius_cost(&world.topology, variant.budget.unwrap_or(f64::INFINITY));
            }
            Scheme::Consensus => {
                let mut rng = stream(cfg.seed, &[world.trial as u64, tag::CONSENSUS]);
                prepared.consensus = Some(ConsensusGraph::random_connected(n, cfg.baselines.consensus_degree, &mut rng)?);
            }
            Scheme::Uncoordinated => {}
        }
        Ok(prepared)
    }

    /// Fills `ip` from the world's occupancy and local estimates.
    pub fn estimate(&mut self, cfg: &ExperimentConfig, world: &TrialWorld) -> Result<(), HarnessError> {
        let n = world.n_cells();
        let model = &world.model;
        let total = world.b.len();
        let mut ip = Vec::with_capacity(total);
        match self.variant.scheme {
            Scheme::Ibt | Scheme::Rt => {
                let tree = self.tree.as_ref().expect("tree schemes carry a tree");
                let weights = inference::compute_weights(tree, &world.phi, model.mu)?;
                let mut buf = NodeBuffers::new(tree, model.pi_b);
                for t in 0..total {
                    aggregation::advance_frame(tree, &mut buf, &world.b_hat[t], t as u64)?;
                    let est = aggregation::compute_all(tree, &buf, t as u64)?;
                    ip.push(inference::estimate_ip(&est, &weights, model));
                }
            }
            Scheme::FullNsi => {
                let delays = self.full_delays.as_ref().expect("delays prepared");
                for t in 0..total {
                    ip.push(
                        (0..n)
                            .map(|i| {
                                control::full_nsi_ip(&world.phi, model, i, |j| {
                                    let d = delays[i * n + j];
                                    let b = t.checked_sub(d as usize).map_or(model.pi_b, |s| world.b[s][j] as f64);
                                    (b, d)
                                })
                            })
                            .collect(),
                    );
                }
            }
            Scheme::RadiusNsi => {
                let r = self.variant.budget.unwrap_or(f64::INFINITY);
                for t in 0..total {
                    ip.push(
                        (0..n)
                            .map(|i| control::radius_nsi_ip(&world.phi, &world.topology, model, i, &world.b[t], r))
                            .collect(),
                    );
                }
            }
            Scheme::Consensus => {
                let g = self.consensus.as_ref().expect("graph prepared");
                for t in 0..total {
                    let x = g.average(&world.b_hat[t], cfg.baselines.consensus_rounds);
                    ip.push((0..n).map(|i| x[i].clamp(0.0, 1.0) * world.phi_tot[i]).collect());
                }
            }
            Scheme::Uncoordinated => return Ok(()),
        }
        self.ip = Some(ip);
        Ok(())
    }
}

/// Metrics of one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub t: usize,
    /// Analytic bound or fading success count, averaged over cells.
    pub mean_su_throughput: f64,
    /// Linear average INR at the PUs.
    pub inr: f64,
    pub mean_utility: f64,
    pub traffic: Vec<f64>,
}

impl FrameMetrics {
    pub fn inr_db(&self) -> f64 {
        crate::linear_to_db(self.inr)
    }
}

/// Control loop of one scheme at one grid point over a prepared world.
pub struct Simulation<'a> {
    world: &'a TrialWorld,
    prepared: &'a PreparedScheme,
    /// Lambda, or the access probability for the uncoordinated scheme.
    pub point: f64,
    params: ControlParams,
    population: Population,
    a_prev: Vec<f64>,
    a_buffers: Option<NodeBuffers>,
    fading_rng: SimRng,
    next: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(
        cfg: &'a ExperimentConfig,
        world: &'a TrialWorld,
        prepared: &'a PreparedScheme,
        point: f64,
        stream_path: &[u64],
    ) -> Result<Self, HarnessError> {
        let lambda = if prepared.variant.scheme == Scheme::Uncoordinated { 1.0 } else { point };
        let a_buffers = match (&prepared.tree, prepared.undelayed.is_some()) {
            (Some(tree), true) => Some(NodeBuffers::new(tree, 0.0)),
            _ => None,
        };
        Ok(Self {
            world,
            prepared,
            point,
            params: cfg.control_params(lambda)?,
            population: cfg.population(),
            a_prev: vec![0.0; world.n_cells()],
            a_buffers,
            fading_rng: stream(cfg.seed, stream_path),
            next: 0,
        })
    }

    /// SU interference estimate of cell `i` from the previous frame's traffic.
    fn su_interference(&self, i: usize, t: usize) -> Result<f64, HarnessError> {
        match (&self.a_buffers, &self.prepared.undelayed) {
            (Some(buf), Some(w)) if t > 0 => {
                let tree = self.prepared.tree.as_ref().expect("tree present");
                let sigma = aggregation::compute_sigma(tree, buf, i, t as u64 - 1)?;
                Ok(inference::estimate_is_hierarchical(&sigma, w, i))
            }
            (Some(_), Some(_)) => Ok(0.0),
            _ => Ok(inference::estimate_is_oracle(&self.world.phi, &self.a_prev, i)),
        }
    }

    /// Decides traffic for frame `t` and evaluates it. Frames must be run in order.
    pub fn run_frame(&mut self, t: usize) -> Result<FrameMetrics, HarnessError> {
        if t != self.next {
            return Err(HarnessError::Config(format!("frame {t} run out of order, expected {}", self.next)));
        }
        let world = self.world;
        let n = world.n_cells();
        let model = &world.model;
        let is_uncoordinated = self.prepared.variant.scheme == Scheme::Uncoordinated;

        let mut ip = Vec::with_capacity(n);
        let mut is_ = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        for i in 0..n {
            let phi_ii = world.phi.get(i, i);
            let ip_i = match &self.prepared.ip {
                Some(traj) => traj[t][i],
                None => model.pi_b * world.phi_tot[i],
            };
            let is_i = self.su_interference(i, t)?;
            let a_i = if is_uncoordinated {
                control::uncoordinated_traffic(self.point, self.population)
            } else {
                control::optimal_traffic(ip_i, is_i, self.population, phi_ii, model, &self.params)
            };
            ip.push(ip_i);
            is_.push(is_i);
            a.push(a_i);
        }

        let mut utility = 0.0;
        let mut bound = 0.0;
        for i in 0..n {
            let phi_ii = world.phi.get(i, i);
            bound += control::throughput_lb(a[i], self.population, ip[i], is_[i], phi_ii, &self.params);
            if !is_uncoordinated {
                utility += control::utility(a[i], ip[i], is_[i], self.population, phi_ii, model, &self.params);
            }
        }

        let (throughput, inr) = match &world.layout {
            Some(layout) => {
                let active: Vec<bool> = (0..layout.n_sus())
                    .map(|k| {
                        let p = a[layout.su_cell[k]] / layout.sus_per_cell as f64;
                        self.fading_rng.random_bool(p.clamp(0.0, 1.0))
                    })
                    .collect();
                let out = eval_fading_success(layout, &active, &world.b[t], self.params.sinr_th, &mut self.fading_rng);
                let succ = out.su_successes.iter().map(|&s| s as f64).sum::<f64>() / n as f64;
                let inr = if model.pi_b > 0.0 {
                    out.pu_interference / (n as f64 * model.pi_b)
                } else {
                    0.0
                };
                (succ, inr)
            }
            None => (bound / n as f64, control::network_inr(&a, &world.b[t], &world.phi, model).inr),
        };

        if let Some(buf) = &mut self.a_buffers {
            let tree = self.prepared.tree.as_ref().expect("tree present");
            aggregation::advance_frame(tree, buf, &a, t as u64)?;
        }
        self.a_prev.clone_from(&a);
        self.next += 1;
        Ok(FrameMetrics {
            t,
            mean_su_throughput: throughput,
            inr,
            mean_utility: utility / n as f64,
            traffic: a,
        })
    }
}

/// One (scheme, budget, grid point, trial) outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: String,
    pub cost_param: Option<f64>,
    pub lambda_or_ptx: f64,
    pub trial: usize,
    pub seed: u64,
    pub mean_su_throughput: f64,
    pub mean_inr: f64,
    pub mean_inr_db: f64,
    pub mean_utility: f64,
    pub agg_cost_per_cell: f64,
    pub frames: usize,
    pub n_cells: usize,
}

/// Trial-averaged outcome of one (scheme, budget, grid point).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub cost_param: Option<f64>,
    pub lambda_or_ptx: f64,
    pub seed: u64,
    pub trials: usize,
    pub mean_su_throughput: f64,
    pub se_su_throughput: f64,
    pub mean_inr: f64,
    pub mean_inr_db: f64,
    pub mean_utility: f64,
    pub agg_cost_per_cell: f64,
    pub frames: usize,
    pub n_cells: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl SweepResult {
    /// Rows grouped by (scheme, cost_param, grid point) in first-seen order.
    pub fn summary(&self, master_seed: u64) -> Vec<SummaryRow> {
        let mut keys: Vec<(String, Option<u64>, u64)> = Vec::new();
        for r in &self.rows {
            let key = (r.scheme.clone(), r.cost_param.map(f64::to_bits), r.lambda_or_ptx.to_bits());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.into_iter()
            .map(|(scheme, cost, point)| {
                let group: Vec<&SweepRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.scheme == scheme && r.cost_param.map(f64::to_bits) == cost && r.lambda_or_ptx.to_bits() == point)
                    .collect();
                let k = group.len() as f64;
                let (thr, se) = mean_se(group.iter().map(|r| r.mean_su_throughput));
                let inr = group.iter().map(|r| r.mean_inr).sum::<f64>() / k;
                SummaryRow {
                    scheme,
                    cost_param: cost.map(f64::from_bits),
                    lambda_or_ptx: f64::from_bits(point),
                    seed: master_seed,
                    trials: group.len(),
                    mean_su_throughput: thr,
                    se_su_throughput: se,
                    mean_inr: inr,
                    mean_inr_db: crate::linear_to_db(inr),
                    mean_utility: group.iter().map(|r| r.mean_utility).sum::<f64>() / k,
                    agg_cost_per_cell: group.iter().map(|r| r.agg_cost_per_cell).sum::<f64>() / k,
                    frames: group[0].frames,
                    n_cells: group[0].n_cells,
                }
            })
            .collect()
    }

    /// Rows of one scheme (and budget) for one trial, ordered by grid point.
    pub fn curve(&self, scheme: &str, cost_param: Option<f64>, trial: usize) -> Vec<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.scheme == scheme && r.cost_param == cost_param && r.trial == trial)
            .collect()
    }
}

/// Linear interpolation of throughput at `target_db` along a throughput
/// versus INR (dB) curve; `None` when the target is outside the curve.
pub fn throughput_at_inr(points: &[(f64, f64)], target_db: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = points.iter().copied().filter(|(x, _)| x.is_finite()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.is_empty() || target_db < pts[0].0 || target_db > pts[pts.len() - 1].0 {
        return None;
    }
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if target_db >= x0 && target_db <= x1 {
            if x1 == x0 {
                return Some(y0.max(y1));
            }
            return Some(y0 + (y1 - y0) * (target_db - x0) / (x1 - x0));
        }
    }
    Some(pts[0].1)
}

fn run_trial(cfg: &ExperimentConfig, variants: &[Variant], trial: usize) -> Result<Vec<SweepRow>, HarnessError> {
    let mut world = TrialWorld::build(cfg, trial)?;
    let mut prepared = variants
        .iter()
        .enumerate()
        .map(|(k, v)| PreparedScheme::new(cfg, &world, *v, k))
        .collect::<Result<Vec<_>, _>>()?;
    let warmup = prepared.iter().map(|p| p.warmup).max().unwrap_or(0);
    let total = warmup + cfg.frames;
    world.generate(cfg, total)?;
    for p in &mut prepared {
        p.estimate(cfg, &world)?;
    }

    let mut rows = Vec::new();
    for (k, p) in prepared.iter().enumerate() {
        for (g, &point) in cfg.grid_for(p.variant.scheme).iter().enumerate() {
            let mut sim = Simulation::new(cfg, &world, p, point, &[trial as u64, tag::FADING, k as u64, g as u64])?;
            let (mut thr, mut inr, mut util) = (0.0, 0.0, 0.0);
            for t in 0..total {
                let m = sim.run_frame(t)?;
                if t >= warmup {
                    thr += m.mean_su_throughput;
                    inr += m.inr;
                    util += m.mean_utility;
                }
            }
            let f = cfg.frames as f64;
            rows.push(SweepRow {
                scheme: p.variant.scheme.label().to_string(),
                cost_param: p.variant.cost_param,
                lambda_or_ptx: point,
                trial,
                seed: world.seed,
                mean_su_throughput: thr / f,
                mean_inr: inr / f,
                mean_inr_db: crate::linear_to_db(inr / f),
                mean_utility: util / f,
                agg_cost_per_cell: p.agg_cost,
                frames: cfg.frames,
                n_cells: world.n_cells(),
            });
        }
    }
    Ok(rows)
}

/// Runs every variant over all trials. Rows are ordered by variant, grid
/// point, then trial, independent of scheduling.
pub fn run_variants(cfg: &ExperimentConfig, variants: &[Variant]) -> Result<SweepResult, HarnessError> {
    cfg.validate()?;
    #[cfg(feature = "parallel")]
    let per_trial: Vec<Vec<SweepRow>> = {
        use rayon::prelude::*;
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, variants, t))
            .collect::<Result<_, _>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let per_trial: Vec<Vec<SweepRow>> = (0..cfg.trials).map(|t| run_trial(cfg, variants, t)).collect::<Result<_, _>>()?;

    // Each trial emits rows in (variant, grid point) order with equal counts.
    let per = per_trial.first().map_or(0, Vec::len);
    let mut rows = Vec::with_capacity(per * cfg.trials);
    for k in 0..per {
        for trial_rows in &per_trial {
            rows.push(trial_rows[k].clone());
        }
    }
    Ok(SweepResult { rows })
}

/// The configured schemes at their configured budgets.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SweepResult, HarnessError> {
    let variants: Vec<Variant> = cfg
        .schemes
        .iter()
        .map(|&scheme| Variant {
            scheme,
            budget: match scheme {
                Scheme::RadiusNsi => cfg.baselines.radius,
                s if s.uses_tree() => cfg.tree.c_max,
                _ => None,
            },
            cost_param: None,
        })
        .collect();
    run_variants(cfg, &variants)
}

/// Sweeps the tree budget for tree schemes and the radius for `radius_nsi`;
/// other configured schemes run once at their configured settings.
pub fn run_cost_sweep(cfg: &ExperimentConfig) -> Result<SweepResult, HarnessError> {
    let sweep = cfg
        .cost_sweep
        .as_ref()
        .ok_or_else(|| config_err("cost_sweep", "missing section"))?;
    let mut variants = Vec::new();
    for &scheme in &cfg.schemes {
        let grid: &[f64] = match scheme {
            s if s.uses_tree() => &sweep.c_max_grid,
            Scheme::RadiusNsi => &sweep.radius_grid,
            _ => &[],
        };
        if grid.is_empty() {
            variants.push(Variant {
                scheme,
                budget: None,
                cost_param: None,
            });
        } else {
            variants.extend(grid.iter().map(|&c| Variant {
                scheme,
                budget: Some(c),
                cost_param: Some(c),
            }));
        }
    }
    run_variants(cfg, &variants)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            trials: 2,
            frames: 20,
            topology: TopologySpec::grid(16, 400.0, 400.0, 1),
            control: ControlConfig {
                lambda_grid: vec![0.1, 10.0],
                p_tx_grid: vec![0.0, 0.05],
                ..ControlConfig::default()
            },
            schemes: vec![Scheme::Ibt, Scheme::Uncoordinated],
            ..ExperimentConfig::desk_default()
        }
    }

    #[test]
    fn grids() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        let l = logspace(-1.0, 1.0, 3);
        assert!((l[0] - 0.1).abs() < 1e-15 && (l[2] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let cfg = tiny();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 2 * 2 * 2);
    }

    #[test]
    fn zero_access_gives_zero_inr() {
        let cfg = tiny();
        let r = run_experiment(&cfg).unwrap();
        for row in r.rows.iter().filter(|r| r.scheme == "uncoordinated" && r.lambda_or_ptx == 0.0) {
            assert_eq!(row.mean_inr, 0.0);
            assert_eq!(row.mean_su_throughput, 0.0);
        }
    }

    #[test]
    fn validation_names_fields() {
        let mut cfg = tiny();
        cfg.frames = 0;
        assert!(cfg.validate().unwrap_err().to_string().contains("frames"));
        let mut cfg = tiny();
        cfg.occupancy.mu = Some(0.5);
        assert!(cfg.validate().unwrap_err().to_string().contains("occupancy"));
        let mut cfg = tiny();
        cfg.evaluation = EvalMode::FadingMc;
        assert!(cfg.validate().unwrap_err().to_string().contains("population"));
    }

    #[test]
    fn interpolation() {
        let pts = [(-2.0, 1.0), (2.0, 3.0), (0.0, 2.5)];
        assert_eq!(throughput_at_inr(&pts, 0.0), Some(2.5));
        assert_eq!(throughput_at_inr(&pts, 1.0), Some(2.75));
        assert_eq!(throughput_at_inr(&pts, 3.0), None);
    }

    #[test]
    fn single_link_closed_form() {
        let mut rng = stream(11, &[]);
        let th = 2.0;
        let draws = 100_000;
        let hits = (0..draws).filter(|_| sinr_success(10.0, &[], th, &mut rng)).count() as f64 / draws as f64;
        let p = (-th / 10.0f64).exp();
        assert!((hits - p).abs() < 3.0 * (p * (1.0 - p) / draws as f64).sqrt());
    }
}
