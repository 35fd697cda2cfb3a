//! Fast self-checks run by `msense validate`.

use rand::Rng;
use serde::Serialize;

use crate::aggregation::{self, NodeBuffers};
use crate::control::{self, ControlParams, Population};
use crate::dynamics::OccupancyModel;
use crate::hierarchy::{self, AggregationTree, TreeParams};
use crate::inference;
use crate::rng::stream;
use crate::topology::{self, InterferenceMatrix, PathlossParams, TopologySpec};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Largest observed deviation from the reference (or violation count).
    pub max_deviation: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, max_deviation: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name,
            passed: max_deviation <= tolerance,
            max_deviation,
            tolerance,
            detail,
        }
    }
}

/// Runs every check with the given occupancy model and seed.
pub fn run_all(model: &OccupancyModel, seed: u64) -> Vec<CheckResult> {
    vec![
        aggregate_identity(model, seed),
        ring_marginals(model, seed),
        traffic_optimality(model, seed, 200),
        jensen_throughput(seed),
        jensen_utility(model, seed),
    ]
}

/// Aggregates at every head equal the sum of delayed local estimates.
pub fn aggregate_identity(model: &OccupancyModel, seed: u64) -> CheckResult {
    let spec = TopologySpec::grid(16, 400.0, 400.0, 1);
    let topo = topology::build_topology(&spec, &mut stream(seed, &[1]), seed).expect("valid spec");
    let phi = topology::compute_phi(&topo, &PathlossParams::default()).expect("valid pathloss");
    let params = TreeParams {
        gamma_delay: 0.01,
        c_max: f64::INFINITY,
    };
    let tree = hierarchy::build_ibt(&topo, &phi, model.mu, &params).expect("valid tree");
    let frames = 200;
    let mut rng = stream(seed, &[2]);
    let locals: Vec<Vec<f64>> = (0..frames).map(|_| (0..16).map(|_| rng.random::<f64>()).collect()).collect();
    let mut buf = NodeBuffers::new(&tree, model.pi_b);
    let mut worst: f64 = 0.0;
    for t in 0..frames {
        aggregation::advance_frame(&tree, &mut buf, &locals[t], t as u64).expect("in-order frames");
        for l in 0..=tree.depth() {
            for (m, c) in tree.level(l).iter().enumerate() {
                let direct: f64 = c
                    .members
                    .iter()
                    .map(|&j| {
                        let d = tree.delay(j, l) as usize;
                        t.checked_sub(d).map_or(model.pi_b, |s| locals[s][j])
                    })
                    .sum();
                let s = buf.read(&tree, l, m, t as i64).expect("buffered");
                worst = worst.max((s - direct).abs());
            }
        }
    }
    CheckResult::new(
        "aggregate identity",
        worst,
        1e-9,
        format!("16-cell tree of depth {}, {frames} frames", tree.depth()),
    )
}

fn random_four_cell_tree<R: Rng>(rng: &mut R) -> AggregationTree {
    let mut cells = [0usize, 1, 2, 3];
    for k in (1..4).rev() {
        cells.swap(k, rng.random_range(0..=k));
    }
    let l1 = vec![vec![cells[0], cells[1]], vec![cells[2], cells[3]]];
    let delays: Vec<u32> = (0..6).map(|_| rng.random_range(0..=1)).collect();
    AggregationTree::from_partitions(4, &[l1, vec![vec![0, 1, 2, 3]]], |l, c| delays[l * 4 + c]).expect("valid partitions")
}

/// Exact enumerated marginals agree with the closed-form ring marginal.
pub fn ring_marginals(model: &OccupancyModel, seed: u64) -> CheckResult {
    let mut rng = stream(seed, &[3]);
    let mut worst: f64 = 0.0;
    let instances = 100;
    for _ in 0..instances {
        let tree = random_four_cell_tree(&mut rng);
        let i = rng.random_range(0..4);
        let rings = tree.ring_sets(i).expect("valid cell");
        let sigma: Vec<f64> = rings.iter().map(|r| rng.random_range(0..=r.len()) as f64).collect();
        let belief = inference::exact_belief(&tree, i, &sigma, model).expect("feasible counts");
        for (l, ring) in rings.iter().enumerate() {
            for &j in ring {
                let closed = inference::marginal_occupancy(sigma[l], ring.len(), tree.delay(j, l), model);
                worst = worst.max((belief.marginal(j) - closed).abs());
            }
        }
    }
    CheckResult::new(
        "enumerated vs closed-form marginals",
        worst,
        1e-12,
        format!("{instances} random 4-cell instances"),
    )
}

/// Maximizer of a concave function sampled on a grid of step `fine`:
/// scan a coarse grid, then the fine grid around the coarse winner.
pub fn grid_argmax(f: impl Fn(f64) -> f64, hi: f64, coarse: f64, fine: f64) -> f64 {
    let scan = |lo: f64, hi: f64, step: f64| {
        let n = ((hi - lo) / step).round() as usize;
        let mut best = (f64::NEG_INFINITY, lo);
        for k in 0..=n {
            let x = (lo + k as f64 * step).min(hi);
            let v = f(x);
            if v > best.0 {
                best = (v, x);
            }
        }
        best.1
    };
    let c = scan(0.0, hi, coarse);
    scan((c - coarse).max(0.0), (c + coarse).min(hi), fine)
}

/// Closed-form traffic against a numerical maximization of the utility.
pub fn traffic_optimality(model: &OccupancyModel, seed: u64, draws: usize) -> CheckResult {
    let mut rng = stream(seed, &[4]);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let m = rng.random_range(2..=10u32);
        let pop = Population::Finite(m);
        let params = ControlParams::new(10f64.powf(rng.random_range(-3.0..2.0)), 10f64.powf(rng.random_range(-0.5..1.0))).expect("positive");
        let phi_ii = 10f64.powf(rng.random_range(0.5..2.0));
        let ip = 10f64.powf(rng.random_range(-4.0..0.5));
        let is_ = rng.random_range(0.0..2.0);
        let closed = control::optimal_traffic(ip, is_, pop, phi_ii, model, &params);
        let grid = grid_argmax(|a| control::utility(a, ip, is_, pop, phi_ii, model, &params), m as f64, 1e-3, 1e-6);
        worst = worst.max((closed - grid).abs() / m as f64);
    }
    CheckResult::new("optimal traffic vs grid search", worst, 1e-4, format!("{draws} random draws, error relative to M"))
}

/// The throughput bound never exceeds the enumerated expectation.
pub fn jensen_throughput(seed: u64) -> CheckResult {
    let mut rng = stream(seed, &[5]);
    let mut violations = 0usize;
    let mut checked = 0usize;
    let params = ControlParams::new(1.0, 10f64.powf(0.5)).expect("positive");
    for m0 in 1..=5u32 {
        for m1 in 1..=5u32 {
            for _ in 0..20 {
                let d = rng.random_range(0.2..0.9);
                let phi = InterferenceMatrix::from_rows(2, vec![31.6, 31.6 * d * d, 31.6 * d * d, 31.6]);
                let m = [m0, m1];
                let a = [rng.random_range(0.0..=m0 as f64), rng.random_range(0.0..=m1 as f64)];
                let b = [rng.random_range(0..=1u8), rng.random_range(0..=1u8)];
                for i in 0..2 {
                    let exact = control::exact_throughput(&a, &b, &m, &phi, &params, i).expect("small instance");
                    let pop = Population::Finite(m[i]);
                    let ip: f64 = (0..2).map(|j| phi.coupling(j, i) * b[j] as f64).sum();
                    let is_ = phi.coupling(1 - i, i) * a[1 - i];
                    let lb = control::throughput_lb(a[i], pop, ip, is_, phi.get(i, i), &params);
                    checked += 1;
                    if lb > exact * (1.0 + 1e-12) {
                        violations += 1;
                    }
                }
            }
        }
    }
    CheckResult::new("throughput bound below exact", violations as f64, 0.0, format!("{checked} cell instances"))
}

/// Optimal utility at the belief mean never exceeds its belief average.
pub fn jensen_utility(model: &OccupancyModel, seed: u64) -> CheckResult {
    let mut rng = stream(seed, &[6]);
    let mut violations = 0usize;
    let spec = TopologySpec::grid(4, 200.0, 200.0, 0);
    let topo = topology::build_topology(&spec, &mut stream(seed, &[7]), seed).expect("valid spec");
    let phi = topology::compute_phi(&topo, &PathlossParams::default()).expect("valid pathloss");
    let instances = 50;
    for _ in 0..instances {
        let tree = random_four_cell_tree(&mut rng);
        let i = rng.random_range(0..4);
        let rings = tree.ring_sets(i).expect("valid cell");
        let sigma: Vec<f64> = rings.iter().map(|r| rng.random_range(0..=r.len()) as f64).collect();
        let belief = inference::exact_belief(&tree, i, &sigma, model).expect("feasible counts");
        let params = ControlParams::new(10f64.powf(rng.random_range(-3.0..1.0)), 10f64.powf(0.5)).expect("positive");
        let pop = Population::Finite(10);
        let phi_ii = phi.get(i, i);
        let best = |ip: f64| {
            let a = control::optimal_traffic(ip, 0.0, pop, phi_ii, model, &params);
            control::utility(a, ip, 0.0, pop, phi_ii, model, &params)
        };
        let ip_of = |mask: usize| (0..4).map(|j| phi.coupling(j, i) * (mask >> j & 1) as f64).sum::<f64>();
        let mean_ip: f64 = belief.expect(ip_of);
        let averaged = belief.expect(|mask| best(ip_of(mask)));
        if best(mean_ip) > averaged + 1e-12 * averaged.abs().max(1.0) {
            violations += 1;
        }
    }
    CheckResult::new("utility bound under exact beliefs", violations as f64, 0.0, format!("{instances} instances"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_reference_model() {
        for c in run_all(&OccupancyModel::reference(), 7) {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn grid_argmax_finds_peak() {
        let x = grid_argmax(|a| -(a - 3.217_3).powi(2), 10.0, 1e-3, 1e-6);
        assert!((x - 3.217_3).abs() <= 1e-6);
    }
}
