//! Structural properties across modules.

#![allow(clippy::needless_range_loop)]

use msense::aggregation::{self, NodeBuffers};
use msense::control::{self, ControlParams, Population};
use msense::dynamics::OccupancyModel;
use msense::hierarchy::{self, AggregationTree, TreeParams};
use msense::inference;
use msense::rng::stream;
use msense::sensing;
use msense::topology::{self, InterferenceMatrix, NetworkTopology, PathlossParams, TopologySpec};
use msense::SensorModel;
use proptest::prelude::*;
use rand::Rng;

fn grid(n: usize, side_m: f64, blockages: usize, seed: u64) -> (NetworkTopology, InterferenceMatrix) {
    let k = (n as f64).sqrt();
    let spec = TopologySpec::grid(n, k * side_m, k * side_m, blockages);
    let topo = topology::build_topology(&spec, &mut stream(seed, &[0]), seed).unwrap();
    let phi = topology::compute_phi(&topo, &PathlossParams::default()).unwrap();
    (topo, phi)
}

fn tree(topo: &NetworkTopology, phi: &InterferenceMatrix, gamma: f64) -> AggregationTree {
    let params = TreeParams {
        gamma_delay: gamma,
        c_max: f64::INFINITY,
    };
    hierarchy::build_ibt(topo, phi, OccupancyModel::reference().mu, &params).unwrap()
}

#[test]
fn phi_is_symmetric_and_blockages_only_lower_it() {
    for seed in 0..5 {
        let (topo, phi) = grid(64, 100.0, 6, seed);
        assert!(phi.is_symmetric());
        let clear = NetworkTopology::from_parts(topo.kind, topo.seed, topo.area, topo.cell_radius, topo.centers.clone(), vec![]).unwrap();
        let phi_clear = topology::compute_phi(&clear, &PathlossParams::default()).unwrap();
        for i in 0..64 {
            for j in 0..64 {
                assert!(phi_clear.get(i, j) >= phi.get(i, j));
            }
        }
    }
}

#[test]
fn phi_decreases_with_distance_along_a_row() {
    let (_, phi) = grid(64, 100.0, 0, 0);
    for j in 1..7 {
        assert!(phi.get(0, j) > phi.get(0, j + 1));
    }
}

proptest! {
    #[test]
    fn k_step_is_a_semigroup(nu1 in 0.0..0.5f64, nu0 in 0.0..0.5f64, b in 0.0..=1.0f64, j in 0u32..20, k in 0u32..20) {
        prop_assume!(nu1 + nu0 > 0.0);
        let m = OccupancyModel::new(nu1, nu0).unwrap();
        let two = m.k_step_marginal(m.k_step_marginal(b, j), k);
        prop_assert!((two - m.k_step_marginal(b, j + k)).abs() <= 1e-14);
        let mut p = b;
        for _ in 0..j {
            p = m.step_prob(p);
        }
        prop_assert!((p - m.k_step_marginal(b, j)).abs() <= 1e-12);
    }

    #[test]
    fn posterior_increases_with_detections(eps_f in 0.0..0.45f64, eps_m in 0.0..0.45f64, prior in 0.01..0.99f64, m in 1u32..12) {
        let sensor = SensorModel::new(eps_f, eps_m).unwrap();
        let mut last = -1.0;
        for xi in 0..=m {
            let p = sensing::posterior_update(&sensor, prior, xi, m).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn interference_estimate_is_affine_in_aggregates(seed in 0u64..50, scale in 0.0..1.0f64) {
        let (topo, phi) = grid(16, 100.0, 1, seed);
        let t = tree(&topo, &phi, 0.01);
        let model = OccupancyModel::reference();
        let w = inference::compute_weights(&t, &phi, model.mu).unwrap();
        let i = (seed % 16) as usize;
        let sizes = &w.ring_size[i];
        // Keep every ring near the prior so the non-negativity clamp is inactive.
        let at = |f: f64| sizes.iter().map(|&s| s as f64 * (model.pi_b + f * 0.01)).collect::<Vec<_>>();
        let (s0, s1) = (at(0.0), at(1.0));
        let mix: Vec<f64> = s0.iter().zip(&s1).map(|(a, b)| (1.0 - scale) * a + scale * b).collect();
        let e = |s: &[f64]| inference::estimate_ip_cell(s, &w, i, &model);
        let expected = (1.0 - scale) * e(&s0) + scale * e(&s1);
        prop_assert!((e(&mix) - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        // At the prior the estimate is the prior times the total coupling.
        prop_assert!((e(&s0) - model.pi_b * w.phi_tot[i]).abs() <= 1e-12);
    }
}

#[test]
fn levels_refine_and_delays_accumulate() {
    for seed in 0..4 {
        let (topo, phi) = grid(64, 100.0, 1, seed);
        let t = tree(&topo, &phi, 0.015);
        t.validate().unwrap();
        for l in 1..=t.depth() {
            for i in 0..64 {
                for j in 0..64 {
                    if t.cluster_of(l - 1, i) == t.cluster_of(l - 1, j) {
                        assert_eq!(t.cluster_of(l, i), t.cluster_of(l, j));
                    }
                }
                let below = t.cluster_of(l - 1, i);
                let edge = t.level(l - 1)[below].edge_delay;
                assert_eq!(t.delay(i, l), t.delay(i, l - 1) + edge);
            }
        }
        assert_eq!(t.level(t.depth()).len(), 1);
    }
}

#[test]
fn merge_benefit_equals_new_ring_coupling() {
    // Without delay, the benefit of a merge is the coupling its cells gain
    // in the ring it creates.
    let (topo, phi) = grid(64, 100.0, 1, 3);
    let t = tree(&topo, &phi, 0.0);
    let w = inference::compute_weights(&t, &phi, 1.0).unwrap();
    let mut merges = 0;
    for l in 1..=t.depth() {
        for c in t.level(l) {
            if c.children.len() != 2 {
                continue;
            }
            let lower = t.level(l - 1);
            let (a, b) = (&lower[c.children[0]].members, &lower[c.children[1]].members);
            let gamma = hierarchy::gamma_metric(&phi, a, b, |_| 0, 0, 1.0);
            let gained: f64 = c.members.iter().map(|&i| w.phi_del[i][l]).sum();
            assert!((gamma - gained).abs() <= 1e-9 * gamma.max(1.0), "level {l}: {gamma} vs {gained}");
            merges += 1;
        }
    }
    assert!(merges >= 63);
}

#[test]
fn ring_aggregates_are_delayed_ring_sums() {
    let (topo, phi) = grid(64, 100.0, 1, 5);
    let t = tree(&topo, &phi, 0.02);
    let fill = 0.05;
    let mut buf = NodeBuffers::new(&t, fill);
    let mut rng = stream(5, &[1]);
    let frames = 60;
    let mut hist: Vec<Vec<f64>> = Vec::new();
    for f in 0..frames {
        let local: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        aggregation::advance_frame(&t, &mut buf, &local, f as u64).unwrap();
        hist.push(local);
        for i in 0..64 {
            let sigma = aggregation::compute_sigma(&t, &buf, i, f as u64).unwrap();
            for (l, ring) in t.ring_sets(i).unwrap().iter().enumerate() {
                let direct: f64 = ring
                    .iter()
                    .map(|&j| (f as i64 - t.delay(j, l) as i64).try_into().map_or(fill, |s: usize| hist[s][j]))
                    .sum();
                assert!((sigma[l] - direct).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn network_inr_is_the_mean_of_cell_terms() {
    let (_, phi) = grid(16, 100.0, 1, 2);
    let model = OccupancyModel::reference();
    let mut rng = stream(2, &[1]);
    for _ in 0..50 {
        let a: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..3.0)).collect();
        let b: Vec<u8> = (0..16).map(|_| rng.random_bool(0.3) as u8).collect();
        let res = control::network_inr(&a, &b, &phi, &model);
        let mut total = 0.0;
        for i in 0..16 {
            let term = a[i] * (0..16).map(|j| phi.get(i, j) * b[j] as f64).sum::<f64>() / model.pi_b;
            assert!((res.per_cell[i] - term).abs() <= 1e-9 * term.max(1.0));
            total += term;
        }
        assert!((res.inr - total / 16.0).abs() <= 1e-9 * res.inr.max(1.0));
    }
}

#[test]
fn exact_beliefs_are_distributions_with_closed_form_means() {
    let model = OccupancyModel::new(0.1, 0.2).unwrap();
    let mut rng = stream(9, &[1]);
    for _ in 0..100 {
        let delays: Vec<u32> = (0..8).map(|_| rng.random_range(0..=2)).collect();
        let t = AggregationTree::from_partitions(4, &[vec![vec![0, 1], vec![2, 3]], vec![vec![0, 1, 2, 3]]], |l, c| delays[l * 4 + c]).unwrap();
        let i = rng.random_range(0..4);
        let rings = t.ring_sets(i).unwrap();
        let sigma: Vec<f64> = rings.iter().map(|r| rng.random_range(0..=r.len()) as f64).collect();
        let belief = inference::exact_belief(&t, i, &sigma, &model).unwrap();
        assert!((belief.total() - 1.0).abs() <= 1e-12);
        assert!(belief.probs().iter().all(|&p| p >= 0.0));
        // Averaging the closed-form marginal over the aggregate's law returns the prior.
        for (l, ring) in rings.iter().enumerate() {
            let n = ring.len();
            let mean: f64 = (0..=n)
                .map(|x| {
                    let c = (0..x).fold(1.0, |acc, k| acc * (n - k) as f64 / (k + 1) as f64);
                    c * model.pi_b.powi(x as i32) * (1.0 - model.pi_b).powi((n - x) as i32)
                        * inference::marginal_occupancy(x as f64, n, t.delay(ring[0], l), &model)
                })
                .sum();
            assert!((mean - model.pi_b).abs() <= 1e-12);
        }
    }
}

#[test]
fn optimal_traffic_edge_cases() {
    let model = OccupancyModel::reference();
    let params = ControlParams::new(0.1, 3.16).unwrap();
    let pop = Population::Finite(10);
    assert_eq!(control::optimal_traffic(0.0, 0.0, pop, 31.6, &model, &params), 10.0);
    let busy = control::optimal_traffic(1.0, 0.0, pop, 31.6, &model, &params);
    assert!(busy < control::optimal_traffic(0.01, 0.0, pop, 31.6, &model, &params));
    let empty = OccupancyModel::new(0.0, 0.0).unwrap();
    assert_eq!(control::optimal_traffic(0.5, 0.0, pop, 31.6, &empty, &params), 0.0);
}
