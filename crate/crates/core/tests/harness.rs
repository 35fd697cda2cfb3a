//! Frame loop and experiment runner behavior.

#![allow(clippy::needless_range_loop)]

use msense::harness::{self, ExperimentConfig, PreparedScheme, Scheme, Simulation, TrialWorld, Variant};
use msense::inference;
use msense::{OccupancyModel, SensorModel};

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk_default();
    cfg.trials = 2;
    cfg.frames = 40;
    cfg.topology = msense::topology::TopologySpec::grid(16, 400.0, 400.0, 1);
    cfg.control.lambda_grid = vec![0.01, 0.1];
    cfg.control.p_tx_grid = vec![0.01, 0.1];
    cfg
}

fn variant(scheme: Scheme) -> Variant {
    Variant {
        scheme,
        budget: None,
        cost_param: None,
    }
}

fn run(cfg: &ExperimentConfig, world: &TrialWorld, prepared: &PreparedScheme, point: f64, frames: usize) -> Vec<Vec<f64>> {
    let mut sim = Simulation::new(cfg, world, prepared, point, &[0]).unwrap();
    (0..frames).map(|t| sim.run_frame(t).unwrap().traffic).collect()
}

#[test]
fn rows_are_reproducible() {
    let mut cfg = small();
    cfg.schemes.push(Scheme::Consensus);
    let a = harness::run_experiment(&cfg).unwrap();
    let b = harness::run_experiment(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), cfg.trials * (4 * 2 + 2));
    for r in &a.rows {
        assert!(r.mean_su_throughput >= 0.0 && r.mean_inr >= 0.0);
    }
}

#[test]
fn empty_spectrum_saturates_traffic() {
    let mut cfg = small();
    cfg.occupancy.nu1 = 0.0;
    cfg.occupancy.nu0 = 0.0;
    let mut world = TrialWorld::build(&cfg, 0).unwrap();
    world.generate(&cfg, 10).unwrap();
    assert!(world.b.iter().flatten().all(|&x| x == 0));
    for scheme in [Scheme::FullNsi, Scheme::Ibt] {
        let mut p = PreparedScheme::new(&cfg, &world, variant(scheme), 0).unwrap();
        p.estimate(&cfg, &world).unwrap();
        for a in run(&cfg, &world, &p, 0.1, 10) {
            assert!(a.iter().all(|&x| x == 10.0), "{scheme:?}: {a:?}");
        }
    }
}

#[test]
fn full_knowledge_without_delay_matches_unbounded_radius() {
    let mut cfg = small();
    cfg.tree.gamma_delay = 0.0;
    cfg.schemes = vec![Scheme::FullNsi, Scheme::RadiusNsi];
    let res = harness::run_experiment(&cfg).unwrap();
    let pick = |s: &str| res.rows.iter().filter(|r| r.scheme == s).map(|r| (r.mean_su_throughput, r.mean_inr)).collect::<Vec<_>>();
    let (full, radius) = (pick("full_nsi"), pick("radius_nsi"));
    for (f, r) in full.iter().zip(&radius) {
        assert!((f.0 - r.0).abs() <= 1e-12 && (f.1 - r.1).abs() <= 1e-12);
    }
}

#[test]
fn traffic_never_depends_on_future_frames() {
    let mut cfg = small();
    cfg.sensor = SensorModel::new(0.1, 0.1).unwrap();
    cfg.tree.gamma_delay = 0.01;
    let mut world = TrialWorld::build(&cfg, 0).unwrap();
    world.generate(&cfg, 30).unwrap();
    let cut = 15;
    let mut altered = TrialWorld::build(&cfg, 0).unwrap();
    altered.generate(&cfg, 30).unwrap();
    for t in cut + 1..30 {
        altered.b[t].iter_mut().for_each(|x| *x = 1 - *x);
        altered.b_hat[t].iter_mut().for_each(|x| *x = 1.0 - *x);
    }
    for scheme in [Scheme::Ibt, Scheme::FullNsi, Scheme::Consensus] {
        let mut p = PreparedScheme::new(&cfg, &world, variant(scheme), 0).unwrap();
        p.estimate(&cfg, &world).unwrap();
        let mut q = PreparedScheme::new(&cfg, &altered, variant(scheme), 0).unwrap();
        q.estimate(&cfg, &altered).unwrap();
        let (x, y) = (run(&cfg, &world, &p, 0.05, 30), run(&cfg, &altered, &q, 0.05, 30));
        assert_eq!(x[..=cut], y[..=cut], "{scheme:?}");
    }
}

#[test]
fn estimates_after_warmup_use_only_real_frames() {
    let mut cfg = small();
    cfg.sensor = SensorModel::new(0.1, 0.1).unwrap();
    cfg.tree.gamma_delay = 0.02;
    let mut world = TrialWorld::build(&cfg, 0).unwrap();
    let mut p = PreparedScheme::new(&cfg, &world, variant(Scheme::Ibt), 0).unwrap();
    let total = p.warmup + 20;
    world.generate(&cfg, total).unwrap();
    p.estimate(&cfg, &world).unwrap();
    let tree = p.tree.as_ref().unwrap();
    assert_eq!(p.warmup, tree.max_delay() as usize);
    assert!(p.warmup > 0);
    let model: &OccupancyModel = &world.model;
    let w = inference::compute_weights(tree, &world.phi, model.mu).unwrap();
    let ip = p.ip.as_ref().unwrap();
    for t in p.warmup..total {
        for i in 0..16 {
            let sigma: Vec<f64> = tree
                .ring_sets(i)
                .unwrap()
                .iter()
                .enumerate()
                .map(|(l, ring)| ring.iter().map(|&j| world.b_hat[t - tree.delay(j, l) as usize][j]).sum())
                .collect();
            let direct = inference::estimate_ip_cell(&sigma, &w, i, model);
            assert!((ip[t][i] - direct).abs() <= 1e-9, "frame {t} cell {i}");
        }
    }
}

#[test]
fn invalid_configs_name_the_field() {
    let mut cfg = small();
    cfg.control.lambda_grid.clear();
    let err = harness::run_experiment(&cfg).unwrap_err().to_string();
    assert!(err.contains("control.lambda_grid"), "{err}");
    let mut cfg = small();
    cfg.frames = 0;
    assert!(harness::run_experiment(&cfg).unwrap_err().to_string().contains("frames"));
}

#[test]
fn interpolation_at_reference_inr() {
    let pts = [(-4.0, 0.1), (2.0, 0.4), (6.0, 0.5)];
    assert!((harness::throughput_at_inr(&pts, 0.0).unwrap() - 0.3).abs() < 1e-12);
    assert_eq!(harness::throughput_at_inr(&pts, 7.0), None);
}
