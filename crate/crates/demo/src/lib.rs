//! Browser bindings. Each export takes plain numbers and returns JSON; the
//! `*_json` functions hold the logic so they can be tested natively.

use msense::control::{self, ControlParams, Population};
use msense::harness::{self, ExperimentConfig, Scheme};
use msense::hierarchy::{self, TreeParams};
use msense::rng::{stream, tag};
use msense::topology::{self, PathlossParams, TopologySpec};
use msense::OccupancyModel;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Rect {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Serialize)]
struct TreeView {
    width: f64,
    height: f64,
    centers: Vec<(f64, f64)>,
    blockages: Vec<Rect>,
    /// `levels[l]` lists clusters as (head cell, members).
    levels: Vec<Vec<(usize, Vec<usize>)>>,
    depth: usize,
    cost_per_cell: f64,
    max_delay: u32,
}

/// Builds a grid topology and its interference-matched (or random) tree.
pub fn tree_json(side: usize, n_blockages: usize, seed: u64, gamma_delay: f64, c_max: f64, random: bool) -> Result<String, String> {
    let n = side * side;
    let extent = 100.0 * side as f64;
    let spec = TopologySpec::grid(n, extent, extent, n_blockages);
    let topo = topology::build_topology(&spec, &mut stream(seed, &[0, tag::TOPOLOGY]), seed).map_err(|e| e.to_string())?;
    let phi = topology::compute_phi(&topo, &PathlossParams::default()).map_err(|e| e.to_string())?;
    let params = TreeParams {
        gamma_delay,
        c_max: if c_max > 0.0 { c_max } else { f64::INFINITY },
    };
    let tree = if random {
        hierarchy::build_random_tree(&topo, &params, &mut stream(seed, &[0, tag::TREE, 0]))
    } else {
        hierarchy::build_ibt(&topo, &phi, OccupancyModel::reference().mu, &params)
    }
    .map_err(|e| e.to_string())?;
    let view = TreeView {
        width: topo.area.0,
        height: topo.area.1,
        centers: topo.centers.iter().map(|p| (p.x, p.y)).collect(),
        blockages: topo
            .blockages
            .iter()
            .map(|b| Rect {
                x: b.center.x,
                y: b.center.y,
                w: b.width,
                h: b.height,
            })
            .collect(),
        levels: tree
            .levels()
            .iter()
            .map(|lvl| lvl.iter().map(|c| (c.head_site, c.members.clone())).collect())
            .collect(),
        depth: tree.depth(),
        cost_per_cell: tree.cost_per_cell(),
        max_delay: tree.max_delay(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Curve {
    traffic: Vec<f64>,
    throughput: Vec<f64>,
    utility: Vec<f64>,
    optimal: f64,
    optimal_utility: f64,
}

/// Throughput bound and utility of one cell as its traffic varies.
pub fn curve_json(ip: f64, is_: f64, m: u32, lambda: f64, phi_ii_db: f64) -> Result<String, String> {
    if m == 0 {
        return Err("m must be at least 1".into());
    }
    let model = OccupancyModel::reference();
    let params = ControlParams::new(lambda, 10f64.powf(0.5)).map_err(|e| e.to_string())?;
    let pop = Population::Finite(m);
    let phi_ii = 10f64.powf(phi_ii_db / 10.0);
    let traffic = harness::linspace(0.0, m as f64, 201);
    let optimal = control::optimal_traffic(ip, is_, pop, phi_ii, &model, &params);
    let curve = Curve {
        throughput: traffic.iter().map(|&a| control::throughput_lb(a, pop, ip, is_, phi_ii, &params)).collect(),
        utility: traffic.iter().map(|&a| control::utility(a, ip, is_, pop, phi_ii, &model, &params)).collect(),
        traffic,
        optimal,
        optimal_utility: control::utility(optimal, ip, is_, pop, phi_ii, &model, &params),
    };
    serde_json::to_string(&curve).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SchemeCurve {
    scheme: String,
    inr_db: Vec<f64>,
    throughput: Vec<f64>,
}

/// A small throughput versus INR sweep on a 4x4 grid.
pub fn tradeoff_json(n_blockages: usize, seed: u64, trials: usize, frames: usize) -> Result<String, String> {
    let mut cfg = ExperimentConfig::desk_default();
    cfg.seed = seed;
    cfg.trials = trials.max(1);
    cfg.frames = frames.max(1);
    cfg.topology = TopologySpec::grid(16, 400.0, 400.0, n_blockages);
    cfg.schemes = vec![Scheme::FullNsi, Scheme::Ibt, Scheme::Rt, Scheme::Uncoordinated];
    cfg.control.lambda_grid = harness::logspace(-3.0, 0.0, 10);
    cfg.control.p_tx_grid = harness::logspace(-4.0, -1.0, 10);
    let res = harness::run_experiment(&cfg).map_err(|e| e.to_string())?;
    let summary = res.summary(seed);
    let curves: Vec<SchemeCurve> = cfg
        .schemes
        .iter()
        .map(|s| {
            let rows: Vec<_> = summary.iter().filter(|r| r.scheme == s.label()).collect();
            SchemeCurve {
                scheme: s.label().to_string(),
                inr_db: rows.iter().map(|r| r.mean_inr_db).collect(),
                throughput: rows.iter().map(|r| r.mean_su_throughput).collect(),
            }
        })
        .collect();
    serde_json::to_string(&curves).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn build_tree(side: usize, n_blockages: usize, seed: u64, gamma_delay: f64, c_max: f64, random: bool) -> Result<String, JsValue> {
    tree_json(side, n_blockages, seed, gamma_delay, c_max, random).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn traffic_curve(ip: f64, is_: f64, m: u32, lambda: f64, phi_ii_db: f64) -> Result<String, JsValue> {
    curve_json(ip, is_, m, lambda, phi_ii_db).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn tradeoff(n_blockages: usize, seed: u64, trials: usize, frames: usize) -> Result<String, JsValue> {
    tradeoff_json(n_blockages, seed, trials, frames).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn tree_view_covers_all_cells() {
        let v: Value = serde_json::from_str(&tree_json(4, 2, 1, 0.0, 0.0, false).unwrap()).unwrap();
        assert_eq!(v["centers"].as_array().unwrap().len(), 16);
        let top = v["levels"].as_array().unwrap().last().unwrap().as_array().unwrap();
        assert_eq!(top.len(), 1);
        assert_eq!(top[0][1].as_array().unwrap().len(), 16);
        assert_eq!(v["blockages"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn curve_peaks_at_reported_optimum() {
        let v: Value = serde_json::from_str(&curve_json(0.05, 0.1, 10, 0.05, 15.0).unwrap()).unwrap();
        let best = v["utility"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).fold(f64::NEG_INFINITY, f64::max);
        assert!(v["optimal_utility"].as_f64().unwrap() >= best - 1e-12);
        assert!(curve_json(0.05, 0.1, 0, 0.05, 15.0).is_err());
    }

    #[test]
    fn tradeoff_returns_one_curve_per_scheme() {
        let v: Value = serde_json::from_str(&tradeoff_json(1, 3, 1, 20).unwrap()).unwrap();
        let curves = v.as_array().unwrap();
        assert_eq!(curves.len(), 4);
        assert!(curves.iter().all(|c| c["throughput"].as_array().unwrap().len() == 10));
    }
}
