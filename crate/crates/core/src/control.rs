//! Per-cell traffic control and baseline network-state policies.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::OccupancyModel;
use crate::inference::ring_weight;
use crate::topology::{InterferenceMatrix, NetworkTopology};

/// Enumeration budget for [`exact_throughput`].
pub const MAX_ENUMERATION: u64 = 20_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("lambda must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("SINR threshold must be positive and finite, got {0}")]
    BadThreshold(f64),
    #[error("instance needs {0} terms, above the enumeration budget")]
    TooLarge(u64),
    #[error("per-cell inputs have mismatched lengths")]
    LengthMismatch,
    #[error("traffic {a} outside [0, {m}] in cell {cell}")]
    TrafficOutOfRange { cell: usize, a: f64, m: u32 },
    #[error("cannot build a connected graph of degree {degree} on {n} nodes after {tries} attempts")]
    Disconnected { n: usize, degree: usize, tries: usize },
}

/// Number of SUs in a cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    Finite(u32),
    /// Many SUs: `1/M` is taken as 0 and traffic is capped at `a_max`.
    Dense { a_max: f64 },
}

impl Population {
    pub fn inv_count(&self) -> f64 {
        match *self {
            Population::Finite(m) => 1.0 / m as f64,
            Population::Dense { .. } => 0.0,
        }
    }

    /// Upper clip on the traffic.
    pub fn cap(&self) -> f64 {
        match *self {
            Population::Finite(m) => m as f64,
            Population::Dense { a_max } => a_max,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub lambda: f64,
    /// Linear SINR decoding threshold.
    pub sinr_th: f64,
}

impl ControlParams {
    pub fn new(lambda: f64, sinr_th: f64) -> Result<Self, ControlError> {
        let p = Self { lambda, sinr_th };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(ControlError::BadLambda(self.lambda));
        }
        if !(self.sinr_th > 0.0 && self.sinr_th.is_finite()) {
            return Err(ControlError::BadThreshold(self.sinr_th));
        }
        Ok(())
    }
}

/// Jensen lower bound on the expected SU cell throughput.
pub fn throughput_lb(a: f64, m: Population, ip: f64, is_: f64, phi_ii: f64, params: &ControlParams) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    let s = params.sinr_th;
    a * (-s / phi_ii).exp() / (1.0 + s * (a * (1.0 - m.inv_count()) + ip + is_))
}

/// Interference cost term `a * phi_ii * ip / pi_b`.
pub fn pu_interference(a: f64, ip: f64, phi_ii: f64, model: &OccupancyModel) -> f64 {
    if a == 0.0 || ip == 0.0 {
        return 0.0;
    }
    if model.pi_b == 0.0 {
        return f64::INFINITY;
    }
    a * phi_ii * ip / model.pi_b
}

pub fn utility(a: f64, ip: f64, is_: f64, m: Population, phi_ii: f64, model: &OccupancyModel, params: &ControlParams) -> f64 {
    throughput_lb(a, m, ip, is_, phi_ii, params) - params.lambda * pu_interference(a, ip, phi_ii, model)
}

/// Closed-form maximizer of [`utility`] over `[0, cap]`.
pub fn optimal_traffic(ip: f64, is_: f64, m: Population, phi_ii: f64, model: &OccupancyModel, params: &ControlParams) -> f64 {
    let cap = m.cap();
    if ip <= 0.0 {
        return cap;
    }
    if model.pi_b == 0.0 {
        return 0.0;
    }
    let s = params.sinr_th;
    let k = 1.0 + s * (ip + is_);
    let c = 1.0 - m.inv_count();
    if c <= 0.0 {
        // Single SU: the payoff is linear in a, so the optimum is an endpoint.
        let slope = (-s / phi_ii).exp() / k - params.lambda * phi_ii * ip / model.pi_b;
        return if slope > 0.0 { cap } else { 0.0 };
    }
    let ratio = model.pi_b.sqrt() * (-s / (2.0 * phi_ii)).exp() / (params.lambda * phi_ii * ip).sqrt();
    let a = k.sqrt() / (s * c) * (ratio - k.sqrt());
    a.clamp(0.0, cap)
}

/// Expected throughput of cell `i` by full enumeration of the binomial
/// numbers of transmitting SUs (`a_j / m_j` access probability per SU).
pub fn exact_throughput(
    a: &[f64],
    b: &[u8],
    m: &[u32],
    phi: &InterferenceMatrix,
    params: &ControlParams,
    i: usize,
) -> Result<f64, ControlError> {
    let n = phi.n_cells();
    if a.len() != n || b.len() != n || m.len() != n || i >= n {
        return Err(ControlError::LengthMismatch);
    }
    for (cell, (&aj, &mj)) in a.iter().zip(m).enumerate() {
        if !(0.0..=mj as f64).contains(&aj) || mj == 0 {
            return Err(ControlError::TrafficOutOfRange { cell, a: aj, m: mj });
        }
    }
    if a[i] == 0.0 {
        return Ok(0.0);
    }
    // Distribution of the interference sum, built by convolution.
    let terms: u64 = m.iter().map(|&mj| mj as u64 + 1).product();
    if terms > MAX_ENUMERATION {
        return Err(ControlError::TooLarge(terms));
    }
    let pu: f64 = (0..n).map(|j| phi.coupling(j, i) * b[j] as f64).sum();
    let mut dist: Vec<(f64, f64)> = vec![(pu, 1.0)];
    for j in 0..n {
        let p = a[j] / m[j] as f64;
        let (trials, weight) = if j == i { (m[j] - 1, 1.0) } else { (m[j], phi.coupling(j, i)) };
        let pmf = binomial_pmf(trials, p);
        let mut next = Vec::with_capacity(dist.len() * pmf.len());
        for &(x, px) in &dist {
            for (k, &pk) in pmf.iter().enumerate() {
                if pk > 0.0 {
                    next.push((x + weight * k as f64, px * pk));
                }
            }
        }
        dist = next;
    }
    let s = params.sinr_th;
    let e = (-s / phi.get(i, i)).exp();
    Ok(dist.iter().map(|&(x, p)| p * a[i] * e / (1.0 + s * x)).sum())
}

fn binomial_pmf(n: u32, p: f64) -> Vec<f64> {
    let mut pmf = vec![0.0; n as usize + 1];
    let mut coef = 1.0;
    for k in 0..=n {
        if k > 0 {
            coef *= (n - k + 1) as f64 / k as f64;
        }
        pmf[k as usize] = coef * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32);
    }
    pmf
}

/// Average INR at the PUs and the per-cell SU contributions to it.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkInr {
    /// Linear scale.
    pub inr: f64,
    pub per_cell: Vec<f64>,
}

impl NetworkInr {
    pub fn db(&self) -> f64 {
        crate::linear_to_db(self.inr)
    }
}

pub fn network_inr(a: &[f64], b: &[u8], phi: &InterferenceMatrix, model: &OccupancyModel) -> NetworkInr {
    let n = phi.n_cells();
    let per_cell: Vec<f64> = (0..n)
        .map(|i| {
            let seen: f64 = (0..n).map(|j| phi.get(i, j) * b[j] as f64).sum();
            if a[i] == 0.0 || seen == 0.0 {
                0.0
            } else {
                a[i] * seen / model.pi_b
            }
        })
        .collect();
    let inr = per_cell.iter().sum::<f64>() / n as f64;
    NetworkInr { inr, per_cell }
}

/// I_P with every other cell's true state known after a per-pair delay,
/// compensated toward the prior. `observed(j)` returns `(b_j, delay)`.
pub fn full_nsi_ip(phi: &InterferenceMatrix, model: &OccupancyModel, i: usize, observed: impl Fn(usize) -> (f64, u32)) -> f64 {
    (0..phi.n_cells())
        .map(|j| {
            let (b, d) = observed(j);
            phi.coupling(j, i) * (model.pi_b + ring_weight(model.mu, d) * (b - model.pi_b))
        })
        .sum()
}

/// I_P with exact current state inside `radius` meters and the prior beyond.
pub fn radius_nsi_ip(
    phi: &InterferenceMatrix,
    topology: &NetworkTopology,
    model: &OccupancyModel,
    i: usize,
    b: &[u8],
    radius: f64,
) -> f64 {
    (0..phi.n_cells())
        .map(|j| {
            let p = if topology.distance(i, j) <= radius { b[j] as f64 } else { model.pi_b };
            phi.coupling(j, i) * p
        })
        .sum()
}

/// Mean number of other cells within `radius` of a cell.
pub fn radius_cost(topology: &NetworkTopology, radius: f64) -> f64 {
    let n = topology.n_cells();
    let inside = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && topology.distance(i, j) <= radius)
        .count();
    inside as f64 / n as f64
}

/// Constant-probability access.
pub fn uncoordinated_traffic(p_tx: f64, m: Population) -> f64 {
    p_tx * m.cap()
}

/// Undirected gossip graph with Metropolis weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusGraph {
    pub neighbors: Vec<Vec<usize>>,
}

impl ConsensusGraph {
    /// Random connected graph with every degree near `degree`, built by
    /// stub matching and retried until connected.
    pub fn random_connected<R: Rng + ?Sized>(n: usize, degree: usize, rng: &mut R) -> Result<Self, ControlError> {
        const TRIES: usize = 200;
        if n <= 1 {
            return Ok(Self { neighbors: vec![vec![]; n] });
        }
        if degree + 1 >= n {
            let neighbors = (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect();
            return Ok(Self { neighbors });
        }
        for _ in 0..TRIES {
            let mut stubs: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, degree)).collect();
            stubs.shuffle(rng);
            let mut neighbors = vec![Vec::<usize>::new(); n];
            // Greedy matching; self-loops and duplicate edges are skipped.
            while let Some(u) = stubs.pop() {
                if let Some(k) = stubs.iter().rposition(|&v| v != u && !neighbors[u].contains(&v)) {
                    let v = stubs.swap_remove(k);
                    neighbors[u].push(v);
                    neighbors[v].push(u);
                }
            }
            let g = Self { neighbors };
            if g.is_connected() {
                return Ok(g);
            }
        }
        Err(ControlError::Disconnected { n, degree, tries: TRIES })
    }

    pub fn is_connected(&self) -> bool {
        let n = self.neighbors.len();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// `rounds` synchronous Metropolis averaging steps.
    pub fn average(&self, x: &[f64], rounds: usize) -> Vec<f64> {
        let deg: Vec<f64> = self.neighbors.iter().map(|n| n.len() as f64).collect();
        let mut cur = x.to_vec();
        for _ in 0..rounds {
            cur = (0..cur.len())
                .map(|i| {
                    let mut v = cur[i];
                    for &j in &self.neighbors[i] {
                        v += (cur[j] - cur[i]) / (1.0 + deg[i].max(deg[j]));
                    }
                    v
                })
                .collect();
        }
        cur
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn params() -> ControlParams {
        ControlParams::new(1.0, 10f64.powf(0.5)).unwrap()
    }

    #[test]
    fn bound_limits() {
        let p = params();
        assert_eq!(throughput_lb(0.0, Population::Finite(5), 0.3, 0.1, 30.0, &p), 0.0);
        let tiny = ControlParams::new(1.0, 1e-12).unwrap();
        assert!((throughput_lb(2.5, Population::Finite(5), 0.3, 0.1, 30.0, &tiny) - 2.5).abs() < 1e-9);
    }

    #[test]
    fn single_su_exact() {
        let phi = InterferenceMatrix::from_rows(1, vec![31.6]);
        let p = params();
        let r = exact_throughput(&[1.0], &[0], &[1], &phi, &p, 0).unwrap();
        assert!((r - (-p.sinr_th / 31.6).exp()).abs() < 1e-15);
        assert_eq!(exact_throughput(&[0.0], &[1], &[1], &phi, &p, 0).unwrap(), 0.0);
    }

    #[test]
    fn ip_zero_gives_cap() {
        let m = OccupancyModel::reference();
        assert_eq!(optimal_traffic(0.0, 0.4, Population::Finite(7), 30.0, &m, &params()), 7.0);
        assert_eq!(optimal_traffic(0.0, 0.0, Population::Dense { a_max: 3.0 }, 30.0, &m, &params()), 3.0);
    }

    #[test]
    fn large_ip_gives_zero() {
        let m = OccupancyModel::reference();
        assert_eq!(optimal_traffic(1.0, 0.0, Population::Finite(10), 31.6, &m, &params()), 0.0);
    }

    #[test]
    fn vanishing_lambda_gives_cap() {
        let m = OccupancyModel::reference();
        let p = ControlParams::new(1e-15, 10f64.powf(0.5)).unwrap();
        assert_eq!(optimal_traffic(0.1, 0.0, Population::Finite(10), 31.6, &m, &p), 10.0);
    }

    #[test]
    fn inr_single_term() {
        let phi = InterferenceMatrix::from_rows(2, vec![30.0, 0.4, 0.4, 30.0]);
        let m = OccupancyModel::reference();
        let r = network_inr(&[1.0, 0.0], &[0, 1], &phi, &m);
        assert!((r.inr - 0.4 / (2.0 * 0.05)).abs() < 1e-12);
        assert_eq!(network_inr(&[0.0, 0.0], &[1, 1], &phi, &m).inr, 0.0);
    }

    #[test]
    fn uncoordinated_zero() {
        assert_eq!(uncoordinated_traffic(0.0, Population::Finite(10)), 0.0);
        assert_eq!(uncoordinated_traffic(0.5, Population::Finite(10)), 5.0);
    }

    #[test]
    fn consensus_graph_properties() {
        let mut rng = stream(9, &[]);
        let g = ConsensusGraph::random_connected(64, 5, &mut rng).unwrap();
        assert!(g.is_connected());
        for (i, nb) in g.neighbors.iter().enumerate() {
            assert!(nb.len() <= 5 && !nb.contains(&i));
            for &j in nb {
                assert!(g.neighbors[j].contains(&i));
            }
        }
        let x: Vec<f64> = (0..64).map(|i| (i % 3) as f64).collect();
        let mean = x.iter().sum::<f64>() / 64.0;
        let y = g.average(&x, 200);
        assert!((y.iter().sum::<f64>() / 64.0 - mean).abs() < 1e-9);
        assert!(y.iter().all(|v| (v - mean).abs() < 1e-6));
    }
}
