//! Multi-scale aggregation trees.
//!
//! Level 0 holds one singleton cluster per cell. Every higher level is a
//! partition of the cells into unions of lower-level clusters. A cluster
//! that could not be paired is carried to the next level unchanged, so a
//! cost-limited build may end as a forest whose top level has several
//! clusters; cells in different top clusters cannot reach each other.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::ring_weight;
use crate::rng::SimRng;
use crate::topology::{InterferenceMatrix, NetworkTopology};

#[derive(Debug, Error, PartialEq)]
pub enum HierarchyError {
    #[error("cell id {id} out of range for {n} cells")]
    CellOutOfRange { id: usize, n: usize },
    #[error("level {level} does not partition the cells of level {below}")]
    NotAPartition { level: usize, below: usize },
    #[error("level {level} cluster {cluster} splits a level-{below} cluster")]
    SplitsCluster { level: usize, cluster: usize, below: usize },
    #[error("topology has {topology} cells but the INR matrix has {phi}")]
    SizeMismatch { topology: usize, phi: usize },
    #[error("cost budget must be positive, got {0}")]
    BadBudget(f64),
    #[error("delay scale must be finite and non-negative, got {0}")]
    BadDelayScale(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Cells covered by the cluster, sorted ascending.
    pub members: Vec<usize>,
    /// Cell hosting the cluster head.
    pub head_site: usize,
    /// Indices of the merged clusters one level down (empty at level 0).
    pub children: Vec<usize>,
    /// Index of the enclosing cluster one level up.
    pub parent: Option<usize>,
    /// Frames needed to reach the parent head (0 for carried clusters and
    /// for the top level).
    pub edge_delay: u32,
}

/// Immutable aggregation hierarchy with per-cell delays and cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationTree {
    n_cells: usize,
    levels: Vec<Vec<Cluster>>,
    /// `membership[L][i]`: index of the level-`L` cluster holding cell `i`.
    membership: Vec<Vec<usize>>,
    /// `delays[i][L]`: frames for cell `i`'s estimate to reach its level-`L` head.
    delays: Vec<Vec<u32>>,
    cost_per_cell: f64,
}

/// One cluster of a new level: `(child index, edge delay)` pairs plus the head site.
struct Group {
    children: Vec<(usize, u32)>,
    head_site: usize,
}

impl AggregationTree {
    /// Depth-0 tree: every cell is its own cluster.
    pub fn singletons(n_cells: usize) -> Self {
        let level = (0..n_cells)
            .map(|i| Cluster {
                members: vec![i],
                head_site: i,
                children: vec![],
                parent: None,
                edge_delay: 0,
            })
            .collect();
        Self {
            n_cells,
            levels: vec![level],
            membership: vec![(0..n_cells).collect()],
            delays: vec![vec![0]; n_cells],
            cost_per_cell: 0.0,
        }
    }

    /// Builds a tree from explicit partitions. `partitions[k]` lists the
    /// clusters (as cell sets) of level `k + 1`; `edge_delay(level, child)`
    /// gives the delay from a level-`level` cluster to its parent. Head sites
    /// are the smallest member.
    pub fn from_partitions(
        n_cells: usize,
        partitions: &[Vec<Vec<usize>>],
        mut edge_delay: impl FnMut(usize, usize) -> u32,
    ) -> Result<Self, HierarchyError> {
        let mut tree = Self::singletons(n_cells);
        for (k, clusters) in partitions.iter().enumerate() {
            let below = k;
            let mut covered = vec![false; n_cells];
            let mut groups = Vec::with_capacity(clusters.len());
            for (ci, cells) in clusters.iter().enumerate() {
                let mut children: Vec<usize> = Vec::new();
                for &c in cells {
                    if c >= n_cells {
                        return Err(HierarchyError::CellOutOfRange { id: c, n: n_cells });
                    }
                    if covered[c] {
                        return Err(HierarchyError::NotAPartition { level: k + 1, below });
                    }
                    covered[c] = true;
                    let child = tree.membership[below][c];
                    if !children.contains(&child) {
                        children.push(child);
                    }
                }
                let inside: usize = children.iter().map(|&ch| tree.levels[below][ch].members.len()).sum();
                if inside != cells.len() {
                    return Err(HierarchyError::SplitsCluster {
                        level: k + 1,
                        cluster: ci,
                        below,
                    });
                }
                children.sort_unstable();
                let head_site = *cells.iter().min().expect("non-empty cluster");
                groups.push(Group {
                    children: children.iter().map(|&ch| (ch, edge_delay(below, ch))).collect(),
                    head_site,
                });
            }
            if covered.iter().any(|c| !c) {
                return Err(HierarchyError::NotAPartition { level: k + 1, below });
            }
            tree.push_level(groups);
        }
        Ok(tree)
    }

    fn push_level(&mut self, groups: Vec<Group>) {
        let below = self.levels.len() - 1;
        let mut level = Vec::with_capacity(groups.len());
        let mut membership = vec![usize::MAX; self.n_cells];
        for (idx, g) in groups.into_iter().enumerate() {
            let mut members = Vec::new();
            let mut children = Vec::with_capacity(g.children.len());
            for (child, delay) in g.children {
                let c = &mut self.levels[below][child];
                c.parent = Some(idx);
                c.edge_delay = delay;
                for &cell in &c.members {
                    membership[cell] = idx;
                    let d = self.delays[cell][below] + delay;
                    self.delays[cell].push(d);
                }
                members.extend_from_slice(&c.members);
                children.push(child);
            }
            members.sort_unstable();
            level.push(Cluster {
                members,
                head_site: g.head_site,
                children,
                parent: None,
                edge_delay: 0,
            });
        }
        self.levels.push(level);
        self.membership.push(membership);
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Number of levels above the leaves.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, l: usize) -> &[Cluster] {
        &self.levels[l]
    }

    pub fn levels(&self) -> &[Vec<Cluster>] {
        &self.levels
    }

    /// Index of the level-`l` cluster containing `cell`.
    pub fn cluster_of(&self, l: usize, cell: usize) -> usize {
        self.membership[l][cell]
    }

    /// Delay from `cell` to its level-`l` head.
    pub fn delay(&self, cell: usize, l: usize) -> u32 {
        self.delays[cell][l]
    }

    pub fn delays(&self, cell: usize) -> &[u32] {
        &self.delays[cell]
    }

    pub fn cost_per_cell(&self) -> f64 {
        self.cost_per_cell
    }

    /// Largest end-to-end delay to any head.
    pub fn max_delay(&self) -> u32 {
        self.delays.iter().map(|d| *d.last().unwrap()).max().unwrap_or(0)
    }

    /// Sum over levels of the largest edge delay leaving that level.
    pub fn total_edge_delay(&self) -> u32 {
        self.levels
            .iter()
            .map(|lvl| lvl.iter().map(|c| c.edge_delay).max().unwrap_or(0))
            .sum()
    }

    pub fn cluster_sizes(&self, l: usize) -> Vec<usize> {
        self.levels[l].iter().map(|c| c.members.len()).collect()
    }

    fn check(&self, id: usize) -> Result<(), HierarchyError> {
        if id < self.n_cells {
            Ok(())
        } else {
            Err(HierarchyError::CellOutOfRange { id, n: self.n_cells })
        }
    }

    /// Smallest level whose cluster holds both cells, `None` if they sit in
    /// different top-level clusters.
    pub fn h_distance(&self, i: usize, j: usize) -> Result<Option<usize>, HierarchyError> {
        self.check(i)?;
        self.check(j)?;
        Ok((0..self.levels.len()).find(|&l| self.membership[l][i] == self.membership[l][j]))
    }

    /// Cells at h-distance exactly `L` from `i`, for `L = 0..=depth`. Levels
    /// where `i`'s cluster was carried unchanged give empty rings.
    pub fn ring_sets(&self, i: usize) -> Result<Vec<Vec<usize>>, HierarchyError> {
        self.check(i)?;
        let mut rings = vec![vec![i]];
        for l in 1..self.levels.len() {
            let outer = &self.levels[l][self.membership[l][i]].members;
            let inner = &self.levels[l - 1][self.membership[l - 1][i]].members;
            rings.push(outer.iter().copied().filter(|c| inner.binary_search(c).is_err()).collect());
        }
        Ok(rings)
    }

    /// Cells sharing `i`'s top-level cluster.
    pub fn reachable(&self, i: usize) -> &[usize] {
        let top = self.depth();
        &self.levels[top][self.membership[top][i]].members
    }

    /// Checks partition refinement and the delay recursion.
    pub fn validate(&self) -> Result<(), HierarchyError> {
        for l in 1..self.levels.len() {
            let mut seen = vec![false; self.n_cells];
            for (ci, c) in self.levels[l].iter().enumerate() {
                let mut union: Vec<usize> = c
                    .children
                    .iter()
                    .flat_map(|&ch| self.levels[l - 1][ch].members.iter().copied())
                    .collect();
                union.sort_unstable();
                if union != c.members {
                    return Err(HierarchyError::SplitsCluster {
                        level: l,
                        cluster: ci,
                        below: l - 1,
                    });
                }
                for &m in &c.members {
                    if seen[m] {
                        return Err(HierarchyError::NotAPartition { level: l, below: l - 1 });
                    }
                    seen[m] = true;
                }
            }
            if seen.iter().any(|s| !s) {
                return Err(HierarchyError::NotAPartition { level: l, below: l - 1 });
            }
        }
        Ok(())
    }
}

/// Merge benefit of two disjoint clusters: the delay-compensated coupling
/// each side would gain on the other once they share a parent.
pub fn gamma_metric(
    phi: &InterferenceMatrix,
    cluster_n: &[usize],
    cluster_m: &[usize],
    delay: impl Fn(usize) -> u32,
    edge_delay: u32,
    mu: f64,
) -> f64 {
    let one_way = |rx: &[usize], tx: &[usize]| -> f64 {
        rx.iter()
            .map(|&i| tx.iter().map(|&j| ring_weight(mu, delay(j)) * phi.coupling(j, i)).sum::<f64>())
            .sum()
    };
    ring_weight(mu, edge_delay) * (one_way(cluster_n, cluster_m) + one_way(cluster_m, cluster_n))
}

/// Worst-case multi-hop cost per cell of merging two clusters.
pub fn pair_cost(topology: &NetworkTopology, cluster_n: &[usize], cluster_m: &[usize]) -> f64 {
    let far = cluster_n
        .iter()
        .flat_map(|&i| cluster_m.iter().map(move |&j| topology.distance(i, j)))
        .fold(0.0, f64::max);
    far / topology.n_cells() as f64
}

/// Edge delay between two heads: `ceil(gamma * distance)` frames.
pub fn edge_delay(topology: &NetworkTopology, gamma: f64, head_n: usize, head_m: usize) -> u32 {
    (gamma * topology.distance(head_n, head_m)).ceil() as u32
}

/// Member closest to the centroid of the cluster's cell centers.
pub fn centroid_head(topology: &NetworkTopology, members: &[usize]) -> usize {
    let k = members.len() as f64;
    let cx = members.iter().map(|&i| topology.centers[i].x).sum::<f64>() / k;
    let cy = members.iter().map(|&i| topology.centers[i].y).sum::<f64>() / k;
    let centroid = crate::topology::Point::new(cx, cy);
    let mut best = members[0];
    let mut best_d = f64::INFINITY;
    for &i in members {
        let d = topology.centers[i].dist(&centroid);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Frames of delay per meter between cluster heads.
    pub gamma_delay: f64,
    /// Per-cell aggregation budget; `f64::INFINITY` for none.
    pub c_max: f64,
}

impl TreeParams {
    pub fn unbounded() -> Self {
        Self {
            gamma_delay: 0.0,
            c_max: f64::INFINITY,
        }
    }

    fn validate(&self) -> Result<(), HierarchyError> {
        if !(self.c_max > 0.0) {
            return Err(HierarchyError::BadBudget(self.c_max));
        }
        if !(self.gamma_delay >= 0.0 && self.gamma_delay.is_finite()) {
            return Err(HierarchyError::BadDelayScale(self.gamma_delay));
        }
        Ok(())
    }
}

struct Candidate {
    n: usize,
    m: usize,
    cost: f64,
    delay: u32,
}

/// Greedy agglomeration shared by the interference-matched and random trees.
/// `pick` chooses the next pair among the feasible candidates of the level.
fn agglomerate(
    topology: &NetworkTopology,
    params: &TreeParams,
    mut order_level: impl FnMut(&AggregationTree, &mut Vec<Candidate>),
    mut pick: impl FnMut(&[Candidate]) -> usize,
) -> Result<AggregationTree, HierarchyError> {
    params.validate()?;
    let n = topology.n_cells();
    let mut tree = AggregationTree::singletons(n);
    let mut cost = 0.0;
    loop {
        let level = tree.levels.last().expect("level 0 exists");
        let h = level.len();
        let mut candidates = Vec::new();
        for a in 0..h {
            for b in (a + 1)..h {
                let c = pair_cost(topology, &level[a].members, &level[b].members);
                if cost + c <= params.c_max {
                    candidates.push(Candidate {
                        n: a,
                        m: b,
                        cost: c,
                        delay: edge_delay(topology, params.gamma_delay, level[a].head_site, level[b].head_site),
                    });
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        order_level(&tree, &mut candidates);

        let mut paired = vec![false; h];
        let mut groups = Vec::new();
        while !candidates.is_empty() {
            let k = pick(&candidates);
            let chosen = candidates.remove(k);
            paired[chosen.n] = true;
            paired[chosen.m] = true;
            cost += chosen.cost;
            let mut members = level[chosen.n].members.clone();
            members.extend_from_slice(&level[chosen.m].members);
            groups.push(Group {
                children: vec![(chosen.n, chosen.delay), (chosen.m, chosen.delay)],
                head_site: centroid_head(topology, &members),
            });
            candidates.retain(|c| !paired[c.n] && !paired[c.m] && cost + c.cost <= params.c_max);
        }
        for (k, c) in level.iter().enumerate() {
            if !paired[k] {
                groups.push(Group {
                    children: vec![(k, 0)],
                    head_site: c.head_site,
                });
            }
        }
        tree.push_level(groups);
    }
    tree.cost_per_cell = cost;
    Ok(tree)
}

/// Interference-matched tree: at every level, repeatedly merge the feasible
/// unpaired pair with the largest [`gamma_metric`] (ties: lowest index pair).
pub fn build_ibt(
    topology: &NetworkTopology,
    phi: &InterferenceMatrix,
    mu: f64,
    params: &TreeParams,
) -> Result<AggregationTree, HierarchyError> {
    if topology.n_cells() != phi.n_cells() {
        return Err(HierarchyError::SizeMismatch {
            topology: topology.n_cells(),
            phi: phi.n_cells(),
        });
    }
    agglomerate(
        topology,
        params,
        |tree, candidates| {
            let l = tree.depth();
            let level = tree.level(l);
            let mut scored: Vec<(f64, usize)> = candidates
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let g = gamma_metric(
                        phi,
                        &level[c.n].members,
                        &level[c.m].members,
                        |j| tree.delay(j, l),
                        c.delay,
                        mu,
                    );
                    (g, k)
                })
                .collect();
            // Candidates are generated in (n, m) order, so a stable sort on
            // descending gamma keeps the lowest pair first among ties.
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut taken: Vec<Option<Candidate>> = candidates.drain(..).map(Some).collect();
            candidates.extend(scored.into_iter().map(|(_, k)| taken[k].take().unwrap()));
        },
        // Feasibility only shrinks within a level, so the first surviving
        // candidate in descending-gamma order is the argmax.
        |_| 0,
    )
}

/// Random-association tree: same control flow, uniform choice among the
/// feasible pairs.
pub fn build_random_tree(topology: &NetworkTopology, params: &TreeParams, rng: &mut SimRng) -> Result<AggregationTree, HierarchyError> {
    agglomerate(topology, params, |_, _| {}, |candidates| rng.random_range(0..candidates.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::topology::{compute_phi, build_topology, PathlossParams, Point, TopologyKind, TopologySpec};

    /// The eight-cell example: level-1 clusters {1,2,5,6} and {3,4,7,8}
    /// (1-based), joined at level 2.
    fn figure_tree() -> AggregationTree {
        let l1 = vec![vec![0, 1, 4, 5], vec![2, 3, 6, 7]];
        let l2 = vec![(0..8).collect()];
        AggregationTree::from_partitions(8, &[l1, l2], |_, _| 0).unwrap()
    }

    fn line(n: usize, spacing: f64) -> NetworkTopology {
        let centers = (0..n).map(|k| Point::new(spacing * (k as f64 + 0.5), 1.0)).collect();
        NetworkTopology::from_parts(TopologyKind::Grid, 0, (spacing * n as f64, 2.0), spacing / 2.0, centers, vec![]).unwrap()
    }

    #[test]
    fn figure_h_distances() {
        let t = figure_tree();
        assert_eq!(t.h_distance(0, 0).unwrap(), Some(0));
        assert_eq!(t.h_distance(0, 1).unwrap(), Some(1));
        assert_eq!(t.h_distance(0, 2).unwrap(), Some(2));
        assert_eq!(t.h_distance(2, 0).unwrap(), Some(2));
        assert!(t.h_distance(0, 8).is_err());
    }

    #[test]
    fn figure_ring_sets() {
        let t = figure_tree();
        let rings = t.ring_sets(0).unwrap();
        assert_eq!(rings, vec![vec![0], vec![1, 4, 5], vec![2, 3, 6, 7]]);
    }

    #[test]
    fn single_cell_has_only_itself() {
        let t = AggregationTree::singletons(1);
        assert_eq!(t.depth(), 0);
        assert_eq!(t.ring_sets(0).unwrap(), vec![vec![0]]);
    }

    #[test]
    fn partition_errors() {
        let overlap = vec![vec![0, 1], vec![1, 2]];
        assert!(AggregationTree::from_partitions(3, &[overlap], |_, _| 0).is_err());
        let missing = vec![vec![0, 1]];
        assert!(AggregationTree::from_partitions(3, &[missing], |_, _| 0).is_err());
        let l1 = vec![vec![0, 1], vec![2, 3]];
        let split = vec![vec![0, 2], vec![1, 3]];
        assert!(matches!(
            AggregationTree::from_partitions(4, &[l1, split], |_, _| 0),
            Err(HierarchyError::SplitsCluster { .. })
        ));
    }

    #[test]
    fn gamma_examples() {
        let phi = InterferenceMatrix::from_rows(2, vec![1.0, 0.5, 0.5, 1.0]);
        let g = gamma_metric(&phi, &[0], &[1], |_| 0, 0, 0.3);
        assert!((g - 1.0).abs() < 1e-15);
        let asym = InterferenceMatrix::from_rows(2, vec![2.0, 0.5, 0.5, 4.0]);
        let g = gamma_metric(&asym, &[0], &[1], |_| 0, 0, 0.9);
        assert!((g - (0.5 / 2.0 + 0.5 / 4.0)).abs() < 1e-15);
        assert_eq!(gamma_metric(&phi, &[0], &[1], |_| 0, 1, 0.0), 0.0);
    }

    #[test]
    fn cost_examples() {
        let t = line(4, 100.0);
        assert!((pair_cost(&t, &[0, 1], &[2, 3]) - 75.0).abs() < 1e-12);
        assert!((pair_cost(&t, &[0], &[1]) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_builds() {
        let one = line(1, 100.0);
        let phi = compute_phi(&one, &PathlossParams::default()).unwrap();
        let t = build_ibt(&one, &phi, 0.9, &TreeParams::unbounded()).unwrap();
        assert_eq!((t.depth(), t.cost_per_cell()), (0, 0.0));

        let four = line(4, 100.0);
        let phi = compute_phi(&four, &PathlossParams::default()).unwrap();
        let tight = TreeParams {
            gamma_delay: 0.0,
            c_max: 1e-9,
        };
        let t = build_ibt(&four, &phi, 0.9, &tight).unwrap();
        assert_eq!(t.depth(), 0);
        assert!(build_ibt(&four, &phi, 0.9, &TreeParams { gamma_delay: 0.0, c_max: 0.0 }).is_err());
    }

    #[test]
    fn four_cell_line_pairs_neighbours_first() {
        let t4 = line(4, 100.0);
        let phi = compute_phi(&t4, &PathlossParams::default()).unwrap();
        let t = build_ibt(&t4, &phi, 0.9, &TreeParams::unbounded()).unwrap();
        assert_eq!(t.depth(), 2);
        let mut l1: Vec<Vec<usize>> = t.level(1).iter().map(|c| c.members.clone()).collect();
        l1.sort();
        assert_eq!(l1, vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(t.level(2).len(), 1);
    }

    #[test]
    fn random_tree_on_power_of_two_is_full() {
        let spec = TopologySpec::grid(16, 400.0, 400.0, 0);
        let topo = build_topology(&spec, &mut stream(1, &[]), 1).unwrap();
        let a = build_random_tree(&topo, &TreeParams::unbounded(), &mut stream(2, &[])).unwrap();
        let b = build_random_tree(&topo, &TreeParams::unbounded(), &mut stream(2, &[])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.depth(), 4);
        for l in 0..=4 {
            assert!(a.cluster_sizes(l).iter().all(|&s| s == 1 << l));
        }
    }

    #[test]
    fn delays_follow_head_distance() {
        let t4 = line(4, 100.0);
        let phi = compute_phi(&t4, &PathlossParams::default()).unwrap();
        let params = TreeParams {
            gamma_delay: 0.015,
            c_max: f64::INFINITY,
        };
        let t = build_ibt(&t4, &phi, 0.9, &params).unwrap();
        t.validate().unwrap();
        for i in 0..4 {
            assert_eq!(t.delay(i, 0), 0);
            // neighbours 100 m apart: ceil(1.5) = 2 frames to the level-1 head
            assert_eq!(t.delay(i, 1), 2);
            assert!(t.delay(i, 2) >= t.delay(i, 1));
        }
    }
}
