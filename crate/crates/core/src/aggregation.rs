//! Per-frame hierarchical exchange.
//!
//! Every cluster head keeps a short history of its aggregate `S`. Level 0
//! holds the local estimates themselves. A head at level `L` sums its
//! children's aggregates, each read `edge_delay` frames in the past. Frames
//! before 0 read as the steady-state placeholder `|C| * fill`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::AggregationTree;

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error("expected frame {expected}, got {got}")]
    FrameOutOfOrder { expected: u64, got: u64 },
    #[error("expected {expected} local estimates, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("frame {frame} at level {level} is no longer buffered (history {history})")]
    Underrun { level: usize, frame: i64, history: usize },
    #[error("frame {frame} has not been aggregated yet")]
    NotYetAvailable { frame: i64 },
    #[error("history of {given} frames is shorter than the {needed} the tree requires")]
    HistoryTooShort { given: usize, needed: usize },
    #[error("cell {0} out of range")]
    CellOutOfRange(usize),
}

/// Aggregate histories for every cluster of every level.
#[derive(Clone, Debug)]
pub struct NodeBuffers {
    history: usize,
    fill: f64,
    /// Next frame to be written.
    next: u64,
    /// `values[L][m][tau % history]`.
    values: Vec<Vec<Vec<f64>>>,
}

impl NodeBuffers {
    /// Buffers sized to the deepest lookback of the tree. `fill` is the
    /// per-cell value assumed for frames before 0.
    pub fn new(tree: &AggregationTree, fill: f64) -> Self {
        Self::with_history(tree, fill, Self::required_history(tree)).expect("required history suffices")
    }

    pub fn with_history(tree: &AggregationTree, fill: f64, history: usize) -> Result<Self, AggregationError> {
        let needed = Self::required_history(tree);
        if history < needed {
            return Err(AggregationError::HistoryTooShort { given: history, needed });
        }
        let values = tree.levels().iter().map(|lvl| vec![vec![0.0; history]; lvl.len()]).collect();
        Ok(Self {
            history,
            fill,
            next: 0,
            values,
        })
    }

    pub fn required_history(tree: &AggregationTree) -> usize {
        tree.total_edge_delay() as usize + 1
    }

    pub fn history(&self) -> usize {
        self.history
    }

    /// Last frame written, if any.
    pub fn last_frame(&self) -> Option<u64> {
        self.next.checked_sub(1)
    }

    /// `S` of cluster `m` at `level` for frame `tau`.
    pub fn read(&self, tree: &AggregationTree, level: usize, m: usize, tau: i64) -> Result<f64, AggregationError> {
        if tau < 0 {
            return Ok(tree.level(level)[m].members.len() as f64 * self.fill);
        }
        if tau >= self.next as i64 {
            return Err(AggregationError::NotYetAvailable { frame: tau });
        }
        if (self.next as i64 - tau) as usize > self.history {
            return Err(AggregationError::Underrun {
                level,
                frame: tau,
                history: self.history,
            });
        }
        Ok(self.values[level][m][tau as usize % self.history])
    }
}

/// Runs one frame of upward fusion with the local estimates of frame `t`.
pub fn advance_frame(tree: &AggregationTree, buffers: &mut NodeBuffers, local: &[f64], t: u64) -> Result<(), AggregationError> {
    if t != buffers.next {
        return Err(AggregationError::FrameOutOfOrder {
            expected: buffers.next,
            got: t,
        });
    }
    if local.len() != tree.n_cells() {
        return Err(AggregationError::LengthMismatch {
            expected: tree.n_cells(),
            got: local.len(),
        });
    }
    let slot = t as usize % buffers.history;
    for (i, &v) in local.iter().enumerate() {
        buffers.values[0][i][slot] = v;
    }
    // Mark the frame written so same-frame reads (zero delay) resolve.
    buffers.next = t + 1;
    for l in 1..=tree.depth() {
        for (m, cluster) in tree.level(l).iter().enumerate() {
            let mut s = 0.0;
            for &child in &cluster.children {
                let delay = tree.level(l - 1)[child].edge_delay;
                s += buffers.read(tree, l - 1, child, t as i64 - delay as i64)?;
            }
            buffers.values[l][m][slot] = s;
        }
    }
    Ok(())
}

/// Multi-scale estimates of all cells at one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiScaleEstimate {
    /// `sigma[i][L]`, `L = 0..=depth`. Entries for empty rings are 0.
    pub sigma: Vec<Vec<f64>>,
}

/// Ring aggregates of cell `i` at frame `t`.
pub fn compute_sigma(tree: &AggregationTree, buffers: &NodeBuffers, i: usize, t: u64) -> Result<Vec<f64>, AggregationError> {
    if i >= tree.n_cells() {
        return Err(AggregationError::CellOutOfRange(i));
    }
    let t = t as i64;
    let mut sigma = Vec::with_capacity(tree.depth() + 1);
    sigma.push(buffers.read(tree, 0, i, t)?);
    for l in 1..=tree.depth() {
        let h = tree.cluster_of(l, i);
        let below = tree.cluster_of(l - 1, i);
        let delay = tree.level(l - 1)[below].edge_delay as i64;
        let outer = buffers.read(tree, l, h, t)?;
        let inner = buffers.read(tree, l - 1, below, t - delay)?;
        sigma.push(outer - inner);
    }
    Ok(sigma)
}

pub fn compute_all(tree: &AggregationTree, buffers: &NodeBuffers, t: u64) -> Result<MultiScaleEstimate, AggregationError> {
    let sigma = (0..tree.n_cells())
        .map(|i| compute_sigma(tree, buffers, i, t))
        .collect::<Result<_, _>>()?;
    Ok(MultiScaleEstimate { sigma })
}

/// Writes `frame,level,head,value` rows for every cluster at frame `t`.
pub fn write_trace<W: Write>(tree: &AggregationTree, buffers: &NodeBuffers, t: u64, header: bool, out: &mut W) -> io::Result<()> {
    if header {
        writeln!(out, "frame,level,head,value")?;
    }
    for l in 0..=tree.depth() {
        for (m, c) in tree.level(l).iter().enumerate() {
            let v = buffers
                .read(tree, l, m, t as i64)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
            writeln!(out, "{t},{l},{},{v}", c.head_site)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn figure_tree() -> AggregationTree {
        let l1 = vec![vec![0, 1, 4, 5], vec![2, 3, 6, 7]];
        let l2 = vec![(0..8).collect()];
        AggregationTree::from_partitions(8, &[l1, l2], |_, _| 0).unwrap()
    }

    #[test]
    fn zero_delay_pair_sums_same_frame() {
        let t = AggregationTree::from_partitions(2, &[vec![vec![0, 1]]], |_, _| 0).unwrap();
        let mut buf = NodeBuffers::new(&t, 0.05);
        advance_frame(&t, &mut buf, &[0.25, 0.5], 0).unwrap();
        assert_eq!(buf.read(&t, 1, 0, 0).unwrap(), 0.75);
    }

    #[test]
    fn figure_ring_aggregate() {
        let t = figure_tree();
        let mut buf = NodeBuffers::new(&t, 0.05);
        let b = [1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        advance_frame(&t, &mut buf, &b, 0).unwrap();
        let s = compute_sigma(&t, &buf, 0, 0).unwrap();
        assert_eq!(s, vec![1.0, b[1] + b[4] + b[5], b[2] + b[3] + b[6] + b[7]]);
    }

    #[test]
    fn single_cell_sigma() {
        let t = AggregationTree::singletons(1);
        let mut buf = NodeBuffers::new(&t, 0.05);
        advance_frame(&t, &mut buf, &[0.3], 0).unwrap();
        assert_eq!(compute_sigma(&t, &buf, 0, 0).unwrap(), vec![0.3]);
    }

    #[test]
    fn placeholder_before_start() {
        let t = AggregationTree::from_partitions(2, &[vec![vec![0, 1]]], |_, _| 2).unwrap();
        let mut buf = NodeBuffers::new(&t, 0.05);
        advance_frame(&t, &mut buf, &[1.0, 1.0], 0).unwrap();
        assert!((buf.read(&t, 1, 0, 0).unwrap() - 0.1).abs() < 1e-15);
        advance_frame(&t, &mut buf, &[0.0, 0.0], 1).unwrap();
        advance_frame(&t, &mut buf, &[0.0, 0.0], 2).unwrap();
        assert_eq!(buf.read(&t, 1, 0, 2).unwrap(), 2.0);
    }

    #[test]
    fn misuse_is_reported() {
        let t = AggregationTree::from_partitions(2, &[vec![vec![0, 1]]], |_, _| 1).unwrap();
        let mut buf = NodeBuffers::new(&t, 0.0);
        assert!(matches!(
            advance_frame(&t, &mut buf, &[0.0, 0.0], 1),
            Err(AggregationError::FrameOutOfOrder { .. })
        ));
        assert!(advance_frame(&t, &mut buf, &[0.0], 0).is_err());
        assert!(NodeBuffers::with_history(&t, 0.0, 1).is_err());
        for f in 0..5 {
            advance_frame(&t, &mut buf, &[0.0, 0.0], f).unwrap();
        }
        assert!(matches!(buf.read(&t, 0, 0, 0), Err(AggregationError::Underrun { .. })));
        assert!(matches!(buf.read(&t, 0, 0, 5), Err(AggregationError::NotYetAvailable { .. })));
    }

    #[test]
    fn trace_rows() {
        let t = figure_tree();
        let mut buf = NodeBuffers::new(&t, 0.0);
        advance_frame(&t, &mut buf, &[1.0; 8], 0).unwrap();
        let mut out = Vec::new();
        write_trace(&t, &buf, 0, true, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + 8 + 2 + 1);
        assert!(text.ends_with("0,2,0,8\n"));
    }
}
