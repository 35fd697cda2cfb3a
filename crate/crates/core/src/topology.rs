//! Cell layouts, blockages, line of sight and the INR matrix.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SimRng;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("grid topology needs a perfect-square cell count, got {0}")]
    NotSquare(usize),
    #[error("cell count must be at least 1")]
    NoCells,
    #[error("area must have positive finite dimensions, got {0} x {1}")]
    BadArea(f64, f64),
    #[error("blockage dimensions must be positive, got {0} x {1}")]
    BadBlockage(f64, f64),
    #[error("could only place {placed} of {requested} non-overlapping blockages")]
    BlockagePlacement { placed: usize, requested: usize },
    #[error("cell id {id} out of range for {n} cells")]
    CellOutOfRange { id: usize, n: usize },
    #[error("cell center ({0}, {1}) lies outside the area")]
    CenterOutside(f64, f64),
    #[error("invalid pathloss parameters: {0}")]
    BadPathloss(&'static str),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangular obstacle. `width` is the extent along x and
/// `height` the extent along y.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blockage {
    pub center: Point,
    pub width: f64,
    pub height: f64,
}

impl Blockage {
    pub fn new(center: Point, width: f64, height: f64) -> Result<Self, TopologyError> {
        if !(width > 0.0 && height > 0.0) {
            return Err(TopologyError::BadBlockage(width, height));
        }
        Ok(Self {
            center,
            width,
            height,
        })
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.center.x - self.width / 2.0,
            self.center.x + self.width / 2.0,
            self.center.y - self.height / 2.0,
            self.center.y + self.height / 2.0,
        )
    }

    /// True if the segment `a`-`b` passes through the open interior of the
    /// rectangle. Grazing an edge or a corner does not count.
    pub fn blocks(&self, a: Point, b: Point) -> bool {
        let (x0, x1, y0, y1) = self.bounds();
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (start, delta, min, max) in [(a.x, b.x - a.x, x0, x1), (a.y, b.y - a.y, y0, y1)] {
            if delta == 0.0 {
                if !(start > min && start < max) {
                    return false;
                }
            } else {
                let t0 = (min - start) / delta;
                let t1 = (max - start) / delta;
                lo = lo.max(t0.min(t1));
                hi = hi.min(t0.max(t1));
            }
        }
        lo < hi && lo < 1.0 && hi > 0.0
    }

    fn overlaps(&self, other: &Blockage) -> bool {
        let (ax0, ax1, ay0, ay1) = self.bounds();
        let (bx0, bx1, by0, by1) = other.bounds();
        ax0 < bx1 && bx0 < ax1 && ay0 < by1 && by0 < ay1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Grid,
    Random,
}

fn default_blockage_width() -> f64 {
    1.0
}

fn default_blockage_height() -> f64 {
    5.0
}

/// Layout request. Blockage dimensions are in units of the mean cell side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub n_cells: usize,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub n_blockages: usize,
    #[serde(default = "default_blockage_width")]
    pub blockage_width: f64,
    #[serde(default = "default_blockage_height")]
    pub blockage_height: f64,
}

impl TopologySpec {
    pub fn grid(n_cells: usize, width: f64, height: f64, n_blockages: usize) -> Self {
        Self {
            kind: TopologyKind::Grid,
            n_cells,
            width,
            height,
            n_blockages,
            blockage_width: default_blockage_width(),
            blockage_height: default_blockage_height(),
        }
    }

    pub fn random(n_cells: usize, width: f64, height: f64, n_blockages: usize) -> Self {
        Self {
            kind: TopologyKind::Random,
            ..Self::grid(n_cells, width, height, n_blockages)
        }
    }

    /// Mean distance between neighbouring cell centers.
    pub fn cell_side(&self) -> f64 {
        (self.width * self.height / self.n_cells as f64).sqrt()
    }
}

/// Immutable cell geometry with precomputed distances and LOS flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TopologyFile", try_from = "TopologyFile")]
pub struct NetworkTopology {
    pub kind: TopologyKind,
    pub seed: u64,
    pub area: (f64, f64),
    pub cell_radius: f64,
    pub centers: Vec<Point>,
    pub blockages: Vec<Blockage>,
    distance: Vec<f64>,
    los: Vec<bool>,
}

/// On-disk form of a topology: only the generating data, matrices are rebuilt.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TopologyFile {
    pub kind: TopologyKind,
    pub seed: u64,
    pub area: (f64, f64),
    pub cell_radius: f64,
    pub centers: Vec<Point>,
    pub blockages: Vec<Blockage>,
}

impl From<NetworkTopology> for TopologyFile {
    fn from(t: NetworkTopology) -> Self {
        Self {
            kind: t.kind,
            seed: t.seed,
            area: t.area,
            cell_radius: t.cell_radius,
            centers: t.centers,
            blockages: t.blockages,
        }
    }
}

impl TryFrom<TopologyFile> for NetworkTopology {
    type Error = TopologyError;

    fn try_from(f: TopologyFile) -> Result<Self, Self::Error> {
        NetworkTopology::from_parts(f.kind, f.seed, f.area, f.cell_radius, f.centers, f.blockages)
    }
}

impl NetworkTopology {
    /// Assembles a topology from explicit centers and blockages.
    pub fn from_parts(
        kind: TopologyKind,
        seed: u64,
        area: (f64, f64),
        cell_radius: f64,
        centers: Vec<Point>,
        blockages: Vec<Blockage>,
    ) -> Result<Self, TopologyError> {
        check_area(area.0, area.1)?;
        if centers.is_empty() {
            return Err(TopologyError::NoCells);
        }
        for c in &centers {
            if !(c.x >= 0.0 && c.x <= area.0 && c.y >= 0.0 && c.y <= area.1) {
                return Err(TopologyError::CenterOutside(c.x, c.y));
            }
        }
        for b in &blockages {
            Blockage::new(b.center, b.width, b.height)?;
        }
        let n = centers.len();
        let mut distance = vec![0.0; n * n];
        let mut los = vec![true; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = centers[i].dist(&centers[j]);
                let clear = !blockages.iter().any(|b| b.blocks(centers[i], centers[j]));
                distance[i * n + j] = d;
                distance[j * n + i] = d;
                los[i * n + j] = clear;
                los[j * n + i] = clear;
            }
        }
        Ok(Self {
            kind,
            seed,
            area,
            cell_radius,
            centers,
            blockages,
            distance,
            los,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.centers.len()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distance[i * self.n_cells() + j]
    }

    /// LOS flag between the centers of cells `i` and `j` (precomputed).
    pub fn los(&self, i: usize, j: usize) -> bool {
        self.los[i * self.n_cells() + j]
    }

    /// Checked LOS query between two cell centers.
    pub fn is_los(&self, i: usize, j: usize) -> Result<bool, TopologyError> {
        let n = self.n_cells();
        for id in [i, j] {
            if id >= n {
                return Err(TopologyError::CellOutOfRange { id, n });
            }
        }
        Ok(self.los(i, j))
    }

    /// True if the segment between two arbitrary points clears every blockage.
    pub fn clear_path(&self, a: Point, b: Point) -> bool {
        !self.blockages.iter().any(|blk| blk.blocks(a, b))
    }

    /// Mean spacing between neighbouring cells, used as the hop length.
    pub fn cell_side(&self) -> f64 {
        (self.area.0 * self.area.1 / self.n_cells() as f64).sqrt()
    }

    /// Index of the cell whose transmitter is nearest to `p`.
    pub fn nearest_cell(&self, p: Point) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, c) in self.centers.iter().enumerate() {
            let d = c.dist(&p);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

fn check_area(w: f64, h: f64) -> Result<(), TopologyError> {
    if w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite() {
        Ok(())
    } else {
        Err(TopologyError::BadArea(w, h))
    }
}

/// Generates a grid or random layout with `spec.n_blockages` blockages.
pub fn build_topology(spec: &TopologySpec, rng: &mut SimRng, seed: u64) -> Result<NetworkTopology, TopologyError> {
    check_area(spec.width, spec.height)?;
    if spec.n_cells == 0 {
        return Err(TopologyError::NoCells);
    }
    if !(spec.blockage_width > 0.0 && spec.blockage_height > 0.0) {
        return Err(TopologyError::BadBlockage(spec.blockage_width, spec.blockage_height));
    }
    match spec.kind {
        TopologyKind::Grid => build_grid(spec, rng, seed),
        TopologyKind::Random => build_random(spec, rng, seed),
    }
}

fn build_grid(spec: &TopologySpec, rng: &mut SimRng, seed: u64) -> Result<NetworkTopology, TopologyError> {
    let side = (spec.n_cells as f64).sqrt().round() as usize;
    if side * side != spec.n_cells {
        return Err(TopologyError::NotSquare(spec.n_cells));
    }
    let sx = spec.width / side as f64;
    let sy = spec.height / side as f64;
    let mut centers = Vec::with_capacity(spec.n_cells);
    for r in 0..side {
        for c in 0..side {
            centers.push(Point::new((c as f64 + 0.5) * sx, (r as f64 + 0.5) * sy));
        }
    }

    // Interior boundary segments: (midpoint, boundary runs along y).
    let mut segments = Vec::new();
    for r in 0..side {
        for c in 0..side.saturating_sub(1) {
            segments.push((Point::new((c + 1) as f64 * sx, (r as f64 + 0.5) * sy), true));
        }
    }
    for r in 0..side.saturating_sub(1) {
        for c in 0..side {
            segments.push((Point::new((c as f64 + 0.5) * sx, (r + 1) as f64 * sy), false));
        }
    }
    segments.shuffle(rng);

    let mut blockages: Vec<Blockage> = Vec::with_capacity(spec.n_blockages);
    for (mid, vertical) in segments {
        if blockages.len() == spec.n_blockages {
            break;
        }
        let b = if vertical {
            Blockage::new(mid, spec.blockage_width * sx, spec.blockage_height * sy)?
        } else {
            Blockage::new(mid, spec.blockage_height * sx, spec.blockage_width * sy)?
        };
        if !blockages.iter().any(|o| o.overlaps(&b)) {
            blockages.push(b);
        }
    }
    if blockages.len() < spec.n_blockages {
        return Err(TopologyError::BlockagePlacement {
            placed: blockages.len(),
            requested: spec.n_blockages,
        });
    }
    NetworkTopology::from_parts(
        TopologyKind::Grid,
        seed,
        (spec.width, spec.height),
        sx.min(sy) / 2.0,
        centers,
        blockages,
    )
}

fn build_random(spec: &TopologySpec, rng: &mut SimRng, seed: u64) -> Result<NetworkTopology, TopologyError> {
    let centers: Vec<Point> = (0..spec.n_cells)
        .map(|_| Point::new(rng.random::<f64>() * spec.width, rng.random::<f64>() * spec.height))
        .collect();
    let side = spec.cell_side();

    // Blockages sit across the boundary between a cell and its nearest
    // neighbour, with the long side along the bisector.
    let mut blockages: Vec<Blockage> = Vec::with_capacity(spec.n_blockages);
    let mut order: Vec<usize> = (0..spec.n_cells).collect();
    order.shuffle(rng);
    for &i in &order {
        if blockages.len() == spec.n_blockages || spec.n_cells < 2 {
            break;
        }
        let j = (0..spec.n_cells)
            .filter(|&j| j != i)
            .min_by(|&a, &b| centers[i].dist(&centers[a]).total_cmp(&centers[i].dist(&centers[b])))
            .unwrap();
        let mid = Point::new((centers[i].x + centers[j].x) / 2.0, (centers[i].y + centers[j].y) / 2.0);
        let dx = (centers[j].x - centers[i].x).abs();
        let dy = (centers[j].y - centers[i].y).abs();
        let (w, h) = if dx >= dy {
            (spec.blockage_width * side, spec.blockage_height * side)
        } else {
            (spec.blockage_height * side, spec.blockage_width * side)
        };
        // Keep the wall thinner than the gap so it never swallows a center.
        let gap = centers[i].dist(&centers[j]);
        let (w, h) = if dx >= dy { (w.min(gap * 0.5), h) } else { (w, h.min(gap * 0.5)) };
        let b = Blockage::new(mid, w, h)?;
        if !blockages.iter().any(|o| o.overlaps(&b)) {
            blockages.push(b);
        }
    }
    if blockages.len() < spec.n_blockages {
        return Err(TopologyError::BlockagePlacement {
            placed: blockages.len(),
            requested: spec.n_blockages,
        });
    }
    let radius = (spec.width * spec.height / (std::f64::consts::PI * spec.n_cells as f64)).sqrt();
    NetworkTopology::from_parts(
        TopologyKind::Random,
        seed,
        (spec.width, spec.height),
        radius,
        centers,
        blockages,
    )
}

/// Large-scale pathloss model parameters (dB quantities as named).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathlossParams {
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub bandwidth_hz: f64,
    pub ref_loss_db: f64,
    pub ref_distance_m: f64,
    pub alpha_los: f64,
    pub alpha_nlos: f64,
}

impl Default for PathlossParams {
    fn default() -> Self {
        Self {
            tx_power_dbm: -11.0,
            noise_psd_dbm_per_hz: -173.0,
            bandwidth_hz: 20e6,
            ref_loss_db: 74.0,
            ref_distance_m: 50.0,
            alpha_los: 2.1,
            alpha_nlos: 3.3,
        }
    }
}

impl PathlossParams {
    pub fn validate(&self) -> Result<(), TopologyError> {
        if !(self.bandwidth_hz > 0.0) {
            return Err(TopologyError::BadPathloss("bandwidth_hz must be > 0"));
        }
        if !(self.ref_distance_m > 0.0) {
            return Err(TopologyError::BadPathloss("ref_distance_m must be > 0"));
        }
        if !(self.alpha_los > 0.0 && self.alpha_nlos >= self.alpha_los) {
            return Err(TopologyError::BadPathloss("need alpha_nlos >= alpha_los > 0"));
        }
        Ok(())
    }

    /// Thermal noise power over the band, dBm.
    pub fn noise_dbm(&self) -> f64 {
        self.noise_psd_dbm_per_hz + 10.0 * self.bandwidth_hz.log10()
    }

    /// INR in dB at distance `d` meters.
    pub fn inr_db(&self, d: f64, los: bool) -> f64 {
        let alpha = if los { self.alpha_los } else { self.alpha_nlos };
        self.tx_power_dbm - self.noise_dbm() - self.ref_loss_db - alpha * 10.0 * (d / self.ref_distance_m).log10()
    }

    pub fn inr(&self, d: f64, los: bool) -> f64 {
        crate::db_to_linear(self.inr_db(d, los))
    }
}

/// Symmetric INR matrix; `get(i, j)` is the INR a transmitter in cell `i`
/// causes at a receiver in cell `j`, and the diagonal is the own-cell SNR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterferenceMatrix {
    n: usize,
    phi: Vec<f64>,
}

impl InterferenceMatrix {
    /// Builds a matrix from row-major values. Panics on a shape mismatch.
    pub fn from_rows(n: usize, phi: Vec<f64>) -> Self {
        assert_eq!(phi.len(), n * n, "INR matrix must be n x n");
        Self { n, phi }
    }

    pub fn n_cells(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.phi[i * self.n + j]
    }

    /// Normalized coupling `phi[j][i] / phi[i][i]` seen by cell `i`.
    #[inline]
    pub fn coupling(&self, j: usize, i: usize) -> f64 {
        self.get(j, i) / self.get(i, i)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// Builds the INR matrix from cell-center distances and LOS flags. The own
/// cell uses the reference distance.
pub fn compute_phi(topology: &NetworkTopology, params: &PathlossParams) -> Result<InterferenceMatrix, TopologyError> {
    params.validate()?;
    let n = topology.n_cells();
    let mut phi = vec![0.0; n * n];
    for i in 0..n {
        phi[i * n + i] = params.inr(params.ref_distance_m, true);
        for j in (i + 1)..n {
            let v = params.inr(topology.distance(i, j), topology.los(i, j));
            phi[i * n + j] = v;
            phi[j * n + i] = v;
        }
    }
    Ok(InterferenceMatrix::from_rows(n, phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn grid(n: usize, w: f64, blockages: usize, seed: u64) -> NetworkTopology {
        let spec = TopologySpec::grid(n, w, w, blockages);
        build_topology(&spec, &mut stream(seed, &[]), seed).unwrap()
    }

    #[test]
    fn sixteen_by_sixteen_grid_spacing() {
        let t = grid(256, 1600.0, 0, 1);
        assert_eq!(t.n_cells(), 256);
        assert!((t.distance(0, 1) - 100.0).abs() < 1e-9);
        assert!((t.distance(0, 16) - 100.0).abs() < 1e-9);
        assert!((t.cell_radius - 50.0).abs() < 1e-12);
    }

    #[test]
    fn small_grid_is_all_los() {
        let t = grid(4, 200.0, 0, 3);
        for i in 0..4 {
            for j in 0..4 {
                assert!(t.is_los(i, j).unwrap());
            }
        }
    }

    #[test]
    fn seeded_blockages_are_reproducible() {
        let a = grid(16, 400.0, 3, 7);
        let b = grid(16, 400.0, 3, 7);
        assert_eq!(a, b);
        assert_eq!(a.blockages.len(), 3);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = stream(0, &[]);
        assert_eq!(
            build_topology(&TopologySpec::grid(5, 100.0, 100.0, 0), &mut rng, 0),
            Err(TopologyError::NotSquare(5))
        );
        assert_eq!(
            build_topology(&TopologySpec::grid(4, 0.0, 100.0, 0), &mut rng, 0),
            Err(TopologyError::BadArea(0.0, 100.0))
        );
        let t = grid(4, 200.0, 0, 0);
        assert!(matches!(t.is_los(0, 4), Err(TopologyError::CellOutOfRange { id: 4, n: 4 })));
    }

    #[test]
    fn wall_on_shared_boundary_blocks_adjacent_pair() {
        // Cells 0 and 1 of a 2x2 grid share the vertical boundary x = 100.
        let centers = vec![
            Point::new(50.0, 50.0),
            Point::new(150.0, 50.0),
            Point::new(50.0, 150.0),
            Point::new(150.0, 150.0),
        ];
        let wall = Blockage::new(Point::new(100.0, 50.0), 10.0, 60.0).unwrap();
        let t = NetworkTopology::from_parts(TopologyKind::Grid, 0, (200.0, 200.0), 50.0, centers, vec![wall]).unwrap();
        assert!(!t.is_los(0, 1).unwrap());
        assert!(!t.is_los(1, 0).unwrap());
        assert!(t.is_los(0, 0).unwrap());
        assert!(t.is_los(2, 3).unwrap());
        assert!(t.is_los(0, 2).unwrap());
        // Segment 0-3 crosses x = 100 at y = 100, above the wall.
        assert!(t.is_los(0, 3).unwrap());
    }

    #[test]
    fn grazing_an_edge_is_not_blocking() {
        let b = Blockage::new(Point::new(0.0, 0.0), 2.0, 2.0).unwrap();
        assert!(!b.blocks(Point::new(-5.0, 1.0), Point::new(5.0, 1.0)));
        assert!(!b.blocks(Point::new(1.0, 1.0), Point::new(3.0, 3.0)));
        assert!(b.blocks(Point::new(-5.0, 0.5), Point::new(5.0, 0.5)));
        assert!(b.blocks(Point::new(0.0, 0.0), Point::new(0.1, 0.0)));
    }

    #[test]
    fn inr_at_reference_distance() {
        let p = PathlossParams::default();
        assert!((p.noise_dbm() + 99.9897).abs() < 1e-3);
        assert!((p.inr_db(50.0, true) - 14.9897).abs() < 1e-3);
        let drop = p.inr_db(50.0, true) - p.inr_db(100.0, true);
        assert!((drop - 2.1 * 10.0 * 2f64.log10()).abs() < 1e-12);
        assert!((drop - 6.3216).abs() < 1e-3);
    }

    #[test]
    fn equal_exponents_ignore_los() {
        let p = PathlossParams {
            alpha_nlos: 2.1,
            ..PathlossParams::default()
        };
        let blocked = grid(64, 800.0, 6, 11);
        let clear = NetworkTopology::from_parts(
            TopologyKind::Grid,
            0,
            blocked.area,
            blocked.cell_radius,
            blocked.centers.clone(),
            vec![],
        )
        .unwrap();
        assert_eq!(compute_phi(&blocked, &p).unwrap(), compute_phi(&clear, &p).unwrap());
    }

    #[test]
    fn phi_is_symmetric_with_positive_diagonal() {
        let t = grid(64, 800.0, 6, 5);
        let phi = compute_phi(&t, &PathlossParams::default()).unwrap();
        assert!(phi.is_symmetric());
        assert!((0..64).all(|i| phi.get(i, i) > 0.0));
    }

    #[test]
    fn random_topology_keeps_centers_in_area() {
        let spec = TopologySpec::random(64, 800.0, 800.0, 2);
        let t = build_topology(&spec, &mut stream(9, &[]), 9).unwrap();
        assert_eq!(t.blockages.len(), 2);
        for c in &t.centers {
            assert!(c.x >= 0.0 && c.x <= 800.0 && c.y >= 0.0 && c.y <= 800.0);
        }
        for (k, c) in t.centers.iter().enumerate() {
            assert_eq!(t.nearest_cell(*c), k);
        }
    }

    #[test]
    fn file_roundtrip_rebuilds_matrices() {
        let t = grid(16, 400.0, 2, 4);
        let text = serde_json::to_string(&t).unwrap();
        let back: NetworkTopology = serde_json::from_str(&text).unwrap();
        assert_eq!(t, back);
    }
}
