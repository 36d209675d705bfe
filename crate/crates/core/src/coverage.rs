//! Detection coverage and localizability over a room grid.
//!
//! A pair `(i, j)` covers a tag position when the round-trip RSS clears the
//! reader sensitivity and the forward link from the transmitting antenna
//! clears the tag sensitivity. Pairs are unordered (`j >= i`); monostatic mode
//! keeps only the diagonal. A position is localizable when at least two pairs
//! cover it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::propagation::{bistatic_rss_dbm, forward_rss_dbm, Position3D, RadioParams, ReaderAntenna};
use crate::scenario::Scenario;

/// Minimum number of covered pairs for a 2D fix.
pub const MIN_MEASUREMENTS: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoverageError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid has no cells")]
    EmptyGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Monostatic,
    Bistatic,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Monostatic => "monostatic",
            Mode::Bistatic => "bistatic",
        }
    }

    /// Candidate measurement pairs for `n` antennas, in `(i, j >= i)` order.
    pub fn pairs(self, n: usize) -> Vec<AntennaPair> {
        match self {
            Mode::Monostatic => (0..n).map(|i| AntennaPair::new(i, i)).collect(),
            Mode::Bistatic => (0..n)
                .flat_map(|i| (i..n).map(move |j| AntennaPair::new(i, j)))
                .collect(),
        }
    }

    /// Upper bound on `M` for `n` antennas.
    pub fn max_measurements(self, n: usize) -> usize {
        match self {
            Mode::Monostatic => n,
            Mode::Bistatic => n * (n + 1) / 2,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "monostatic" | "mono" => Ok(Mode::Monostatic),
            "bistatic" | "bi" => Ok(Mode::Bistatic),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Transmit/receive antenna indices (positions in the antenna slice, not ids).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AntennaPair {
    pub tx: usize,
    pub rx: usize,
}

impl AntennaPair {
    pub const fn new(tx: usize, rx: usize) -> Self {
        Self { tx, rx }
    }

    pub fn is_monostatic(&self) -> bool {
        self.tx == self.rx
    }
}

/// Rectangular evaluation grid at a fixed tag height. Cells are indexed
/// row-major in `y`, so index order is `(y, x)` lexicographic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub step: f64,
    pub tag_height: f64,
}

impl GridSpec {
    pub fn room(width: f64, length: f64, step: f64, tag_height: f64) -> Self {
        Self {
            x_min: 0.0,
            x_max: width,
            y_min: 0.0,
            y_max: length,
            step,
            tag_height,
        }
    }

    pub fn validate(&self) -> Result<(), CoverageError> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max, self.step, self.tag_height]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(CoverageError::InvalidGrid("non-finite bound".into()));
        }
        if !(self.step > 0.0) {
            return Err(CoverageError::InvalidGrid(format!("step {} must be positive", self.step)));
        }
        if !(self.x_max > self.x_min && self.y_max > self.y_min) {
            return Err(CoverageError::InvalidGrid("degenerate bounds".into()));
        }
        Ok(())
    }

    fn cells_along(&self, extent: f64) -> usize {
        // Guard against 8.0 / 0.1 landing a hair above 80.
        ((extent / self.step) - 1e-9).ceil().max(0.0) as usize
    }

    pub fn nx(&self) -> usize {
        self.cells_along(self.x_max - self.x_min)
    }

    pub fn ny(&self) -> usize {
        self.cells_along(self.y_max - self.y_min)
    }

    pub fn len(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx() + ix
    }

    /// Cell center of `index`, at the tag height.
    pub fn cell_center(&self, index: usize) -> Position3D {
        let nx = self.nx();
        let (ix, iy) = (index % nx, index / nx);
        Position3D::new(
            self.x_min + (ix as f64 + 0.5) * self.step,
            self.y_min + (iy as f64 + 0.5) * self.step,
            self.tag_height,
        )
    }

    /// Index of the cell containing `(x, y)`, if inside the grid.
    pub fn locate(&self, x: f64, y: f64) -> Option<usize> {
        let fx = (x - self.x_min) / self.step;
        let fy = (y - self.y_min) / self.step;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        (ix < self.nx() && iy < self.ny()).then(|| self.index(ix, iy))
    }
}

/// Whether pair `(tx, rx)` detects a tag at `tag`.
pub fn pair_coverage(
    params: &RadioParams,
    tx: &ReaderAntenna,
    rx: &ReaderAntenna,
    tag: &Position3D,
) -> bool {
    let round_trip = match bistatic_rss_dbm(params, tx, rx, tag) {
        Ok(v) => v,
        Err(_) => return false,
    };
    let forward = match forward_rss_dbm(params, tx, tag) {
        Ok(v) => v,
        Err(_) => return false,
    };
    round_trip >= params.reader_sensitivity_dbm && forward >= params.tag_sensitivity_dbm
}

/// `M(x, y)`: number of covered pairs among the mode's candidates.
pub fn measurement_count(
    params: &RadioParams,
    antennas: &[ReaderAntenna],
    tag: &Position3D,
    mode: Mode,
) -> u32 {
    mode.pairs(antennas.len())
        .iter()
        .filter(|p| pair_coverage(params, &antennas[p.tx], &antennas[p.rx], tag))
        .count() as u32
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageMap {
    pub grid: GridSpec,
    pub mode: Mode,
    pub pairs: Vec<AntennaPair>,
    /// `[pair][cell]`, aligned with `pairs`.
    pub pair_coverage: Vec<Vec<bool>>,
    pub m_count: Vec<u32>,
    pub localizable: Vec<bool>,
    /// Strongest round-trip RSS over the mode's pairs, covered or not.
    pub max_rss_dbm: Vec<f64>,
}

struct CellEval {
    covered: Vec<bool>,
    max_rss: f64,
}

impl CoverageMap {
    pub fn evaluate(
        params: &RadioParams,
        antennas: &[ReaderAntenna],
        grid: &GridSpec,
        mode: Mode,
    ) -> Result<Self, CoverageError> {
        grid.validate()?;
        let pairs = mode.pairs(antennas.len());
        let cells: Vec<CellEval> = (0..grid.len())
            .into_par_iter()
            .map(|cell| {
                let tag = grid.cell_center(cell);
                let covered = pairs
                    .iter()
                    .map(|p| pair_coverage(params, &antennas[p.tx], &antennas[p.rx], &tag))
                    .collect();
                let max_rss = pairs
                    .iter()
                    .filter_map(|p| bistatic_rss_dbm(params, &antennas[p.tx], &antennas[p.rx], &tag).ok())
                    .fold(f64::NEG_INFINITY, f64::max);
                CellEval { covered, max_rss }
            })
            .collect();

        let mut pair_coverage = vec![Vec::with_capacity(cells.len()); pairs.len()];
        let mut m_count = Vec::with_capacity(cells.len());
        let mut max_rss_dbm = Vec::with_capacity(cells.len());
        for cell in &cells {
            for (k, &c) in cell.covered.iter().enumerate() {
                pair_coverage[k].push(c);
            }
            m_count.push(cell.covered.iter().filter(|&&c| c).count() as u32);
            max_rss_dbm.push(cell.max_rss);
        }
        let localizable = m_count.iter().map(|&m| m >= MIN_MEASUREMENTS).collect();
        Ok(Self {
            grid: *grid,
            mode,
            pairs,
            pair_coverage,
            m_count,
            localizable,
            max_rss_dbm,
        })
    }

    pub fn len(&self) -> usize {
        self.m_count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_count.is_empty()
    }

    pub fn localizable_count(&self) -> usize {
        self.localizable.iter().filter(|&&l| l).count()
    }

    /// `M` counted over ordered pairs: every covered off-diagonal pair twice.
    pub fn ordered_count(&self, cell: usize) -> u32 {
        self.pairs
            .iter()
            .zip(&self.pair_coverage)
            .filter(|(_, cov)| cov[cell])
            .map(|(p, _)| if p.is_monostatic() { 1 } else { 2 })
            .sum()
    }
}

pub fn coverage_map(scenario: &Scenario) -> Result<CoverageMap, CoverageError> {
    CoverageMap::evaluate(&scenario.radio, &scenario.antennas, &scenario.room, scenario.mode)
}

/// Localizable share of the grid, percent.
pub fn coverage_percentage(map: &CoverageMap) -> Result<f64, CoverageError> {
    if map.is_empty() {
        return Err(CoverageError::EmptyGrid);
    }
    Ok(100.0 * map.localizable_count() as f64 / map.len() as f64)
}

pub fn max_rss_map(scenario: &Scenario) -> Result<Vec<f64>, CoverageError> {
    Ok(coverage_map(scenario)?.max_rss_dbm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn corner_antennas(theta: f64) -> Vec<ReaderAntenna> {
        [(0.0, 0.0), (8.0, 0.0), (8.0, 8.0), (0.0, 8.0)]
            .iter()
            .enumerate()
            .map(|(k, &(x, y))| {
                let az = (4.0f64 - y).atan2(4.0 - x);
                ReaderAntenna::new(k + 1, Position3D::new(x, y, 2.0), theta, az)
            })
            .collect()
    }

    #[test]
    fn pair_sets() {
        assert_eq!(Mode::Bistatic.pairs(4).len(), 10);
        assert_eq!(Mode::Monostatic.pairs(4).len(), 4);
        assert!(Mode::Monostatic.pairs(4).iter().all(|p| p.is_monostatic()));
        assert!(Mode::Bistatic.pairs(0).is_empty());
        let bi = Mode::Bistatic.pairs(4);
        for p in Mode::Monostatic.pairs(4) {
            assert!(bi.contains(&p));
        }
    }

    #[test]
    fn grid_geometry() {
        let g = GridSpec::room(8.0, 8.0, 0.1, 1.0);
        assert_eq!((g.nx(), g.ny(), g.len()), (80, 80, 6400));
        let g5 = GridSpec::room(8.0, 8.0, 0.05, 1.0);
        assert_eq!(g5.len(), 25_600);
        let odd = GridSpec::room(1.0, 0.5, 0.3, 1.0);
        assert_eq!((odd.nx(), odd.ny()), (4, 2));
        let c = g.cell_center(g.index(3, 7));
        assert!((c.x - 0.35).abs() < 1e-12 && (c.y - 0.75).abs() < 1e-12 && c.z == 1.0);
        assert_eq!(g.locate(0.35, 0.75), Some(g.index(3, 7)));
        assert_eq!(g.locate(-0.1, 0.5), None);
        assert_eq!(g.locate(8.5, 0.5), None);
        assert!(GridSpec::room(8.0, 8.0, 0.0, 1.0).validate().is_err());
        assert!(GridSpec::room(0.0, 8.0, 0.1, 1.0).validate().is_err());
    }

    #[test]
    fn tag_gate_blocks_strong_round_trip() {
        let ants = corner_antennas(PI / 3.0);
        let tag = Position3D::new(2.0, 2.5, 1.0);
        let base = RadioParams::default();
        let fwd = forward_rss_dbm(&base, &ants[0], &tag).unwrap();
        // Raise the tag threshold just above the forward RSS and make the
        // reader threshold trivially satisfied.
        let gated = RadioParams {
            tag_sensitivity_dbm: fwd + 5.0,
            reader_sensitivity_dbm: -500.0,
            ..base.clone()
        };
        assert!(!pair_coverage(&gated, &ants[0], &ants[0], &tag));
        let open = RadioParams {
            tag_sensitivity_dbm: fwd - 0.01,
            ..gated
        };
        assert!(pair_coverage(&open, &ants[0], &ants[0], &tag));
    }

    #[test]
    fn tag_gate_uses_transmit_antenna_only() {
        let ants = corner_antennas(PI / 3.0);
        let tag = Position3D::new(1.5, 1.0, 1.0);
        let base = RadioParams {
            reader_sensitivity_dbm: -500.0,
            ..RadioParams::default()
        };
        let f0 = forward_rss_dbm(&base, &ants[0], &tag).unwrap();
        let f2 = forward_rss_dbm(&base, &ants[2], &tag).unwrap();
        assert!(f0 > f2);
        let p = RadioParams {
            tag_sensitivity_dbm: (f0 + f2) / 2.0,
            ..base
        };
        assert!(pair_coverage(&p, &ants[0], &ants[2], &tag));
        assert!(!pair_coverage(&p, &ants[2], &ants[0], &tag));
    }

    #[test]
    fn far_null_is_uncovered() {
        // Flat antennas (theta = 0) have gain exactly zero at tag height 2 m.
        let ants: Vec<_> = corner_antennas(0.0);
        let tag = Position3D::new(7.9, 7.9, 2.0);
        let p = RadioParams::default();
        assert!(!pair_coverage(&p, &ants[0], &ants[0], &tag));
    }

    #[test]
    fn measurement_count_bounds_and_degenerate_cases() {
        let p = RadioParams {
            reader_sensitivity_dbm: -500.0,
            tag_sensitivity_dbm: -500.0,
            ..RadioParams::default()
        };
        let ants = corner_antennas(FRAC_PI_2 - 0.1);
        let tag = Position3D::new(3.3, 4.1, 1.0);
        assert_eq!(measurement_count(&p, &ants, &tag, Mode::Bistatic), 10);
        assert_eq!(measurement_count(&p, &ants, &tag, Mode::Monostatic), 4);
        assert_eq!(measurement_count(&p, &[], &tag, Mode::Bistatic), 0);
    }

    #[test]
    fn single_monostatic_detection_is_not_localizable() {
        let ants = corner_antennas(PI / 3.0);
        let tag = Position3D::new(1.0, 1.2, 1.0);
        let base = RadioParams {
            tag_sensitivity_dbm: -500.0,
            ..RadioParams::default()
        };
        let rss: Vec<f64> = ants
            .iter()
            .map(|a| bistatic_rss_dbm(&base, a, a, &tag).unwrap())
            .collect();
        let mut sorted = rss.clone();
        sorted.sort_by(f64::total_cmp);
        // Threshold between the strongest and second strongest antenna.
        let p = RadioParams {
            reader_sensitivity_dbm: (sorted[3] + sorted[2]) / 2.0,
            ..base
        };
        assert_eq!(measurement_count(&p, &ants, &tag, Mode::Monostatic), 1);
    }

    #[test]
    fn zero_power_map_is_dark() {
        let mut p = RadioParams::default();
        p.set_tx_power_mw(0.0);
        let ants = corner_antennas(PI / 4.0);
        let grid = GridSpec::room(8.0, 8.0, 0.5, 1.0);
        let map = CoverageMap::evaluate(&p, &ants, &grid, Mode::Bistatic).unwrap();
        assert_eq!(coverage_percentage(&map).unwrap(), 0.0);
    }

    #[test]
    fn percentage_counts_cells() {
        let p = RadioParams::default();
        let ants = corner_antennas(PI / 3.0);
        let grid = GridSpec::room(2.0, 1.0, 0.5, 1.0);
        let mut map = CoverageMap::evaluate(&p, &ants, &grid, Mode::Bistatic).unwrap();
        map.localizable = vec![true; 8];
        assert_eq!(coverage_percentage(&map).unwrap(), 100.0);
        map.localizable = vec![false; 8];
        assert_eq!(coverage_percentage(&map).unwrap(), 0.0);
        map.localizable = (0..8).map(|k| k % 2 == 0).collect();
        assert_eq!(coverage_percentage(&map).unwrap(), 50.0);
        map.m_count.clear();
        assert_eq!(coverage_percentage(&map), Err(CoverageError::EmptyGrid));
    }

    #[test]
    fn map_invariants_hold() {
        let p = RadioParams::default().with_backscatter_product(0.1);
        let ants = corner_antennas(PI / 3.0);
        let grid = GridSpec::room(8.0, 8.0, 0.25, 1.0);
        let bi = CoverageMap::evaluate(&p, &ants, &grid, Mode::Bistatic).unwrap();
        let mono = CoverageMap::evaluate(&p, &ants, &grid, Mode::Monostatic).unwrap();
        for cell in 0..bi.len() {
            let m: u32 = bi.pair_coverage.iter().map(|c| c[cell] as u32).sum();
            assert_eq!(m, bi.m_count[cell]);
            assert_eq!(bi.localizable[cell], bi.m_count[cell] >= 2);
            assert!(bi.m_count[cell] <= 10 && mono.m_count[cell] <= 4);
            assert!(bi.localizable[cell] || !mono.localizable[cell]);
            assert!(bi.max_rss_dbm[cell] >= mono.max_rss_dbm[cell]);
            assert!(bi.ordered_count(cell) >= bi.m_count[cell]);
        }
        // Diagonal pair flags coincide between the two maps.
        for (k, pair) in mono.pairs.iter().enumerate() {
            let b = bi.pairs.iter().position(|q| q == pair).unwrap();
            assert_eq!(mono.pair_coverage[k], bi.pair_coverage[b]);
        }
    }
}
