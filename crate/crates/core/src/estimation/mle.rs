//! Exhaustive maximum-likelihood search over the candidate grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EstimationError, MeasurementSet, MismatchPolicy};
use crate::coverage::{pair_coverage, AntennaPair, GridSpec, MIN_MEASUREMENTS};
use crate::propagation::{bistatic_rss_dbm, Position3D};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleEstimate {
    pub position: Position3D,
    pub cell: usize,
    /// Sum of squared residuals at the estimate, dB^2.
    pub objective: f64,
    /// The `M = 2` region was empty and the whole localizable region was searched.
    pub fell_back: bool,
}

/// Predicted RSS of every candidate pair at every grid cell, with the mismatch
/// policy folded in: uncovered pairs hold the reader sensitivity or `NaN`
/// (dropped). Built once per scenario and reused across trials.
#[derive(Debug, Clone)]
pub struct RssTable {
    pub grid: GridSpec,
    pub pairs: Vec<AntennaPair>,
    /// Cell-major, `pairs.len()` entries per cell.
    predictions: Vec<f64>,
    pub m_count: Vec<u32>,
    two_cells: Vec<usize>,
    localizable_cells: Vec<usize>,
}

impl RssTable {
    pub fn build(scenario: &Scenario) -> Result<Self, EstimationError> {
        let grid = scenario.mle_grid();
        grid.validate()?;
        let ants = &scenario.antennas;
        let radio = &scenario.radio;
        let pairs = scenario.mode.pairs(ants.len());
        let floor = match scenario.mismatch {
            MismatchPolicy::SensitivityFloor => radio.reader_sensitivity_dbm,
            MismatchPolicy::Drop => f64::NAN,
        };
        let rows: Vec<(Vec<f64>, u32)> = (0..grid.len())
            .into_par_iter()
            .map(|cell| {
                let tag = grid.cell_center(cell);
                let mut m = 0;
                let row = pairs
                    .iter()
                    .map(|p| {
                        let (tx, rx) = (&ants[p.tx], &ants[p.rx]);
                        if pair_coverage(radio, tx, rx, &tag) {
                            m += 1;
                            bistatic_rss_dbm(radio, tx, rx, &tag)
                        } else {
                            Ok(floor)
                        }
                    })
                    .collect::<Result<Vec<f64>, _>>()?;
                Ok((row, m))
            })
            .collect::<Result<_, EstimationError>>()?;

        let mut predictions = Vec::with_capacity(rows.len() * pairs.len());
        let mut m_count = Vec::with_capacity(rows.len());
        for (row, m) in rows {
            predictions.extend(row);
            m_count.push(m);
        }
        let two_cells = (0..m_count.len()).filter(|&c| m_count[c] == MIN_MEASUREMENTS).collect();
        let localizable_cells = (0..m_count.len()).filter(|&c| m_count[c] >= MIN_MEASUREMENTS).collect();
        Ok(Self {
            grid,
            pairs,
            predictions,
            m_count,
            two_cells,
            localizable_cells,
        })
    }

    pub fn pair_index(&self, pair: AntennaPair) -> Option<usize> {
        self.pairs.iter().position(|&p| p == pair)
    }

    /// Tabulated prediction for `pair` at `cell`.
    pub fn prediction(&self, cell: usize, pair: usize) -> f64 {
        self.predictions[cell * self.pairs.len() + pair]
    }

    /// Sum of squared residuals at `cell`.
    pub fn objective(&self, cell: usize, terms: &[(usize, f64)]) -> f64 {
        let row = &self.predictions[cell * self.pairs.len()..][..self.pairs.len()];
        terms
            .iter()
            .filter(|(k, _)| !row[*k].is_nan())
            .map(|&(k, v)| (row[k] - v).powi(2))
            .sum()
    }

    fn terms(&self, meas: &MeasurementSet) -> Result<Vec<(usize, f64)>, EstimationError> {
        meas.entries
            .iter()
            .map(|m| {
                self.pair_index(m.pair)
                    .map(|k| (k, m.rss_dbm))
                    .ok_or(EstimationError::UnknownPair { tx: m.pair.tx, rx: m.pair.rx })
            })
            .collect()
    }

    /// Minimizes the residual sum of squares over the constrained region.
    ///
    /// Two measurements restrict the search to cells with exactly two covered
    /// pairs; more restrict it to all localizable cells. Ties keep the lowest
    /// cell index.
    pub fn search(&self, meas: &MeasurementSet) -> Result<MleEstimate, EstimationError> {
        if meas.len() < MIN_MEASUREMENTS as usize {
            return Err(EstimationError::NotLocalizable(meas.len()));
        }
        let terms = self.terms(meas)?;
        let (region, fell_back) = if meas.len() == MIN_MEASUREMENTS as usize && !self.two_cells.is_empty() {
            (&self.two_cells, false)
        } else {
            (&self.localizable_cells, meas.len() == MIN_MEASUREMENTS as usize)
        };
        if region.is_empty() {
            return Err(EstimationError::EmptySearchRegion);
        }

        let np = self.pairs.len();
        let mut best = f64::INFINITY;
        let mut best_cell = region[0];
        'cells: for &cell in region {
            let row = &self.predictions[cell * np..(cell + 1) * np];
            let mut sum = 0.0;
            for &(k, v) in &terms {
                let p = row[k];
                if p.is_nan() {
                    continue;
                }
                let r = p - v;
                sum += r * r;
                if sum > best {
                    continue 'cells;
                }
            }
            if sum < best {
                best = sum;
                best_cell = cell;
            }
        }
        Ok(MleEstimate {
            position: self.grid.cell_center(best_cell),
            cell: best_cell,
            objective: best,
            fell_back,
        })
    }
}

/// One-shot search; build an [`RssTable`] directly to reuse it across trials.
pub fn mle_grid_search(scenario: &Scenario, meas: &MeasurementSet) -> Result<MleEstimate, EstimationError> {
    if meas.len() < MIN_MEASUREMENTS as usize {
        return Err(EstimationError::NotLocalizable(meas.len()));
    }
    RssTable::build(scenario)?.search(meas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::Mode;
    use crate::estimation::test_support::corner;
    use crate::estimation::{residual_sum_of_squares, simulate_measurements, trial_seed};
    use std::f64::consts::PI;

    fn coarse(mode: Mode) -> Scenario {
        let mut s = corner(PI / 3.0, mode);
        s.mle_grid_step = 0.25;
        s
    }

    #[test]
    fn noiseless_on_node_recovers_truth() {
        let mut s = coarse(Mode::Bistatic);
        s.noise_sigma_db = 0.0;
        let table = RssTable::build(&s).unwrap();
        for cell in [200, 517, 700, 901] {
            let tag = table.grid.cell_center(cell);
            let meas = simulate_measurements(&s, &tag, 3).unwrap();
            if meas.len() < 3 {
                continue;
            }
            let est = table.search(&meas).unwrap();
            assert_eq!(est.cell, cell);
            assert_eq!(est.objective, 0.0);
        }
    }

    #[test]
    fn argmin_matches_direct_evaluation() {
        let s = coarse(Mode::Bistatic);
        let table = RssTable::build(&s).unwrap();
        for (k, &(x, y)) in [(1.1, 2.3), (4.4, 4.1), (6.2, 0.9), (3.3, 7.0)].iter().enumerate() {
            let meas = simulate_measurements(&s, &Position3D::new(x, y, 1.0), trial_seed(11, k as u64, 0)).unwrap();
            if meas.len() < 2 {
                continue;
            }
            let est = table.search(&meas).unwrap();
            let region: Vec<usize> = (0..table.grid.len())
                .filter(|&c| {
                    let m = table.m_count[c];
                    if meas.len() == 2 && !est.fell_back { m == 2 } else { m >= 2 }
                })
                .collect();
            let mut best = (f64::INFINITY, usize::MAX);
            for c in region {
                let (q, _) = residual_sum_of_squares(&s, &table.grid.cell_center(c), &meas).unwrap();
                assert!(est.objective <= q + 1e-9 * q.max(1.0));
                if q < best.0 {
                    best = (q, c);
                }
            }
            assert_eq!(est.cell, best.1);
            assert!((est.objective - best.0).abs() <= 1e-9 * best.0.max(1.0));
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let s = coarse(Mode::Bistatic);
        let table = RssTable::build(&s).unwrap();
        // Measurements at the floor match every cell where both pairs are dark.
        let floor = s.radio.reader_sensitivity_dbm;
        let meas = MeasurementSet {
            entries: vec![
                super::super::Measurement { pair: AntennaPair::new(0, 0), rss_dbm: floor },
                super::super::Measurement { pair: AntennaPair::new(1, 1), rss_dbm: floor },
                super::super::Measurement { pair: AntennaPair::new(2, 2), rss_dbm: floor },
            ],
            noise_sigma_db: 2.0,
            true_position: Position3D::new(0.0, 0.0, 1.0),
        };
        let est = table.search(&meas).unwrap();
        let zero: Vec<usize> = (0..table.grid.len())
            .filter(|&c| table.m_count[c] >= 2 && table.objective(c, &[(0, floor), (4, floor), (7, floor)]) == 0.0)
            .collect();
        if let Some(&first) = zero.first() {
            assert_eq!(est.cell, first);
        }
    }

    #[test]
    fn two_measurements_search_the_two_region() {
        let s = coarse(Mode::Monostatic);
        let table = RssTable::build(&s).unwrap();
        let two = (0..table.grid.len()).find(|&c| table.m_count[c] == 2).unwrap();
        let mut quiet = s.clone();
        quiet.noise_sigma_db = 0.0;
        let meas = simulate_measurements(&quiet, &table.grid.cell_center(two), 0).unwrap();
        assert_eq!(meas.len(), 2);
        let est = table.search(&meas).unwrap();
        assert_eq!(table.m_count[est.cell], 2);
        assert!(!est.fell_back);
    }

    #[test]
    fn too_few_measurements() {
        let s = coarse(Mode::Bistatic);
        let meas = MeasurementSet { entries: vec![], noise_sigma_db: 2.0, true_position: Position3D::new(1.0, 1.0, 1.0) };
        assert_eq!(mle_grid_search(&s, &meas), Err(EstimationError::NotLocalizable(0)));
    }
}
