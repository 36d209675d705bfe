//! Standard deployments, sweeps over elevation and power, Monte Carlo
//! accuracy runs and the link-budget calibration.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{coverage_map, coverage_percentage, CoverageError, CoverageMap, GridSpec, Mode};
use crate::estimation::{
    add_noise, covered_truth, crlb, trial_seed, EstimationError, MismatchPolicy, RssTable,
};
use crate::propagation::{DbScale, Position3D, PropagationError, RadioParams, ReaderAntenna};
use crate::scenario::{Placement, Scenario};

pub const ROOM_WIDTH_M: f64 = 8.0;
pub const ROOM_LENGTH_M: f64 = 8.0;
pub const ANTENNA_HEIGHT_M: f64 = 2.0;
pub const TAG_HEIGHT_M: f64 = 1.0;
pub const COVERAGE_STEP_M: f64 = 0.1;
/// Fine granularity for full-scale coverage maps.
pub const FULL_SCALE_STEP_M: f64 = 0.01;
pub const MLE_STEP_M: f64 = 0.05;
pub const ACCURACY_STEP_M: f64 = 0.5;
pub const DEFAULT_TRIALS: usize = 100;
pub const DEFAULT_SIGMA_DB: f64 = 2.0;
pub const MIN_SWEEP_POWER_MW: f64 = 1000.0;
pub const MAX_SWEEP_POWER_MW: f64 = 3000.0;
/// Medians are only reported at or above this coverage.
pub const MEDIAN_COVERAGE_PCT: f64 = 50.0;
/// Monostatic coverage anchor for the corner, `pi/4`, 1000 mW deployment.
pub const ANCHOR_COVERAGE_PCT: f64 = 21.0;
pub const CALIBRATION_TOLERANCE_PP: f64 = 0.5;
const CALIBRATION_LOG_RANGE: (f64, f64) = (-12.0, 0.0);

pub const STANDARD_THETAS: [f64; 3] = [FRAC_PI_4, FRAC_PI_3, FRAC_PI_2];

/// 1000 mW to 3000 mW in 200 mW steps.
pub fn standard_powers_mw() -> Vec<f64> {
    (0..=10).map(|k| MIN_SWEEP_POWER_MW + 200.0 * k as f64).collect()
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("target coverage {target:.2}% is unreachable; achievable range is {min:.2}% to {max:.2}%")]
    Unreachable { target: f64, min: f64, max: f64 },
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
}

/// Values that replace the defaults of [`build_scenario`]. `None` keeps the default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub radio: Option<RadioParams>,
    pub backscatter_product: Option<f64>,
    pub reader_sensitivity_dbm: Option<f64>,
    pub tag_sensitivity_dbm: Option<f64>,
    pub db_scale: Option<DbScale>,
    pub noise_sigma_db: Option<f64>,
    pub room_width: Option<f64>,
    pub room_length: Option<f64>,
    pub antenna_height: Option<f64>,
    pub tag_height: Option<f64>,
    pub coverage_step: Option<f64>,
    pub mle_grid_step: Option<f64>,
    pub accuracy_step: Option<f64>,
    pub trials_per_cell: Option<usize>,
    pub seed: Option<u64>,
    pub mismatch: Option<MismatchPolicy>,
    /// Antennas for [`Placement::Custom`].
    pub antennas: Option<Vec<ReaderAntenna>>,
    /// Accept powers outside the 1000 to 3000 mW sweep range.
    #[serde(default)]
    pub allow_any_power: bool,
}

/// Four antennas at the wall midpoints or corners, boresight toward the room center.
pub fn placement_antennas(
    placement: Placement,
    theta: f64,
    width: f64,
    length: f64,
    height: f64,
) -> Result<Vec<ReaderAntenna>, ExperimentError> {
    let (w, l) = (width, length);
    let spots: [(f64, f64, f64); 4] = match placement {
        Placement::Side => [
            (w / 2.0, 0.0, FRAC_PI_2),
            (w, l / 2.0, PI),
            (w / 2.0, l, -FRAC_PI_2),
            (0.0, l / 2.0, 0.0),
        ],
        Placement::Corner => {
            let diag = l.atan2(w);
            [(0.0, 0.0, diag), (w, 0.0, PI - diag), (w, l, diag - PI), (0.0, l, -diag)]
        }
        Placement::Custom => {
            return Err(ExperimentError::Config("custom placement needs an explicit antenna list".into()))
        }
    };
    Ok(spots
        .iter()
        .enumerate()
        .map(|(k, &(x, y, az))| ReaderAntenna::new(k + 1, Position3D::new(x, y, height), theta, az))
        .collect())
}

pub fn build_scenario(
    placement: Placement,
    theta: f64,
    power_mw: f64,
    mode: Mode,
    overrides: &Overrides,
) -> Result<Scenario, ExperimentError> {
    let config = |msg: String| Err(ExperimentError::Config(msg));
    if !(0.0..=FRAC_PI_2).contains(&theta) {
        return config(format!("elevation {theta} rad is outside [0, pi/2]"));
    }
    if !(power_mw >= 0.0 && power_mw.is_finite()) {
        return config(format!("transmit power {power_mw} mW is invalid"));
    }
    if !overrides.allow_any_power && !(MIN_SWEEP_POWER_MW..=MAX_SWEEP_POWER_MW).contains(&power_mw) {
        return config(format!(
            "transmit power {power_mw} mW is outside the {MIN_SWEEP_POWER_MW}-{MAX_SWEEP_POWER_MW} mW sweep range"
        ));
    }
    let width = overrides.room_width.unwrap_or(ROOM_WIDTH_M);
    let length = overrides.room_length.unwrap_or(ROOM_LENGTH_M);
    let height = overrides.antenna_height.unwrap_or(ANTENNA_HEIGHT_M);
    let antennas = match (placement, &overrides.antennas) {
        (Placement::Custom, Some(list)) if !list.is_empty() => list.clone(),
        (Placement::Custom, _) => return config("custom placement needs an explicit antenna list".into()),
        (_, Some(_)) => return config(format!("antenna list given for `{placement}` placement")),
        _ => placement_antennas(placement, theta, width, length, height)?,
    };

    let mut radio = overrides.radio.clone().unwrap_or_default();
    radio.set_tx_power_mw(power_mw);
    if let Some(p) = overrides.backscatter_product {
        if !(0.0..=1.0).contains(&p) {
            return config(format!("backscatter product {p} is outside [0, 1]"));
        }
        radio = radio.with_backscatter_product(p);
    }
    if let Some(v) = overrides.reader_sensitivity_dbm {
        radio.reader_sensitivity_dbm = v;
    }
    if let Some(v) = overrides.tag_sensitivity_dbm {
        radio.tag_sensitivity_dbm = v;
    }
    if let Some(v) = overrides.db_scale {
        radio.db_scale = v;
    }
    radio.validate()?;

    let room = GridSpec::room(
        width,
        length,
        overrides.coverage_step.unwrap_or(COVERAGE_STEP_M),
        overrides.tag_height.unwrap_or(TAG_HEIGHT_M),
    );
    room.validate()?;
    let sigma = overrides.noise_sigma_db.unwrap_or(DEFAULT_SIGMA_DB);
    if !(sigma > 0.0 && sigma.is_finite()) {
        return config(format!("noise sigma {sigma} dB must be positive"));
    }
    let scenario = Scenario {
        room,
        antennas,
        placement,
        mode,
        radio,
        noise_sigma_db: sigma,
        mle_grid_step: overrides.mle_grid_step.unwrap_or(MLE_STEP_M),
        accuracy_step: overrides.accuracy_step.unwrap_or(ACCURACY_STEP_M),
        trials_per_cell: overrides.trials_per_cell.unwrap_or(DEFAULT_TRIALS),
        seed: overrides.seed.unwrap_or(0),
        mismatch: overrides.mismatch.unwrap_or_default(),
    };
    scenario.mle_grid().validate()?;
    scenario.accuracy_grid().validate()?;
    if scenario.trials_per_cell == 0 {
        return config("trials per cell must be at least 1".into());
    }
    Ok(scenario)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxes {
    pub placements: Vec<Placement>,
    pub thetas: Vec<f64>,
    pub powers_mw: Vec<f64>,
    pub modes: Vec<Mode>,
}

impl SweepAxes {
    /// Both placements and modes at 45, 60 and 90 deg over 1000 to 3000 mW.
    pub fn standard() -> Self {
        Self {
            placements: vec![Placement::Side, Placement::Corner],
            thetas: STANDARD_THETAS.to_vec(),
            powers_mw: standard_powers_mw(),
            modes: vec![Mode::Monostatic, Mode::Bistatic],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty() || self.thetas.is_empty() || self.powers_mw.is_empty() || self.modes.is_empty()
    }

    /// Every combination, placement-major then theta, power, mode.
    pub fn combinations(&self) -> Vec<(Placement, f64, f64, Mode)> {
        let mut out = Vec::new();
        for &p in &self.placements {
            for &t in &self.thetas {
                for &w in &self.powers_mw {
                    for &m in &self.modes {
                        out.push((p, t, w, m));
                    }
                }
            }
        }
        out
    }
}

/// Empirical CDF as sorted `(value, cumulative probability)` steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cdf {
    pub points: Vec<(f64, f64)>,
}

impl Cdf {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut v: Vec<f64> = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        Self {
            points: v.iter().enumerate().map(|(k, &x)| (x, (k + 1) as f64 / n)).collect(),
        }
    }

    /// `P(X <= x)`.
    pub fn at(&self, x: f64) -> f64 {
        let k = self.points.partition_point(|&(v, _)| v <= x);
        if k == 0 {
            0.0
        } else {
            self.points[k - 1].1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Median with the even-count midpoint; `None` for no samples.
pub fn median(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAccuracy {
    /// Index in the accuracy grid.
    pub cell: usize,
    pub x: f64,
    pub y: f64,
    pub m: u32,
    #[serde(with = "crate::io::inf_float")]
    pub crlb_rmse_m: f64,
    /// `NaN` for cells that are not localizable.
    #[serde(with = "crate::io::inf_float")]
    pub mle_rmse_m: f64,
}

impl CellAccuracy {
    pub fn localizable(&self) -> bool {
        self.m >= crate::coverage::MIN_MEASUREMENTS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyResult {
    pub cells: Vec<CellAccuracy>,
    pub coverage_pct: f64,
    pub median_crlb_m: Option<f64>,
    pub median_mle_m: Option<f64>,
    /// Over localizable cells, of the per-cell RMSE.
    pub crlb_cdf: Cdf,
    pub mle_cdf: Cdf,
    /// Share of the accuracy grid that is localizable.
    pub localizable_fraction: f64,
}

impl AccuracyResult {
    pub fn localizable_cells(&self) -> impl Iterator<Item = &CellAccuracy> {
        self.cells.iter().filter(|c| c.localizable())
    }

    /// Unconditional medians over localizable cells, ignoring the coverage rule.
    pub fn raw_medians(&self) -> (Option<f64>, Option<f64>) {
        let crlb: Vec<f64> = self.localizable_cells().map(|c| c.crlb_rmse_m).collect();
        let mle: Vec<f64> = self.localizable_cells().map(|c| c.mle_rmse_m).collect();
        (median(&crlb), median(&mle))
    }

    /// `P(error <= x)` with every grid cell in the population; non-localizable
    /// cells count as failures.
    pub fn room_fraction_within(&self, cdf: &Cdf, x: f64) -> f64 {
        cdf.at(x) * self.localizable_fraction
    }
}

/// Per-cell CRLB and Monte Carlo MLE RMSE on the scenario's accuracy grid.
///
/// The MLE uses a table built once for the scenario. Trial `t` at accuracy
/// cell `c` draws its noise from `trial_seed(hash, c, t)`, so the result does
/// not depend on thread scheduling.
pub fn run_accuracy(scenario: &Scenario) -> Result<AccuracyResult, ExperimentError> {
    let map = coverage_map(scenario)?;
    run_accuracy_with(scenario, &map, &RssTable::build(scenario)?)
}

pub fn run_accuracy_with(
    scenario: &Scenario,
    map: &CoverageMap,
    table: &RssTable,
) -> Result<AccuracyResult, ExperimentError> {
    let grid = scenario.accuracy_grid();
    let base = scenario.hash_u64();
    let trials = scenario.trials_per_cell;
    let sigma = scenario.noise_sigma_db;
    let cells: Vec<CellAccuracy> = (0..grid.len())
        .into_par_iter()
        .map(|cell| -> Result<CellAccuracy, ExperimentError> {
            let tag = grid.cell_center(cell);
            let bound = crlb(scenario, &tag)?;
            let mut out = CellAccuracy {
                cell,
                x: tag.x,
                y: tag.y,
                m: bound.measurements,
                crlb_rmse_m: bound.rmse_lower_bound,
                mle_rmse_m: f64::NAN,
            };
            if !bound.localizable {
                return Ok(out);
            }
            let truth = covered_truth(scenario, &tag)?;
            let mut sq = 0.0;
            for t in 0..trials {
                let meas = add_noise(&truth, sigma, tag, trial_seed(base, cell as u64, t as u64));
                let est = table.search(&meas)?;
                sq += (est.position.x - tag.x).powi(2) + (est.position.y - tag.y).powi(2);
            }
            out.mle_rmse_m = (sq / trials as f64).sqrt();
            Ok(out)
        })
        .collect::<Result<_, _>>()?;

    let coverage_pct = coverage_percentage(map)?;
    let loc: Vec<&CellAccuracy> = cells.iter().filter(|c| c.localizable()).collect();
    let crlb_vals: Vec<f64> = loc.iter().map(|c| c.crlb_rmse_m).collect();
    let mle_vals: Vec<f64> = loc.iter().map(|c| c.mle_rmse_m).collect();
    let report = coverage_pct >= MEDIAN_COVERAGE_PCT;
    Ok(AccuracyResult {
        coverage_pct,
        median_crlb_m: if report { median(&crlb_vals) } else { None },
        median_mle_m: if report { median(&mle_vals) } else { None },
        crlb_cdf: Cdf::from_samples(&crlb_vals),
        mle_cdf: Cdf::from_samples(&mle_vals),
        localizable_fraction: loc.len() as f64 / cells.len().max(1) as f64,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub placement: Placement,
    pub theta: f64,
    pub power_mw: f64,
    pub mode: Mode,
    pub coverage_pct: f64,
    pub median_crlb_m: Option<f64>,
    pub median_mle_m: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// `(point index, MLE CDF, CRLB CDF)` for accuracy sweeps.
    pub cdfs: Vec<(usize, Cdf, Cdf)>,
}

impl SweepResult {
    /// Mean coverage over the points matching `filter`.
    pub fn mean_coverage(&self, filter: impl Fn(&SweepPoint) -> bool) -> Option<f64> {
        let v: Vec<f64> = self.points.iter().filter(|p| filter(p)).map(|p| p.coverage_pct).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub fn run_coverage_sweep(axes: &SweepAxes, overrides: &Overrides) -> Result<SweepResult, ExperimentError> {
    if axes.is_empty() {
        return Err(ExperimentError::Config("sweep axes must be non-empty".into()));
    }
    let points = axes
        .combinations()
        .into_iter()
        .map(|(placement, theta, power_mw, mode)| {
            let s = build_scenario(placement, theta, power_mw, mode, overrides)?;
            let coverage_pct = coverage_percentage(&coverage_map(&s)?)?;
            Ok(SweepPoint {
                placement,
                theta,
                power_mw,
                mode,
                coverage_pct,
                median_crlb_m: None,
                median_mle_m: None,
            })
        })
        .collect::<Result<_, ExperimentError>>()?;
    Ok(SweepResult { points, cdfs: Vec::new() })
}

/// Accuracy at every combination of `axes`. Also returns the per-point
/// results, aligned with `SweepResult::points`.
pub fn run_accuracy_sweep(
    axes: &SweepAxes,
    overrides: &Overrides,
) -> Result<(SweepResult, Vec<AccuracyResult>), ExperimentError> {
    if axes.is_empty() {
        return Err(ExperimentError::Config("sweep axes must be non-empty".into()));
    }
    let mut sweep = SweepResult::default();
    let mut details = Vec::new();
    for (k, (placement, theta, power_mw, mode)) in axes.combinations().into_iter().enumerate() {
        let s = build_scenario(placement, theta, power_mw, mode, overrides)?;
        let acc = run_accuracy(&s)?;
        sweep.points.push(SweepPoint {
            placement,
            theta,
            power_mw,
            mode,
            coverage_pct: acc.coverage_pct,
            median_crlb_m: acc.median_crlb_m,
            median_mle_m: acc.median_mle_m,
        });
        sweep.cdfs.push((k, acc.mle_cdf.clone(), acc.crlb_cdf.clone()));
        details.push(acc);
    }
    Ok((sweep, details))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Calibrated `mu_T · |Gamma|^2`.
    pub product: f64,
    pub target_pct: f64,
    pub achieved_pct: f64,
    pub iterations: u32,
}

/// Coverage of `scenario` with its backscatter product replaced by `product`.
pub fn coverage_with_product(scenario: &Scenario, product: f64) -> Result<f64, ExperimentError> {
    let mut s = scenario.clone();
    s.radio = s.radio.with_backscatter_product(product);
    Ok(coverage_percentage(&coverage_map(&s)?)?)
}

/// Finds `mu_T · |Gamma|^2` in `[1e-12, 1]` so that the scenario's coverage is
/// within half a percentage point of `target_pct`.
///
/// Bisects on `log10(product)`; coverage is non-decreasing in the product.
pub fn calibrate_link_budget(target_pct: f64, scenario: &Scenario) -> Result<Calibration, ExperimentError> {
    if !(0.0..=100.0).contains(&target_pct) {
        return Err(ExperimentError::Config(format!("target coverage {target_pct}% is outside [0, 100]")));
    }
    let (mut lo, mut hi) = CALIBRATION_LOG_RANGE;
    let at = |log_p: f64| coverage_with_product(scenario, 10f64.powf(log_p));
    let (min, max) = (at(lo)?, at(hi)?);
    let unreachable = ExperimentError::Unreachable { target: target_pct, min, max };
    if target_pct < min - CALIBRATION_TOLERANCE_PP || target_pct > max + CALIBRATION_TOLERANCE_PP {
        return Err(unreachable);
    }
    let done = |c: f64| (c - target_pct).abs() <= CALIBRATION_TOLERANCE_PP;
    for (log_p, c) in [(lo, min), (hi, max)] {
        if done(c) {
            return Ok(Calibration { product: 10f64.powf(log_p), target_pct, achieved_pct: c, iterations: 0 });
        }
    }
    for iterations in 1..=80 {
        let mid = 0.5 * (lo + hi);
        let c = at(mid)?;
        if done(c) {
            return Ok(Calibration { product: 10f64.powf(mid), target_pct, achieved_pct: c, iterations });
        }
        if c < target_pct {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(unreachable)
}

/// The corner, `pi/4`, 1000 mW, monostatic deployment the calibration anchors to.
pub fn anchor_scenario(overrides: &Overrides) -> Result<Scenario, ExperimentError> {
    build_scenario(Placement::Corner, FRAC_PI_4, MIN_SWEEP_POWER_MW, Mode::Monostatic, overrides)
}

/// Calibrates against the anchor and returns `overrides` with the product set.
pub fn calibrated_overrides(overrides: &Overrides, target_pct: f64) -> Result<(Overrides, Calibration), ExperimentError> {
    let cal = calibrate_link_budget(target_pct, &anchor_scenario(overrides)?)?;
    let mut out = overrides.clone();
    out.backscatter_product = Some(cal.product);
    Ok((out, cal))
}
