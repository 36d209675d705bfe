//! Noisy RSS measurements, likelihood, grid-search MLE, RSS Jacobians and the
//! Cramér-Rao bound on 2D position error.

mod fisher;
mod jacobian;
mod mle;

pub use fisher::{crlb, crlb_rmse, fisher_information, fisher_information_for_pairs, CrlbResult, FisherInfo};
pub use jacobian::{
    log_gain_gradient, log_gain_gradient_quarter_tilt, rss_jacobian_analytic, rss_jacobian_fd,
    Gradient, DEFAULT_FD_STEP,
};
pub use mle::{mle_grid_search, MleEstimate, RssTable};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{pair_coverage, AntennaPair, CoverageError};
use crate::propagation::{bistatic_rss_dbm, Position3D, PropagationError};
use crate::scenario::Scenario;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("measurement set is empty")]
    EmptyMeasurements,
    #[error("{0} measurement(s); at least 2 are needed for a 2D fix")]
    NotLocalizable(usize),
    #[error("no localizable candidate cell in the search grid")]
    EmptySearchRegion,
    #[error("RSS is not differentiable at ({x}, {y}) for pair ({tx}, {rx})")]
    NotDifferentiable { tx: usize, rx: usize, x: f64, y: f64 },
    #[error("finite-difference stencil hits a singular point: {0}")]
    SingularStencil(String),
    #[error("finite-difference step {0} must be positive and finite")]
    InvalidStep(f64),
    #[error("noise sigma {0} dB must be positive and finite")]
    InvalidSigma(f64),
    #[error("pair ({tx}, {rx}) is not a candidate pair of this scenario")]
    UnknownPair { tx: usize, rx: usize },
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
}

/// What a measured pair contributes at a candidate where it is not covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MismatchPolicy {
    /// Predict the reader sensitivity for that pair, so the residual is
    /// `sensitivity - measured`.
    #[default]
    SensitivityFloor,
    /// Leave the pair out of the sum, as the bare coverage gate would.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub pair: AntennaPair,
    pub rss_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub entries: Vec<Measurement>,
    pub noise_sigma_db: f64,
    /// Kept for scoring only; the estimator never reads it.
    pub true_position: Position3D,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Noise-free RSS of every pair covered at `tag`, in the scenario's pair order.
pub fn covered_truth(scenario: &Scenario, tag: &Position3D) -> Result<Vec<Measurement>, EstimationError> {
    let ants = &scenario.antennas;
    let mut out = Vec::new();
    for pair in scenario.mode.pairs(ants.len()) {
        let (tx, rx) = (&ants[pair.tx], &ants[pair.rx]);
        if pair_coverage(&scenario.radio, tx, rx, tag) {
            out.push(Measurement {
                pair,
                rss_dbm: bistatic_rss_dbm(&scenario.radio, tx, rx, tag)?,
            });
        }
    }
    Ok(out)
}

/// Adds independent `N(0, sigma^2)` draws to `truth`. `sigma = 0` copies it.
pub fn add_noise(truth: &[Measurement], sigma: f64, true_position: Position3D, seed: u64) -> MeasurementSet {
    let mut entries = truth.to_vec();
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
        for m in &mut entries {
            m.rss_dbm += normal.sample(&mut rng);
        }
    }
    MeasurementSet {
        entries,
        noise_sigma_db: sigma,
        true_position,
    }
}

pub fn simulate_measurements(
    scenario: &Scenario,
    tag: &Position3D,
    seed: u64,
) -> Result<MeasurementSet, EstimationError> {
    let sigma = scenario.noise_sigma_db;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(EstimationError::InvalidSigma(sigma));
    }
    let truth = covered_truth(scenario, tag)?;
    Ok(add_noise(&truth, sigma, *tag, seed))
}

/// Per-trial seed from a base seed and `(cell, trial)` counters, independent of
/// evaluation order. SplitMix64 finalizer over a golden-ratio stride.
pub fn trial_seed(base: u64, cell: u64, trial: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    let a = mix(base.wrapping_add(GOLDEN));
    let b = mix(a ^ cell.wrapping_mul(GOLDEN).wrapping_add(1));
    mix(b ^ trial.wrapping_mul(GOLDEN).wrapping_add(2))
}

/// Residual of one measurement against the prediction at `candidate`, or
/// `None` if the policy drops it.
fn residual(
    scenario: &Scenario,
    candidate: &Position3D,
    m: &Measurement,
) -> Result<Option<f64>, EstimationError> {
    let ants = &scenario.antennas;
    let (tx, rx) = ants
        .get(m.pair.tx)
        .zip(ants.get(m.pair.rx))
        .ok_or(EstimationError::UnknownPair { tx: m.pair.tx, rx: m.pair.rx })?;
    if pair_coverage(&scenario.radio, tx, rx, candidate) {
        let predicted = bistatic_rss_dbm(&scenario.radio, tx, rx, candidate)?;
        return Ok(Some(predicted - m.rss_dbm));
    }
    Ok(match scenario.mismatch {
        MismatchPolicy::SensitivityFloor => Some(scenario.radio.reader_sensitivity_dbm - m.rss_dbm),
        MismatchPolicy::Drop => None,
    })
}

/// Sum of squared residuals at `candidate` and the number of terms in it.
pub fn residual_sum_of_squares(
    scenario: &Scenario,
    candidate: &Position3D,
    meas: &MeasurementSet,
) -> Result<(f64, usize), EstimationError> {
    let mut sum = 0.0;
    let mut n = 0;
    for m in &meas.entries {
        if let Some(r) = residual(scenario, candidate, m)? {
            sum += r * r;
            n += 1;
        }
    }
    Ok((sum, n))
}

/// Gaussian log-likelihood of `meas` at `candidate`, with normalisation.
pub fn log_likelihood(
    scenario: &Scenario,
    candidate: &Position3D,
    meas: &MeasurementSet,
) -> Result<f64, EstimationError> {
    if meas.is_empty() {
        return Err(EstimationError::EmptyMeasurements);
    }
    let sigma = meas.noise_sigma_db;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(EstimationError::InvalidSigma(sigma));
    }
    let (rss, n) = residual_sum_of_squares(scenario, candidate, meas)?;
    let var = sigma * sigma;
    Ok(-rss / (2.0 * var) - 0.5 * n as f64 * (2.0 * std::f64::consts::PI * var).ln())
}

#[cfg(test)]
pub(crate) mod test_support {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    use crate::coverage::{GridSpec, Mode};
    use crate::propagation::{Position3D, RadioParams, ReaderAntenna};
    use crate::scenario::{Placement, Scenario};

    use super::MismatchPolicy;

    pub fn corner(theta: f64, mode: Mode) -> Scenario {
        let spots = [(0.0, 0.0, FRAC_PI_4), (8.0, 0.0, 3.0 * FRAC_PI_4), (8.0, 8.0, -3.0 * FRAC_PI_4), (0.0, 8.0, -FRAC_PI_4)];
        build(theta, mode, &spots, Placement::Corner)
    }

    pub fn side(theta: f64, mode: Mode) -> Scenario {
        let spots = [(4.0, 0.0, FRAC_PI_2), (8.0, 4.0, PI), (4.0, 8.0, -FRAC_PI_2), (0.0, 4.0, 0.0)];
        build(theta, mode, &spots, Placement::Side)
    }

    fn build(theta: f64, mode: Mode, spots: &[(f64, f64, f64)], placement: Placement) -> Scenario {
        let antennas = spots
            .iter()
            .enumerate()
            .map(|(k, &(x, y, az))| ReaderAntenna::new(k + 1, Position3D::new(x, y, 2.0), theta, az))
            .collect();
        let mut radio = RadioParams::default().with_backscatter_product(0.112);
        radio.set_tx_power_mw(3000.0);
        Scenario {
            room: GridSpec::room(8.0, 8.0, 0.1, 1.0),
            antennas,
            placement,
            mode,
            radio,
            noise_sigma_db: 2.0,
            mle_grid_step: 0.05,
            accuracy_step: 0.5,
            trials_per_cell: 20,
            seed: 1,
            mismatch: MismatchPolicy::SensitivityFloor,
        }
    }
}
