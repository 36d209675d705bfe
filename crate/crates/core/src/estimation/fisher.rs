//! 2×2 Fisher information over `(x, y)` and the RMSE bound it implies.

use serde::{Deserialize, Serialize};

use super::jacobian::{rss_jacobian_analytic, Gradient};
use super::EstimationError;
use crate::coverage::{pair_coverage, AntennaPair, MIN_MEASUREMENTS};
use crate::propagation::Position3D;
use crate::scenario::Scenario;

/// Relative determinant below which the matrix is treated as singular.
pub const SINGULAR_DET_RATIO: f64 = 1e-12;

/// Eigenvalue slack for the PSD check.
pub const PSD_TOLERANCE: f64 = 1e-12;

/// Fisher information in 1/m^2.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FisherInfo {
    pub i11: f64,
    pub i12: f64,
    pub i21: f64,
    pub i22: f64,
}

impl FisherInfo {
    pub const ZERO: FisherInfo = FisherInfo { i11: 0.0, i12: 0.0, i21: 0.0, i22: 0.0 };

    pub fn diagonal(a: f64, b: f64) -> Self {
        Self { i11: a, i12: 0.0, i21: 0.0, i22: b }
    }

    /// Adds `weight · g gᵀ`.
    pub fn add_outer(&mut self, g: &Gradient, weight: f64) {
        self.i11 += weight * g.dx * g.dx;
        let off = weight * g.dx * g.dy;
        self.i12 += off;
        self.i21 += off;
        self.i22 += weight * g.dy * g.dy;
    }

    pub fn scaled(self, k: f64) -> Self {
        Self {
            i11: self.i11 * k,
            i12: self.i12 * k,
            i21: self.i21 * k,
            i22: self.i22 * k,
        }
    }

    pub fn det(&self) -> f64 {
        self.i11 * self.i22 - self.i12 * self.i21
    }

    pub fn trace(&self) -> f64 {
        self.i11 + self.i22
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let off = 0.5 * (self.i12 + self.i21);
        let mean = 0.5 * (self.i11 + self.i22);
        let radius = (0.5 * (self.i11 - self.i22)).hypot(off);
        (mean - radius, mean + radius)
    }

    pub fn is_symmetric(&self) -> bool {
        self.i12 == self.i21
    }

    pub fn is_psd(&self) -> bool {
        let (lo, _) = self.eigenvalues();
        lo >= -PSD_TOLERANCE
    }
}

/// RMSE lower bound `sqrt(tr(I^-1))`, using `tr(I^-1) = tr(I) / det(I)` for 2×2.
///
/// Returns `+inf` when the matrix is singular to within
/// `|det| < 1e-12·tr^2`, not positive definite, or not finite.
pub fn crlb_rmse(fim: &FisherInfo) -> f64 {
    let det = fim.det();
    let trace = fim.trace();
    let finite = det.is_finite() && trace.is_finite();
    if !finite || trace <= 0.0 || det.abs() < SINGULAR_DET_RATIO * trace * trace || det < 0.0 {
        return f64::INFINITY;
    }
    (trace / det).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrlbResult {
    #[serde(with = "crate::io::inf_float")]
    pub rmse_lower_bound: f64,
    pub fim: FisherInfo,
    pub localizable: bool,
    pub measurements: u32,
}

/// FIM from the given pairs, with noise standard deviation `sigma` (dB).
pub fn fisher_information_for_pairs(
    scenario: &Scenario,
    pairs: &[AntennaPair],
    tag: &Position3D,
    sigma: f64,
) -> Result<FisherInfo, EstimationError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(EstimationError::InvalidSigma(sigma));
    }
    let w = 1.0 / (sigma * sigma);
    let mut fim = FisherInfo::ZERO;
    for &pair in pairs {
        fim.add_outer(&rss_jacobian_analytic(scenario, pair, tag)?, w);
    }
    Ok(fim)
}

fn covered_pairs(scenario: &Scenario, tag: &Position3D) -> Vec<AntennaPair> {
    let ants = &scenario.antennas;
    scenario
        .mode
        .pairs(ants.len())
        .into_iter()
        .filter(|p| pair_coverage(&scenario.radio, &ants[p.tx], &ants[p.rx], tag))
        .collect()
}

/// FIM over the pairs covered at `tag`. Fewer than two covered pairs give a
/// rank-deficient matrix, which [`crlb_rmse`] maps to `+inf`.
pub fn fisher_information(scenario: &Scenario, tag: &Position3D) -> Result<FisherInfo, EstimationError> {
    fisher_information_for_pairs(scenario, &covered_pairs(scenario, tag), tag, scenario.noise_sigma_db)
}

pub fn crlb(scenario: &Scenario, tag: &Position3D) -> Result<CrlbResult, EstimationError> {
    let pairs = covered_pairs(scenario, tag);
    let fim = fisher_information_for_pairs(scenario, &pairs, tag, scenario.noise_sigma_db)?;
    let m = pairs.len() as u32;
    Ok(CrlbResult {
        rmse_lower_bound: crlb_rmse(&fim),
        fim,
        localizable: m >= MIN_MEASUREMENTS,
        measurements: m,
    })
}
