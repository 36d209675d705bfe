//! Link budget for a passive UHF RFID deployment.
//!
//! A backscatter measurement between a transmitting reader antenna `i`, a
//! receiving antenna `j` and a tag is the sum of a constant term (radio
//! parameters), one directional gain term per reader antenna and one
//! free-space path-loss term per leg. The monostatic case is the diagonal
//! `i == j`. The forward (power-up) link is a single leg with the tag's own
//! gain.
//!
//! Reader antennas use a tilted patch pattern. [`patch_gain_polar`] takes the
//! elevation offset `alpha` and the relative azimuth `phi` directly, while
//! [`patch_gain_cartesian`] evaluates the same pattern from the antenna pose
//! and tag coordinates using direction cosines only.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Peak coefficient of the patch pattern (linear).
pub const PATCH_GAIN_COEFF: f64 = 3.136;

/// Regulatory EIRP ceiling for UHF RFID readers (2 W ERP).
pub const EIRP_LIMIT_DBM: f64 = 35.15;

/// Width of the band around `|alpha| = pi/2` where `tan(alpha)·sin(pi/2·cos(alpha))`
/// is replaced by its limit `pi/2`.
pub const POLE_BAND: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("wavelength must be positive, got {0} m")]
    NonPositiveWavelength(f64),
    #[error("tag gain must be positive, got {0}")]
    NonPositiveTagGain(f64),
    #[error("radar cross section must be non-negative, got {0} m^2")]
    NegativeCrossSection(f64),
    #[error("tag is coincident with antenna {0}")]
    CoincidentTag(usize),
    #[error("tag lies on the vertical axis of antenna {0}; azimuth is undefined")]
    SingularGeometry(usize),
    #[error("invalid radio parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

/// Point in the room frame, meters. `z` is height above the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance_to(&self, other: &Position3D) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Distance of the projections onto the floor plane.
    pub fn horizontal_distance_to(&self, other: &Position3D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// A wall-mounted reader antenna.
///
/// `elevation` is the tilt `theta` of the patch relative to the horizontal
/// plane; `azimuth` is the horizontal bearing of the boresight, measured
/// counter-clockwise from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReaderAntenna {
    /// 1-based label, unique within a deployment.
    pub id: usize,
    pub position: Position3D,
    pub elevation: f64,
    pub azimuth: f64,
}

impl ReaderAntenna {
    pub fn new(id: usize, position: Position3D, elevation: f64, azimuth: f64) -> Self {
        Self {
            id,
            position,
            elevation,
            azimuth,
        }
    }

    /// Whether the tilt lies in the studied `[pi/4, pi/2]` range.
    pub fn in_studied_elevation_range(&self) -> bool {
        const SLACK: f64 = 1e-12;
        self.elevation >= PI / 4.0 - SLACK && self.elevation <= FRAC_PI_2 + SLACK
    }
}

/// Decibel convention applied to every factor of the link budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DbScale {
    /// `20·log10` on every factor, power and gain alike.
    Amplitude,
    /// `10·log10`, so the dB sum is the logarithm of the linear power product.
    #[default]
    Power,
}

impl DbScale {
    pub fn factor(self) -> f64 {
        match self {
            DbScale::Amplitude => 20.0,
            DbScale::Power => 10.0,
        }
    }

    /// Converts a linear factor; zero maps to `-inf`.
    pub fn to_db(self, linear: f64) -> f64 {
        self.factor() * linear.log10()
    }
}

/// Link-budget constants shared by all antennas of a deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    pub frequency_hz: f64,
    /// Transmit EIRP. Formulas use the linear value in mW.
    pub tx_power_dbm: f64,
    /// `tau`, modulation efficiency.
    pub modulation_efficiency: f64,
    /// `mu_T`, how well the tag chip is matched to its antenna.
    pub power_transfer_efficiency: f64,
    /// `rho_L`.
    pub polarization_loss: f64,
    /// `G_T`, linear.
    pub tag_gain: f64,
    /// `|Gamma|^2`, differential reflection coefficient.
    pub reflection_coeff_sq: f64,
    /// `|h|^2` used for every antenna without an explicit entry below.
    pub channel_gain_sq: f64,
    /// Optional per-antenna `|h_i|^2`, indexed by `id - 1`.
    #[serde(default)]
    pub channel_gain_sq_per_antenna: Vec<f64>,
    pub reader_sensitivity_dbm: f64,
    pub tag_sensitivity_dbm: f64,
    #[serde(default)]
    pub db_scale: DbScale,
    /// Permit `tx_power_dbm` above [`EIRP_LIMIT_DBM`].
    #[serde(default)]
    pub allow_eirp_override: bool,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            frequency_hz: 865.7e6,
            tx_power_dbm: 30.0,
            modulation_efficiency: 0.5,
            power_transfer_efficiency: 0.8,
            polarization_loss: 0.5,
            tag_gain: 1.0,
            reflection_coeff_sq: 0.5,
            channel_gain_sq: 1.0,
            channel_gain_sq_per_antenna: Vec::new(),
            reader_sensitivity_dbm: -75.0,
            tag_sensitivity_dbm: -20.0,
            db_scale: DbScale::Power,
            allow_eirp_override: false,
        }
    }
}

impl RadioParams {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency_hz
    }

    pub fn tx_power_mw(&self) -> f64 {
        mw_from_dbm(self.tx_power_dbm)
    }

    pub fn set_tx_power_mw(&mut self, mw: f64) {
        self.tx_power_dbm = dbm_from_mw(mw);
    }

    /// `mu_T · |Gamma|^2`, the only link-budget factor the calibration step tunes.
    pub fn backscatter_product(&self) -> f64 {
        self.power_transfer_efficiency * self.reflection_coeff_sq
    }

    /// Replaces `mu_T` and `|Gamma|^2` with `sqrt(product)` each.
    pub fn with_backscatter_product(mut self, product: f64) -> Self {
        let root = product.max(0.0).sqrt();
        self.power_transfer_efficiency = root;
        self.reflection_coeff_sq = root;
        self
    }

    pub fn channel_gain_sq_for(&self, antenna_id: usize) -> f64 {
        antenna_id
            .checked_sub(1)
            .and_then(|i| self.channel_gain_sq_per_antenna.get(i))
            .copied()
            .unwrap_or(self.channel_gain_sq)
    }

    pub fn validate(&self) -> Result<(), PropagationError> {
        fn check(
            name: &'static str,
            value: f64,
            ok: bool,
            reason: &'static str,
        ) -> Result<(), PropagationError> {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(PropagationError::InvalidParameter {
                    name,
                    value,
                    reason,
                })
            }
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let open_unit = |v: f64| v > 0.0 && v <= 1.0;
        check("frequency_hz", self.frequency_hz, self.frequency_hz > 0.0, "must be positive")?;
        // Zero transmit power is -inf dBm and is allowed.
        if self.tx_power_dbm != f64::NEG_INFINITY {
            check(
                "tx_power_dbm",
                self.tx_power_dbm,
                self.allow_eirp_override || self.tx_power_dbm <= EIRP_LIMIT_DBM,
                "exceeds the 35.15 dBm EIRP limit",
            )?;
        }
        check(
            "modulation_efficiency",
            self.modulation_efficiency,
            open_unit(self.modulation_efficiency),
            "must lie in (0, 1]",
        )?;
        check(
            "power_transfer_efficiency",
            self.power_transfer_efficiency,
            unit(self.power_transfer_efficiency),
            "must lie in [0, 1]",
        )?;
        check(
            "polarization_loss",
            self.polarization_loss,
            open_unit(self.polarization_loss),
            "must lie in (0, 1]",
        )?;
        check("tag_gain", self.tag_gain, self.tag_gain > 0.0, "must be positive")?;
        check(
            "reflection_coeff_sq",
            self.reflection_coeff_sq,
            unit(self.reflection_coeff_sq),
            "must lie in [0, 1]",
        )?;
        check(
            "channel_gain_sq",
            self.channel_gain_sq,
            self.channel_gain_sq >= 0.0,
            "must be non-negative",
        )?;
        for &h in &self.channel_gain_sq_per_antenna {
            check("channel_gain_sq_per_antenna", h, h >= 0.0, "must be non-negative")?;
        }
        check(
            "reader_sensitivity_dbm",
            self.reader_sensitivity_dbm,
            true,
            "must be finite",
        )?;
        check("tag_sensitivity_dbm", self.tag_sensitivity_dbm, true, "must be finite")?;
        Ok(())
    }
}

pub fn mw_from_dbm(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn dbm_from_mw(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// `-inf` is the "no signal" sentinel produced by a zero gain.
pub fn is_no_signal(rss_dbm: f64) -> bool {
    rss_dbm == f64::NEG_INFINITY
}

/// Free-space path gain `(lambda / (4·pi·d))^2`.
pub fn path_loss_linear(d: f64, lambda: f64) -> Result<f64, PropagationError> {
    if !(d > 0.0) {
        return Err(PropagationError::NonPositiveDistance(d));
    }
    if !(lambda > 0.0) {
        return Err(PropagationError::NonPositiveWavelength(lambda));
    }
    Ok((lambda / (4.0 * PI * d)).powi(2))
}

/// `|Gamma|^2 = 4·pi·sigma_rcs / (lambda^2 · G_T^2)`.
pub fn reflection_coefficient_sq(
    sigma_rcs: f64,
    lambda: f64,
    tag_gain: f64,
) -> Result<f64, PropagationError> {
    if !(lambda > 0.0) {
        return Err(PropagationError::NonPositiveWavelength(lambda));
    }
    if !(tag_gain > 0.0) {
        return Err(PropagationError::NonPositiveTagGain(tag_gain));
    }
    if !(sigma_rcs >= 0.0) {
        return Err(PropagationError::NegativeCrossSection(sigma_rcs));
    }
    Ok(4.0 * PI * sigma_rcs / (lambda * lambda * tag_gain * tag_gain))
}

/// `tan(alpha) · sin(pi/2 · cos(alpha))`, continuous through `|alpha| = pi/2`.
pub(crate) fn elevation_factor(alpha: f64) -> f64 {
    if (FRAC_PI_2 - alpha.abs()).abs() < POLE_BAND {
        return FRAC_PI_2;
    }
    alpha.tan() * (FRAC_PI_2 * alpha.cos()).sin()
}

/// Patch pattern in antenna-relative angles.
///
/// `alpha` is the elevation offset of the tag from the antenna tilt and
/// `phi` the horizontal bearing of the tag relative to the boresight.
pub fn patch_gain_polar(alpha: f64, phi: f64) -> f64 {
    let radial = elevation_factor(alpha);
    let lateral = (FRAC_PI_2 * alpha.sin() * phi.sin()).cos();
    PATCH_GAIN_COEFF * (radial * lateral).powi(2)
}

/// Antenna-to-tag geometry shared by the gain evaluators and their derivatives.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LinkGeometry {
    /// Tag minus antenna, x.
    pub dx: f64,
    /// Tag minus antenna, y.
    pub dy: f64,
    /// Antenna height above the tag, `H_i`.
    pub h: f64,
    /// Horizontal distance `l_i`.
    pub l: f64,
    /// 3D distance `d_i`.
    pub d: f64,
}

impl LinkGeometry {
    pub fn new(antenna: &ReaderAntenna, tag: &Position3D) -> Self {
        let dx = tag.x - antenna.position.x;
        let dy = tag.y - antenna.position.y;
        let h = antenna.position.z - tag.z;
        let l = dx.hypot(dy);
        let d = (l * l + h * h).sqrt();
        Self { dx, dy, h, l, d }
    }

    /// `sin` of the tag bearing relative to the boresight: the lateral offset over `l`.
    pub fn lateral_sine(&self, boresight: f64) -> f64 {
        let (s, c) = boresight.sin_cos();
        (self.dy * c - self.dx * s) / self.l
    }
}

/// Elevation offset `alpha = theta - asin(H/d)` and relative azimuth of `tag`.
///
/// The azimuth is taken as zero when the tag is on the antenna's vertical axis.
pub fn pattern_angles(antenna: &ReaderAntenna, tag: &Position3D) -> (f64, f64) {
    let g = LinkGeometry::new(antenna, tag);
    let alpha = antenna.elevation - (g.h / g.d).asin();
    let phi = if g.l > 0.0 {
        g.dy.atan2(g.dx) - antenna.azimuth
    } else {
        0.0
    };
    (alpha, phi)
}

/// Patch pattern evaluated from coordinates.
///
/// The `tan(alpha)` factor is written as `(l·sin(theta) - H·cos(theta)) /
/// (l·cos(theta) + H·sin(theta))`, which is `tan(theta - beta)` without the
/// pole of `tan(theta)` at `theta = pi/2`. When `cos(alpha)` falls inside the
/// pole band the polar form (with its limit) is used instead.
pub fn patch_gain_cartesian(
    antenna: &ReaderAntenna,
    tag: &Position3D,
) -> Result<f64, PropagationError> {
    let g = LinkGeometry::new(antenna, tag);
    if g.d == 0.0 {
        return Err(PropagationError::CoincidentTag(antenna.id));
    }
    if g.l == 0.0 {
        return Err(PropagationError::SingularGeometry(antenna.id));
    }
    let (st, ct) = antenna.elevation.sin_cos();
    let sin_alpha = (g.l * st - g.h * ct) / g.d;
    let cos_alpha = (g.l * ct + g.h * st) / g.d;
    if cos_alpha.abs() < POLE_BAND {
        let (alpha, phi) = pattern_angles(antenna, tag);
        return Ok(patch_gain_polar(alpha, phi));
    }
    let lateral = g.lateral_sine(antenna.azimuth);
    let tan_alpha = sin_alpha / cos_alpha;
    let s = (FRAC_PI_2 * cos_alpha).sin();
    let c = (FRAC_PI_2 * sin_alpha * lateral).cos();
    Ok(PATCH_GAIN_COEFF * (tan_alpha * s * c).powi(2))
}

/// Reader gain used by the link budget; falls back to the polar form on the
/// antenna axis where the Cartesian form is singular.
pub fn reader_gain(antenna: &ReaderAntenna, tag: &Position3D) -> Result<f64, PropagationError> {
    match patch_gain_cartesian(antenna, tag) {
        Err(PropagationError::SingularGeometry(_)) => {
            let (alpha, phi) = pattern_angles(antenna, tag);
            Ok(patch_gain_polar(alpha, phi))
        }
        other => other,
    }
}

fn leg_path_loss(
    params: &RadioParams,
    antenna: &ReaderAntenna,
    tag: &Position3D,
) -> Result<f64, PropagationError> {
    let d = antenna.position.distance_to(tag);
    if d == 0.0 {
        return Err(PropagationError::CoincidentTag(antenna.id));
    }
    path_loss_linear(d, params.wavelength())
}

/// RSS at the tag from antenna `i`'s carrier, used for the tag-sensitivity gate.
pub fn forward_rss_dbm(
    params: &RadioParams,
    antenna: &ReaderAntenna,
    tag: &Position3D,
) -> Result<f64, PropagationError> {
    let gain = reader_gain(antenna, tag)?;
    let loss = leg_path_loss(params, antenna, tag)?;
    let linear = params.polarization_loss
        * params.tx_power_mw()
        * params.tag_gain
        * gain
        * loss
        * params.channel_gain_sq_for(antenna.id);
    Ok(params.db_scale.to_db(linear))
}

/// Position-independent part of the round-trip budget,
/// `tau·mu_T·rho_L·P_Tx·G_T^2·|h_i|^2·|h_j|^2·|Gamma|^2`.
pub fn backscatter_constant(params: &RadioParams, tx_id: usize, rx_id: usize) -> f64 {
    params.modulation_efficiency
        * params.power_transfer_efficiency
        * params.polarization_loss
        * params.tx_power_mw()
        * params.tag_gain
        * params.tag_gain
        * (params.channel_gain_sq_for(tx_id) * params.channel_gain_sq_for(rx_id))
        * params.reflection_coeff_sq
}

/// Backscattered power received at `rx` when `tx` powers the tag, dBm.
///
/// Returns `-inf` when either reader gain vanishes. The gain and path-loss
/// terms are added pairwise so the result is exactly symmetric in `tx`/`rx`.
pub fn bistatic_rss_dbm(
    params: &RadioParams,
    tx: &ReaderAntenna,
    rx: &ReaderAntenna,
    tag: &Position3D,
) -> Result<f64, PropagationError> {
    let scale = params.db_scale;
    let gains = scale.to_db(reader_gain(tx, tag)?) + scale.to_db(reader_gain(rx, tag)?);
    let losses = scale.to_db(leg_path_loss(params, tx, tag)?)
        + scale.to_db(leg_path_loss(params, rx, tag)?);
    Ok(scale.to_db(backscatter_constant(params, tx.id, rx.id)) + gains + losses)
}

/// Monostatic RSS: the bistatic budget with the same antenna on both legs.
pub fn monostatic_rss_dbm(
    params: &RadioParams,
    antenna: &ReaderAntenna,
    tag: &Position3D,
) -> Result<f64, PropagationError> {
    bistatic_rss_dbm(params, antenna, antenna, tag)
}

/// Linear round-trip power in mW (`tau·mu_T·rho_L·P·G_T^2·G_i·G_j·L_i·L_j·|h_i h_j Gamma|^2`).
///
/// Under [`DbScale::Power`] its `10·log10` equals [`bistatic_rss_dbm`]; under
/// [`DbScale::Amplitude`] the two are not related by a fixed conversion.
pub fn bistatic_received_power_mw(
    params: &RadioParams,
    tx: &ReaderAntenna,
    rx: &ReaderAntenna,
    tag: &Position3D,
) -> Result<f64, PropagationError> {
    Ok(backscatter_constant(params, tx.id, rx.id)
        * reader_gain(tx, tag)?
        * reader_gain(rx, tag)?
        * leg_path_loss(params, tx, tag)?
        * leg_path_loss(params, rx, tag)?)
}
