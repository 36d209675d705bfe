//! Gradient of the round-trip RSS with respect to the tag's `(x, y)`.
//!
//! `P_ij` in dB is `c + k·(ln G_i + ln G_j + ln L_i + ln L_j)` with
//! `k = scale / ln 10`, so its gradient is `k` times the sum of the four
//! logarithmic gradients.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, LN_10, PI};

use serde::{Deserialize, Serialize};

use super::EstimationError;
use crate::coverage::AntennaPair;
use crate::propagation::{bistatic_rss_dbm, LinkGeometry, Position3D, ReaderAntenna, POLE_BAND};
use crate::scenario::Scenario;

pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// `(∂/∂x, ∂/∂y)`, dB per meter unless stated otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Gradient {
    pub dx: f64,
    pub dy: f64,
}

impl Gradient {
    pub const fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }

    pub fn norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite()
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.dx * k, self.dy * k)
    }
}

impl std::ops::Add for Gradient {
    type Output = Gradient;

    fn add(self, rhs: Gradient) -> Gradient {
        Gradient::new(self.dx + rhs.dx, self.dy + rhs.dy)
    }
}

impl std::ops::Sub for Gradient {
    type Output = Gradient;

    fn sub(self, rhs: Gradient) -> Gradient {
        Gradient::new(self.dx - rhs.dx, self.dy - rhs.dy)
    }
}

/// Gradient of `ln L(d)`: `-2·(dx, dy) / d^2`.
pub(crate) fn log_path_loss_gradient(g: &LinkGeometry) -> Gradient {
    let d2 = g.d * g.d;
    Gradient::new(-2.0 * g.dx / d2, -2.0 * g.dy / d2)
}

/// Gradient of `ln G` for the patch pattern, any tilt and boresight.
///
/// `G = K·[tan(a)·sin(pi/2·cos a)·cos(pi/2·sin a·s)]^2` where `s` is the
/// lateral sine. Returns `None` where `G = 0` or on the antenna axis.
pub fn log_gain_gradient(antenna: &ReaderAntenna, tag: &Position3D) -> Option<Gradient> {
    let g = LinkGeometry::new(antenna, tag);
    if g.l == 0.0 || g.d == 0.0 {
        return None;
    }
    let (st, ct) = antenna.elevation.sin_cos();
    let sin_a = (g.l * st - g.h * ct) / g.d;
    let cos_a = (g.l * ct + g.h * st) / g.d;
    let (sb, cb) = antenna.azimuth.sin_cos();
    let s = (g.dy * cb - g.dx * sb) / g.l;

    let u = FRAC_PI_2 * sin_a * s;
    let near_pole = cos_a.abs() < POLE_BAND;
    if u.cos() == 0.0 || (!near_pole && (sin_a == 0.0 || (FRAC_PI_2 * cos_a).sin() == 0.0)) {
        return None;
    }

    let l2 = g.l * g.l;
    let d2 = g.d * g.d;
    let axis = |delta: f64, ds: f64| {
        let da = g.h * delta / (g.l * d2);
        let radial = if near_pole {
            0.0
        } else {
            da / (sin_a * cos_a) - FRAC_PI_2 * sin_a * da / (FRAC_PI_2 * cos_a).tan()
        };
        let du = FRAC_PI_2 * (cos_a * da * s + sin_a * ds);
        2.0 * (radial - u.tan() * du)
    };
    let dsx = -sb / g.l - s * g.dx / l2;
    let dsy = cb / g.l - s * g.dy / l2;
    Some(Gradient::new(axis(g.dx, dsx), axis(g.dy, dsy)))
}

/// Closed-form `ln G` gradient for a `pi/4` tilt with boresight along `±x`.
///
/// Writes the pattern as `K·[T·sin A·cos B]^2` with `T = (l-H)/(l+H)`,
/// `A = k(l+H)/d`, `B = k(l-H)·s/d`, `k = sqrt(2)·pi/4` and `s = ±dy/l`.
/// Returns `None` outside that configuration or where `G = 0`.
pub fn log_gain_gradient_quarter_tilt(antenna: &ReaderAntenna, tag: &Position3D) -> Option<Gradient> {
    let (sb, cb) = antenna.azimuth.sin_cos();
    if antenna.elevation != FRAC_PI_4 || sb.abs() > 1e-12 {
        return None;
    }
    let facing = cb.signum();
    let g = LinkGeometry::new(antenna, tag);
    if g.l == 0.0 || g.d == 0.0 || g.l == g.h {
        return None;
    }
    let k = std::f64::consts::SQRT_2 * PI / 4.0;
    let (l, h, d) = (g.l, g.h, g.d);
    let s = facing * g.dy / l;
    let a = k * (l + h) / d;
    let b = k * (l - h) * s / d;
    if a.sin() == 0.0 || b.cos() == 0.0 {
        return None;
    }
    let d3 = d * d * d;
    // Partials of l, s and d along one axis, then the three log terms.
    let axis = |dl: f64, ds: f64, dd: f64| {
        let dt = dl * 2.0 * h / (l * l - h * h);
        let da = k * (dl / d - (l + h) * dd * d / d3);
        let db = k * ((dl * s + (l - h) * ds) / d - (l - h) * s * dd * d / d3);
        2.0 * (dt + da / a.tan() - b.tan() * db)
    };
    let (dlx, dly) = (g.dx / l, g.dy / l);
    let (ddx, ddy) = (g.dx / d, g.dy / d);
    let dsx = -s * g.dx / (l * l);
    let dsy = facing / l - s * g.dy / (l * l);
    Some(Gradient::new(axis(dlx, dsx, ddx), axis(dly, dsy, ddy)))
}

fn leg_log_gradient(antenna: &ReaderAntenna, tag: &Position3D) -> Option<Gradient> {
    let gain = log_gain_gradient_quarter_tilt(antenna, tag).or_else(|| log_gain_gradient(antenna, tag))?;
    Some(gain + log_path_loss_gradient(&LinkGeometry::new(antenna, tag)))
}

fn pair_antennas<'a>(
    scenario: &'a Scenario,
    pair: AntennaPair,
) -> Result<(&'a ReaderAntenna, &'a ReaderAntenna), EstimationError> {
    let ants = &scenario.antennas;
    ants.get(pair.tx)
        .zip(ants.get(pair.rx))
        .ok_or(EstimationError::UnknownPair { tx: pair.tx, rx: pair.rx })
}

/// Analytic `∇P_ij` at `tag`.
pub fn rss_jacobian_analytic(
    scenario: &Scenario,
    pair: AntennaPair,
    tag: &Position3D,
) -> Result<Gradient, EstimationError> {
    let (tx, rx) = pair_antennas(scenario, pair)?;
    let undefined = || EstimationError::NotDifferentiable {
        tx: pair.tx,
        rx: pair.rx,
        x: tag.x,
        y: tag.y,
    };
    let gt = leg_log_gradient(tx, tag).ok_or_else(undefined)?;
    let gr = leg_log_gradient(rx, tag).ok_or_else(undefined)?;
    Ok((gt + gr).scale(scenario.radio.db_scale.factor() / LN_10))
}

/// Central-difference `∇P_ij` with spacing `step` along each axis.
pub fn rss_jacobian_fd(
    scenario: &Scenario,
    pair: AntennaPair,
    tag: &Position3D,
    step: f64,
) -> Result<Gradient, EstimationError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(EstimationError::InvalidStep(step));
    }
    let (tx, rx) = pair_antennas(scenario, pair)?;
    let eval = |dx: f64, dy: f64| -> Result<f64, EstimationError> {
        let p = Position3D::new(tag.x + dx, tag.y + dy, tag.z);
        match bistatic_rss_dbm(&scenario.radio, tx, rx, &p) {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(v) => Err(EstimationError::SingularStencil(format!("RSS {v} at ({}, {})", p.x, p.y))),
            Err(e) => Err(EstimationError::SingularStencil(e.to_string())),
        }
    };
    let gx = (eval(step, 0.0)? - eval(-step, 0.0)?) / (2.0 * step);
    let gy = (eval(0.0, step)? - eval(0.0, -step)?) / (2.0 * step);
    Ok(Gradient::new(gx, gy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::Mode;
    use crate::estimation::test_support::{corner, side};
    use crate::propagation::{reader_gain, DbScale};
    use std::f64::consts::PI;

    fn rel(a: Gradient, b: Gradient) -> f64 {
        (a - b).norm() / a.norm().max(b.norm())
    }

    #[test]
    fn symmetric_geometry_has_zero_cross_derivative() {
        // Side antenna 1 sits at (4, 0) facing +y, so the RSS is even in x - 4.
        let s = side(PI / 3.0, Mode::Bistatic);
        let tag = Position3D::new(4.0, 2.7, 1.0);
        let pair = AntennaPair::new(0, 0);
        let a = rss_jacobian_analytic(&s, pair, &tag).unwrap();
        let f = rss_jacobian_fd(&s, pair, &tag, DEFAULT_FD_STEP).unwrap();
        assert!(a.dx.abs() < 1e-12);
        assert!(f.dx.abs() < 1e-6);
        assert!(a.dy.abs() > 0.1);
    }

    #[test]
    fn path_loss_term_matches_difference_quotient() {
        let s = corner(PI / 3.0, Mode::Bistatic);
        let ant = &s.antennas[1];
        let tag = Position3D::new(2.5, 3.25, 1.0);
        let k = DbScale::Amplitude.factor() / LN_10;
        let analytic = log_path_loss_gradient(&LinkGeometry::new(ant, &tag)).scale(k);
        let g = LinkGeometry::new(ant, &tag);
        assert!((analytic.dx - (-(20.0 / LN_10) * 2.0 * g.dx / (g.d * g.d))).abs() < 1e-12);
        let lam = s.radio.wavelength();
        let db = |x: f64, y: f64| {
            let d = ant.position.distance_to(&Position3D::new(x, y, 1.0));
            20.0 * crate::propagation::path_loss_linear(d, lam).unwrap().log10()
        };
        let h = 1e-5;
        let fx = (db(tag.x + h, tag.y) - db(tag.x - h, tag.y)) / (2.0 * h);
        let fy = (db(tag.x, tag.y + h) - db(tag.x, tag.y - h)) / (2.0 * h);
        assert!(rel(analytic, Gradient::new(fx, fy)) < 1e-7);
    }

    #[test]
    fn monostatic_doubles_one_way_terms() {
        let s = corner(PI / 3.0, Mode::Monostatic);
        let tag = Position3D::new(3.3, 1.9, 1.0);
        let ant = &s.antennas[0];
        let one_way = (log_gain_gradient(ant, &tag).unwrap()
            + log_path_loss_gradient(&LinkGeometry::new(ant, &tag)))
        .scale(s.radio.db_scale.factor() / LN_10);
        let mono = rss_jacobian_analytic(&s, AntennaPair::new(0, 0), &tag).unwrap();
        assert_eq!(mono, one_way + one_way);
    }

    #[test]
    fn analytic_matches_fd_on_samples() {
        for theta in [PI / 4.0, PI / 3.0, FRAC_PI_2 - 1e-3] {
            for s in [corner(theta, Mode::Bistatic), side(theta, Mode::Bistatic)] {
                for &(x, y) in &[(3.1, 4.4), (5.7, 2.2), (1.3, 6.1), (6.6, 6.9)] {
                    let tag = Position3D::new(x, y, 1.0);
                    for pair in s.mode.pairs(4) {
                        let a = rss_jacobian_analytic(&s, pair, &tag).unwrap();
                        let f = rss_jacobian_fd(&s, pair, &tag, DEFAULT_FD_STEP).unwrap();
                        assert!(rel(a, f) < 1e-6, "theta {theta} {pair:?} at ({x},{y}): {a:?} vs {f:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn quarter_tilt_fast_path_agrees_with_general_path() {
        let s = side(FRAC_PI_4, Mode::Bistatic);
        // Antennas 2 and 4 face -x and +x.
        for ant in [&s.antennas[1], &s.antennas[3]] {
            for &(x, y) in &[(2.0, 3.0), (5.5, 6.5), (4.0, 4.0), (6.9, 1.2)] {
                let tag = Position3D::new(x, y, 1.0);
                let fast = log_gain_gradient_quarter_tilt(ant, &tag).unwrap();
                let general = log_gain_gradient(ant, &tag).unwrap();
                assert!(rel(fast, general) < 1e-10, "{fast:?} vs {general:?}");
            }
        }
        assert!(log_gain_gradient_quarter_tilt(&s.antennas[0], &Position3D::new(1.0, 1.0, 1.0)).is_none());
    }

    #[test]
    fn fd_error_shrinks_quadratically() {
        let s = corner(PI / 3.0, Mode::Bistatic);
        let tag = Position3D::new(2.9, 5.3, 1.0);
        let pair = AntennaPair::new(0, 2);
        let a = rss_jacobian_analytic(&s, pair, &tag).unwrap();
        let e1 = (rss_jacobian_fd(&s, pair, &tag, 2e-2).unwrap() - a).norm();
        let e2 = (rss_jacobian_fd(&s, pair, &tag, 1e-2).unwrap() - a).norm();
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn dark_points_are_not_differentiable() {
        let s = corner(0.0, Mode::Bistatic);
        // theta = 0 and tag at antenna height puts the tag on the null.
        let tag = Position3D::new(3.0, 3.0, 2.0);
        assert_eq!(reader_gain(&s.antennas[0], &tag).unwrap(), 0.0);
        assert!(matches!(
            rss_jacobian_analytic(&s, AntennaPair::new(0, 1), &tag),
            Err(EstimationError::NotDifferentiable { .. })
        ));
        assert!(rss_jacobian_fd(&s, AntennaPair::new(0, 1), &tag, 1e-4).is_err());
        assert!(matches!(
            rss_jacobian_fd(&s, AntennaPair::new(0, 1), &tag, 0.0),
            Err(EstimationError::InvalidStep(_))
        ));
    }
}
