//! TOML scenario files. Every section and key is optional; missing values
//! fall back to the library defaults. Unknown keys are rejected.

use std::f64::consts::PI;
use std::path::Path;

use rfidloc_core::coverage::Mode;
use rfidloc_core::estimation::MismatchPolicy;
use rfidloc_core::experiments::{self, Overrides, SweepAxes};
use rfidloc_core::propagation::{DbScale, Position3D, RadioParams, ReaderAntenna};
use rfidloc_core::scenario::Placement;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub radio: RadioSection,
    #[serde(default)]
    pub room: RoomSection,
    #[serde(default)]
    pub placement: PlacementSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub estimation: EstimationSection,
    #[serde(default)]
    pub calibration: CalibrationSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioSection {
    pub frequency_hz: Option<f64>,
    pub tx_power_mw: Option<f64>,
    pub modulation_efficiency: Option<f64>,
    pub power_transfer_efficiency: Option<f64>,
    pub polarization_loss: Option<f64>,
    pub tag_gain_dbi: Option<f64>,
    pub reflection_coeff_sq: Option<f64>,
    /// Sets `mu_T` and `|Gamma|^2` to its square root each.
    pub backscatter_product: Option<f64>,
    pub channel_gain_sq: Option<f64>,
    pub channel_gain_sq_per_antenna: Option<Vec<f64>>,
    pub reader_sensitivity_dbm: Option<f64>,
    pub tag_sensitivity_dbm: Option<f64>,
    pub db_scale: Option<DbScale>,
    pub allow_eirp_override: Option<bool>,
    /// Accept transmit powers outside 1000-3000 mW.
    pub allow_any_power: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSection {
    pub width: Option<f64>,
    pub length: Option<f64>,
    pub tag_height: Option<f64>,
    pub grid_step: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntennaEntry {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementSection {
    pub kind: Option<Placement>,
    pub theta_deg: Option<f64>,
    pub antenna_height: Option<f64>,
    #[serde(default)]
    pub antennas: Vec<AntennaEntry>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma_db: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationSection {
    pub mle_grid_step: Option<f64>,
    pub accuracy_step: Option<f64>,
    pub trials_per_cell: Option<usize>,
    pub mismatch: Option<MismatchPolicy>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    /// Calibrate the backscatter product against the anchor deployment first.
    pub enabled: Option<bool>,
    pub target_pct: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub placements: Option<Vec<Placement>>,
    pub thetas_deg: Option<Vec<f64>>,
    pub powers_mw: Option<Vec<f64>>,
    pub modes: Option<Vec<Mode>>,
    /// Also run the Monte Carlo accuracy study at every point.
    pub accuracy: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub output_dir: Option<String>,
    pub threads: Option<usize>,
}

pub fn load(path: &Path) -> Result<Config, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn parse(text: &str) -> Result<Config, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

impl Config {
    pub fn placement(&self) -> Placement {
        self.placement.kind.unwrap_or(Placement::Corner)
    }

    pub fn theta(&self) -> f64 {
        snap_degrees(self.placement.theta_deg.unwrap_or(45.0))
    }

    pub fn power_mw(&self) -> f64 {
        self.radio.tx_power_mw.unwrap_or(1000.0)
    }

    pub fn mode(&self) -> Mode {
        self.run.mode.unwrap_or(Mode::Bistatic)
    }

    pub fn calibrate(&self) -> bool {
        self.calibration.enabled.unwrap_or(false)
    }

    pub fn target_pct(&self) -> f64 {
        self.calibration.target_pct.unwrap_or(experiments::ANCHOR_COVERAGE_PCT)
    }

    pub fn wants_sweep_accuracy(&self) -> bool {
        self.sweep.accuracy.unwrap_or(false)
    }

    fn radio_params(&self) -> RadioParams {
        let r = &self.radio;
        let mut p = RadioParams::default();
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut p.frequency_hz, r.frequency_hz);
        set(&mut p.modulation_efficiency, r.modulation_efficiency);
        set(&mut p.power_transfer_efficiency, r.power_transfer_efficiency);
        set(&mut p.polarization_loss, r.polarization_loss);
        set(&mut p.reflection_coeff_sq, r.reflection_coeff_sq);
        set(&mut p.channel_gain_sq, r.channel_gain_sq);
        set(&mut p.reader_sensitivity_dbm, r.reader_sensitivity_dbm);
        set(&mut p.tag_sensitivity_dbm, r.tag_sensitivity_dbm);
        if let Some(g) = r.tag_gain_dbi {
            p.tag_gain = 10f64.powf(g / 10.0);
        }
        if let Some(h) = &r.channel_gain_sq_per_antenna {
            p.channel_gain_sq_per_antenna = h.clone();
        }
        if let Some(s) = r.db_scale {
            p.db_scale = s;
        }
        if let Some(b) = r.allow_eirp_override {
            p.allow_eirp_override = b;
        }
        p
    }

    pub fn overrides(&self) -> Overrides {
        let custom = (!self.placement.antennas.is_empty()).then(|| {
            self.placement
                .antennas
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    ReaderAntenna::new(
                        k + 1,
                        Position3D::new(a.x, a.y, a.z),
                        a.elevation_deg.to_radians(),
                        a.azimuth_deg.to_radians(),
                    )
                })
                .collect()
        });
        Overrides {
            radio: Some(self.radio_params()),
            backscatter_product: self.radio.backscatter_product,
            noise_sigma_db: self.noise.sigma_db,
            room_width: self.room.width,
            room_length: self.room.length,
            antenna_height: self.placement.antenna_height,
            tag_height: self.room.tag_height,
            coverage_step: self.room.grid_step,
            mle_grid_step: self.estimation.mle_grid_step,
            accuracy_step: self.estimation.accuracy_step,
            trials_per_cell: self.estimation.trials_per_cell,
            seed: self.run.seed,
            mismatch: self.estimation.mismatch,
            antennas: custom,
            allow_any_power: self.radio.allow_any_power.unwrap_or(false),
            ..Overrides::default()
        }
    }

    pub fn sweep_axes(&self) -> SweepAxes {
        let base = SweepAxes::standard();
        SweepAxes {
            placements: self.sweep.placements.clone().unwrap_or(base.placements),
            thetas: self
                .sweep
                .thetas_deg
                .as_ref()
                .map(|v| v.iter().map(|d| snap_degrees(*d)).collect())
                .unwrap_or(base.thetas),
            powers_mw: self.sweep.powers_mw.clone().unwrap_or(base.powers_mw),
            modes: self.sweep.modes.clone().unwrap_or(base.modes),
        }
    }
}

/// Degrees to radians, exact for 45, 60 and 90 so file names and fast paths match.
fn snap_degrees(deg: f64) -> f64 {
    match deg {
        d if d == 45.0 => PI / 4.0,
        d if d == 60.0 => PI / 3.0,
        d if d == 90.0 => PI / 2.0,
        d => d.to_radians(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c.placement(), Placement::Corner);
        assert_eq!(c.mode(), Mode::Bistatic);
        assert_eq!(c.power_mw(), 1000.0);
        assert_eq!(c.sweep_axes(), SweepAxes::standard());
    }

    #[test]
    fn unknown_key_reports_location() {
        let err = parse("[radio]\nfrequency_hz = 865.7e6\nbogus = 1\n").unwrap_err();
        assert!(err.contains("bogus"), "{err}");
        assert!(err.contains("line 3"), "{err}");
        assert!(parse("[nonsense]\n").is_err());
    }

    #[test]
    fn sections_map_to_overrides() {
        let c = parse(
            "[radio]\nreader_sensitivity_dbm = -80.0\ntag_gain_dbi = 0.0\n\
             [noise]\nsigma_db = 1.5\n[placement]\nkind = \"side\"\ntheta_deg = 60\n",
        )
        .unwrap();
        let o = c.overrides();
        assert_eq!(o.radio.as_ref().unwrap().reader_sensitivity_dbm, -80.0);
        assert_eq!(o.radio.as_ref().unwrap().tag_gain, 1.0);
        assert_eq!(o.noise_sigma_db, Some(1.5));
        assert_eq!(c.placement(), Placement::Side);
        assert_eq!(c.theta(), PI / 3.0);
    }

    #[test]
    fn custom_antennas() {
        let c = parse(
            "[placement]\nkind = \"custom\"\n[[placement.antennas]]\nx = 0.0\ny = 0.0\nz = 2.0\n\
             elevation_deg = 60.0\nazimuth_deg = 45.0\n",
        )
        .unwrap();
        let a = c.overrides().antennas.unwrap();
        assert_eq!(a.len(), 1);
        assert!((a[0].azimuth - PI / 4.0).abs() < 1e-15);
    }
}
