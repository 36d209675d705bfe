//! A complete deployment: room, antennas, radio constants, noise and run sizes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coverage::{GridSpec, Mode};
use crate::estimation::MismatchPolicy;
use crate::propagation::{RadioParams, ReaderAntenna};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// One antenna at the middle of each wall, facing across the room.
    Side,
    /// One antenna in each corner, facing along the diagonal.
    Corner,
    Custom,
}

impl Placement {
    pub fn as_str(self) -> &'static str {
        match self {
            Placement::Side => "side",
            Placement::Corner => "corner",
            Placement::Custom => "custom",
        }
    }
}

impl std::fmt::Display for Placement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Placement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "side" => Ok(Placement::Side),
            "corner" => Ok(Placement::Corner),
            "custom" => Ok(Placement::Custom),
            other => Err(format!("unknown placement `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Room extent and the coverage-map granularity. `tag_height` is `z_0`.
    pub room: GridSpec,
    pub antennas: Vec<ReaderAntenna>,
    pub placement: Placement,
    pub mode: Mode,
    pub radio: RadioParams,
    pub noise_sigma_db: f64,
    /// Candidate spacing of the maximum-likelihood search.
    pub mle_grid_step: f64,
    /// Spacing of the true tag positions used by accuracy runs.
    pub accuracy_step: f64,
    pub trials_per_cell: usize,
    pub seed: u64,
    pub mismatch: MismatchPolicy,
}

impl Scenario {
    /// Same room, candidate spacing `mle_grid_step`.
    pub fn mle_grid(&self) -> GridSpec {
        GridSpec {
            step: self.mle_grid_step,
            ..self.room
        }
    }

    /// Same room, spacing `accuracy_step`.
    pub fn accuracy_grid(&self) -> GridSpec {
        GridSpec {
            step: self.accuracy_step,
            ..self.room
        }
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// First 8 bytes of [`Scenario::content_hash`], for seeding.
    pub fn hash_u64(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        let digest = Sha256::digest(&json);
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }
}
