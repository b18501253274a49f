use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::graph_builder::DEFAULT_RADIUS;

/// First MaxPool cluster edge (4×4×4).
pub const POOL1_G: u32 = 4;
/// Second MaxPool cluster edge (2×2×2).
pub const POOL2_G: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "S")]
    Small,
    #[serde(rename = "B")]
    Base,
    #[serde(rename = "L")]
    Large,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Small, Variant::Base, Variant::Large];

    /// Output dims of Conv1..Conv5.
    pub fn conv_dims(&self) -> [usize; 5] {
        match self {
            Variant::Small => [16, 32, 32, 32, 32],
            Variant::Base => [16, 32, 32, 64, 64],
            Variant::Large => [16, 32, 64, 64, 128],
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Variant::Small => "S",
            Variant::Base => "B",
            Variant::Large => "L",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s.to_ascii_uppercase().as_str() {
            "S" | "SMALL" => Ok(Variant::Small),
            "B" | "BASE" => Ok(Variant::Base),
            "L" | "LARGE" => Ok(Variant::Large),
            _ => Err(ModelError::Config(format!("unknown variant {s:?} (S, B or L)"))),
        }
    }
}

/// Architecture and timing configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub beta: u32,
    pub time_window_us: u32,
    pub radius: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConfigFile {
    variant: Variant,
    beta: u32,
    time_window_us: u32,
    #[serde(default = "default_radius")]
    radius: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dims: Option<Vec<usize>>,
}

fn default_radius() -> u32 {
    DEFAULT_RADIUS
}

impl ModelConfig {
    pub fn new(variant: Variant, beta: u32, time_window_us: u32) -> Result<Self, ModelError> {
        let cfg = Self {
            variant,
            beta,
            time_window_us,
            radius: DEFAULT_RADIUS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// β = 128 with a 100 ms window.
    pub fn reference_128(variant: Variant) -> Self {
        Self::new(variant, 128, 100_000).unwrap()
    }

    /// β = 256 with a 50 ms window.
    pub fn reference_256(variant: Variant) -> Self {
        Self::new(variant, 256, 50_000).unwrap()
    }

    pub fn with_radius(mut self, radius: u32) -> Result<Self, ModelError> {
        self.radius = radius;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.beta != 128 && self.beta != 256 {
            return Err(ModelError::Config(format!("beta must be 128 or 256, got {}", self.beta)));
        }
        if self.time_window_us == 0 {
            return Err(ModelError::Config("time window must be positive".into()));
        }
        // a larger radius would let pooled edges reach two slices back,
        // beyond what the triple-buffered memories hold
        if self.radius == 0 || self.radius > POOL1_G {
            return Err(ModelError::Config(format!(
                "radius must be between 1 and {}, got {}",
                POOL1_G,
                self.radius
            )));
        }
        Ok(())
    }

    /// Whether (β, window) is one of the two supported hardware pairs.
    pub fn is_reference(&self) -> bool {
        matches!((self.beta, self.time_window_us), (128, 100_000) | (256, 50_000))
    }

    pub fn conv_dims(&self) -> [usize; 5] {
        self.variant.conv_dims()
    }

    /// `(input feature dim, output dim)` per conv, position inputs excluded.
    pub fn conv_shapes(&self) -> [(usize, usize); 5] {
        let d = self.conv_dims();
        [(1, d[0]), (d[0], d[1]), (d[1], d[2]), (d[2], d[3]), (d[3], d[4])]
    }

    pub fn final_dim(&self) -> usize {
        self.conv_dims()[4]
    }

    /// Grid size after MaxPool1.
    pub fn size1(&self) -> u32 {
        self.beta / POOL1_G
    }

    /// Grid size after MaxPool2.
    pub fn size2(&self) -> u32 {
        self.size1() / POOL2_G
    }

    /// PoolOut kernel: both the spatial edge and the number of level-2
    /// slices merged into one quarter-window channel.
    pub fn pool_out_kernel(&self) -> u32 {
        self.size2() / crate::layers::OUT_GRID as u32
    }

    /// Prediction cadence in microseconds.
    pub fn prediction_period_us(&self) -> u64 {
        self.time_window_us as u64 / 4
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        let cfg = Self {
            variant: file.variant,
            beta: file.beta,
            time_window_us: file.time_window_us,
            radius: file.radius,
        };
        cfg.validate()?;
        if let Some(dims) = file.dims {
            if dims.as_slice() != cfg.conv_dims().as_slice() {
                return Err(ModelError::Config(format!(
                    "dims {:?} do not match variant {} ({:?})",
                    dims,
                    cfg.variant,
                    cfg.conv_dims()
                )));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ConfigFile {
            variant: self.variant,
            beta: self.beta,
            time_window_us: self.time_window_us,
            radius: self.radius,
            dims: Some(self.conv_dims().to_vec()),
        })
        .expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_dims() {
        assert_eq!(Variant::Small.conv_dims(), [16, 32, 32, 32, 32]);
        assert_eq!(Variant::Base.conv_dims(), [16, 32, 32, 64, 64]);
        assert_eq!(Variant::Large.conv_dims(), [16, 32, 64, 64, 128]);
    }

    #[test]
    fn geometry() {
        let c = ModelConfig::reference_128(Variant::Base);
        assert_eq!((c.size1(), c.size2(), c.pool_out_kernel()), (32, 16, 4));
        assert_eq!(c.prediction_period_us(), 25_000);
        let c = ModelConfig::reference_256(Variant::Base);
        assert_eq!((c.size1(), c.size2(), c.pool_out_kernel()), (64, 32, 8));
        assert_eq!(c.prediction_period_us(), 12_500);
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let c = ModelConfig::reference_256(Variant::Large);
        assert_eq!(ModelConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        let bad = "variant = \"S\"\nbeta = 128\ntime_window_us = 100000\ndims = [16, 32, 32, 64, 64]\n";
        assert!(ModelConfig::from_toml_str(bad).is_err());
        assert!(ModelConfig::from_toml_str("variant = \"S\"\nbeta = 64\ntime_window_us = 1\n").is_err());
        assert!("X".parse::<Variant>().is_err());
    }

    #[test]
    fn reference_pairs() {
        assert!(ModelConfig::reference_128(Variant::Small).is_reference());
        assert!(!ModelConfig::new(Variant::Small, 256, 100_000).unwrap().is_reference());
    }
}
