//! Quantized weights: deterministic generation, validation and the on-disk
//! format (a TOML manifest next to a raw blob).
//!
//! Blob layout, per layer in manifest order: `out_dim × in_dim` int8 weights
//! row-major, then `out_dim` little-endian int32 biases. The manifest carries
//! the blob's SHA-256.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelError, Variant};
use crate::layers::{ClassifierHead, PointNetConv, PositionLut, QuantizedLinear, Requant};

pub const WEIGHTS_FORMAT: &str = "evgcn-weights-v1";
/// The only requantization rounding the engine implements.
pub const ROUNDING: &str = "half-away-from-zero";

/// Zero point and ReLU floor of every generated conv output.
const ACT_ZERO_POINT: u8 = 16;
/// Requant shift used by generated weights.
const GEN_SHIFT: u8 = 30;
/// Target spread of a generated conv's output codes.
const GEN_TARGET: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelWeights {
    pub variant: Variant,
    pub convs: Vec<PointNetConv>,
    pub head: ClassifierHead,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    variant: Variant,
    classes: usize,
    rounding: String,
    blob: String,
    blob_len: u64,
    sha256: String,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    in_dim: usize,
    out_dim: usize,
    input_zero_point: u8,
    weights_offset: u64,
    bias_offset: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos_scale: Option<i8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    requant: Option<Requant>,
}

fn random_linear(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize, bias_span: i32, zp: u8) -> QuantizedLinear {
    let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-127i8..=127)).collect();
    let bias = (0..out_dim).map(|_| rng.gen_range(-bias_span..=bias_span)).collect();
    QuantizedLinear::new(in_dim, out_dim, weights, bias, zp).expect("shapes agree")
}

impl ModelWeights {
    /// Deterministic random weights with scales chosen so activations stay
    /// well inside the u8 range.
    pub fn generate(variant: Variant, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = variant.conv_dims();
        let w_std = 127.0 / 3f64.sqrt();
        let mut convs = Vec::with_capacity(5);
        let mut in_feat = 1;
        let mut in_zp = 1u8;
        for (k, &out) in dims.iter().enumerate() {
            // centered input magnitude: polarity ±1 and offsets up to ±3 for
            // the first layer, activation codes above the floor afterwards
            let in_rms = if k == 0 { 1.8 } else { 0.75 * GEN_TARGET };
            let in_dim = in_feat + 3;
            let acc_std = (in_dim as f64).sqrt() * w_std * in_rms;
            let multiplier = (GEN_TARGET / acc_std * (1u64 << GEN_SHIFT) as f64).round() as i32;
            convs.push(PointNetConv {
                linear: random_linear(&mut rng, in_dim, out, (acc_std / 2.0) as i32, in_zp),
                requant: Requant {
                    multiplier,
                    shift: GEN_SHIFT,
                    zero_point: ACT_ZERO_POINT,
                    activation_min: ACT_ZERO_POINT,
                },
                pos_lut: PositionLut::IDENTITY,
            });
            in_feat = out;
            in_zp = ACT_ZERO_POINT;
        }
        let head_in = 16 * dims[4];
        let head_std = (head_in as f64).sqrt() * w_std * GEN_TARGET;
        let head = ClassifierHead {
            linear: random_linear(&mut rng, head_in, classes, (head_std / 4.0) as i32, ACT_ZERO_POINT),
        };
        Self { variant, convs, head }
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    /// Total weights plus biases.
    pub fn param_count(&self) -> usize {
        self.convs.iter().map(|c| c.linear.param_count()).sum::<usize>() + self.head.linear.param_count()
    }

    /// Checks layer shapes and zero-point chaining against the variant.
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = self.variant.conv_dims();
        if self.convs.len() != 5 {
            return Err(ModelError::Weights(format!("expected 5 conv layers, found {}", self.convs.len())));
        }
        let mut in_feat = 1;
        for (k, conv) in self.convs.iter().enumerate() {
            let lin = &conv.linear;
            if lin.in_dim != in_feat + 3 || lin.out_dim != dims[k] {
                return Err(ModelError::Weights(format!(
                    "conv{} is {}→{}, variant {} expects {}→{}",
                    k + 1,
                    lin.in_dim,
                    lin.out_dim,
                    self.variant,
                    in_feat + 3,
                    dims[k]
                )));
            }
            conv.requant.validate()?;
            if k > 0 && lin.input_zero_point != self.convs[k - 1].requant.zero_point {
                return Err(ModelError::Weights(format!(
                    "conv{} input zero point {} differs from conv{} output zero point {}",
                    k + 1,
                    lin.input_zero_point,
                    k,
                    self.convs[k - 1].requant.zero_point
                )));
            }
            in_feat = dims[k];
        }
        let head = &self.head.linear;
        if head.in_dim != 16 * dims[4] || head.out_dim == 0 {
            return Err(ModelError::Weights(format!(
                "head is {}→{}, expected {}→cls",
                head.in_dim,
                head.out_dim,
                16 * dims[4]
            )));
        }
        Ok(())
    }

    /// Validates and checks the weights were built for `cfg.variant`.
    pub fn check_config(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        if self.variant != cfg.variant {
            return Err(ModelError::Weights(format!(
                "weights are for variant {}, config selects {}",
                self.variant, cfg.variant
            )));
        }
        self.validate()
    }

    fn layers(&self) -> impl Iterator<Item = (String, &QuantizedLinear, Option<&PointNetConv>)> {
        self.convs
            .iter()
            .enumerate()
            .map(|(k, c)| (format!("conv{}", k + 1), &c.linear, Some(c)))
            .chain(std::iter::once(("head".to_string(), &self.head.linear, None)))
    }

    /// Writes `manifest` and a sibling `.bin` blob.
    pub fn save(&self, manifest: &Path) -> Result<(), ModelError> {
        let blob_path = manifest.with_extension("bin");
        let blob_name = blob_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| ModelError::Weights(format!("bad manifest path {}", manifest.display())))?
            .to_string();
        let mut blob = Vec::new();
        let mut layers = Vec::new();
        for (name, lin, conv) in self.layers() {
            let weights_offset = blob.len() as u64;
            blob.extend(lin.weights.iter().map(|&w| w as u8));
            let bias_offset = blob.len() as u64;
            for b in &lin.bias {
                blob.extend_from_slice(&b.to_le_bytes());
            }
            layers.push(LayerEntry {
                name,
                in_dim: lin.in_dim,
                out_dim: lin.out_dim,
                input_zero_point: lin.input_zero_point,
                weights_offset,
                bias_offset,
                pos_scale: conv.map(|c| c.pos_lut.scale),
                requant: conv.map(|c| c.requant),
            });
        }
        let m = Manifest {
            format: WEIGHTS_FORMAT.into(),
            variant: self.variant,
            classes: self.classes(),
            rounding: ROUNDING.into(),
            blob: blob_name,
            blob_len: blob.len() as u64,
            sha256: hex::encode(&Sha256::digest(&blob)[..]),
            layers,
        };
        let text = toml::to_string(&m).map_err(|e| ModelError::Weights(e.to_string()))?;
        fs::write(&blob_path, &blob)?;
        fs::write(manifest, text)?;
        Ok(())
    }

    pub fn load(manifest: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(manifest)?;
        let m: Manifest = toml::from_str(&text).map_err(|e| ModelError::Weights(e.to_string()))?;
        if m.format != WEIGHTS_FORMAT {
            return Err(ModelError::Weights(format!("unsupported format {:?}", m.format)));
        }
        if m.rounding != ROUNDING {
            return Err(ModelError::Weights(format!("unsupported rounding {:?}", m.rounding)));
        }
        let blob_path: PathBuf = manifest
            .parent()
            .map(|d| d.join(&m.blob))
            .unwrap_or_else(|| PathBuf::from(&m.blob));
        let blob = fs::read(&blob_path)?;
        if blob.len() as u64 != m.blob_len {
            return Err(ModelError::Weights(format!(
                "blob is {} bytes, manifest says {}",
                blob.len(),
                m.blob_len
            )));
        }
        let digest = hex::encode(&Sha256::digest(&blob)[..]);
        if !digest.eq_ignore_ascii_case(&m.sha256) {
            return Err(ModelError::Weights(format!("checksum mismatch: {} vs {}", digest, m.sha256)));
        }
        if m.layers.len() != 6 {
            return Err(ModelError::Weights(format!("expected 6 layers, found {}", m.layers.len())));
        }

        let mut convs = Vec::with_capacity(5);
        let mut head = None;
        for (k, entry) in m.layers.iter().enumerate() {
            let lin = read_linear(&blob, entry)?;
            if k < 5 {
                let requant = entry
                    .requant
                    .ok_or_else(|| ModelError::Weights(format!("{} lacks requant parameters", entry.name)))?;
                convs.push(PointNetConv {
                    linear: lin,
                    requant,
                    pos_lut: PositionLut {
                        scale: entry.pos_scale.unwrap_or(1),
                    },
                });
            } else {
                head = Some(ClassifierHead { linear: lin });
            }
        }
        let weights = Self {
            variant: m.variant,
            convs,
            head: head.expect("six layers"),
        };
        if weights.classes() != m.classes {
            return Err(ModelError::Weights(format!(
                "head has {} outputs, manifest says {} classes",
                weights.classes(),
                m.classes
            )));
        }
        weights.validate()?;
        Ok(weights)
    }
}

fn read_linear(blob: &[u8], e: &LayerEntry) -> Result<QuantizedLinear, ModelError> {
    let n_w = e.in_dim * e.out_dim;
    let w_start = e.weights_offset as usize;
    let b_start = e.bias_offset as usize;
    let out_of_range = || ModelError::Weights(format!("{} extends past the blob", e.name));
    let w = blob.get(w_start..w_start + n_w).ok_or_else(out_of_range)?;
    let b = blob.get(b_start..b_start + 4 * e.out_dim).ok_or_else(out_of_range)?;
    let weights = w.iter().map(|&v| v as i8).collect();
    let bias = b
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    QuantizedLinear::new(e.in_dim, e.out_dim, weights, bias, e.input_zero_point).map_err(Into::into)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts_per_variant() {
        let counts: Vec<usize> = Variant::ALL
            .iter()
            .map(|&v| ModelWeights::generate(v, 2, 0).param_count())
            .collect();
        // 80 + 640 conv prefix, then the variant-specific tail and head
        assert_eq!(counts, vec![720 + 1152 * 3 + 1026, 720 + 1152 + 2304 + 4352 + 2050, 720 + 2304 + 4352 + 8704 + 4098]);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = ModelWeights::generate(Variant::Base, 3, 9);
        assert_eq!(a, ModelWeights::generate(Variant::Base, 3, 9));
        assert_ne!(a, ModelWeights::generate(Variant::Base, 3, 10));
        a.validate().unwrap();
        assert_eq!(a.convs[0].linear.input_zero_point, 1);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.toml");
        let w = ModelWeights::generate(Variant::Small, 4, 1);
        w.save(&path).unwrap();
        assert_eq!(ModelWeights::load(&path).unwrap(), w);
    }

    #[test]
    fn corrupted_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.toml");
        ModelWeights::generate(Variant::Small, 2, 1).save(&path).unwrap();
        let bin = path.with_extension("bin");
        let mut blob = fs::read(&bin).unwrap();
        blob[10] ^= 1;
        fs::write(&bin, &blob).unwrap();
        assert!(matches!(ModelWeights::load(&path), Err(ModelError::Weights(_))));
    }

    #[test]
    fn variant_mismatch_is_rejected() {
        let w = ModelWeights::generate(Variant::Small, 2, 1);
        assert!(w.check_config(&ModelConfig::reference_128(Variant::Large)).is_err());
        assert!(w.check_config(&ModelConfig::reference_128(Variant::Small)).is_ok());
    }
}
