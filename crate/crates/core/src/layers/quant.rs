use super::LayerError;

/// An 8-bit activation vector in the unsigned zero-point domain.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct FeatureVector(pub Vec<u8>);

impl FeatureVector {
    pub fn filled(dim: usize, value: u8) -> Self {
        Self(vec![value; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }
}

/// Accumulator → u8 rescaling: `clamp(round((acc * multiplier) >> shift) + zero_point)`,
/// rounding half away from zero. `activation_min` is the ReLU floor applied
/// after aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Requant {
    pub multiplier: i32,
    pub shift: u8,
    pub zero_point: u8,
    pub activation_min: u8,
}

impl Requant {
    pub const IDENTITY: Requant = Requant {
        multiplier: 1,
        shift: 0,
        zero_point: 0,
        activation_min: 0,
    };

    pub fn validate(&self) -> Result<(), LayerError> {
        if self.shift > 62 {
            return Err(LayerError::InvalidParameter(format!(
                "requant shift {} exceeds 62",
                self.shift
            )));
        }
        Ok(())
    }
}

pub fn requantize(acc: i32, rq: &Requant) -> u8 {
    let prod = acc as i128 * rq.multiplier as i128;
    let scaled = if rq.shift == 0 {
        prod
    } else {
        let half = 1i128 << (rq.shift - 1);
        if prod >= 0 {
            (prod + half) >> rq.shift
        } else {
            -((-prod + half) >> rq.shift)
        }
    };
    (scaled + rq.zero_point as i128).clamp(0, 255) as u8
}

/// Row-major int8 weight matrix with int32 bias. `input_zero_point` is
/// subtracted from u8 inputs before the dot product.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedLinear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<i8>,
    pub bias: Vec<i32>,
    pub input_zero_point: u8,
}

impl QuantizedLinear {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<i8>,
        bias: Vec<i32>,
        input_zero_point: u8,
    ) -> Result<Self, LayerError> {
        if weights.len() != in_dim * out_dim {
            return Err(LayerError::DimensionMismatch {
                what: "weight matrix",
                expected: in_dim * out_dim,
                got: weights.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(LayerError::DimensionMismatch {
                what: "bias",
                expected: out_dim,
                got: bias.len(),
            });
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            input_zero_point,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0; in_dim * out_dim],
            bias: vec![0; out_dim],
            input_zero_point: 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn row(&self, k: usize) -> &[i8] {
        &self.weights[k * self.in_dim..(k + 1) * self.in_dim]
    }

    /// `W · input + bias` over already-centered inputs, saturated to i32.
    pub fn accumulate(&self, input: &[i32]) -> Result<Vec<i32>, LayerError> {
        if input.len() != self.in_dim {
            return Err(LayerError::DimensionMismatch {
                what: "linear input",
                expected: self.in_dim,
                got: input.len(),
            });
        }
        Ok((0..self.out_dim)
            .map(|k| {
                let dot: i64 = self
                    .row(k)
                    .iter()
                    .zip(input)
                    .map(|(&w, &x)| w as i64 * x as i64)
                    .sum();
                (dot + self.bias[k] as i64).clamp(i32::MIN as i64, i32::MAX as i64) as i32
            })
            .collect())
    }
}
