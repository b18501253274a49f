use super::pool::Features;
use super::quant::{FeatureVector, QuantizedLinear};
use super::LayerError;

/// Side length of the grid retained by PoolOut.
pub const OUT_GRID: usize = 4;

/// Elementwise max per cell over the given 4×4 grids; empty cells
/// contribute `floor`. Cells are returned row-major.
pub fn pool_out_cells<F: Features>(grids: &[&[Option<F>]], floor: &F) -> Vec<F> {
    (0..OUT_GRID * OUT_GRID)
        .map(|c| {
            let mut acc = floor.clone();
            for grid in grids {
                if let Some(f) = grid.get(c).and_then(Option::as_ref) {
                    acc.merge_max(f);
                }
            }
            acc
        })
        .collect()
}

/// PoolOut over the most recent temporal channels, flattened to `16 × dim`.
pub fn pool_out(grids: &[&[Option<FeatureVector>]], floor: &FeatureVector) -> FeatureVector {
    FeatureVector(
        pool_out_cells(grids, floor)
            .into_iter()
            .flat_map(|f| f.0)
            .collect(),
    )
}

/// Linear head evaluated in the processing-system part; scores are the raw
/// 32-bit accumulators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassifierHead {
    pub linear: QuantizedLinear,
}

impl ClassifierHead {
    pub fn classes(&self) -> usize {
        self.linear.out_dim
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassScores {
    pub scores: Vec<i32>,
    pub argmax: usize,
}

fn argmax_by<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn classify(head: &ClassifierHead, features: &FeatureVector) -> Result<ClassScores, LayerError> {
    let zp = head.linear.input_zero_point as i32;
    let input: Vec<i32> = features.0.iter().map(|&v| v as i32 - zp).collect();
    let scores = head.linear.accumulate(&input)?;
    let argmax = argmax_by(&scores);
    Ok(ClassScores { scores, argmax })
}

pub fn classify_f64(head: &ClassifierHead, features: &[f64]) -> Result<(Vec<f64>, usize), LayerError> {
    let lin = &head.linear;
    if features.len() != lin.in_dim {
        return Err(LayerError::DimensionMismatch {
            what: "classifier input",
            expected: lin.in_dim,
            got: features.len(),
        });
    }
    let zp = lin.input_zero_point as f64;
    let scores: Vec<f64> = (0..lin.out_dim)
        .map(|k| {
            lin.bias[k] as f64
                + lin
                    .row(k)
                    .iter()
                    .zip(features)
                    .map(|(&w, &x)| w as f64 * (x - zp))
                    .sum::<f64>()
        })
        .collect();
    let argmax = argmax_by(&scores);
    Ok((scores, argmax))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_channels_give_floor() {
        let floor = FeatureVector::filled(3, 7);
        let empty: Vec<Option<FeatureVector>> = vec![None; 16];
        let out = pool_out(&[&empty, &empty, &empty, &empty], &floor);
        assert_eq!(out.0, vec![7; 48]);
    }

    #[test]
    fn single_active_cell_takes_max_over_slices() {
        let floor = FeatureVector::filled(2, 0);
        let mut a: Vec<Option<FeatureVector>> = vec![None; 16];
        let mut b = a.clone();
        a[5] = Some(FeatureVector(vec![3, 9]));
        b[5] = Some(FeatureVector(vec![6, 1]));
        let out = pool_out(&[&a, &b], &floor);
        assert_eq!(&out.0[10..12], &[6, 9]);
        assert_eq!(out.0.iter().filter(|&&v| v != 0).count(), 2);
    }

    #[test]
    fn zero_weight_head_picks_lowest_max_bias() {
        let head = ClassifierHead {
            linear: QuantizedLinear::new(4, 3, vec![0; 12], vec![5, 9, 9], 0).unwrap(),
        };
        let s = classify(&head, &FeatureVector(vec![1, 2, 3, 4])).unwrap();
        assert_eq!(s.scores, vec![5, 9, 9]);
        assert_eq!(s.argmax, 1);
    }

    #[test]
    fn head_dimension_mismatch() {
        let head = ClassifierHead {
            linear: QuantizedLinear::zeros(32, 2),
        };
        assert!(classify(&head, &FeatureVector(vec![0; 31])).is_err());
        assert!(classify_f64(&head, &[0.0; 3]).is_err());
    }
}
