//! Multiplier planning for the synchronous convolutions.
//!
//! A conv with output dim `dim` and `m` parallel vector multipliers spends
//! `9 · dim / m` cycles per vertex and `9 · dim / m · size²` cycles per
//! temporal channel. A channel spans `ΔT = time_window / size` and has to be
//! processed within that time.

use num_rational::Ratio;

use evgcn_core::model::ModelConfig;

use crate::HwError;

/// Cycles per vertex per unit of `dim / m`.
pub const CYCLES_PER_MAC_GROUP: u64 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClockConfig {
    pub frequency_hz: u64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self {
            frequency_hz: 200_000_000,
        }
    }
}

impl ClockConfig {
    pub fn new(frequency_hz: u64) -> Result<Self, HwError> {
        if frequency_hz == 0 {
            return Err(HwError::InvalidClock);
        }
        Ok(Self { frequency_hz })
    }

    pub fn cycle_ns(&self) -> Ratio<u64> {
        Ratio::new(1_000_000_000, self.frequency_hz)
    }

    pub fn cycles_to_us(&self, cycles: u64) -> Ratio<u64> {
        Ratio::new(cycles, 1) * Ratio::new(1_000_000, self.frequency_hz)
    }

    pub fn us_to_cycles(&self, us: Ratio<u64>) -> Ratio<u64> {
        us * Ratio::new(self.frequency_hz, 1_000_000)
    }
}

/// `time_window / size` in microseconds.
pub fn delta_t(time_window_us: u64, size: u64) -> Result<Ratio<u64>, HwError> {
    if size == 0 {
        return Err(HwError::ZeroSize);
    }
    Ok(Ratio::new(time_window_us, size))
}

pub fn cc_vertex(dim: u64, m: u64) -> Result<u64, HwError> {
    if m == 0 || !dim.is_multiple_of(m) {
        return Err(HwError::InvalidDivisor { dim, m });
    }
    Ok(CYCLES_PER_MAC_GROUP * dim / m)
}

pub fn cc_channel(dim: u64, m: u64, size: u64) -> Result<u64, HwError> {
    Ok(cc_vertex(dim, m)? * size * size)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPlan {
    pub name: String,
    pub size: u64,
    pub delta_t_us: Ratio<u64>,
    pub delta_t_cycles: Ratio<u64>,
    pub dim: u64,
    pub m: u64,
    pub cc_vertex: u64,
    pub cc_t: u64,
    pub duration_us: Ratio<u64>,
}

/// Power-of-two divisors of `dim`, ascending.
fn candidate_m(dim: u64) -> impl Iterator<Item = u64> {
    (0..64)
        .map(|k| 1u64 << k)
        .take_while(move |&m| m <= dim)
        .filter(move |&m| dim.is_multiple_of(m))
}

pub fn plan_layer(
    name: &str,
    dim: u64,
    size: u64,
    time_window_us: u64,
    clock: &ClockConfig,
) -> Result<LayerPlan, HwError> {
    let dt_us = delta_t(time_window_us, size)?;
    let dt_cycles = clock.us_to_cycles(dt_us);
    for m in candidate_m(dim) {
        let cc_t = cc_channel(dim, m, size)?;
        if Ratio::from_integer(cc_t) <= dt_cycles {
            return Ok(LayerPlan {
                name: name.to_string(),
                size,
                delta_t_us: dt_us,
                delta_t_cycles: dt_cycles,
                dim,
                m,
                cc_vertex: cc_vertex(dim, m)?,
                cc_t,
                duration_us: clock.cycles_to_us(cc_t),
            });
        }
    }
    Err(HwError::Infeasible {
        layer: name.to_string(),
        dim,
        size,
        delta_t_us: dt_us.to_string(),
    })
}

/// Plans for Conv2..Conv5; the first two run on the pool-1 grid, the last two
/// on the pool-2 grid.
pub fn select_multipliers(cfg: &ModelConfig, clock: &ClockConfig) -> Result<Vec<LayerPlan>, HwError> {
    let dims = cfg.conv_dims();
    let tw = cfg.time_window_us as u64;
    let sizes = [cfg.size1(), cfg.size1(), cfg.size2(), cfg.size2()];
    (0..4)
        .map(|i| plan_layer(&format!("conv{}", i + 2), dims[i + 1] as u64, sizes[i] as u64, tw, clock))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use evgcn_core::Variant;

    #[test]
    fn delta_t_examples() {
        assert_eq!(delta_t(50_000, 64).unwrap(), Ratio::new(78_125, 100));
        assert_eq!(delta_t(100_000, 32).unwrap(), Ratio::from_integer(3125));
        assert_eq!(delta_t(100_000, 1).unwrap(), Ratio::from_integer(100_000));
        assert_eq!(delta_t(1, 0), Err(HwError::ZeroSize));
    }

    #[test]
    fn cycle_examples() {
        assert_eq!(cc_vertex(32, 8).unwrap(), 36);
        assert_eq!(cc_vertex(32, 1).unwrap(), 288);
        assert_eq!(cc_vertex(64, 64).unwrap(), 9);
        assert!(cc_vertex(32, 3).is_err());
        assert!(cc_vertex(32, 0).is_err());
        let clk = ClockConfig::default();
        assert_eq!(cc_channel(32, 8, 64).unwrap(), 147_456);
        assert_eq!(clk.cycles_to_us(147_456), Ratio::new(73_728, 100));
        assert_eq!(cc_channel(64, 1, 16).unwrap(), 147_456);
        assert_eq!(cc_channel(64, 1, 0).unwrap(), 0);
    }

    #[test]
    fn plans_for_both_reference_configs() {
        let clk = ClockConfig::default();
        let ms = |cfg| -> Vec<u64> { select_multipliers(&cfg, &clk).unwrap().iter().map(|p| p.m).collect() };
        assert_eq!(ms(ModelConfig::reference_256(Variant::Small)), vec![8, 8, 1, 1]);
        assert_eq!(ms(ModelConfig::reference_256(Variant::Base)), vec![8, 8, 2, 2]);
        assert_eq!(ms(ModelConfig::reference_256(Variant::Large)), vec![8, 16, 2, 4]);
        for v in Variant::ALL {
            assert_eq!(ms(ModelConfig::reference_128(v)), vec![1, 1, 1, 1]);
        }
    }

    #[test]
    fn too_short_window_is_infeasible() {
        let cfg = ModelConfig::new(Variant::Large, 256, 1_000).unwrap();
        assert!(matches!(
            select_multipliers(&cfg, &ClockConfig::default()),
            Err(HwError::Infeasible { .. })
        ));
    }
}
