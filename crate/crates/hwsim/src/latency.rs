//! Per-event latency as the sum of the delays of the hardware modules one
//! event passes through.

use crate::plan::{ClockConfig, LayerPlan};

/// Fixed per-stage delays in cycles. The synchronous convolutions add their
/// planned `CC_vertex` on top of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageLatencies {
    pub fifo_read: u64,
    pub graph_gen: u64,
    pub async_conv: u64,
    /// Per conv layer, after the multiply-accumulate.
    pub requant: u64,
    /// Per MaxPool.
    pub maxpool: u64,
    /// Per synchronous conv: feature-memory read and write-back.
    pub sync_memory: u64,
    pub pool_out: u64,
}

impl Default for StageLatencies {
    fn default() -> Self {
        Self {
            fifo_read: 2,
            graph_gen: evgcn_core::graph_builder::GRAPH_GEN_CYCLES,
            async_conv: 15,
            requant: 4,
            maxpool: 3,
            sync_memory: 24,
            pool_out: 6,
        }
    }
}

impl StageLatencies {
    /// Cycles outside the synchronous multiply-accumulate loops.
    pub fn fixed_cycles(&self, sync_layers: u64) -> u64 {
        self.fifo_read
            + self.graph_gen
            + self.async_conv
            + self.requant * (1 + sync_layers)
            + self.maxpool * 2
            + self.sync_memory * sync_layers
            + self.pool_out
    }

    pub fn per_event_cycles(&self, plans: &[LayerPlan]) -> u64 {
        self.fixed_cycles(plans.len() as u64) + plans.iter().map(|p| p.cc_vertex).sum::<u64>()
    }

    pub fn per_event_us(&self, plans: &[LayerPlan], clock: &ClockConfig) -> f64 {
        let r = clock.cycles_to_us(self.per_event_cycles(plans));
        *r.numer() as f64 / *r.denom() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::select_multipliers;
    use evgcn_core::model::ModelConfig;
    use evgcn_core::Variant;

    #[test]
    fn fixed_part_with_four_sync_layers() {
        assert_eq!(StageLatencies::default().fixed_cycles(4), 160);
    }

    #[test]
    fn small_128_stage_sum() {
        let clk = ClockConfig::default();
        let plans = select_multipliers(&ModelConfig::reference_128(Variant::Small), &clk).unwrap();
        let lat = StageLatencies::default();
        assert_eq!(lat.per_event_cycles(&plans), 160 + 4 * 288);
        assert!((lat.per_event_us(&plans, &clk) - 6.56).abs() < 1e-9);
    }
}
