//! Clock-cycle cost model of the event-graph accelerator: multiplier
//! planning, temporal-channel scheduling, FIFO behaviour and latency.

pub mod latency;
pub mod plan;
pub mod sim;

pub use latency::StageLatencies;
pub use plan::{cc_channel, cc_vertex, delta_t, select_multipliers, ClockConfig, LayerPlan};
pub use sim::{simulate, throughput_meps, LayerSchedule, SimOptions, SimReport, Violation};

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum HwError {
    #[error("clock frequency must be positive")]
    InvalidClock,
    #[error("grid size must be positive")]
    ZeroSize,
    #[error("multiplier count {m} does not divide dim {dim}")]
    InvalidDivisor { dim: u64, m: u64 },
    #[error("{layer} (dim {dim}, size {size}) cannot finish within ΔT = {delta_t_us} us for any multiplier count")]
    Infeasible {
        layer: String,
        dim: u64,
        size: u64,
        delta_t_us: String,
    },
    #[error("the hardware model supports radius 3 only, got {0}")]
    UnsupportedRadius(u32),
    #[error("timestamp regression at event {index}: {t} < {previous}")]
    TimestampRegression { index: usize, t: u32, previous: u32 },
}
