//! Model variants, weight files and end-to-end inference.
//!
//! The streaming engine mirrors the hardware pipeline: the asynchronous part
//! (graph generation + Conv1 + MaxPool1) runs per event, everything after
//! MaxPool1 runs per temporal channel behind triple-buffered feature memories.
//! The offline path builds the whole graph first and applies each layer
//! globally; both must agree bit for bit.

mod channel;
mod config;
mod offline;
mod stream;
mod weights;

pub use channel::{accumulate_slice, feature_memory_step, ChannelCell, FeatureMemory, TemporalChannel};
pub use config::{ModelConfig, Variant, POOL1_G, POOL2_G};
pub use offline::{graph_structure, run_offline, run_offline_f64, FloatPrediction, OfflineRun};
pub use stream::{run_inference, run_inference_threaded, StreamingEngine};
pub use weights::{ModelWeights, WEIGHTS_FORMAT};

use std::io::{self, Write};

use thiserror::Error;

use crate::graph_builder::GraphError;
use crate::layers::LayerError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("slice mismatch: channel holds slice {expected}, vertex belongs to slice {got}")]
    SliceMismatch { expected: i64, got: i64 },
    #[error("scheduling violation: feature memory switched before slice {slice} was consumed")]
    SchedulingViolation { slice: i64 },
    #[error("missing neighbour cell ({x}, {y}) in slice {slice}")]
    MissingNeighbour { x: i64, y: i64, slice: i64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One classification result, emitted every quarter of the time window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    /// End of the covered quarter-window, in microseconds from stream start.
    pub t_end_us: u64,
    pub scores: Vec<i32>,
    pub argmax: usize,
    /// Fewer than four quarter-windows of context were available.
    pub warmup: bool,
}

impl Prediction {
    /// `t_end_us,argmax,score_0,...,score_{cls-1}`
    pub fn to_line(&self) -> String {
        let mut line = format!("{},{}", self.t_end_us, self.argmax);
        for s in &self.scores {
            line.push(',');
            line.push_str(&s.to_string());
        }
        line
    }
}

pub fn write_predictions<W: Write>(predictions: &[Prediction], mut out: W) -> io::Result<()> {
    for p in predictions {
        writeln!(out, "{}", p.to_line())?;
    }
    Ok(())
}

/// Number of time windows covered by a stream whose last normalized
/// timestamp is `last_t` (at least one).
pub(crate) fn window_count(last_t: Option<i64>, beta: u32) -> i64 {
    last_t.map_or(1, |t| t.div_euclid(beta as i64) + 1)
}
