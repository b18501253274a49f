//! Network layers: quantized PointNetConv with its float reference, 3D/2D
//! graph MaxPool, PoolOut and the linear classifier head.

mod conv;
mod head;
mod pool;
mod quant;

pub use conv::{
    conv_graph, conv_graph_f64, conv_message, conv_message_f64, conv_vertex, conv_vertex_f64,
    FloatMode, OpCounter, PointNetConv, PositionLut,
};
pub use head::{
    classify, classify_f64, pool_out, pool_out_cells, ClassScores, ClassifierHead, OUT_GRID,
};
pub use pool::{
    maxpool, merge_offset, post_pool_candidates, Features, FeatureGraph, GraphNode, PoolDims,
    PoolSpec, PositionMode,
};
pub use quant::{requantize, FeatureVector, QuantizedLinear, Requant};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LayerError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("pool size {g} does not divide grid size {size}")]
    PoolSize { g: u32, size: u32 },
    #[error("invalid layer parameter: {0}")]
    InvalidParameter(String),
}
