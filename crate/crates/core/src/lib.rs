//! Event-camera graph convolutional network inference engine.
//!
//! The crate turns a DVS event stream into a directed spatio-temporal graph,
//! runs an int8-quantized PointNetConv network over it and produces class
//! predictions every quarter of the configured time window.
//!
//! Layout:
//!
//! - [`events_io`]: event tuples, `.evt`/CSV files, normalization, synthetic streams
//! - [`graph_builder`]: neighbourhood-matrix graph construction
//! - [`layers`]: quantized and float PointNetConv, 3D/2D MaxPool, PoolOut, head
//! - [`model`]: variants, weight files, temporal channels, streaming and offline inference
//! - [`analysis`]: FLOPs accounting and graph reduction statistics

pub mod analysis;
pub mod events_io;
pub mod graph_builder;
pub mod layers;
pub mod model;

pub use events_io::{Event, EventFormat, NormalizedEvent, SensorConfig};
pub use graph_builder::{EventGraph, NeighbourhoodMatrix, Offset, Position};
pub use model::{ModelConfig, ModelWeights, Prediction, Variant};
