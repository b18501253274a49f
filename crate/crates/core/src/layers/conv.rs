//! PointNetConv: `X̂_i = max_j φ(X_j, P_j - P_i)` over the self-loop and the
//! vertex's directed edges, with φ a single linear map and no update step.

use super::pool::{FeatureGraph, GraphNode};
use super::quant::{requantize, FeatureVector, QuantizedLinear, Requant};
use super::LayerError;
use crate::graph_builder::Offset;

/// Maps a position difference to the integer fed into φ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionLut {
    pub scale: i8,
}

impl PositionLut {
    pub const IDENTITY: PositionLut = PositionLut { scale: 1 };

    pub fn lookup(&self, d: i64) -> i32 {
        (d * self.scale as i64).clamp(i8::MIN as i64, i8::MAX as i64) as i32
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointNetConv {
    /// `in_dim` includes the three position inputs.
    pub linear: QuantizedLinear,
    pub requant: Requant,
    pub pos_lut: PositionLut,
}

impl PointNetConv {
    pub fn feature_dim(&self) -> usize {
        self.linear.in_dim - 3
    }

    pub fn out_dim(&self) -> usize {
        self.linear.out_dim
    }

    pub fn floor(&self) -> FeatureVector {
        FeatureVector::filled(self.out_dim(), self.requant.activation_min)
    }
}

/// φ for one neighbour: 32-bit accumulators of `W · [X_j - zp, lut(P_j - P_i)] + b`.
pub fn conv_message(
    conv: &PointNetConv,
    neighbour: &FeatureVector,
    offset: Offset,
) -> Result<Vec<i32>, LayerError> {
    if neighbour.len() != conv.feature_dim() {
        return Err(LayerError::DimensionMismatch {
            what: "conv input features",
            expected: conv.feature_dim(),
            got: neighbour.len(),
        });
    }
    let zp = conv.linear.input_zero_point as i32;
    let mut input: Vec<i32> = neighbour.0.iter().map(|&v| v as i32 - zp).collect();
    input.push(conv.pos_lut.lookup(offset.dx));
    input.push(conv.pos_lut.lookup(offset.dy));
    input.push(conv.pos_lut.lookup(offset.dt));
    conv.linear.accumulate(&input)
}

/// Elementwise max of the requantized self-loop and neighbour messages,
/// floored at `activation_min`. Offsets are `P_j - P_i`.
pub fn conv_vertex(
    conv: &PointNetConv,
    self_attr: &FeatureVector,
    neighbours: &[(FeatureVector, Offset)],
) -> Result<FeatureVector, LayerError> {
    let mut out = conv.floor();
    let self_msg = conv_message(conv, self_attr, Offset::ZERO)?;
    let messages = std::iter::once(Ok(self_msg)).chain(
        neighbours
            .iter()
            .map(|(attr, off)| conv_message(conv, attr, *off)),
    );
    for msg in messages {
        for (o, acc) in out.0.iter_mut().zip(msg?) {
            *o = (*o).max(requantize(acc, &conv.requant));
        }
    }
    Ok(out)
}

/// Applies the conv to every vertex of a graph, reading neighbours through
/// the vertex's outgoing (newer → older) edges.
pub fn conv_graph(
    conv: &PointNetConv,
    graph: &FeatureGraph<FeatureVector>,
) -> Result<FeatureGraph<FeatureVector>, LayerError> {
    let adjacency = graph.adjacency();
    let mut nodes = Vec::with_capacity(graph.nodes.len());
    for (i, node) in graph.nodes.iter().enumerate() {
        let neighbours: Vec<(FeatureVector, Offset)> = adjacency[i]
            .iter()
            .map(|&j| {
                let dst = &graph.nodes[j];
                (dst.features.clone(), dst.pos.offset_to(&node.pos))
            })
            .collect();
        nodes.push(GraphNode {
            pos: node.pos,
            centroid: node.centroid,
            features: conv_vertex(conv, &node.features, &neighbours)?,
        });
    }
    Ok(FeatureGraph {
        size: graph.size,
        nodes,
        edges: graph.edges.clone(),
    })
}

/// Float reference arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloatMode {
    /// Same rounding and saturation as the integer path; bit-identical for
    /// integer-valued inputs.
    Exact,
    /// Real-valued rescaling without rounding or the 255 ceiling.
    Ideal,
}

/// Operation tallies from the instrumented float reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounter {
    /// Multiplies and adds (bias included) in φ over graph edges.
    pub mlp_edge: u64,
    /// Same for self-loop messages, which the FLOPs formula leaves out.
    pub mlp_self: u64,
    /// Max comparisons during aggregation.
    pub aggr: u64,
    /// Per-vertex output updates (the activation floor).
    pub updt: u64,
    pub edges: u64,
    pub nodes: u64,
}

impl OpCounter {
    pub fn merge(&mut self, other: &OpCounter) {
        self.mlp_edge += other.mlp_edge;
        self.mlp_self += other.mlp_self;
        self.aggr += other.aggr;
        self.updt += other.updt;
        self.edges += other.edges;
        self.nodes += other.nodes;
    }
}

fn rescale_f64(acc: f64, rq: &Requant, mode: FloatMode) -> f64 {
    let scaled = acc * rq.multiplier as f64 / (2f64).powi(rq.shift as i32);
    match mode {
        FloatMode::Exact => (scaled.round() + rq.zero_point as f64).clamp(0.0, 255.0),
        FloatMode::Ideal => (scaled + rq.zero_point as f64).max(0.0),
    }
}

/// Float φ: returns rescaled (not yet floored) outputs and counts the
/// multiply/add work into `ops`.
pub fn conv_message_f64(
    conv: &PointNetConv,
    neighbour: &[f64],
    offset: [f64; 3],
    mode: FloatMode,
    ops: &mut u64,
) -> Result<Vec<f64>, LayerError> {
    if neighbour.len() != conv.feature_dim() {
        return Err(LayerError::DimensionMismatch {
            what: "conv input features",
            expected: conv.feature_dim(),
            got: neighbour.len(),
        });
    }
    let zp = conv.linear.input_zero_point as f64;
    let scale = conv.pos_lut.scale as f64;
    let mut input: Vec<f64> = neighbour.iter().map(|&v| v - zp).collect();
    input.extend(offset.iter().map(|&d| match mode {
        FloatMode::Exact => conv.pos_lut.lookup(d as i64) as f64,
        FloatMode::Ideal => d * scale,
    }));
    let lin = &conv.linear;
    let mut out = Vec::with_capacity(lin.out_dim);
    for k in 0..lin.out_dim {
        let mut acc = lin.bias[k] as f64;
        for (w, x) in lin.row(k).iter().zip(&input) {
            acc += *w as f64 * x;
            *ops += 2;
        }
        out.push(rescale_f64(acc, &conv.requant, mode));
    }
    Ok(out)
}

pub fn conv_vertex_f64(
    conv: &PointNetConv,
    self_attr: &[f64],
    neighbours: &[(&[f64], [f64; 3])],
    mode: FloatMode,
    counter: &mut OpCounter,
) -> Result<Vec<f64>, LayerError> {
    let mut agg = conv_message_f64(conv, self_attr, [0.0; 3], mode, &mut counter.mlp_self)?;
    for (attr, off) in neighbours {
        let msg = conv_message_f64(conv, attr, *off, mode, &mut counter.mlp_edge)?;
        for (a, m) in agg.iter_mut().zip(msg) {
            *a = a.max(m);
            counter.aggr += 1;
        }
    }
    let floor = conv.requant.activation_min as f64;
    for a in agg.iter_mut() {
        *a = a.max(floor);
        counter.updt += 1;
    }
    counter.edges += neighbours.len() as u64;
    counter.nodes += 1;
    Ok(agg)
}

/// Float reference over a graph; offsets come from node centroids so that
/// average-position pooling can be evaluated.
pub fn conv_graph_f64(
    conv: &PointNetConv,
    graph: &FeatureGraph<Vec<f64>>,
    mode: FloatMode,
    counter: &mut OpCounter,
) -> Result<FeatureGraph<Vec<f64>>, LayerError> {
    let adjacency = graph.adjacency();
    let mut nodes = Vec::with_capacity(graph.nodes.len());
    for (i, node) in graph.nodes.iter().enumerate() {
        let neighbours: Vec<(&[f64], [f64; 3])> = adjacency[i]
            .iter()
            .map(|&j| {
                let dst = &graph.nodes[j];
                let c = node.centroid;
                let d = dst.centroid;
                (dst.features.as_slice(), [d[0] - c[0], d[1] - c[1], d[2] - c[2]])
            })
            .collect();
        nodes.push(GraphNode {
            pos: node.pos,
            centroid: node.centroid,
            features: conv_vertex_f64(conv, &node.features, &neighbours, mode, counter)?,
        });
    }
    Ok(FeatureGraph {
        size: graph.size,
        nodes,
        edges: graph.edges.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_with(weights: Vec<i8>, in_dim: usize, out_dim: usize, requant: Requant) -> PointNetConv {
        PointNetConv {
            linear: QuantizedLinear::new(in_dim, out_dim, weights, vec![0; out_dim], 0).unwrap(),
            requant,
            pos_lut: PositionLut::IDENTITY,
        }
    }

    #[test]
    fn zero_weights_give_zero_messages() {
        let conv = PointNetConv {
            linear: QuantizedLinear::zeros(4, 16),
            requant: Requant::IDENTITY,
            pos_lut: PositionLut::IDENTITY,
        };
        let msg = conv_message(&conv, &FeatureVector(vec![2]), Offset::new(1, -2, 3)).unwrap();
        assert_eq!(msg, vec![0; 16]);
        assert_eq!(conv.feature_dim(), 1);
        assert_eq!(conv.out_dim(), 16);
    }

    #[test]
    fn time_offset_selector_row() {
        let conv = conv_with(vec![0, 0, 0, 1], 4, 1, Requant::IDENTITY);
        let msg = conv_message(&conv, &FeatureVector(vec![9]), Offset::new(0, 0, 2)).unwrap();
        assert_eq!(msg, vec![2]);
    }

    #[test]
    fn message_dimension_mismatch() {
        let conv = conv_with(vec![0; 4], 4, 1, Requant::IDENTITY);
        assert!(conv_message(&conv, &FeatureVector(vec![1, 2]), Offset::ZERO).is_err());
    }

    #[test]
    fn vertex_without_neighbours_is_floored_self_loop() {
        let rq = Requant {
            activation_min: 10,
            ..Requant::IDENTITY
        };
        // weight 1 on the feature, self offset is zero
        let conv = conv_with(vec![1, 0, 0, 0], 4, 1, rq);
        assert_eq!(conv_vertex(&conv, &FeatureVector(vec![3]), &[]).unwrap().0, vec![10]);
        assert_eq!(conv_vertex(&conv, &FeatureVector(vec![30]), &[]).unwrap().0, vec![30]);
    }

    #[test]
    fn vertex_takes_elementwise_max() {
        // out0 = x, out1 = dt
        let conv = conv_with(vec![1, 0, 0, 0, 0, 0, 0, 1], 4, 2, Requant::IDENTITY);
        let out = conv_vertex(
            &conv,
            &FeatureVector(vec![5]),
            &[
                (FeatureVector(vec![7]), Offset::new(0, 0, 1)),
                (FeatureVector(vec![2]), Offset::new(0, 0, 3)),
            ],
        )
        .unwrap();
        assert_eq!(out.0, vec![7, 3]);
    }

    #[test]
    fn lut_saturates_to_i8() {
        let lut = PositionLut { scale: 100 };
        assert_eq!(lut.lookup(1), 100);
        assert_eq!(lut.lookup(2), 127);
        assert_eq!(lut.lookup(-3), -128);
    }
}
