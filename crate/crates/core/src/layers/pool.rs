//! Graph MaxPool over uniform clusters.
//!
//! 3D mode clusters by `(x/g, y/g, t/g)`; 2D mode ignores time (`g_t = ∞`).
//! Each non-empty cluster becomes one vertex with the elementwise max of its
//! members' features. In divide mode the new position is the cluster index
//! (so the grid shrinks by `g` and edges stay directed with time); in average
//! mode it is the members' mean position. Edges between clusters are merged,
//! edges inside a cluster are dropped.

use std::collections::{BTreeMap, BTreeSet};

use super::quant::FeatureVector;
use super::LayerError;
use crate::graph_builder::{EventGraph, Offset, Position};

/// Vertex attributes that pool by elementwise max.
pub trait Features: Clone {
    fn merge_max(&mut self, other: &Self);
}

impl Features for FeatureVector {
    fn merge_max(&mut self, other: &Self) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a = (*a).max(*b);
        }
    }
}

impl Features for Vec<f64> {
    fn merge_max(&mut self, other: &Self) {
        for (a, b) in self.iter_mut().zip(other) {
            *a = a.max(*b);
        }
    }
}

/// Structure-only graphs.
impl Features for () {
    fn merge_max(&mut self, _other: &Self) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode<F> {
    /// Integer grid position; the cluster key after pooling.
    pub pos: Position,
    /// Real-valued position used by the float reference path.
    pub centroid: [f64; 3],
    pub features: F,
}

/// A graph with per-vertex features. Edges are `(src, dst)` index pairs
/// pointing from the newer vertex to the older one.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGraph<F> {
    /// Spatial grid extent.
    pub size: u32,
    pub nodes: Vec<GraphNode<F>>,
    pub edges: Vec<(usize, usize)>,
}

impl<F> FeatureGraph<F> {
    pub fn from_event_graph(graph: &EventGraph, mut features: impl FnMut(bool) -> F) -> Self {
        Self {
            size: graph.size,
            nodes: graph
                .vertices
                .iter()
                .map(|v| GraphNode {
                    pos: v.pos,
                    centroid: [v.pos.x as f64, v.pos.y as f64, v.pos.t as f64],
                    features: features(v.polarity),
                })
                .collect(),
            edges: graph.edges.iter().map(|e| (e.src, e.dst)).collect(),
        }
    }

    /// Outgoing neighbour lists, in edge order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(s, d) in &self.edges {
            adj[s].push(d);
        }
        adj
    }

    pub fn edge_offset(&self, edge: (usize, usize)) -> Offset {
        self.nodes[edge.0].pos.offset_to(&self.nodes[edge.1].pos)
    }

    pub fn map_features<G>(&self, mut f: impl FnMut(&F) -> G) -> FeatureGraph<G> {
        FeatureGraph {
            size: self.size,
            nodes: self
                .nodes
                .iter()
                .map(|n| GraphNode {
                    pos: n.pos,
                    centroid: n.centroid,
                    features: f(&n.features),
                })
                .collect(),
            edges: self.edges.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionMode {
    Divide,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolDims {
    Two,
    Three,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub g: u32,
    pub mode: PositionMode,
    pub dims: PoolDims,
}

impl PoolSpec {
    pub const fn divide3d(g: u32) -> Self {
        Self {
            g,
            mode: PositionMode::Divide,
            dims: PoolDims::Three,
        }
    }

    fn cluster(&self, p: &Position) -> Position {
        let g = self.g as i64;
        match self.dims {
            PoolDims::Three => Position::new(p.x.div_euclid(g), p.y.div_euclid(g), p.t.div_euclid(g)),
            PoolDims::Two => Position::new(p.x.div_euclid(g), p.y.div_euclid(g), 0),
        }
    }
}

/// Offset of the merged edge produced by 3D divide pooling of an edge
/// `src → dst`, or `None` when both ends fall in the same cluster.
pub fn merge_offset(src: Position, dst: Position, g: u32) -> Option<Offset> {
    let spec = PoolSpec::divide3d(g);
    let off = spec.cluster(&src).offset_to(&spec.cluster(&dst));
    (off != Offset::ZERO).then_some(off)
}

/// The 17 possible merged offsets after pooling a radius-3 graph with g = 4:
/// 8 neighbours in the same slice and 9 in the previous one.
pub fn post_pool_candidates() -> Vec<Offset> {
    let mut out = Vec::with_capacity(17);
    for dt in 0..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                if (dx, dy, dt) != (0, 0, 0) {
                    out.push(Offset::new(dx, dy, dt));
                }
            }
        }
    }
    out
}

pub fn maxpool<F: Features>(graph: &FeatureGraph<F>, spec: &PoolSpec) -> Result<FeatureGraph<F>, LayerError> {
    if spec.g == 0 || !graph.size.is_multiple_of(spec.g) {
        return Err(LayerError::PoolSize {
            g: spec.g,
            size: graph.size,
        });
    }

    // clusters ordered by (t, y, x)
    let mut clusters: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
    let mut key_of = Vec::with_capacity(graph.nodes.len());
    for (i, node) in graph.nodes.iter().enumerate() {
        let c = spec.cluster(&node.pos);
        let key = (c.t, c.y, c.x);
        clusters.entry(key).or_default().push(i);
        key_of.push(key);
    }

    let mut index: BTreeMap<(i64, i64, i64), usize> = BTreeMap::new();
    let mut nodes = Vec::with_capacity(clusters.len());
    for (&(t, y, x), members) in &clusters {
        let mut features = graph.nodes[members[0]].features.clone();
        for &m in &members[1..] {
            features.merge_max(&graph.nodes[m].features);
        }
        let pos = Position::new(x, y, t);
        let centroid = match spec.mode {
            PositionMode::Divide => [x as f64, y as f64, t as f64],
            PositionMode::Average => {
                let n = members.len() as f64;
                let mut c = [0.0; 3];
                for &m in members {
                    for (acc, v) in c.iter_mut().zip(graph.nodes[m].centroid) {
                        *acc += v;
                    }
                }
                c.map(|v| v / n)
            }
        };
        index.insert((t, y, x), nodes.len());
        nodes.push(GraphNode {
            pos,
            centroid,
            features,
        });
    }

    let edges: BTreeSet<(usize, usize)> = graph
        .edges
        .iter()
        .filter_map(|&(s, d)| {
            let (a, b) = (index[&key_of[s]], index[&key_of[d]]);
            (a != b).then_some((a, b))
        })
        .collect();

    let size = match spec.mode {
        PositionMode::Divide => graph.size / spec.g,
        PositionMode::Average => graph.size,
    };
    Ok(FeatureGraph {
        size,
        nodes,
        edges: edges.into_iter().collect(),
    })
}
