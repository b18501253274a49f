//! Whole-graph evaluation: build the full event graph, then apply each layer
//! to every vertex. Reference for the streaming engine and host of the float
//! path.

use std::collections::BTreeMap;

use super::{window_count, ModelConfig, ModelError, ModelWeights, Prediction, POOL1_G, POOL2_G};
use crate::events_io::NormalizedEvent;
use crate::graph_builder::build_graph;
use crate::layers::{
    classify, classify_f64, conv_graph, conv_graph_f64, maxpool, pool_out, pool_out_cells, FeatureGraph,
    FeatureVector, Features, FloatMode, OpCounter, PoolSpec, OUT_GRID,
};

/// Every intermediate graph of an offline run.
#[derive(Debug, Clone)]
pub struct OfflineRun {
    pub conv1: FeatureGraph<FeatureVector>,
    pub pool1: FeatureGraph<FeatureVector>,
    pub conv2: FeatureGraph<FeatureVector>,
    pub conv3: FeatureGraph<FeatureVector>,
    pub pool2: FeatureGraph<FeatureVector>,
    pub conv4: FeatureGraph<FeatureVector>,
    pub conv5: FeatureGraph<FeatureVector>,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatPrediction {
    pub t_end_us: u64,
    pub scores: Vec<f64>,
    pub argmax: usize,
}

fn last_t(events: &[NormalizedEvent], beta: u32) -> Option<i64> {
    events.last().map(|e| e.extended_t(beta))
}

/// Input graph and the graphs after each MaxPool, without features.
pub fn graph_structure(events: &[NormalizedEvent], cfg: &ModelConfig) -> Result<[FeatureGraph<()>; 3], ModelError> {
    let g0 = FeatureGraph::from_event_graph(&build_graph(events, cfg.beta, cfg.radius)?, |_| ());
    let g1 = maxpool(&g0, &PoolSpec::divide3d(POOL1_G))?;
    let g2 = maxpool(&g1, &PoolSpec::divide3d(POOL2_G))?;
    Ok([g0, g1, g2])
}

/// Conv5 vertices merged per quarter-window onto the 4×4 output grid.
fn out_grids<F: Features>(graph: &FeatureGraph<F>, kernel: u32) -> BTreeMap<i64, Vec<Option<F>>> {
    let k = kernel as i64;
    let mut grids: BTreeMap<i64, Vec<Option<F>>> = BTreeMap::new();
    for node in &graph.nodes {
        let grid = grids
            .entry(node.pos.t.div_euclid(k))
            .or_insert_with(|| vec![None; OUT_GRID * OUT_GRID]);
        let idx = node.pos.y.div_euclid(k) as usize * OUT_GRID + node.pos.x.div_euclid(k) as usize;
        match &mut grid[idx] {
            Some(f) => f.merge_max(&node.features),
            slot @ None => *slot = Some(node.features.clone()),
        }
    }
    grids
}

/// Grids of quarter-windows `k-3..=k` that contain vertices.
fn context<F>(grids: &BTreeMap<i64, Vec<Option<F>>>, k: i64) -> Vec<&[Option<F>]> {
    grids.range(k - 3..=k).map(|(_, g)| g.as_slice()).collect()
}

fn prediction_count(events: &[NormalizedEvent], cfg: &ModelConfig) -> i64 {
    4 * window_count(last_t(events, cfg.beta), cfg.beta)
}

pub fn run_offline(
    events: &[NormalizedEvent],
    cfg: &ModelConfig,
    weights: &ModelWeights,
) -> Result<OfflineRun, ModelError> {
    cfg.validate()?;
    weights.check_config(cfg)?;
    let c = &weights.convs;
    let g0 = FeatureGraph::from_event_graph(&build_graph(events, cfg.beta, cfg.radius)?, |p| {
        FeatureVector(vec![2 * p as u8])
    });
    let conv1 = conv_graph(&c[0], &g0)?;
    let pool1 = maxpool(&conv1, &PoolSpec::divide3d(POOL1_G))?;
    let conv2 = conv_graph(&c[1], &pool1)?;
    let conv3 = conv_graph(&c[2], &conv2)?;
    let pool2 = maxpool(&conv3, &PoolSpec::divide3d(POOL2_G))?;
    let conv4 = conv_graph(&c[3], &pool2)?;
    let conv5 = conv_graph(&c[4], &conv4)?;

    let grids = out_grids(&conv5, cfg.pool_out_kernel());
    let floor = c[4].floor();
    let period = cfg.prediction_period_us();
    let predictions = (0..prediction_count(events, cfg))
        .map(|k| {
            let s = classify(&weights.head, &pool_out(&context(&grids, k), &floor))?;
            Ok(Prediction {
                t_end_us: (k as u64 + 1) * period,
                scores: s.scores,
                argmax: s.argmax,
                warmup: k < 3,
            })
        })
        .collect::<Result<_, ModelError>>()?;

    Ok(OfflineRun {
        conv1,
        pool1,
        conv2,
        conv3,
        pool2,
        conv4,
        conv5,
        predictions,
    })
}

/// Float reference inference. Also returns the per-layer operation counts.
pub fn run_offline_f64(
    events: &[NormalizedEvent],
    cfg: &ModelConfig,
    weights: &ModelWeights,
    mode: FloatMode,
) -> Result<(Vec<FloatPrediction>, [OpCounter; 5]), ModelError> {
    cfg.validate()?;
    weights.check_config(cfg)?;
    let c = &weights.convs;
    let mut ops = [OpCounter::default(); 5];
    let g0 = FeatureGraph::from_event_graph(&build_graph(events, cfg.beta, cfg.radius)?, |p| {
        vec![2.0 * p as u8 as f64]
    });
    let g = conv_graph_f64(&c[0], &g0, mode, &mut ops[0])?;
    let g = maxpool(&g, &PoolSpec::divide3d(POOL1_G))?;
    let g = conv_graph_f64(&c[1], &g, mode, &mut ops[1])?;
    let g = conv_graph_f64(&c[2], &g, mode, &mut ops[2])?;
    let g = maxpool(&g, &PoolSpec::divide3d(POOL2_G))?;
    let g = conv_graph_f64(&c[3], &g, mode, &mut ops[3])?;
    let g = conv_graph_f64(&c[4], &g, mode, &mut ops[4])?;

    let grids = out_grids(&g, cfg.pool_out_kernel());
    let floor = vec![c[4].requant.activation_min as f64; c[4].out_dim()];
    let period = cfg.prediction_period_us();
    let predictions = (0..prediction_count(events, cfg))
        .map(|k| {
            let flat: Vec<f64> = pool_out_cells(&context(&grids, k), &floor).concat();
            let (scores, argmax) = classify_f64(&weights.head, &flat)?;
            Ok(FloatPrediction {
                t_end_us: (k as u64 + 1) * period,
                scores,
                argmax,
            })
        })
        .collect::<Result<_, ModelError>>()?;
    Ok((predictions, ops))
}
