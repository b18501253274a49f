//! FLOPs accounting and graph-reduction statistics.
//!
//! For a conv on a graph with `N` vertices and `E` edges (`K = E / N`):
//! `FLOPS_MLP = 2·F_in·F_out·E`, `FLOPS_Aggr = F_out·K·E`,
//! `FLOPS_Updt = F_out·E`, and `FLOPS_Tot = E·F_out·(2·F_in + K + 1)`, where
//! `F_in` counts the three position inputs. All values are exact rationals.

use std::io::{self, Write};

use num_rational::Ratio;
use thiserror::Error;

use crate::events_io::NormalizedEvent;
use crate::layers::{FeatureGraph, OpCounter};
use crate::model::{graph_structure, ModelConfig, ModelError};

pub type Exact = Ratio<i128>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("flops per event needs at least one event")]
    NoEvents,
    #[error("{layer}: {what} formula {formula} != counted {counted}")]
    CounterMismatch {
        layer: String,
        what: &'static str,
        formula: String,
        counted: String,
    },
}

/// Vertex and edge counts of one graph in the pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphStats {
    pub layer: String,
    pub n: u64,
    pub e: u64,
}

impl GraphStats {
    pub fn of<F>(layer: &str, graph: &FeatureGraph<F>) -> Self {
        Self {
            layer: layer.to_string(),
            n: graph.nodes.len() as u64,
            e: graph.edges.len() as u64,
        }
    }

    /// Average neighbours per vertex; 0 for an empty graph.
    pub fn k(&self) -> Exact {
        if self.n == 0 {
            Exact::from_integer(0)
        } else {
            Exact::new(self.e as i128, self.n as i128)
        }
    }
}

/// Size of each stage relative to the first one.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub layer: String,
    /// `N_input / N_stage`; `None` if the stage is empty.
    pub vertex_ratio: Option<f64>,
    pub edge_ratio: Option<f64>,
}

fn ratio(a: u64, b: u64) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

pub fn reduction_stats(stats: &[GraphStats]) -> Vec<Reduction> {
    let Some(first) = stats.first() else {
        return Vec::new();
    };
    stats
        .iter()
        .map(|s| Reduction {
            layer: s.layer.clone(),
            vertex_ratio: ratio(first.n, s.n),
            edge_ratio: ratio(first.e, s.e),
        })
        .collect()
}

/// Input graph and both pooled graphs of a stream.
pub fn pipeline_stats(events: &[NormalizedEvent], cfg: &ModelConfig) -> Result<Vec<GraphStats>, ModelError> {
    let [g0, g1, g2] = graph_structure(events, cfg)?;
    Ok(vec![
        GraphStats::of("input", &g0),
        GraphStats::of("pool1", &g1),
        GraphStats::of("pool2", &g2),
    ])
}

pub fn flops_total(e: u64, f_in: usize, f_out: usize, k: Exact) -> Exact {
    let e = e as i128;
    let (f_in, f_out) = (f_in as i128, f_out as i128);
    (k + 2 * f_in + 1) * (e * f_out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerFlops {
    pub layer: String,
    pub n: u64,
    pub e: u64,
    pub f_in: usize,
    pub f_out: usize,
}

impl LayerFlops {
    pub fn k(&self) -> Exact {
        GraphStats {
            layer: String::new(),
            n: self.n,
            e: self.e,
        }
        .k()
    }

    pub fn mlp(&self) -> Exact {
        Exact::from_integer(2 * (self.f_in * self.f_out) as i128 * self.e as i128)
    }

    pub fn aggr(&self) -> Exact {
        self.k() * (self.f_out as i128 * self.e as i128)
    }

    pub fn updt(&self) -> Exact {
        Exact::from_integer(self.f_out as i128 * self.e as i128)
    }

    pub fn total(&self) -> Exact {
        flops_total(self.e, self.f_in, self.f_out, self.k())
    }

    /// Checks the formula against the float reference's operation counter.
    ///
    /// The counter sees one max comparison per edge and output channel, and
    /// one floor update per vertex and channel; the formula charges both per
    /// edge at K times that rate, so the counted aggregation and update work
    /// is scaled by K before comparing.
    pub fn verify(&self, ops: &OpCounter) -> Result<(), AnalysisError> {
        let k = self.k();
        let checks = [
            ("edges", Exact::from_integer(self.e as i128), Exact::from_integer(ops.edges as i128)),
            ("vertices", Exact::from_integer(self.n as i128), Exact::from_integer(ops.nodes as i128)),
            ("mlp", self.mlp(), Exact::from_integer(ops.mlp_edge as i128)),
            ("aggr", self.aggr(), k * ops.aggr as i128),
            ("updt", self.updt(), k * ops.updt as i128),
            (
                "total",
                self.total(),
                Exact::from_integer(ops.mlp_edge as i128) + k * (ops.aggr + ops.updt) as i128,
            ),
        ];
        for (what, formula, counted) in checks {
            if formula != counted {
                return Err(AnalysisError::CounterMismatch {
                    layer: self.layer.clone(),
                    what,
                    formula: formula.to_string(),
                    counted: counted.to_string(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsReport {
    pub layers: Vec<LayerFlops>,
    pub events: u64,
}

impl FlopsReport {
    pub fn total(&self) -> Exact {
        self.layers.iter().map(LayerFlops::total).sum()
    }

    pub fn verify(&self, ops: &[OpCounter]) -> Result<(), AnalysisError> {
        self.layers.iter().zip(ops).try_for_each(|(l, o)| l.verify(o))
    }

    /// `layer,N,E,K,flops_mlp,flops_aggr,flops_updt,flops_tot`, then a total row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "layer,N,E,K,flops_mlp,flops_aggr,flops_updt,flops_tot")?;
        for l in &self.layers {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                l.layer,
                l.n,
                l.e,
                fmt_exact(l.k()),
                fmt_exact(l.mlp()),
                fmt_exact(l.aggr()),
                fmt_exact(l.updt()),
                fmt_exact(l.total())
            )?;
        }
        let sum = |f: fn(&LayerFlops) -> Exact| self.layers.iter().map(f).sum::<Exact>();
        writeln!(
            out,
            "total,,,,{},{},{},{}",
            fmt_exact(sum(LayerFlops::mlp)),
            fmt_exact(sum(LayerFlops::aggr)),
            fmt_exact(sum(LayerFlops::updt)),
            fmt_exact(self.total())
        )
    }
}

/// Integers print as-is, other values with four decimals.
pub fn fmt_exact(v: Exact) -> String {
    if v.is_integer() {
        v.to_integer().to_string()
    } else {
        format!("{:.4}", *v.numer() as f64 / *v.denom() as f64)
    }
}

/// Per-conv FLOPs for a stream. Conv1 runs on the input graph, Conv2/Conv3
/// on the pool-1 graph and Conv4/Conv5 on the pool-2 graph.
pub fn flops_report(events: &[NormalizedEvent], cfg: &ModelConfig) -> Result<FlopsReport, ModelError> {
    let stats = pipeline_stats(events, cfg)?;
    let graph_of = [0, 1, 1, 2, 2];
    let layers = cfg
        .conv_shapes()
        .iter()
        .enumerate()
        .map(|(i, &(f_in, f_out))| LayerFlops {
            layer: format!("conv{}", i + 1),
            n: stats[graph_of[i]].n,
            e: stats[graph_of[i]].e,
            f_in: f_in + 3,
            f_out,
        })
        .collect();
    Ok(FlopsReport {
        layers,
        events: events.len() as u64,
    })
}

/// Average MFLOPs per input event.
pub fn flops_per_event(report: &FlopsReport, event_count: u64) -> Result<f64, AnalysisError> {
    if event_count == 0 {
        return Err(AnalysisError::NoEvents);
    }
    let t = report.total();
    Ok(*t.numer() as f64 / *t.denom() as f64 / event_count as f64 / 1e6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_builder::Position;
    use crate::layers::GraphNode;

    fn layer(n: u64, e: u64, f_in: usize, f_out: usize) -> LayerFlops {
        LayerFlops {
            layer: "l".into(),
            n,
            e,
            f_in,
            f_out,
        }
    }

    #[test]
    fn formula_examples() {
        assert_eq!(flops_total(0, 4, 16, Exact::from_integer(3)), Exact::from_integer(0));
        assert_eq!(flops_total(1, 4, 16, Exact::from_integer(1)), Exact::from_integer(160));
        let l = layer(1, 1, 4, 16);
        assert_eq!(l.mlp() + l.aggr() + l.updt(), l.total());
    }

    #[test]
    fn fractional_k() {
        let l = layer(3, 2, 4, 16);
        assert_eq!(l.k(), Exact::new(2, 3));
        assert_eq!(l.total(), Exact::new(2 * 16 * (3 * 9 + 2), 3));
        assert_eq!(fmt_exact(l.k()), "0.6667");
        assert_eq!(fmt_exact(l.updt()), "32");
    }

    #[test]
    fn per_event_average() {
        let r = FlopsReport {
            layers: vec![layer(2, 2, 4, 16)],
            events: 0,
        };
        let one = flops_per_event(&r, 1).unwrap();
        assert_eq!(one, 2.0 * 16.0 * 10.0 / 1e6);
        assert_eq!(flops_per_event(&r, 2).unwrap(), one / 2.0);
        assert_eq!(flops_per_event(&r, 0), Err(AnalysisError::NoEvents));
        let empty = FlopsReport {
            layers: vec![layer(0, 0, 4, 16)],
            events: 0,
        };
        assert_eq!(flops_per_event(&empty, 5).unwrap(), 0.0);
    }

    #[test]
    fn reduction_ratios() {
        let node = |x| GraphNode {
            pos: Position::new(x, 0, 0),
            centroid: [0.0; 3],
            features: (),
        };
        let g = FeatureGraph {
            size: 8,
            nodes: (0..4).map(node).collect(),
            edges: vec![(1, 0), (2, 1), (3, 2)],
        };
        let pooled = crate::layers::maxpool(&g, &crate::layers::PoolSpec::divide3d(8)).unwrap();
        let stats = [GraphStats::of("input", &g), GraphStats::of("pool", &pooled)];
        let r = reduction_stats(&stats);
        assert_eq!(r[0].vertex_ratio, Some(1.0));
        assert_eq!(r[1].vertex_ratio, Some(4.0));
        assert_eq!(r[1].edge_ratio, None);
    }

    #[test]
    fn csv_layout() {
        let r = FlopsReport {
            layers: vec![layer(2, 4, 4, 16)],
            events: 10,
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "layer,N,E,K,flops_mlp,flops_aggr,flops_updt,flops_tot");
        assert_eq!(lines[1], "l,2,4,2,512,128,64,704");
        assert_eq!(lines[2], "total,,,,512,128,64,704");
    }
}
