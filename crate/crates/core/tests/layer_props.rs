use std::collections::BTreeSet;

use evgcn_core::graph_builder::{build_graph, Offset, Position};
use evgcn_core::layers::{
    conv_graph, conv_graph_f64, conv_vertex, maxpool, post_pool_candidates, requantize, FeatureGraph, FeatureVector,
    FloatMode, OpCounter, PointNetConv, PoolSpec, PositionLut, QuantizedLinear, Requant,
};
use evgcn_core::NormalizedEvent;
use proptest::prelude::*;

/// Rounds `acc * multiplier / 2^shift` to nearest, ties away from zero, from
/// the floor quotient and remainder.
fn requant_oracle(acc: i32, multiplier: i32, shift: u8, zero_point: u8) -> u8 {
    let prod = acc as i128 * multiplier as i128;
    let d = 1i128 << shift;
    let q = prod.div_euclid(d);
    let r = prod.rem_euclid(d);
    let rounded = match (2 * r).cmp(&d) {
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Equal => {
            if prod > 0 {
                q + 1
            } else {
                q
            }
        }
    };
    (rounded + zero_point as i128).clamp(0, 255) as u8
}

fn requants() -> impl Strategy<Value = Requant> {
    (any::<i32>(), 0u8..=62, any::<u8>(), any::<u8>()).prop_map(|(multiplier, shift, zero_point, activation_min)| Requant {
        multiplier,
        shift,
        zero_point,
        activation_min,
    })
}

fn convs(feat: usize, out: usize) -> impl Strategy<Value = PointNetConv> {
    (
        prop::collection::vec(any::<i8>(), (feat + 3) * out),
        prop::collection::vec(-5000i32..5000, out),
        any::<u8>(),
        1i32..1 << 20,
        any::<u8>(),
    )
        .prop_map(move |(w, b, zp_in, multiplier, act)| PointNetConv {
            linear: QuantizedLinear::new(feat + 3, out, w, b, zp_in).unwrap(),
            requant: Requant {
                multiplier,
                shift: 24,
                zero_point: act,
                activation_min: act,
            },
            pos_lut: PositionLut::IDENTITY,
        })
}

fn neighbours(feat: usize) -> impl Strategy<Value = Vec<(FeatureVector, Offset)>> {
    prop::collection::vec(
        (prop::collection::vec(any::<u8>(), feat), -3i64..=3, -3i64..=3, -3i64..=0),
        0..12,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(f, dx, dy, dt)| (FeatureVector(f), Offset::new(dx, dy, dt)))
            .collect()
    })
}

fn stream(raw: Vec<(u16, u16, u32, bool)>) -> Vec<NormalizedEvent> {
    let mut t = 0;
    raw.into_iter()
        .map(|(x, y, dt, p)| {
            t += dt;
            NormalizedEvent {
                x,
                y,
                t: (t % 128) as u16,
                window: t / 128,
                p,
            }
        })
        .collect()
}

fn event_streams() -> impl Strategy<Value = Vec<NormalizedEvent>> {
    prop::collection::vec((0u16..24, 0u16..24, 0u32..3, any::<bool>()), 0..400).prop_map(stream)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn requantize_matches_oracle(acc in any::<i32>(), rq in requants()) {
        prop_assert_eq!(requantize(acc, &rq), requant_oracle(acc, rq.multiplier, rq.shift, rq.zero_point));
    }

    #[test]
    fn conv_output_respects_floor(conv in convs(3, 5), me in prop::collection::vec(any::<u8>(), 3), nb in neighbours(3)) {
        let out = conv_vertex(&conv, &FeatureVector(me), &nb).unwrap();
        prop_assert!(out.0.iter().all(|&v| v >= conv.requant.activation_min));
    }

    #[test]
    fn aggregation_is_permutation_invariant_and_monotone(
        conv in convs(3, 5),
        me in prop::collection::vec(any::<u8>(), 3),
        nb in neighbours(3),
        extra in neighbours(3),
        seed in any::<u64>(),
    ) {
        let me = FeatureVector(me);
        let base = conv_vertex(&conv, &me, &nb).unwrap();
        let mut shuffled = nb.clone();
        let n = shuffled.len().max(1) as u64;
        shuffled.rotate_left((seed % n) as usize);
        shuffled.reverse();
        prop_assert_eq!(&conv_vertex(&conv, &me, &shuffled).unwrap(), &base);
        let mut more = nb.clone();
        more.extend(extra);
        let grown = conv_vertex(&conv, &me, &more).unwrap();
        prop_assert!(grown.0.iter().zip(&base.0).all(|(g, b)| g >= b));
    }

    #[test]
    fn exact_float_conv_matches_integer(conv in convs(2, 4), ev in event_streams()) {
        let g = build_graph(&ev, 128, 3).unwrap();
        let qg = FeatureGraph::from_event_graph(&g, |p| FeatureVector(vec![2 * p as u8, 7]));
        let fg = qg.map_features(|f| f.0.iter().map(|&v| v as f64).collect::<Vec<f64>>());
        let q = conv_graph(&conv, &qg).unwrap();
        let mut ops = OpCounter::default();
        let f = conv_graph_f64(&conv, &fg, FloatMode::Exact, &mut ops).unwrap();
        for (a, b) in q.nodes.iter().zip(&f.nodes) {
            let as_f: Vec<f64> = a.features.0.iter().map(|&v| v as f64).collect();
            prop_assert_eq!(as_f, b.features.clone());
        }
    }

    #[test]
    fn old_vertices_are_unaffected_by_later_events(conv in convs(1, 4), ev in event_streams(), cut in 0usize..400) {
        let cut = cut.min(ev.len());
        let feats = |g: &evgcn_core::EventGraph| {
            conv_graph(&conv, &FeatureGraph::from_event_graph(g, |p| FeatureVector(vec![2 * p as u8]))).unwrap()
        };
        let full = feats(&build_graph(&ev, 128, 3).unwrap());
        let prefix = feats(&build_graph(&ev[..cut], 128, 3).unwrap());
        for (a, b) in prefix.nodes.iter().zip(&full.nodes) {
            prop_assert_eq!(&a.features, &b.features);
        }
    }

    #[test]
    fn pooled_offsets_stay_in_candidate_box(ev in event_streams()) {
        let box17: BTreeSet<Offset> = post_pool_candidates().into_iter().collect();
        let g = FeatureGraph::from_event_graph(&build_graph(&ev, 128, 3).unwrap(), |_| ());
        let p1 = maxpool(&g, &PoolSpec::divide3d(4)).unwrap();
        let p2 = maxpool(&p1, &PoolSpec::divide3d(2)).unwrap();
        for p in [&p1, &p2] {
            let mut per_vertex = vec![0usize; p.nodes.len()];
            for &e in &p.edges {
                prop_assert!(box17.contains(&p.edge_offset(e)));
                per_vertex[e.0] += 1;
            }
            prop_assert!(per_vertex.iter().all(|&k| k < 18));
        }
        prop_assert!(p1.nodes.len() <= g.nodes.len());
        prop_assert!(p2.nodes.len() <= p1.nodes.len());
    }

    #[test]
    fn pooled_features_are_cluster_maxima(vals in prop::collection::vec((0i64..16, 0i64..16, 0i64..16, any::<u8>()), 1..60)) {
        let nodes = vals
            .iter()
            .map(|&(x, y, t, v)| evgcn_core::layers::GraphNode {
                pos: Position::new(x, y, t),
                centroid: [x as f64, y as f64, t as f64],
                features: FeatureVector(vec![v]),
            })
            .collect();
        let g = FeatureGraph { size: 16, nodes, edges: vec![] };
        let p = maxpool(&g, &PoolSpec::divide3d(4)).unwrap();
        for n in &p.nodes {
            let expected = vals
                .iter()
                .filter(|&&(x, y, t, _)| (x / 4, y / 4, t / 4) == (n.pos.x, n.pos.y, n.pos.t))
                .map(|v| v.3)
                .max()
                .unwrap();
            prop_assert_eq!(n.features.0[0], expected);
        }
    }
}
