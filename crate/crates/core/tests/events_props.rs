use evgcn_core::events_io::{
    normalize, read_events, synth_events, write_events, EventFormat, EvtHeader, SensorConfig, SynthPattern,
};
use evgcn_core::Event;
use proptest::prelude::*;

fn sensors() -> impl Strategy<Value = SensorConfig> {
    (1u16..2000, 1u16..2000, 1u32..1_000_000, prop::bool::ANY)
        .prop_map(|(w, h, tw, big)| SensorConfig::new(w, h, tw, if big { 256 } else { 128 }).unwrap())
}

fn events() -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec((any::<u16>(), any::<u16>(), 0u32..1000, any::<bool>()), 0..200).prop_map(|raw| {
        let mut t = 0u32;
        raw.into_iter()
            .map(|(x, y, dt, p)| {
                t += dt;
                Event::new(x, y, t, p)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn normalization_is_monotone_and_in_range(cfg in sensors(), a in any::<(u16, u16, u32)>(), b in any::<(u16, u16, u32)>()) {
        let clip = |v: (u16, u16, u32)| Event::new(v.0 % cfg.width, v.1 % cfg.height, v.2, false);
        let (ea, eb) = (clip(a), clip(b));
        let (na, nb) = (normalize(&ea, &cfg).unwrap(), normalize(&eb, &cfg).unwrap());
        for n in [&na, &nb] {
            prop_assert!((n.x as u32) < cfg.beta && (n.y as u32) < cfg.beta && (n.t as u32) < cfg.beta);
        }
        if ea.x <= eb.x { prop_assert!(na.x <= nb.x); }
        if ea.y <= eb.y { prop_assert!(na.y <= nb.y); }
        if ea.t <= eb.t { prop_assert!(na.extended_t(cfg.beta) <= nb.extended_t(cfg.beta)); }
    }

    #[test]
    fn binary_and_csv_round_trip(ev in events()) {
        let header = EvtHeader { width: u16::MAX, height: u16::MAX, time_window_us: 50_000, count: ev.len() as u32 };
        for format in [EventFormat::Evt, EventFormat::Csv] {
            let mut buf = Vec::new();
            write_events(&ev, &mut buf, format, header).unwrap();
            prop_assert_eq!(read_events(buf.as_slice(), format).unwrap(), ev.clone());
        }
    }

    #[test]
    fn synthesis_is_pure(seed in any::<u64>(), count in 0usize..300) {
        let cfg = SensorConfig::new(120, 100, 100_000, 128).unwrap();
        for pattern in [SynthPattern::MovingEdge, SynthPattern::RandomUniform, SynthPattern::Burst] {
            let a = synth_events(pattern, &cfg, count, seed);
            prop_assert_eq!(a.len(), count);
            prop_assert!(a.windows(2).all(|w| w[0].t <= w[1].t));
            prop_assert!(a.iter().all(|e| cfg.contains(e)));
            prop_assert_eq!(a, synth_events(pattern, &cfg, count, seed));
        }
    }
}
