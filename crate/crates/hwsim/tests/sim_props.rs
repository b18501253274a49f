use evgcn_core::events_io::{synth_events_at_rate, Arrivals, SensorConfig, SynthPattern};
use evgcn_core::model::ModelConfig;
use evgcn_core::{Event, Variant};
use evgcn_hwsim::{cc_channel, plan::plan_layer, select_multipliers, simulate, ClockConfig, HwError, SimOptions};
use num_rational::Ratio;
use proptest::prelude::*;

fn events(cfg: &ModelConfig, pattern: SynthPattern, rate: f64, duration_us: u32, arrivals: Arrivals) -> Vec<Event> {
    let s = SensorConfig::new(120, 100, cfg.time_window_us, cfg.beta).unwrap();
    synth_events_at_rate(pattern, &s, rate, duration_us, arrivals, 11)
}

fn traced() -> SimOptions {
    SimOptions {
        trace: true,
        fifo_depth: usize::MAX,
        ..SimOptions::default()
    }
}

#[test]
fn fifo_grows_without_bound_above_service_rate() {
    let cfg = ModelConfig::reference_128(Variant::Small);
    let ev = events(&cfg, SynthPattern::RandomUniform, 20.0, 2_000, Arrivals::Uniform);
    let r = simulate(&ev, &cfg, &ClockConfig::default(), &traced()).unwrap();
    let occ: Vec<usize> = r.fifo_trace.iter().map(|&(_, o)| o).collect();
    assert!(occ.windows(2).all(|w| w[1] >= w[0]), "occupancy must not shrink");
    // 20 - 13.33 MEPS backlog over 2 ms
    assert!(*occ.last().unwrap() > 13_000);
}

#[test]
fn fifo_stays_bounded_at_or_below_service_rate() {
    let cfg = ModelConfig::reference_128(Variant::Small);
    for rate in [1.0, 10.0, 13.0] {
        let ev = events(&cfg, SynthPattern::RandomUniform, rate, 5_000, Arrivals::Uniform);
        let r = simulate(&ev, &cfg, &ClockConfig::default(), &traced()).unwrap();
        // arrivals are quantised to whole microseconds: at most one
        // microsecond's worth of events ever waits
        assert!(r.fifo_peak <= rate.ceil() as usize, "rate {rate}: peak {}", r.fifo_peak);
        assert_eq!(r.fifo_overflows, 0);
    }
}

#[test]
fn default_depth_overflows_under_sustained_overload() {
    let cfg = ModelConfig::reference_128(Variant::Small);
    let ev = events(&cfg, SynthPattern::Burst, 30.0, 1_000, Arrivals::Poisson);
    let r = simulate(&ev, &cfg, &ClockConfig::default(), &SimOptions::default()).unwrap();
    assert_eq!(r.fifo_peak, 8192);
    assert!(r.fifo_overflows > 0);
    assert_eq!(r.events_processed + r.fifo_overflows, r.events_in);
}

#[test]
fn throughput_does_not_depend_on_the_stream() {
    let cfg = ModelConfig::reference_256(Variant::Large);
    let clk = ClockConfig::default();
    let mut seen = Vec::new();
    for pattern in [SynthPattern::MovingEdge, SynthPattern::RandomUniform, SynthPattern::Burst] {
        let ev = events(&cfg, pattern, 2.0, 20_000, Arrivals::Poisson);
        seen.push(simulate(&ev, &cfg, &clk, &SimOptions::default()).unwrap().throughput_meps);
    }
    assert!(seen.iter().all(|&t| t == Ratio::new(40, 3)));
}

#[test]
fn reference_configs_schedule_without_violations() {
    let clk = ClockConfig::default();
    for v in Variant::ALL {
        for cfg in [ModelConfig::reference_128(v), ModelConfig::reference_256(v)] {
            let ev = events(&cfg, SynthPattern::RandomUniform, 0.5, 3 * cfg.time_window_us / 2, Arrivals::Poisson);
            let r = simulate(&ev, &cfg, &clk, &SimOptions::default()).unwrap();
            assert!(r.violations.is_empty(), "{cfg:?}: {:?}", &r.violations[..1]);
            assert_eq!(r.prediction_ready.len() as u64, 4 * r.windows);
            // each conv starts a slice only after its producer finished it
            for s in &r.schedules {
                assert!(s.start.iter().zip(&s.input_ready).all(|(st, rd)| st >= rd));
            }
            for pair in [(0, 1), (2, 3)] {
                let (a, b) = (&r.schedules[pair.0], &r.schedules[pair.1]);
                assert!(b.start.iter().zip(&a.end).all(|(st, end)| st >= end));
            }
        }
    }
}

#[test]
fn per_event_latency_tracks_reported_values() {
    let clk = ClockConfig::default();
    let cases = [
        (ModelConfig::reference_128(Variant::Small), 6.56),
        (ModelConfig::reference_128(Variant::Base), 9.44),
        (ModelConfig::reference_128(Variant::Large), 13.76),
        (ModelConfig::reference_256(Variant::Small), 4.02),
        (ModelConfig::reference_256(Variant::Base), 4.04),
        (ModelConfig::reference_256(Variant::Large), 4.04),
    ];
    for (cfg, expected) in cases {
        let r = simulate(&[], &cfg, &clk, &SimOptions::default()).unwrap();
        assert!(((r.per_event_us - expected) / expected).abs() < 0.01, "{cfg:?}: {}", r.per_event_us);
    }
}

#[test]
fn pl_latency_of_a_window_ending_event() {
    let clk = ClockConfig::default();
    let cfg = ModelConfig::reference_256(Variant::Base);
    let r = simulate(&[Event::new(3, 3, 49_999, true)], &cfg, &clk, &SimOptions::default()).unwrap();
    let pl = r.pl_latency_us.unwrap();
    // channel costs alone come to 4423.68 us
    assert!(pl > 4423.68 && pl < 4430.0, "{pl}");
}

#[test]
fn infeasible_plans_are_reported() {
    let cfg = ModelConfig::new(Variant::Base, 256, 2_000).unwrap();
    let err = simulate(&[], &cfg, &ClockConfig::default(), &SimOptions::default()).unwrap_err();
    assert!(matches!(err, HwError::Infeasible { .. }));
}

proptest! {
    #[test]
    fn planned_m_is_minimal_and_feasible(
        variant in prop::sample::select(Variant::ALL.to_vec()),
        big in any::<bool>(),
        tw in 1_000u32..400_000,
    ) {
        let cfg = ModelConfig::new(variant, if big { 256 } else { 128 }, tw).unwrap();
        let clk = ClockConfig::default();
        match select_multipliers(&cfg, &clk) {
            Ok(plans) => {
                for p in plans {
                    prop_assert!(Ratio::from_integer(p.cc_t) <= p.delta_t_cycles);
                    prop_assert!(p.m.is_power_of_two() && p.dim % p.m == 0);
                    if p.m > 1 {
                        let slower = cc_channel(p.dim, p.m / 2, p.size).unwrap();
                        prop_assert!(Ratio::from_integer(slower) > p.delta_t_cycles);
                    }
                }
            }
            Err(HwError::Infeasible { dim, size, .. }) => {
                let best = cc_channel(dim, dim, size).unwrap();
                let dt = clk.us_to_cycles(Ratio::new(tw as u64, size));
                prop_assert!(Ratio::from_integer(best) > dt);
            }
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn channel_cost_scaling(dim_exp in 0u32..8, m_exp in 0u32..8, size in 0u64..200) {
        let dim = 1u64 << dim_exp;
        let m = 1u64 << m_exp.min(dim_exp);
        let base = cc_channel(dim, m, size).unwrap();
        prop_assert_eq!(cc_channel(2 * dim, m, size).unwrap(), 2 * base);
        prop_assert_eq!(cc_channel(dim, m, 2 * size).unwrap(), 4 * base);
    }

    #[test]
    fn plan_layer_agrees_with_select(size_exp in 3u32..7, dim_exp in 4u32..8, tw in 5_000u64..200_000) {
        let (size, dim) = (1u64 << size_exp, 1u64 << dim_exp);
        if let Ok(p) = plan_layer("x", dim, size, tw, &ClockConfig::default()) {
            prop_assert_eq!(p.cc_t, 9 * dim / p.m * size * size);
        }
    }
}
