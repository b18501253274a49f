//! Transaction-level simulation of the accelerator pipeline.
//!
//! The front end serves one event every [`GRAPH_GEN_CYCLES`] behind an input
//! FIFO; graph generation, the asynchronous conv and MaxPool1 are pipelined.
//! A level-1 temporal channel is ready once its ΔT has elapsed and its last
//! event left the front end. Each synchronous conv then takes `CC_t` cycles
//! per channel, starting when its input channel is ready and its previous
//! channel is done. A conv still reading slice n when its producer finishes
//! slice n+1 would have its buffer overwritten; that is reported as a
//! scheduling violation.

use std::collections::VecDeque;
use std::io::{self, Write};

use num_rational::Ratio;

use evgcn_core::graph_builder::GRAPH_GEN_CYCLES;
use evgcn_core::model::ModelConfig;
use evgcn_core::Event;

use crate::latency::StageLatencies;
use crate::plan::{select_multipliers, ClockConfig, LayerPlan};
use crate::HwError;

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub fifo_depth: usize,
    pub stages: StageLatencies,
    /// Fixed cost of the head on the processing system.
    pub ps_latency_us: f64,
    /// Record FIFO occupancy per distinct arrival time.
    pub trace: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            fifo_depth: 8192,
            stages: StageLatencies::default(),
            ps_latency_us: 0.0,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub layer: String,
    pub slice: u64,
    pub finished_cycle: u64,
    pub deadline_cycle: u64,
}

/// Cycle times of one synchronous conv, per slice it processes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSchedule {
    pub name: String,
    pub input_ready: Vec<u64>,
    pub start: Vec<u64>,
    pub end: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub plans: Vec<LayerPlan>,
    pub clock: ClockConfig,
    pub throughput_meps: Ratio<u64>,
    pub events_in: u64,
    pub events_processed: u64,
    pub fifo_depth: usize,
    pub fifo_peak: usize,
    pub fifo_overflows: u64,
    /// `(arrival cycle, occupancy)` when tracing is enabled.
    pub fifo_trace: Vec<(u64, usize)>,
    pub windows: u64,
    pub schedules: Vec<LayerSchedule>,
    pub violations: Vec<Violation>,
    /// Cycle at which each prediction's feature map is complete.
    pub prediction_ready: Vec<u64>,
    /// Last processed event to final feature map of its window.
    pub pl_latency_us: Option<f64>,
    /// Close of the window's last temporal channel to its final feature map.
    pub pl_drain_us: Option<f64>,
    pub ps_latency_us: f64,
    pub per_event_cycles: u64,
    pub per_event_us: f64,
}

impl SimReport {
    pub fn pl_ps_latency_us(&self) -> Option<f64> {
        self.pl_latency_us.map(|v| v + self.ps_latency_us)
    }

    pub fn throughput_meps_f64(&self) -> f64 {
        ratio_f64(self.throughput_meps)
    }

    pub fn write_table<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "{:<6} {:>5} {:>10} {:>10} {:>5} {:>4} {:>10} {:>10} {:>13}",
            "layer", "size", "dT[us]", "dT[cc]", "dim", "m", "CC_vertex", "CC_t", "duration[us]"
        )?;
        for p in &self.plans {
            writeln!(
                out,
                "{:<6} {:>5} {:>10} {:>10} {:>5} {:>4} {:>10} {:>10} {:>13}",
                p.name,
                p.size,
                fmt_ratio(p.delta_t_us),
                fmt_ratio(p.delta_t_cycles),
                p.dim,
                p.m,
                p.cc_vertex,
                p.cc_t,
                fmt_ratio(p.duration_us)
            )?;
        }
        writeln!(out)?;
        writeln!(out, "clock                 {} MHz", fmt_ratio(Ratio::new(self.clock.frequency_hz, 1_000_000)))?;
        writeln!(out, "throughput            {:.2} MEPS", self.throughput_meps_f64())?;
        writeln!(
            out,
            "events                {} in, {} processed, {} dropped",
            self.events_in, self.events_processed, self.fifo_overflows
        )?;
        writeln!(out, "fifo peak             {} / {}", self.fifo_peak, self.fifo_depth)?;
        writeln!(out, "windows               {}", self.windows)?;
        writeln!(out, "predictions           {}", self.prediction_ready.len())?;
        writeln!(out, "violations            {}", self.violations.len())?;
        writeln!(out, "PL latency            {}", fmt_ms(self.pl_latency_us))?;
        writeln!(out, "PL drain              {}", fmt_ms(self.pl_drain_us))?;
        writeln!(out, "PL+PS latency         {}", fmt_ms(self.pl_ps_latency_us()))?;
        writeln!(
            out,
            "per-event latency     {:.2} us ({} cycles)",
            self.per_event_us, self.per_event_cycles
        )
    }

    pub fn write_kv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "clock_hz={}", self.clock.frequency_hz)?;
        writeln!(out, "throughput_meps={}", fmt_ratio(self.throughput_meps))?;
        for p in &self.plans {
            writeln!(out, "{}.size={}", p.name, p.size)?;
            writeln!(out, "{}.delta_t_us={}", p.name, fmt_ratio(p.delta_t_us))?;
            writeln!(out, "{}.dim={}", p.name, p.dim)?;
            writeln!(out, "{}.m={}", p.name, p.m)?;
            writeln!(out, "{}.cc_vertex={}", p.name, p.cc_vertex)?;
            writeln!(out, "{}.cc_t={}", p.name, p.cc_t)?;
            writeln!(out, "{}.duration_us={}", p.name, fmt_ratio(p.duration_us))?;
        }
        writeln!(out, "events_in={}", self.events_in)?;
        writeln!(out, "events_processed={}", self.events_processed)?;
        writeln!(out, "fifo_depth={}", self.fifo_depth)?;
        writeln!(out, "fifo_peak={}", self.fifo_peak)?;
        writeln!(out, "fifo_overflows={}", self.fifo_overflows)?;
        writeln!(out, "windows={}", self.windows)?;
        writeln!(out, "predictions={}", self.prediction_ready.len())?;
        writeln!(out, "violations={}", self.violations.len())?;
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |v| format!("{v:.3}"));
        writeln!(out, "pl_latency_us={}", opt(self.pl_latency_us))?;
        writeln!(out, "pl_drain_us={}", opt(self.pl_drain_us))?;
        writeln!(out, "ps_latency_us={:.3}", self.ps_latency_us)?;
        writeln!(out, "pl_ps_latency_us={}", opt(self.pl_ps_latency_us()))?;
        writeln!(out, "per_event_cycles={}", self.per_event_cycles)?;
        writeln!(out, "per_event_us={:.3}", self.per_event_us)
    }
}

fn ratio_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Exact integers as-is, otherwise up to six decimals.
pub fn fmt_ratio(r: Ratio<u64>) -> String {
    if r.is_integer() {
        return r.to_integer().to_string();
    }
    let s = format!("{:.6}", ratio_f64(r));
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn fmt_ms(us: Option<f64>) -> String {
    us.map_or_else(|| "n/a".to_string(), |v| format!("{:.3} ms", v / 1000.0))
}

/// Sustained front-end service rate in million events per second.
pub fn throughput_meps(clock: &ClockConfig) -> Ratio<u64> {
    Ratio::new(clock.frequency_hz, GRAPH_GEN_CYCLES * 1_000_000)
}

fn ceil_cycles(num: u128, den: u128) -> u64 {
    num.div_ceil(den) as u64
}

/// Runs a chain stage over its input-ready times; returns end times and
/// records buffer-overrun violations.
fn run_stage(
    name: &str,
    input_ready: &[u64],
    cc_t: u64,
    violations: &mut Vec<Violation>,
) -> LayerSchedule {
    let mut start = Vec::with_capacity(input_ready.len());
    let mut end = Vec::with_capacity(input_ready.len());
    let mut prev_end = 0;
    for &ready in input_ready {
        let s = ready.max(prev_end);
        start.push(s);
        prev_end = s + cc_t;
        end.push(prev_end);
    }
    for n in 0..input_ready.len().saturating_sub(1) {
        if end[n] > input_ready[n + 1] {
            violations.push(Violation {
                layer: name.to_string(),
                slice: n as u64,
                finished_cycle: end[n],
                deadline_cycle: input_ready[n + 1],
            });
        }
    }
    LayerSchedule {
        name: name.to_string(),
        input_ready: input_ready.to_vec(),
        start,
        end,
    }
}

pub fn simulate(
    events: &[Event],
    cfg: &ModelConfig,
    clock: &ClockConfig,
    opts: &SimOptions,
) -> Result<SimReport, HwError> {
    if cfg.radius != 3 {
        return Err(HwError::UnsupportedRadius(cfg.radius));
    }
    for (i, w) in events.windows(2).enumerate() {
        if w[1].t < w[0].t {
            return Err(HwError::TimestampRegression {
                index: i + 1,
                t: w[1].t,
                previous: w[0].t,
            });
        }
    }
    let plans = select_multipliers(cfg, clock)?;
    let st = &opts.stages;
    let f = clock.frequency_hz as u128;
    let tw = cfg.time_window_us as u128;
    let beta = cfg.beta as u128;
    let size1 = cfg.size1() as u64;
    let size2 = cfg.size2() as u64;

    let windows = events.last().map_or(1, |e| e.t as u64 / cfg.time_window_us as u64 + 1);
    let slices1 = windows * size1;
    let slices2 = windows * size2;

    // front end
    let mut slice_last = vec![0u64; slices1 as usize];
    let mut waiting: VecDeque<u64> = VecDeque::new();
    let mut last_finish = 0u64;
    let (mut peak, mut overflows, mut processed) = (0usize, 0u64, 0u64);
    let mut trace: Vec<(u64, usize)> = Vec::new();
    let mut last_arrival = None;
    let pipeline_tail = st.async_conv + st.requant + st.maxpool;
    for ev in events {
        let a = (ev.t as u128 * f / 1_000_000) as u64;
        while waiting.front().is_some_and(|&s| s <= a) {
            waiting.pop_front();
        }
        if waiting.len() >= opts.fifo_depth {
            overflows += 1;
        } else {
            let start = a.max(last_finish);
            last_finish = start + GRAPH_GEN_CYCLES;
            if start > a {
                waiting.push_back(start);
            }
            let slice = (beta * ev.t as u128 / tw / 4) as usize;
            slice_last[slice] = slice_last[slice].max(last_finish + pipeline_tail);
            processed += 1;
            last_arrival = Some((a, ev.t));
        }
        peak = peak.max(waiting.len());
        if opts.trace {
            match trace.last_mut() {
                Some((t, occ)) if *t == a => *occ = waiting.len(),
                _ => trace.push((a, waiting.len())),
            }
        }
    }

    // level-1 slice s closes at (s + 1) · ΔT
    let close = |s: u64| ceil_cycles((s as u128 + 1) * tw * f, size1 as u128 * 1_000_000);
    let ready1: Vec<u64> = (0..slices1).map(|s| close(s).max(slice_last[s as usize])).collect();

    let mut violations = Vec::new();
    let c2 = run_stage(&plans[0].name, &ready1, plans[0].cc_t, &mut violations);
    let c3 = run_stage(&plans[1].name, &c2.end, plans[1].cc_t, &mut violations);
    let ready2: Vec<u64> = (0..slices2)
        .map(|s| c3.end[2 * s as usize + 1] + st.maxpool)
        .collect();
    let c4 = run_stage(&plans[2].name, &ready2, plans[2].cc_t, &mut violations);
    let c5 = run_stage(&plans[3].name, &c4.end, plans[3].cc_t, &mut violations);

    let kernel = cfg.pool_out_kernel() as u64;
    let prediction_ready: Vec<u64> = (0..4 * windows)
        .map(|k| c5.end[((k + 1) * kernel - 1) as usize] + st.pool_out)
        .collect();

    let to_us = |cycles: u64| ratio_f64(clock.cycles_to_us(cycles));
    let (pl_latency_us, pl_drain_us) = match last_arrival {
        Some((a, t)) => {
            let w = t as u64 / cfg.time_window_us as u64;
            let done = prediction_ready[(4 * w + 3) as usize];
            let closed = close((w + 1) * size1 - 1);
            (Some(to_us(done - a)), Some(to_us(done - closed)))
        }
        None => (None, None),
    };

    Ok(SimReport {
        throughput_meps: throughput_meps(clock),
        per_event_cycles: st.per_event_cycles(&plans),
        per_event_us: st.per_event_us(&plans, clock),
        plans,
        clock: *clock,
        events_in: events.len() as u64,
        events_processed: processed,
        fifo_depth: opts.fifo_depth,
        fifo_peak: peak,
        fifo_overflows: overflows,
        fifo_trace: trace,
        windows,
        schedules: vec![c2, c3, c4, c5],
        violations,
        prediction_ready,
        pl_latency_us,
        pl_drain_us,
        ps_latency_us: opts.ps_latency_us,
    })
}
