//! `evgcn`: convert event files, run inference, simulate the accelerator
//! timing model, count FLOPs and generate test weights.
//!
//! Exit codes: 0 success, 1 other failure (I/O on outputs, failed
//! self-checks), 2 input error, 3 model or weight error, 4 infeasible plan.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use evgcn_core::analysis::{flops_per_event, flops_report, pipeline_stats, reduction_stats};
use evgcn_core::events_io::{
    normalize_stream, read_events, read_evt, rebase_to_first, synth_events_at_rate, write_events, Arrivals,
    EvtHeader, SynthPattern,
};
use evgcn_core::graph_builder::DEFAULT_RADIUS;
use evgcn_core::layers::FloatMode;
use evgcn_core::model::{
    run_inference, run_inference_threaded, run_offline, run_offline_f64, write_predictions, ModelError,
};
use evgcn_core::{Event, EventFormat, ModelConfig, ModelWeights, NormalizedEvent, SensorConfig, Variant};
use evgcn_hwsim::{simulate, ClockConfig, HwError, SimOptions};

const FAILURE: u8 = 1;
const INPUT: u8 = 2;
const MODEL: u8 = 3;
const INFEASIBLE: u8 = 4;

struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Code<T> {
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Code<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

fn fail<T>(code: u8, error: anyhow::Error) -> Result<T, Failure> {
    Err(Failure { code, error })
}

#[derive(Parser)]
#[command(name = "evgcn", version, about = "Event-graph GCN inference, timing model and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert between .evt and CSV event files.
    Convert(ConvertArgs),
    /// Run streaming inference and write one prediction line per quarter window.
    Infer(InferArgs),
    /// Run the clock-cycle model and report planning, throughput and latency.
    Simulate(SimulateArgs),
    /// Per-layer FLOPs as CSV.
    Flops(FlopsArgs),
    /// Write a random quantized weight set.
    GenWeights(GenWeightsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Evt,
    Csv,
}

impl From<FormatArg> for EventFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Evt => EventFormat::Evt,
            FormatArg::Csv => EventFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Table,
    Kv,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArrivalsArg {
    Poisson,
    Uniform,
}

#[derive(Args)]
struct ModelArgs {
    /// Model config file (TOML with variant, beta, time_window_us, radius).
    #[arg(long, env = "EVGRAPH_CONFIG")]
    config: Option<PathBuf>,
    /// Variant S, B or L. Overrides the config file.
    #[arg(long)]
    variant: Option<Variant>,
    /// Normalization range, 128 or 256. Without a config file the window
    /// defaults to 100 ms for 128 and 50 ms for 256.
    #[arg(long)]
    beta: Option<u32>,
    #[arg(long)]
    time_window_us: Option<u32>,
    #[arg(long)]
    radius: Option<u32>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ModelConfig, Failure> {
        let mut cfg = match (&self.config, self.variant) {
            (Some(path), _) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))
                    .code(INPUT)?;
                ModelConfig::from_toml_str(&text)
                    .with_context(|| format!("config {}", path.display()))
                    .code(MODEL)?
            }
            (None, Some(variant)) => {
                let beta = self.beta.unwrap_or(128);
                ModelConfig {
                    variant,
                    beta,
                    time_window_us: if beta == 256 { 50_000 } else { 100_000 },
                    radius: DEFAULT_RADIUS,
                }
            }
            (None, None) => {
                return fail(
                    INPUT,
                    anyhow!("no model given: pass --config, set EVGRAPH_CONFIG or pass --variant"),
                )
            }
        };
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
        if let Some(tw) = self.time_window_us {
            cfg.time_window_us = tw;
        }
        if let Some(r) = self.radius {
            cfg.radius = r;
        }
        cfg.validate().code(MODEL)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EventInput {
    /// Event file, .evt or .csv.
    #[arg(long, short = 'e')]
    events: PathBuf,
    /// Input format when the extension does not say.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Sensor width; required for CSV, read from the header for .evt.
    #[arg(long)]
    width: Option<u16>,
    #[arg(long)]
    height: Option<u16>,
}

impl EventInput {
    /// Reads the stream, rebases it to its first event and normalizes it
    /// for `cfg`.
    fn load(&self, cfg: &ModelConfig) -> Result<Vec<NormalizedEvent>, Failure> {
        let (mut events, header) = read_any(&self.events, self.format)?;
        let width = self.width.or(header.map(|h| h.width));
        let height = self.height.or(header.map(|h| h.height));
        let (Some(width), Some(height)) = (width, height) else {
            return fail(INPUT, anyhow!("CSV input needs --width and --height"));
        };
        let sensor = SensorConfig::new(width, height, cfg.time_window_us, cfg.beta).code(INPUT)?;
        rebase_to_first(&mut events);
        let ns = normalize_stream(&events, &sensor);
        if ns.rejected > 0 {
            eprintln!("dropped {} out-of-bounds events", ns.rejected);
        }
        Ok(ns.events)
    }
}

fn format_of(path: &Path, flag: Option<FormatArg>) -> Result<EventFormat, Failure> {
    match flag.map(EventFormat::from).or_else(|| EventFormat::from_path(path)) {
        Some(f) => Ok(f),
        None => fail(
            INPUT,
            anyhow!("cannot tell the format of {}; use a .evt/.csv extension or a format flag", path.display()),
        ),
    }
}

fn read_any(path: &Path, flag: Option<FormatArg>) -> Result<(Vec<Event>, Option<EvtHeader>), Failure> {
    let format = format_of(path, flag)?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display())).code(INPUT)?;
    let what = || format!("reading {}", path.display());
    match format {
        EventFormat::Evt => {
            let (h, ev) = read_evt(io::BufReader::new(file)).with_context(what).code(INPUT)?;
            Ok((ev, Some(h)))
        }
        EventFormat::Csv => Ok((read_events(file, format).with_context(what).code(INPUT)?, None)),
    }
}

/// `-` or no path means stdout.
fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match path {
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        Some(p) if p == Path::new("-") => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display())).code(FAILURE)?;
            Ok(Box::new(BufWriter::new(f)))
        }
    }
}

#[derive(Args)]
struct ConvertArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long, value_enum)]
    from: Option<FormatArg>,
    #[arg(long, value_enum)]
    to: Option<FormatArg>,
    /// Header fields for .evt output. Default to the input header, or for
    /// CSV input to the largest coordinate + 1 and a 100 ms window.
    #[arg(long)]
    width: Option<u16>,
    #[arg(long)]
    height: Option<u16>,
    #[arg(long)]
    time_window_us: Option<u32>,
}

fn cmd_convert(a: &ConvertArgs) -> Result<(), Failure> {
    let (events, header) = read_any(&a.input, a.from)?;
    let to = format_of(&a.output, a.to)?;
    let extent = |f: fn(&Event) -> u16| events.iter().map(|e| f(e).saturating_add(1)).max().unwrap_or(1);
    let header = EvtHeader {
        width: a.width.or(header.map(|h| h.width)).unwrap_or_else(|| extent(|e| e.x)),
        height: a.height.or(header.map(|h| h.height)).unwrap_or_else(|| extent(|e| e.y)),
        time_window_us: a.time_window_us.or(header.map(|h| h.time_window_us)).unwrap_or(100_000),
        count: 0,
    };
    let file = File::create(&a.output)
        .with_context(|| format!("creating {}", a.output.display()))
        .code(FAILURE)?;
    let bytes = write_events(&events, BufWriter::new(file), to, header).code(FAILURE)?;
    eprintln!("wrote {} events ({bytes} bytes) to {}", events.len(), a.output.display());
    Ok(())
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    input: EventInput,
    #[command(flatten)]
    model: ModelArgs,
    /// Weight manifest written by gen-weights.
    #[arg(long, short = 'w')]
    weights: PathBuf,
    /// Prediction file; stdout when omitted.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
    /// Also run the whole-graph offline model and require identical output.
    #[arg(long)]
    oracle_check: bool,
    /// Run each synchronous stage on its own thread.
    #[arg(long)]
    threaded: bool,
}

fn cmd_infer(a: &InferArgs) -> Result<(), Failure> {
    let cfg = a.model.resolve()?;
    let weights = ModelWeights::load(&a.weights)
        .with_context(|| format!("loading weights {}", a.weights.display()))
        .code(MODEL)?;
    weights.check_config(&cfg).code(MODEL)?;
    let events = a.input.load(&cfg)?;
    let run = if a.threaded { run_inference_threaded } else { run_inference };
    let predictions = run(&events, &cfg, &weights).map_err(model_failure)?;
    if a.oracle_check {
        let offline = run_offline(&events, &cfg, &weights).map_err(model_failure)?;
        if offline.predictions != predictions {
            let at = offline.predictions.iter().zip(&predictions).position(|(a, b)| a != b);
            return fail(
                FAILURE,
                anyhow!(
                    "oracle check failed: {} streaming vs {} offline predictions, first difference at {:?}",
                    predictions.len(),
                    offline.predictions.len(),
                    at
                ),
            );
        }
        eprintln!("oracle check passed ({} predictions)", predictions.len());
    }
    let mut out = open_output(a.output.as_deref())?;
    write_predictions(&predictions, &mut out).code(FAILURE)?;
    out.flush().code(FAILURE)?;
    let warmup = predictions.iter().filter(|p| p.warmup).count();
    eprintln!(
        "{} predictions every {} us ({warmup} warm-up)",
        predictions.len(),
        cfg.prediction_period_us()
    );
    Ok(())
}

fn model_failure(e: ModelError) -> Failure {
    let code = match e {
        ModelError::Io(_) => FAILURE,
        _ => MODEL,
    };
    Failure { code, error: e.into() }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Event file, .evt or .csv. Without it and without --rate the model
    /// is run on an empty stream (planning and latency only).
    #[arg(long, short = 'e', conflicts_with = "rate")]
    events: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Generate a synthetic stream at this rate in MEPS.
    #[arg(long)]
    rate: Option<f64>,
    /// Length of the synthetic stream; one time window by default.
    #[arg(long)]
    duration_us: Option<u32>,
    #[arg(long, default_value = "random-uniform")]
    pattern: SynthPattern,
    #[arg(long, value_enum, default_value = "poisson")]
    arrivals: ArrivalsArg,
    /// Sensor size of the synthetic stream; β×β by default.
    #[arg(long)]
    width: Option<u16>,
    #[arg(long)]
    height: Option<u16>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200_000_000)]
    clock_hz: u64,
    #[arg(long, default_value_t = 8192)]
    fifo_depth: usize,
    /// Fixed processing-system latency added to the PL latency.
    #[arg(long, default_value_t = 0.0)]
    ps_latency_us: f64,
    #[arg(long, value_enum, default_value = "table")]
    report: ReportFormat,
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let cfg = a.model.resolve()?;
    let clock = ClockConfig::new(a.clock_hz).code(INPUT)?;
    if !(a.ps_latency_us.is_finite() && a.ps_latency_us >= 0.0) {
        return fail(INPUT, anyhow!("--ps-latency-us must be a non-negative number"));
    }
    let events = match (&a.events, a.rate) {
        (Some(path), _) => {
            let (mut ev, _) = read_any(path, a.format)?;
            rebase_to_first(&mut ev);
            ev
        }
        (None, Some(rate)) => {
            if !(rate.is_finite() && rate > 0.0) {
                return fail(INPUT, anyhow!("--rate must be a positive number of MEPS"));
            }
            let side = cfg.beta as u16;
            let sensor = SensorConfig::new(
                a.width.unwrap_or(side),
                a.height.unwrap_or(side),
                cfg.time_window_us,
                cfg.beta,
            )
            .code(INPUT)?;
            let arrivals = match a.arrivals {
                ArrivalsArg::Poisson => Arrivals::Poisson,
                ArrivalsArg::Uniform => Arrivals::Uniform,
            };
            let duration = a.duration_us.unwrap_or(cfg.time_window_us);
            synth_events_at_rate(a.pattern, &sensor, rate, duration, arrivals, a.seed)
        }
        (None, None) => Vec::new(),
    };
    let opts = SimOptions {
        fifo_depth: a.fifo_depth,
        ps_latency_us: a.ps_latency_us,
        ..SimOptions::default()
    };
    let report = simulate(&events, &cfg, &clock, &opts).map_err(|e| {
        let code = match e {
            HwError::Infeasible { .. } => INFEASIBLE,
            HwError::UnsupportedRadius(_) => MODEL,
            _ => INPUT,
        };
        Failure { code, error: e.into() }
    })?;
    let mut out = open_output(a.output.as_deref())?;
    match a.report {
        ReportFormat::Table => report.write_table(&mut out),
        ReportFormat::Kv => report.write_kv(&mut out),
    }
    .code(FAILURE)?;
    out.flush().code(FAILURE)?;
    if report.fifo_overflows > 0 {
        eprintln!("warning: {} events dropped at FIFO depth {}", report.fifo_overflows, a.fifo_depth);
    }
    for v in report.violations.iter().take(5) {
        eprintln!(
            "warning: {} slice {} finished at cycle {} after its deadline {}",
            v.layer, v.slice, v.finished_cycle, v.deadline_cycle
        );
    }
    Ok(())
}

#[derive(Args)]
struct FlopsArgs {
    #[command(flatten)]
    input: EventInput,
    #[command(flatten)]
    model: ModelArgs,
    /// Cross-check every layer against the instrumented float reference.
    #[arg(long)]
    verify: bool,
    /// Weights for --verify; a generated set is used when omitted (the
    /// counts do not depend on weight values).
    #[arg(long, short = 'w')]
    weights: Option<PathBuf>,
    /// Also write per-pool graph reduction statistics as CSV.
    #[arg(long)]
    reduction: Option<PathBuf>,
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

fn cmd_flops(a: &FlopsArgs) -> Result<(), Failure> {
    let cfg = a.model.resolve()?;
    let events = a.input.load(&cfg)?;
    let report = flops_report(&events, &cfg).map_err(model_failure)?;
    if a.verify {
        let weights = match &a.weights {
            Some(p) => ModelWeights::load(p)
                .with_context(|| format!("loading weights {}", p.display()))
                .code(MODEL)?,
            None => ModelWeights::generate(cfg.variant, 2, 0),
        };
        let (_, ops) = run_offline_f64(&events, &cfg, &weights, FloatMode::Exact).map_err(model_failure)?;
        report.verify(&ops).code(FAILURE)?;
        eprintln!("FLOPs formula matches the instrumented counter on all {} layers", ops.len());
    }
    let mut out = open_output(a.output.as_deref())?;
    report.write_csv(&mut out).code(FAILURE)?;
    out.flush().code(FAILURE)?;
    if let Ok(per_event) = flops_per_event(&report, report.events) {
        eprintln!("{per_event:.6} MFLOPs/event over {} events", report.events);
    }
    if let Some(path) = &a.reduction {
        let stats = pipeline_stats(&events, &cfg).map_err(model_failure)?;
        let mut out = open_output(Some(path))?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.4}"));
        (|| -> io::Result<()> {
            writeln!(out, "layer,N,E,vertex_ratio,edge_ratio")?;
            for (s, r) in stats.iter().zip(reduction_stats(&stats)) {
                writeln!(out, "{},{},{},{},{}", s.layer, s.n, s.e, opt(r.vertex_ratio), opt(r.edge_ratio))?;
            }
            out.flush()
        })()
        .code(FAILURE)?;
    }
    Ok(())
}

#[derive(Args)]
struct GenWeightsArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Manifest path; the blob is written next to it with a .bin extension.
    #[arg(long, short = 'o')]
    out: PathBuf,
}

fn cmd_gen_weights(a: &GenWeightsArgs) -> Result<(), Failure> {
    let cfg = a.model.resolve()?;
    if a.classes == 0 {
        return fail(INPUT, anyhow!("--classes must be at least 1"));
    }
    let weights = ModelWeights::generate(cfg.variant, a.classes, a.seed);
    weights.save(&a.out).map_err(model_failure)?;
    println!(
        "variant={} classes={} seed={} params={} manifest={}",
        cfg.variant,
        a.classes,
        a.seed,
        weights.param_count(),
        a.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Convert(a) => cmd_convert(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Flops(a) => cmd_flops(a),
        Command::GenWeights(a) => cmd_gen_weights(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
