//! Event stream ingestion: DVS tuples, the `.evt` and CSV file formats,
//! coordinate normalization onto the β grid and synthetic stimulus streams.
//!
//! `.evt` layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "EVT1"
//!      4     2  sensor width W
//!      6     2  sensor height H
//!      8     4  time window T in microseconds
//!     12     4  record count
//!     16   9*n  records: u16 x, u16 y, u32 t_us, u8 polarity
//! ```
//!
//! CSV is one `x,y,t,p` line per event without a header.

use std::io::{self, BufRead, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const EVT_MAGIC: &[u8; 4] = b"EVT1";
pub const EVT_HEADER_LEN: usize = 16;
pub const EVT_RECORD_LEN: usize = 9;

/// A raw DVS event. Polarity `true` is an ON (positive) change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// Timestamp in microseconds.
    pub t: u32,
    pub p: bool,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u32, p: bool) -> Self {
        Self { x, y, t, p }
    }
}

#[derive(Debug, Error)]
pub enum EventsError {
    #[error("malformed input at byte {offset}: {reason}")]
    Malformed { offset: u64, reason: String },
    #[error("timestamp regression at record {index}: {t} < {previous}")]
    TimestampRegression { index: usize, t: u32, previous: u32 },
    #[error("invalid sensor configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = EventsError> = std::result::Result<T, E>;

/// Sensor geometry, window length and normalization range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorConfig {
    pub width: u16,
    pub height: u16,
    pub time_window_us: u32,
    pub beta: u32,
}

impl SensorConfig {
    pub fn new(width: u16, height: u16, time_window_us: u32, beta: u32) -> Result<Self> {
        if width == 0 || height == 0 || time_window_us == 0 {
            return Err(EventsError::InvalidConfig(format!(
                "W, H and T must be positive (got {width}x{height}, T={time_window_us})"
            )));
        }
        if beta != 128 && beta != 256 {
            return Err(EventsError::InvalidConfig(format!(
                "beta must be 128 or 256, got {beta}"
            )));
        }
        Ok(Self {
            width,
            height,
            time_window_us,
            beta,
        })
    }

    pub fn contains(&self, ev: &Event) -> bool {
        ev.x < self.width && ev.y < self.height
    }
}

/// An event mapped onto the β×β×β grid. `t` is relative to the window
/// `window`; [`NormalizedEvent::extended_t`] gives the continuous value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NormalizedEvent {
    pub x: u16,
    pub y: u16,
    pub t: u16,
    pub window: u32,
    pub p: bool,
}

impl NormalizedEvent {
    /// Window-extended normalized timestamp, `window * beta + t`.
    pub fn extended_t(&self, beta: u32) -> i64 {
        self.window as i64 * beta as i64 + self.t as i64
    }
}

/// Scales an event onto the integer grid. Returns `None` for events outside
/// the sensor, which callers count and drop.
pub fn normalize(ev: &Event, cfg: &SensorConfig) -> Option<NormalizedEvent> {
    if !cfg.contains(ev) {
        return None;
    }
    let beta = cfg.beta as u64;
    let x = beta * ev.x as u64 / cfg.width as u64;
    let y = beta * ev.y as u64 / cfg.height as u64;
    let tw = cfg.time_window_us as u64;
    let t = ev.t as u64;
    let t_star = beta * (t % tw) / tw;
    Some(NormalizedEvent {
        x: x as u16,
        y: y as u16,
        t: t_star as u16,
        window: (t / tw) as u32,
        p: ev.p,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalizedStream {
    pub events: Vec<NormalizedEvent>,
    pub rejected: usize,
}

pub fn normalize_stream(events: &[Event], cfg: &SensorConfig) -> NormalizedStream {
    let mut out = NormalizedStream {
        events: Vec::with_capacity(events.len()),
        rejected: 0,
    };
    for ev in events {
        match normalize(ev, cfg) {
            Some(ne) => out.events.push(ne),
            None => out.rejected += 1,
        }
    }
    out
}

/// Shifts timestamps so the stream starts at zero.
pub fn rebase_to_first(events: &mut [Event]) {
    if let Some(first) = events.first().map(|e| e.t) {
        for ev in events.iter_mut() {
            ev.t -= first;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Evt,
    Csv,
}

impl EventFormat {
    /// Picks a format from a file extension (`.evt` or `.csv`).
    pub fn from_path(path: &std::path::Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "evt" => Some(Self::Evt),
            "csv" => Some(Self::Csv),
            _ => None,
        }
    }
}

/// Header of an `.evt` file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvtHeader {
    pub width: u16,
    pub height: u16,
    pub time_window_us: u32,
    pub count: u32,
}

fn check_order(events: &[Event]) -> Result<()> {
    for (index, pair) in events.windows(2).enumerate() {
        if pair[1].t < pair[0].t {
            return Err(EventsError::TimestampRegression {
                index: index + 1,
                t: pair[1].t,
                previous: pair[0].t,
            });
        }
    }
    Ok(())
}

/// Reads a whole `.evt` stream, returning its header and records.
pub fn read_evt<R: Read>(mut source: R) -> Result<(EvtHeader, Vec<Event>)> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.len() < EVT_HEADER_LEN {
        return Err(EventsError::Malformed {
            offset: bytes.len() as u64,
            reason: format!("truncated header ({} of {EVT_HEADER_LEN} bytes)", bytes.len()),
        });
    }
    if &bytes[0..4] != EVT_MAGIC {
        return Err(EventsError::Malformed {
            offset: 0,
            reason: "bad magic, expected EVT1".into(),
        });
    }
    let header = EvtHeader {
        width: u16::from_le_bytes([bytes[4], bytes[5]]),
        height: u16::from_le_bytes([bytes[6], bytes[7]]),
        time_window_us: u32::from_le_bytes(bytes[8..12].try_into().unwrap()),
        count: u32::from_le_bytes(bytes[12..16].try_into().unwrap()),
    };
    let body = &bytes[EVT_HEADER_LEN..];
    let expected = header.count as usize * EVT_RECORD_LEN;
    if body.len() != expected {
        let offset = EVT_HEADER_LEN + body.len().min(expected) / EVT_RECORD_LEN * EVT_RECORD_LEN;
        return Err(EventsError::Malformed {
            offset: offset as u64,
            reason: format!(
                "header declares {} records ({expected} bytes) but body has {} bytes",
                header.count,
                body.len()
            ),
        });
    }
    let mut events = Vec::with_capacity(header.count as usize);
    for (i, rec) in body.chunks_exact(EVT_RECORD_LEN).enumerate() {
        let p = match rec[8] {
            0 => false,
            1 => true,
            other => {
                return Err(EventsError::Malformed {
                    offset: (EVT_HEADER_LEN + i * EVT_RECORD_LEN + 8) as u64,
                    reason: format!("polarity byte must be 0 or 1, got {other}"),
                })
            }
        };
        events.push(Event {
            x: u16::from_le_bytes([rec[0], rec[1]]),
            y: u16::from_le_bytes([rec[2], rec[3]]),
            t: u32::from_le_bytes(rec[4..8].try_into().unwrap()),
            p,
        });
    }
    check_order(&events)?;
    Ok((header, events))
}

fn read_csv<R: Read>(source: R) -> Result<Vec<Event>> {
    let mut reader = io::BufReader::new(source);
    let mut events = Vec::new();
    let mut offset = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        let record = line.trim_end_matches(['\n', '\r']);
        if !record.trim().is_empty() {
            events.push(parse_csv_record(record).map_err(|reason| EventsError::Malformed {
                offset,
                reason,
            })?);
        }
        offset += n as u64;
    }
    check_order(&events)?;
    Ok(events)
}

fn parse_csv_record(record: &str) -> std::result::Result<Event, String> {
    let fields: Vec<&str> = record.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 fields x,y,t,p, got {}", fields.len()));
    }
    let x = fields[0]
        .parse::<u16>()
        .map_err(|e| format!("bad x {:?}: {e}", fields[0]))?;
    let y = fields[1]
        .parse::<u16>()
        .map_err(|e| format!("bad y {:?}: {e}", fields[1]))?;
    let t = fields[2]
        .parse::<u32>()
        .map_err(|e| format!("bad t {:?}: {e}", fields[2]))?;
    let p = match fields[3] {
        "0" => false,
        "1" => true,
        other => return Err(format!("polarity must be 0 or 1, got {other:?}")),
    };
    Ok(Event { x, y, t, p })
}

/// Reads events in file order, validating timestamp order.
pub fn read_events<R: Read>(source: R, format: EventFormat) -> Result<Vec<Event>> {
    match format {
        EventFormat::Evt => read_evt(source).map(|(_, events)| events),
        EventFormat::Csv => read_csv(source),
    }
}

/// Writes events and returns the number of bytes produced. `header` supplies
/// the sensor fields of the `.evt` header; its `count` is ignored.
pub fn write_events<W: Write>(
    events: &[Event],
    mut sink: W,
    format: EventFormat,
    header: EvtHeader,
) -> Result<u64> {
    let mut written = 0u64;
    match format {
        EventFormat::Evt => {
            let count = u32::try_from(events.len()).map_err(|_| {
                EventsError::InvalidConfig("too many events for a single .evt file".into())
            })?;
            let mut buf = Vec::with_capacity(EVT_HEADER_LEN + events.len() * EVT_RECORD_LEN);
            buf.extend_from_slice(EVT_MAGIC);
            buf.extend_from_slice(&header.width.to_le_bytes());
            buf.extend_from_slice(&header.height.to_le_bytes());
            buf.extend_from_slice(&header.time_window_us.to_le_bytes());
            buf.extend_from_slice(&count.to_le_bytes());
            for ev in events {
                buf.extend_from_slice(&ev.x.to_le_bytes());
                buf.extend_from_slice(&ev.y.to_le_bytes());
                buf.extend_from_slice(&ev.t.to_le_bytes());
                buf.push(ev.p as u8);
            }
            sink.write_all(&buf)?;
            written += buf.len() as u64;
        }
        EventFormat::Csv => {
            let mut w = io::BufWriter::new(&mut sink);
            for ev in events {
                let line = format!("{},{},{},{}\n", ev.x, ev.y, ev.t, ev.p as u8);
                w.write_all(line.as_bytes())?;
                written += line.len() as u64;
            }
            w.flush()?;
        }
    }
    sink.flush()?;
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthPattern {
    /// A vertical edge sweeping left to right once per time window.
    MovingEdge,
    RandomUniform,
    /// Spatially and temporally clustered activity.
    Burst,
}

impl std::str::FromStr for SynthPattern {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "moving-edge" => Ok(Self::MovingEdge),
            "random-uniform" => Ok(Self::RandomUniform),
            "burst" => Ok(Self::Burst),
            other => Err(format!(
                "unknown pattern {other:?} (moving-edge, random-uniform, burst)"
            )),
        }
    }
}

/// How inter-arrival gaps are drawn by [`synth_events_at_rate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arrivals {
    /// Exponential gaps.
    Poisson,
    /// Constant spacing of `1 / rate`.
    Uniform,
}

fn clamp_coord(v: i64, limit: u16) -> u16 {
    v.clamp(0, limit as i64 - 1) as u16
}

fn place(pattern: SynthPattern, t: u32, cfg: &SensorConfig, rng: &mut ChaCha8Rng) -> (u16, u16, bool) {
    let (w, h) = (cfg.width as i64, cfg.height as i64);
    match pattern {
        SynthPattern::MovingEdge => {
            let phase = (t % cfg.time_window_us) as i64;
            let edge_x = phase * w / cfg.time_window_us as i64;
            let x = edge_x + rng.gen_range(-1..=1);
            let y = rng.gen_range(0..h);
            // leading side of the edge fires ON, trailing side OFF
            (clamp_coord(x, cfg.width), clamp_coord(y, cfg.height), x >= edge_x)
        }
        SynthPattern::RandomUniform => (
            rng.gen_range(0..cfg.width),
            rng.gen_range(0..cfg.height),
            rng.gen_bool(0.5),
        ),
        SynthPattern::Burst => {
            // one activity centre per millisecond, derived from the time slot
            let slot = (t / 1000) as u64;
            let mut centre_rng = ChaCha8Rng::seed_from_u64(slot.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let cx = centre_rng.gen_range(0..w);
            let cy = centre_rng.gen_range(0..h);
            let spread = |rng: &mut ChaCha8Rng| -> i64 { (0..3).map(|_| rng.gen_range(-2..=2)).sum() };
            (
                clamp_coord(cx + spread(rng), cfg.width),
                clamp_coord(cy + spread(rng), cfg.height),
                rng.gen_bool(0.5),
            )
        }
    }
}

/// Generates `count` events spread over one time window, sorted by time.
pub fn synth_events(
    pattern: SynthPattern,
    cfg: &SensorConfig,
    count: usize,
    seed: u64,
) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times: Vec<u32> = match pattern {
        SynthPattern::Burst => {
            let bursts = 1 + count / 500;
            let starts: Vec<u32> = (0..bursts)
                .map(|_| rng.gen_range(0..cfg.time_window_us))
                .collect();
            let width = (cfg.time_window_us / 50).max(1);
            (0..count)
                .map(|_| {
                    let s = starts[rng.gen_range(0..bursts)];
                    s.saturating_add(rng.gen_range(0..width)).min(cfg.time_window_us - 1)
                })
                .collect()
        }
        _ => (0..count)
            .map(|_| rng.gen_range(0..cfg.time_window_us))
            .collect(),
    };
    times.sort_unstable();
    times
        .into_iter()
        .map(|t| {
            let (x, y, p) = place(pattern, t, cfg, &mut rng);
            Event { x, y, t, p }
        })
        .collect()
}

/// Generates a stream at `rate_meps` million events per second covering
/// `[0, duration_us)`.
pub fn synth_events_at_rate(
    pattern: SynthPattern,
    cfg: &SensorConfig,
    rate_meps: f64,
    duration_us: u32,
    arrivals: Arrivals,
    seed: u64,
) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    if rate_meps <= 0.0 {
        return events;
    }
    let mut now = 0.0f64;
    let mut i = 0u64;
    loop {
        let t = match arrivals {
            Arrivals::Poisson => {
                let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                now += -u.ln() / rate_meps;
                now
            }
            Arrivals::Uniform => {
                let t = i as f64 / rate_meps;
                i += 1;
                t
            }
        };
        if t >= duration_us as f64 {
            break;
        }
        let t = t as u32;
        let (x, y, p) = place(pattern, t, cfg, &mut rng);
        events.push(Event { x, y, t, p });
    }
    events
}
