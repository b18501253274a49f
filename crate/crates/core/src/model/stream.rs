//! Event-driven inference.
//!
//! Stage chain: front end (neighbourhood matrix, Conv1, MaxPool1 into a
//! level-1 channel) → Conv2 → Conv3 → MaxPool2 → Conv4 → Conv5 → PoolOut →
//! head. Every synchronous conv reads its input through a [`FeatureMemory`]
//! and only ever touches slices n and n-1.

use std::collections::VecDeque;
use std::mem;
use std::sync::mpsc::{self, Receiver, Sender, SyncSender};
use std::thread;

use super::channel::{accumulate_slice, ChannelCell, FeatureMemory, TemporalChannel};
use super::{window_count, ModelConfig, ModelError, ModelWeights, Prediction, POOL1_G, POOL2_G};
use crate::events_io::NormalizedEvent;
use crate::graph_builder::{insert_event, NeighbourhoodMatrix, Offset, Position};
use crate::layers::{
    classify, conv_vertex, merge_offset, pool_out, ClassifierHead, FeatureVector, PointNetConv, OUT_GRID,
};

type Channel = TemporalChannel<FeatureVector>;
type Grid = Vec<Option<FeatureVector>>;

struct FrontEnd<'w> {
    nm: NeighbourhoodMatrix,
    conv1: &'w PointNetConv,
    beta: u32,
    channel: Channel,
    last_t: Option<i64>,
}

impl<'w> FrontEnd<'w> {
    fn new(cfg: &ModelConfig, conv1: &'w PointNetConv) -> Result<Self, ModelError> {
        Ok(Self {
            nm: NeighbourhoodMatrix::new(cfg.beta, cfg.radius)?,
            conv1,
            beta: cfg.beta,
            channel: TemporalChannel::new(0, cfg.size1()),
            last_t: None,
        })
    }

    /// Closes every level-1 slice before `slice`.
    fn advance_to(&mut self, slice: i64, out: &mut Vec<Channel>) {
        while self.channel.slice() < slice {
            let next = TemporalChannel::new(self.channel.slice() + 1, self.channel.size());
            out.push(mem::replace(&mut self.channel, next));
        }
    }

    fn push(&mut self, ne: &NormalizedEvent, out: &mut Vec<Channel>) -> Result<(), ModelError> {
        let t = ne.extended_t(self.beta);
        let g = POOL1_G as i64;
        self.advance_to(t.div_euclid(g), out);
        let (v, edges) = insert_event(&mut self.nm, ne, self.beta)?;
        let neighbours: Vec<(FeatureVector, Offset)> = edges
            .iter()
            .map(|e| (FeatureVector(vec![2 * e.dst_polarity as u8]), -e.offset))
            .collect();
        let features = conv_vertex(self.conv1, &FeatureVector(vec![2 * v.polarity as u8]), &neighbours)?;
        let merged = edges
            .iter()
            .filter_map(|e| merge_offset(v.pos, v.pos.sub(e.offset), POOL1_G));
        accumulate_slice(
            &mut self.channel,
            t.div_euclid(g),
            v.pos.x.div_euclid(g),
            v.pos.y.div_euclid(g),
            &features,
            merged,
        )?;
        self.last_t = Some(t);
        Ok(())
    }

    /// Closes all slices of the windows seen so far.
    fn finish(&mut self, out: &mut Vec<Channel>) {
        let total = window_count(self.last_t, self.beta) * (self.beta / POOL1_G) as i64;
        self.advance_to(total, out);
    }
}

struct SyncStage<'w> {
    conv: &'w PointNetConv,
    memory: FeatureMemory<FeatureVector>,
}

impl<'w> SyncStage<'w> {
    fn new(conv: &'w PointNetConv, size: u32) -> Self {
        Self {
            conv,
            memory: FeatureMemory::new(size, 0),
        }
    }

    fn process(&mut self, input: Channel) -> Result<Channel, ModelError> {
        self.memory.load_writer(input)?;
        self.memory.step()?;
        let cur = self.memory.reader_new();
        let prev = self.memory.reader_old();
        let mut out = TemporalChannel::new(cur.slice(), cur.size());
        for (x, y, cell) in cur.populated() {
            let mut neighbours = Vec::with_capacity(cell.edges.len());
            for off in &cell.edges {
                let (nx, ny) = (x - off.dx, y - off.dy);
                let source = match off.dt {
                    0 => cur,
                    1 => prev,
                    _ => {
                        return Err(ModelError::MissingNeighbour {
                            x: nx,
                            y: ny,
                            slice: cur.slice() - off.dt,
                        })
                    }
                };
                let n = source.get(nx, ny).ok_or(ModelError::MissingNeighbour {
                    x: nx,
                    y: ny,
                    slice: source.slice(),
                })?;
                neighbours.push((n.features.clone(), -*off));
            }
            out.set(
                x,
                y,
                ChannelCell {
                    features: conv_vertex(self.conv, &cell.features, &neighbours)?,
                    edges: cell.edges.clone(),
                },
            );
        }
        self.memory.finish_read();
        Ok(out)
    }
}

struct Pool2Stage {
    channel: Channel,
}

impl Pool2Stage {
    fn new(size: u32) -> Self {
        Self {
            channel: TemporalChannel::new(0, size),
        }
    }

    fn push(&mut self, input: &Channel) -> Result<Option<Channel>, ModelError> {
        let g = POOL2_G as i64;
        let s = input.slice();
        for (x, y, cell) in input.populated() {
            let pos = Position::new(x, y, s);
            let merged = cell
                .edges
                .iter()
                .filter_map(|off| merge_offset(pos, pos.sub(*off), POOL2_G));
            accumulate_slice(
                &mut self.channel,
                s.div_euclid(g),
                x.div_euclid(g),
                y.div_euclid(g),
                &cell.features,
                merged,
            )?;
        }
        if s.rem_euclid(g) == g - 1 {
            let next = TemporalChannel::new(s.div_euclid(g) + 1, self.channel.size());
            return Ok(Some(mem::replace(&mut self.channel, next)));
        }
        Ok(None)
    }
}

struct PoolOutStage {
    kernel: i64,
    grid: Grid,
}

impl PoolOutStage {
    fn new(kernel: u32) -> Self {
        Self {
            kernel: kernel as i64,
            grid: vec![None; OUT_GRID * OUT_GRID],
        }
    }

    /// Returns the quarter-window index and its grid once its last level-2
    /// slice has been merged.
    fn push(&mut self, input: &Channel) -> Option<(i64, Grid)> {
        for (x, y, cell) in input.populated() {
            let idx = (y / self.kernel) as usize * OUT_GRID + (x / self.kernel) as usize;
            match &mut self.grid[idx] {
                Some(f) => crate::layers::Features::merge_max(f, &cell.features),
                slot @ None => *slot = Some(cell.features.clone()),
            }
        }
        let s = input.slice();
        (s.rem_euclid(self.kernel) == self.kernel - 1).then(|| {
            let grid = mem::replace(&mut self.grid, vec![None; OUT_GRID * OUT_GRID]);
            (s.div_euclid(self.kernel), grid)
        })
    }
}

struct Predictor<'w> {
    head: &'w ClassifierHead,
    floor: FeatureVector,
    period_us: u64,
    history: VecDeque<Grid>,
}

impl<'w> Predictor<'w> {
    fn new(cfg: &ModelConfig, weights: &'w ModelWeights) -> Self {
        Self {
            head: &weights.head,
            floor: weights.convs[4].floor(),
            period_us: cfg.prediction_period_us(),
            history: VecDeque::with_capacity(4),
        }
    }

    fn push(&mut self, k: i64, grid: Grid) -> Result<Prediction, ModelError> {
        self.history.push_back(grid);
        if self.history.len() > 4 {
            self.history.pop_front();
        }
        let grids: Vec<&[Option<FeatureVector>]> = self.history.iter().map(Vec::as_slice).collect();
        let s = classify(self.head, &pool_out(&grids, &self.floor))?;
        Ok(Prediction {
            t_end_us: (k as u64 + 1) * self.period_us,
            scores: s.scores,
            argmax: s.argmax,
            warmup: k < 3,
        })
    }
}

/// Sequential streaming engine fed one normalized event at a time.
pub struct StreamingEngine<'w> {
    front: FrontEnd<'w>,
    conv2: SyncStage<'w>,
    conv3: SyncStage<'w>,
    pool2: Pool2Stage,
    conv4: SyncStage<'w>,
    conv5: SyncStage<'w>,
    pool_out: PoolOutStage,
    predictor: Predictor<'w>,
    closed: Vec<Channel>,
}

impl<'w> StreamingEngine<'w> {
    pub fn new(cfg: &ModelConfig, weights: &'w ModelWeights) -> Result<Self, ModelError> {
        cfg.validate()?;
        weights.check_config(cfg)?;
        let c = &weights.convs;
        Ok(Self {
            front: FrontEnd::new(cfg, &c[0])?,
            conv2: SyncStage::new(&c[1], cfg.size1()),
            conv3: SyncStage::new(&c[2], cfg.size1()),
            pool2: Pool2Stage::new(cfg.size2()),
            conv4: SyncStage::new(&c[3], cfg.size2()),
            conv5: SyncStage::new(&c[4], cfg.size2()),
            pool_out: PoolOutStage::new(cfg.pool_out_kernel()),
            predictor: Predictor::new(cfg, weights),
            closed: Vec::new(),
        })
    }

    /// Processes one event; returns predictions for quarter-windows that the
    /// event's timestamp closed.
    pub fn push(&mut self, ne: &NormalizedEvent) -> Result<Vec<Prediction>, ModelError> {
        self.front.push(ne, &mut self.closed)?;
        self.drain()
    }

    /// Closes the remaining slices of the last window.
    pub fn finish(mut self) -> Result<Vec<Prediction>, ModelError> {
        self.front.finish(&mut self.closed);
        self.drain()
    }

    fn drain(&mut self) -> Result<Vec<Prediction>, ModelError> {
        let mut out = Vec::new();
        for ch in mem::take(&mut self.closed) {
            let ch = self.conv3.process(self.conv2.process(ch)?)?;
            if let Some(ch2) = self.pool2.push(&ch)? {
                let ch2 = self.conv5.process(self.conv4.process(ch2)?)?;
                if let Some((k, grid)) = self.pool_out.push(&ch2) {
                    out.push(self.predictor.push(k, grid)?);
                }
            }
        }
        Ok(out)
    }
}

pub fn run_inference(
    events: &[NormalizedEvent],
    cfg: &ModelConfig,
    weights: &ModelWeights,
) -> Result<Vec<Prediction>, ModelError> {
    let mut engine = StreamingEngine::new(cfg, weights)?;
    let mut out = Vec::new();
    for ne in events {
        out.extend(engine.push(ne)?);
    }
    out.extend(engine.finish()?);
    Ok(out)
}

/// Runs `f` on every item of `rx`, forwarding results; a closed downstream
/// ends the stage quietly so the failing stage reports its own error.
fn stage<I, O>(
    rx: Receiver<I>,
    tx: SyncSender<O>,
    mut f: impl FnMut(I) -> Result<Option<O>, ModelError>,
) -> Result<(), ModelError> {
    for item in rx {
        if let Some(o) = f(item)? {
            if tx.send(o).is_err() {
                break;
            }
        }
    }
    Ok(())
}

/// Same results as [`run_inference`] with each synchronous stage on its own
/// thread, connected by bounded queues.
pub fn run_inference_threaded(
    events: &[NormalizedEvent],
    cfg: &ModelConfig,
    weights: &ModelWeights,
) -> Result<Vec<Prediction>, ModelError> {
    cfg.validate()?;
    weights.check_config(cfg)?;
    let c = &weights.convs;
    let mut front = FrontEnd::new(cfg, &c[0])?;
    let mut conv2 = SyncStage::new(&c[1], cfg.size1());
    let mut conv3 = SyncStage::new(&c[2], cfg.size1());
    let mut pool2 = Pool2Stage::new(cfg.size2());
    let mut conv4 = SyncStage::new(&c[3], cfg.size2());
    let mut conv5 = SyncStage::new(&c[4], cfg.size2());
    let mut pool_out = PoolOutStage::new(cfg.pool_out_kernel());
    let mut predictor = Predictor::new(cfg, weights);

    const DEPTH: usize = 4;
    let (tx1, rx1) = mpsc::sync_channel::<Channel>(DEPTH);
    let (tx2, rx2) = mpsc::sync_channel::<Channel>(DEPTH);
    let (tx3, rx3) = mpsc::sync_channel::<Channel>(DEPTH);
    let (tx4, rx4) = mpsc::sync_channel::<Channel>(DEPTH);
    let (tx5, rx5) = mpsc::sync_channel::<Channel>(DEPTH);
    let (tx_out, rx_out): (Sender<Prediction>, Receiver<Prediction>) = mpsc::channel();

    thread::scope(|scope| {
        let handles = [
            scope.spawn(move || stage(rx1, tx2, |ch| conv2.process(ch).map(Some))),
            scope.spawn(move || stage(rx2, tx3, |ch| conv3.process(ch).map(Some))),
            scope.spawn(move || {
                stage(rx3, tx4, |ch| match pool2.push(&ch)? {
                    Some(ch2) => conv4.process(ch2).map(Some),
                    None => Ok(None),
                })
            }),
            scope.spawn(move || stage(rx4, tx5, |ch| conv5.process(ch).map(Some))),
            scope.spawn(move || {
                for ch in rx5 {
                    if let Some((k, grid)) = pool_out.push(&ch) {
                        if tx_out.send(predictor.push(k, grid)?).is_err() {
                            break;
                        }
                    }
                }
                Ok(())
            }),
        ];

        let front_result = (|| {
            let mut closed = Vec::new();
            for ne in events {
                front.push(ne, &mut closed)?;
                for ch in closed.drain(..) {
                    if tx1.send(ch).is_err() {
                        return Ok(());
                    }
                }
            }
            front.finish(&mut closed);
            for ch in closed {
                if tx1.send(ch).is_err() {
                    break;
                }
            }
            Ok(())
        })();
        drop(tx1);

        let mut first_err = front_result.err();
        for h in handles {
            let r = h.join().expect("pipeline stage panicked");
            if first_err.is_none() {
                first_err = r.err();
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(rx_out.iter().collect()),
        }
    })
}
