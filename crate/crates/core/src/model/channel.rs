//! Temporal channels and the triple-buffered feature memory between
//! synchronous layers.

use std::collections::BTreeSet;

use super::ModelError;
use crate::graph_builder::Offset;
use crate::layers::Features;

/// One pooled vertex: its features and the merged outgoing edge offsets
/// (`P_self - P_neighbour`, so `dt` is 0 or 1 slice).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelCell<F> {
    pub features: F,
    pub edges: BTreeSet<Offset>,
}

/// All vertices of one temporal slice on a `size × size` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalChannel<F> {
    slice: i64,
    size: u32,
    cells: Vec<Option<ChannelCell<F>>>,
}

impl<F: Features> TemporalChannel<F> {
    pub fn new(slice: i64, size: u32) -> Self {
        Self {
            slice,
            size,
            cells: vec![None; size as usize * size as usize],
        }
    }

    pub fn slice(&self) -> i64 {
        self.slice
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    fn index(&self, x: i64, y: i64) -> Option<usize> {
        let n = self.size as i64;
        (x >= 0 && y >= 0 && x < n && y < n).then(|| (y * n + x) as usize)
    }

    pub fn get(&self, x: i64, y: i64) -> Option<&ChannelCell<F>> {
        self.index(x, y).and_then(|i| self.cells[i].as_ref())
    }

    /// Merges features (elementwise max) and edge offsets into cell `(x, y)`.
    pub fn accumulate(&mut self, x: i64, y: i64, features: &F, edges: impl IntoIterator<Item = Offset>) {
        let i = self
            .index(x, y)
            .unwrap_or_else(|| panic!("cell ({x}, {y}) outside {}-grid", self.size));
        match &mut self.cells[i] {
            Some(cell) => {
                cell.features.merge_max(features);
                cell.edges.extend(edges);
            }
            slot @ None => {
                *slot = Some(ChannelCell {
                    features: features.clone(),
                    edges: edges.into_iter().collect(),
                })
            }
        }
    }

    pub fn set(&mut self, x: i64, y: i64, cell: ChannelCell<F>) {
        let i = self.index(x, y).expect("cell inside grid");
        self.cells[i] = Some(cell);
    }

    /// Populated cells in row-major order.
    pub fn populated(&self) -> impl Iterator<Item = (i64, i64, &ChannelCell<F>)> {
        let n = self.size as i64;
        self.cells
            .iter()
            .enumerate()
            .filter_map(move |(i, c)| c.as_ref().map(|c| (i as i64 % n, i as i64 / n, c)))
    }

    pub fn len(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(Option::is_none)
    }

    pub fn reset(&mut self, slice: i64) {
        self.slice = slice;
        self.cells.iter_mut().for_each(|c| *c = None);
    }
}

/// Accumulates a pooled vertex into the channel after checking it belongs
/// to the channel's slice.
pub fn accumulate_slice<F: Features>(
    channel: &mut TemporalChannel<F>,
    slice: i64,
    x: i64,
    y: i64,
    features: &F,
    edges: impl IntoIterator<Item = Offset>,
) -> Result<(), ModelError> {
    if slice != channel.slice {
        return Err(ModelError::SliceMismatch {
            expected: channel.slice,
            got: slice,
        });
    }
    channel.accumulate(x, y, features, edges);
    Ok(())
}

/// Three channel buffers rotating between one writer (the producing layer)
/// and two readers (slice n and n-1 for the consuming layer).
#[derive(Debug, Clone)]
pub struct FeatureMemory<F> {
    buffers: [TemporalChannel<F>; 3],
    writer: usize,
    consumer_done: bool,
}

impl<F: Features> FeatureMemory<F> {
    /// The writer starts on slice `first_slice`; the readers hold empty
    /// slices before it.
    pub fn new(size: u32, first_slice: i64) -> Self {
        Self {
            buffers: [
                TemporalChannel::new(first_slice, size),
                TemporalChannel::new(first_slice - 1, size),
                TemporalChannel::new(first_slice - 2, size),
            ],
            writer: 0,
            consumer_done: true,
        }
    }

    pub fn writer(&self) -> &TemporalChannel<F> {
        &self.buffers[self.writer]
    }

    pub fn writer_mut(&mut self) -> &mut TemporalChannel<F> {
        &mut self.buffers[self.writer]
    }

    /// Reader for the most recently completed slice.
    pub fn reader_new(&self) -> &TemporalChannel<F> {
        &self.buffers[(self.writer + 2) % 3]
    }

    /// Reader for the slice before it.
    pub fn reader_old(&self) -> &TemporalChannel<F> {
        &self.buffers[(self.writer + 1) % 3]
    }

    /// Index of the buffer currently written.
    pub fn writer_index(&self) -> usize {
        self.writer
    }

    /// Replaces the writer's contents with a complete channel for the same slice.
    pub fn load_writer(&mut self, channel: TemporalChannel<F>) -> Result<(), ModelError> {
        let w = self.writer();
        if channel.slice != w.slice {
            return Err(ModelError::SliceMismatch {
                expected: w.slice,
                got: channel.slice,
            });
        }
        self.buffers[self.writer] = channel;
        Ok(())
    }

    pub fn consumer_done(&self) -> bool {
        self.consumer_done
    }

    /// Marks the current readers as fully consumed.
    pub fn finish_read(&mut self) {
        self.consumer_done = true;
    }

    /// Rotates roles: the writer becomes the newest reader, the newest reader
    /// becomes the old one, and the old reader is cleared for the next slice.
    pub fn step(&mut self) -> Result<(), ModelError> {
        if !self.consumer_done {
            return Err(ModelError::SchedulingViolation {
                slice: self.reader_new().slice,
            });
        }
        let next = self.writer().slice + 1;
        self.writer = (self.writer + 1) % 3;
        self.buffers[self.writer].reset(next);
        self.consumer_done = false;
        Ok(())
    }
}

/// Functional form of [`FeatureMemory::step`].
pub fn feature_memory_step<F: Features>(mut memory: FeatureMemory<F>) -> Result<FeatureMemory<F>, ModelError> {
    memory.step()?;
    Ok(memory)
}
