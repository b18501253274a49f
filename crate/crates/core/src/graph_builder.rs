//! Directed event-graph construction with a fixed-size neighbourhood matrix.
//!
//! Every normalized pixel keeps the timestamp, polarity and vertex id of the
//! most recent event written there. A new event inspects the cells within
//! radius `R` of its pixel and links to each stored event whose
//! spatio-temporal distance is at most `R`, then overwrites its own cell.
//! Edges always point from the newer event to the older one, so inserting an
//! event never touches existing vertices or edges.

use std::io::{self, Write};

use thiserror::Error;

use crate::events_io::NormalizedEvent;

/// Cycles the graph-generation front end spends per event (29 candidate
/// reads over two BRAM ports plus one write).
pub const GRAPH_GEN_CYCLES: u64 = 15;

pub const DEFAULT_RADIUS: u32 = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("timestamp regression: event at t*={t} after t*={last}")]
    TimestampRegression { t: i64, last: i64 },
    #[error("event ({x}, {y}) outside the {size}x{size} neighbourhood matrix")]
    OutOfGrid { x: u16, y: u16, size: u32 },
    #[error("radius must be at least 1")]
    InvalidRadius,
}

/// Integer position on the (pooled) grid; `t` is window-extended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Position {
    pub x: i64,
    pub y: i64,
    pub t: i64,
}

impl Position {
    pub const fn new(x: i64, y: i64, t: i64) -> Self {
        Self { x, y, t }
    }

    pub fn offset_to(&self, other: &Position) -> Offset {
        Offset::new(self.x - other.x, self.y - other.y, self.t - other.t)
    }

    pub fn sub(&self, off: Offset) -> Position {
        Position::new(self.x - off.dx, self.y - off.dy, self.t - off.dt)
    }
}

/// Difference between two positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Offset {
    pub dx: i64,
    pub dy: i64,
    pub dt: i64,
}

impl Offset {
    pub const ZERO: Offset = Offset::new(0, 0, 0);

    pub const fn new(dx: i64, dy: i64, dt: i64) -> Self {
        Self { dx, dy, dt }
    }

    pub fn norm_sq(&self) -> i64 {
        self.dx * self.dx + self.dy * self.dy + self.dt * self.dt
    }
}

impl std::ops::Neg for Offset {
    type Output = Offset;

    fn neg(self) -> Offset {
        Offset::new(-self.dx, -self.dy, -self.dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vertex {
    pub id: usize,
    pub pos: Position,
    pub polarity: bool,
}

/// Directed edge from a new event (`src`) to an older one (`dst`).
/// `offset` is `P_src - P_dst`, so `offset.dt >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub offset: Offset,
    pub dst_polarity: bool,
}

/// All `(dx, dy)` with `dx² + dy² <= R²`, row-major (dy outer, dx inner).
pub fn candidate_offsets(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoredEvent {
    pub t: i64,
    pub polarity: bool,
    pub id: usize,
}

/// β×β grid of the most recent event per normalized pixel.
#[derive(Debug, Clone)]
pub struct NeighbourhoodMatrix {
    size: u32,
    radius: u32,
    offsets: Vec<(i64, i64)>,
    cells: Vec<Option<StoredEvent>>,
    last_t: Option<i64>,
    next_id: usize,
}

impl NeighbourhoodMatrix {
    pub fn new(size: u32, radius: u32) -> Result<Self, GraphError> {
        if radius == 0 {
            return Err(GraphError::InvalidRadius);
        }
        Ok(Self {
            size,
            radius,
            offsets: candidate_offsets(radius),
            cells: vec![None; size as usize * size as usize],
            last_t: None,
            next_id: 0,
        })
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn cell(&self, x: u16, y: u16) -> Option<StoredEvent> {
        if x as u32 >= self.size || y as u32 >= self.size {
            return None;
        }
        self.cells[y as usize * self.size as usize + x as usize]
    }

    /// Registers an event at extended time `t`, returning its vertex and the
    /// edges to its in-radius predecessors in candidate-offset order.
    pub fn insert(
        &mut self,
        x: u16,
        y: u16,
        t: i64,
        polarity: bool,
    ) -> Result<(Vertex, Vec<Edge>), GraphError> {
        if x as u32 >= self.size || y as u32 >= self.size {
            return Err(GraphError::OutOfGrid {
                x,
                y,
                size: self.size,
            });
        }
        if let Some(last) = self.last_t {
            if t < last {
                return Err(GraphError::TimestampRegression { t, last });
            }
        }
        let id = self.next_id;
        let pos = Position::new(x as i64, y as i64, t);
        let r2 = (self.radius as i64).pow(2);
        let n = self.size as i64;
        let mut edges = Vec::new();
        for &(dx, dy) in &self.offsets {
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            if nx < 0 || ny < 0 || nx >= n || ny >= n {
                continue;
            }
            let Some(stored) = self.cells[(ny * n + nx) as usize] else {
                continue;
            };
            let dt = t - stored.t;
            if dt >= 0 && dx * dx + dy * dy + dt * dt <= r2 {
                edges.push(Edge {
                    src: id,
                    dst: stored.id,
                    offset: Offset::new(-dx, -dy, dt),
                    dst_polarity: stored.polarity,
                });
            }
        }
        self.cells[y as usize * self.size as usize + x as usize] = Some(StoredEvent { t, polarity, id });
        self.last_t = Some(t);
        self.next_id += 1;
        Ok((Vertex { id, pos, polarity }, edges))
    }
}

/// Inserts one normalized event into the matrix.
pub fn insert_event(
    nm: &mut NeighbourhoodMatrix,
    ne: &NormalizedEvent,
    beta: u32,
) -> Result<(Vertex, Vec<Edge>), GraphError> {
    nm.insert(ne.x, ne.y, ne.extended_t(beta), ne.p)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventGraph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    pub radius: u32,
    pub size: u32,
}

impl EventGraph {
    pub fn in_degree_max(&self) -> usize {
        let mut counts = vec![0usize; self.vertices.len()];
        for e in &self.edges {
            counts[e.src] += 1;
        }
        counts.into_iter().max().unwrap_or(0)
    }

    /// Writes `V id x y t p` and `E src dst dx dy dt` lines.
    pub fn write_dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        for v in &self.vertices {
            writeln!(out, "V {} {} {} {} {}", v.id, v.pos.x, v.pos.y, v.pos.t, v.polarity as u8)?;
        }
        for e in &self.edges {
            writeln!(
                out,
                "E {} {} {} {} {}",
                e.src, e.dst, e.offset.dx, e.offset.dy, e.offset.dt
            )?;
        }
        Ok(())
    }
}

/// Folds [`insert_event`] over a time-ordered stream.
pub fn build_graph(events: &[NormalizedEvent], beta: u32, radius: u32) -> Result<EventGraph, GraphError> {
    let mut nm = NeighbourhoodMatrix::new(beta, radius)?;
    let mut graph = EventGraph {
        vertices: Vec::with_capacity(events.len()),
        edges: Vec::new(),
        radius,
        size: beta,
    };
    for ne in events {
        let (v, edges) = insert_event(&mut nm, ne, beta)?;
        graph.vertices.push(v);
        graph.edges.extend(edges);
    }
    Ok(graph)
}

/// Iterator yielding `(vertex, edges)` per event, the front end's output
/// stream. Stops at the first error.
pub struct GraphStream<I> {
    nm: NeighbourhoodMatrix,
    beta: u32,
    events: I,
}

impl<I: Iterator<Item = NormalizedEvent>> GraphStream<I> {
    pub fn new(events: I, beta: u32, radius: u32) -> Result<Self, GraphError> {
        Ok(Self {
            nm: NeighbourhoodMatrix::new(beta, radius)?,
            beta,
            events,
        })
    }
}

impl<I: Iterator<Item = NormalizedEvent>> Iterator for GraphStream<I> {
    type Item = Result<(Vertex, Vec<Edge>), GraphError>;

    fn next(&mut self) -> Option<Self::Item> {
        let ne = self.events.next()?;
        Some(insert_event(&mut self.nm, &ne, self.beta))
    }
}

pub fn front_end_cycles(event_count: u64) -> u64 {
    GRAPH_GEN_CYCLES * event_count
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ne(x: u16, y: u16, t: u16) -> NormalizedEvent {
        NormalizedEvent {
            x,
            y,
            t,
            window: 0,
            p: true,
        }
    }

    #[test]
    fn candidate_counts() {
        assert_eq!(candidate_offsets(3).len(), 29);
        let r1 = candidate_offsets(1);
        assert_eq!(r1, vec![(0, -1), (-1, 0), (0, 0), (1, 0), (0, 1)]);
        assert_eq!(candidate_offsets(0), vec![(0, 0)]);
        assert_eq!(candidate_offsets(5).len(), 81);
    }

    #[test]
    fn first_event_has_no_edges() {
        let mut nm = NeighbourhoodMatrix::new(128, 3).unwrap();
        let (v, edges) = insert_event(&mut nm, &ne(5, 5, 0), 128).unwrap();
        assert_eq!(v.id, 0);
        assert!(edges.is_empty());
    }

    #[test]
    fn same_pixel_edge() {
        let g = build_graph(&[ne(10, 10, 0), ne(10, 10, 2)], 128, 3).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].offset, Offset::new(0, 0, 2));
        assert_eq!((g.edges[0].src, g.edges[0].dst), (1, 0));
    }

    #[test]
    fn distance_check_is_three_dimensional() {
        // 3² + 0² + 1² = 10 > 9
        let g = build_graph(&[ne(10, 10, 0), ne(13, 10, 1)], 128, 3).unwrap();
        assert!(g.edges.is_empty());
        let g = build_graph(&[ne(10, 10, 1), ne(13, 10, 1)], 128, 3).unwrap();
        assert_eq!(g.edges[0].offset, Offset::new(3, 0, 0));
    }

    #[test]
    fn duplicate_timestamp_links() {
        let g = build_graph(&[ne(4, 4, 7), ne(4, 4, 7)], 128, 3).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].offset, Offset::ZERO);
    }

    #[test]
    fn overwrite_semantics() {
        let mut nm = NeighbourhoodMatrix::new(128, 3).unwrap();
        insert_event(&mut nm, &ne(1, 1, 0), 128).unwrap();
        let mut second = ne(1, 1, 5);
        second.p = false;
        insert_event(&mut nm, &second, 128).unwrap();
        let cell = nm.cell(1, 1).unwrap();
        assert_eq!((cell.t, cell.polarity, cell.id), (5, false, 1));
    }

    #[test]
    fn regression_is_an_error() {
        let err = build_graph(&[ne(1, 1, 5), ne(2, 2, 4)], 128, 3).unwrap_err();
        assert_eq!(err, GraphError::TimestampRegression { t: 4, last: 5 });
    }

    #[test]
    fn edges_carry_neighbour_polarity() {
        let mut a = ne(3, 3, 0);
        a.p = false;
        let g = build_graph(&[a, ne(4, 3, 1)], 128, 3).unwrap();
        assert!(!g.edges[0].dst_polarity);
    }

    #[test]
    fn graph_dump_format() {
        let g = build_graph(&[ne(10, 10, 0), ne(10, 11, 1)], 128, 3).unwrap();
        let mut buf = Vec::new();
        g.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "V 0 10 10 0 1\nV 1 10 11 1 1\nE 1 0 0 1 1\n");
    }

    #[test]
    fn front_end_cost() {
        assert_eq!(front_end_cycles(1), 15);
        assert_eq!(front_end_cycles(0), 0);
        let meps = 200e6 / GRAPH_GEN_CYCLES as f64 / 1e6;
        assert!((meps - 13.333).abs() < 1e-3);
    }
}
