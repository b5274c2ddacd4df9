//! Tiling solutions and their exact evaluation.
//!
//! A solution linearizes the loop body (a topological order of the nodes),
//! cuts the order into consecutive tiles, gives every tile a width (the
//! number of consecutive iterations it covers), and decides which values go
//! through memory. Tile `i` owns the ranks `(tile_points[i-1], tile_points[i]]`
//! with an implicit `tile_points[-1] = -1`; the last entry is always `C`, the
//! highest rank.
//!
//! Program point `j` sits right after the node of rank `j`. Its register
//! pressure is
//!
//! ```text
//! comp(node at j) + reserve + Σ_{groups crossing j} group.reg × width(tile owning j)
//! ```
//!
//! where `reserve` is the total state of the nodes whose state is kept in
//! registers, and a group crosses `j` when one of its edges is internal to a
//! tile, not spilled, and spans `j`.
//!
//! The cost of the unrolled body counts loads: every spilled edge is reloaded
//! once per iteration, and a spilled state is reloaded once per repetition of
//! its tile, i.e. `ceil(unroll / width)` times.

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::dfg::{DataFlowGraph, ProblemInstance};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolutionError {
    #[error("{field} has length {found}, expected {expected}")]
    Length {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("order is not a permutation of the nodes")]
    NotAPermutation,
    #[error("unknown {kind} `{id}`")]
    UnknownId { kind: &'static str, id: String },
    #[error("tile_points must be non-decreasing in [-1, {last}] and end at {last}")]
    TilePoints { last: i64 },
    #[error("tile {tile} has width 0")]
    ZeroWidth { tile: usize },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TilingSolution {
    /// Node index at each rank.
    pub order: Vec<usize>,
    /// Last rank owned by each tile.
    pub tile_points: Vec<i64>,
    pub tile_widths: Vec<u32>,
    pub edge_spill: Vec<bool>,
    pub state_spill: Vec<bool>,
}

impl TilingSolution {
    /// Identity-free fallback: a topological order, one width-1 tile per
    /// node, everything spilled. Feasible whenever `limit >= max comp`.
    pub fn fallback(g: &DataFlowGraph) -> Self {
        let n = g.node_count();
        Self {
            order: g.topological_order(),
            tile_points: (0..n as i64).collect(),
            tile_widths: vec![1; n],
            edge_spill: vec![true; g.edge_count()],
            state_spill: vec![true; n],
        }
    }

    pub fn check_structure(&self, g: &DataFlowGraph) -> Result<(), SolutionError> {
        let n = g.node_count();
        let len = |field, found: usize, expected| {
            if found != expected {
                Err(SolutionError::Length { field, expected, found })
            } else {
                Ok(())
            }
        };
        len("order", self.order.len(), n)?;
        len("tile_points", self.tile_points.len(), n)?;
        len("tile_widths", self.tile_widths.len(), n)?;
        len("edge_spill", self.edge_spill.len(), g.edge_count())?;
        len("state_spill", self.state_spill.len(), n)?;
        let mut seen = vec![false; n];
        for &v in &self.order {
            if v >= n || std::mem::replace(&mut seen[v], true) {
                return Err(SolutionError::NotAPermutation);
            }
        }
        let last = n as i64 - 1;
        let mut prev = -1;
        for &p in &self.tile_points {
            if p < prev || p > last {
                return Err(SolutionError::TilePoints { last });
            }
            prev = p;
        }
        if n > 0 && self.tile_points[n - 1] != last {
            return Err(SolutionError::TilePoints { last });
        }
        if let Some(tile) = self.tile_widths.iter().position(|&w| w == 0) {
            return Err(SolutionError::ZeroWidth { tile });
        }
        Ok(())
    }

    /// Rank of every node.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.order.len()];
        for (r, &v) in self.order.iter().enumerate() {
            ranks[v] = r;
        }
        ranks
    }

    /// Tile owning every rank.
    pub fn tile_of_rank(&self) -> Vec<usize> {
        let n = self.order.len();
        let mut tiles = Vec::with_capacity(n);
        let mut t = 0;
        for r in 0..n as i64 {
            while self.tile_points[t] < r {
                t += 1;
            }
            tiles.push(t);
        }
        tiles
    }

    pub fn is_tile_empty(&self, t: usize) -> bool {
        let prev = if t == 0 { -1 } else { self.tile_points[t - 1] };
        prev == self.tile_points[t]
    }

    /// Sets the width of every empty tile to 1.
    pub fn canonicalize(&mut self) {
        for t in 0..self.tile_points.len() {
            if self.is_tile_empty(t) {
                self.tile_widths[t] = 1;
            }
        }
    }

    /// True when empty tiles only occur after every non-empty one.
    pub fn empty_tiles_trail(&self) -> bool {
        let mut seen_empty = false;
        for t in 0..self.tile_points.len() {
            let empty = self.is_tile_empty(t);
            if seen_empty && !empty {
                return false;
            }
            seen_empty |= empty;
        }
        true
    }
}

/// Tile index of every node. Rank `r` belongs to tile `j` iff
/// `tile_points[j-1] < r <= tile_points[j]`.
pub fn node_tile_assignment(sol: &TilingSolution) -> Vec<usize> {
    let by_rank = sol.tile_of_rank();
    let mut tiles = vec![0; sol.order.len()];
    for (r, &v) in sol.order.iter().enumerate() {
        tiles[v] = by_rank[r];
    }
    tiles
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Crossings {
    /// Points spanned by each edge: `src rank <= j < dst rank`.
    pub edge_points: Vec<Vec<usize>>,
    /// Whether each edge has both ends in the same tile.
    pub edge_internal: Vec<bool>,
    /// `group_cross[g][j]`: some internal, unspilled member of `g` spans `j`.
    pub group_cross: Vec<Vec<bool>>,
}

pub fn edge_crossings(sol: &TilingSolution, g: &DataFlowGraph) -> Crossings {
    let n = g.node_count();
    let ranks = sol.ranks();
    let tiles = node_tile_assignment(sol);
    let mut edge_points = Vec::with_capacity(g.edge_count());
    let mut edge_internal = Vec::with_capacity(g.edge_count());
    let mut group_cross = vec![vec![false; n]; g.groups().len()];
    for (i, e) in g.edges().iter().enumerate() {
        let points: Vec<usize> = (ranks[e.src]..ranks[e.dst]).collect();
        let internal = tiles[e.src] == tiles[e.dst];
        if internal && !sol.edge_spill[i] {
            for &j in &points {
                group_cross[e.group][j] = true;
            }
        }
        edge_points.push(points);
        edge_internal.push(internal);
    }
    Crossings {
        edge_points,
        edge_internal,
        group_cross,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PressureProfile {
    /// Pressure at each point, indexed by rank.
    pub points: Vec<u64>,
    pub max_pressure: u64,
    pub reserve: u64,
    /// Width of the tile owning each point.
    pub point_width: Vec<u32>,
    /// `comp` of the node right before each point.
    pub point_comp: Vec<u32>,
}

pub fn pressure(sol: &TilingSolution, inst: &ProblemInstance) -> PressureProfile {
    let g = &inst.graph;
    let n = g.node_count();
    let reserve: u64 = g
        .nodes()
        .iter()
        .zip(&sol.state_spill)
        .filter(|(_, &spilled)| !spilled)
        .map(|(node, _)| u64::from(node.state))
        .sum();
    let cross = edge_crossings(sol, g);
    let tile_of_rank = sol.tile_of_rank();
    let point_width: Vec<u32> = tile_of_rank.iter().map(|&t| sol.tile_widths[t]).collect();
    let point_comp: Vec<u32> = sol.order.iter().map(|&v| g.nodes()[v].comp).collect();
    let points: Vec<u64> = (0..n)
        .map(|j| {
            let groups: u64 = g
                .groups()
                .iter()
                .zip(&cross.group_cross)
                .filter(|(_, c)| c[j])
                .map(|(grp, _)| u64::from(grp.reg))
                .sum();
            u64::from(point_comp[j]) + reserve + groups * u64::from(point_width[j])
        })
        .collect();
    PressureProfile {
        max_pressure: points.iter().copied().max().unwrap_or(0),
        points,
        reserve,
        point_width,
        point_comp,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NotTopological { edge: String },
    UnspilledCrossingEdge { edge: String },
    WidthOutOfRange { tile: usize, width: u32, max_width: u32 },
    Pressure { point: usize, pressure: u64, limit: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotTopological { edge } => write!(f, "edge {edge} runs against the order"),
            Violation::UnspilledCrossingEdge { edge } => {
                write!(f, "edge {edge} crosses a tile border but is not spilled")
            }
            Violation::WidthOutOfRange { tile, width, max_width } => {
                write!(f, "tile {tile} has width {width} > {max_width}")
            }
            Violation::Pressure { point, pressure, limit } => {
                write!(f, "pressure {pressure} at point {point} exceeds {limit}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub violation: Option<Violation>,
}

/// Checks order, border spills, widths, then pressure point by point; reports
/// the first violation found.
pub fn feasible(sol: &TilingSolution, inst: &ProblemInstance) -> Feasibility {
    let violation = first_violation(sol, inst);
    Feasibility {
        feasible: violation.is_none(),
        violation,
    }
}

fn first_violation(sol: &TilingSolution, inst: &ProblemInstance) -> Option<Violation> {
    let g = &inst.graph;
    let ranks = sol.ranks();
    if let Some(e) = g.edges().iter().find(|e| ranks[e.src] >= ranks[e.dst]) {
        return Some(Violation::NotTopological { edge: e.id.clone() });
    }
    let tiles = node_tile_assignment(sol);
    if let Some((_, e)) = g
        .edges()
        .iter()
        .enumerate()
        .find(|&(i, e)| tiles[e.src] != tiles[e.dst] && !sol.edge_spill[i])
    {
        return Some(Violation::UnspilledCrossingEdge { edge: e.id.clone() });
    }
    if let Some((tile, &width)) = sol.tile_widths.iter().enumerate().find(|&(_, &w)| w > inst.max_width) {
        return Some(Violation::WidthOutOfRange {
            tile,
            width,
            max_width: inst.max_width,
        });
    }
    let profile = pressure(sol, inst);
    profile
        .points
        .iter()
        .position(|&p| p > u64::from(inst.limit))
        .map(|point| Violation::Pressure {
            point,
            pressure: profile.points[point],
            limit: inst.limit,
        })
}

fn ratio_as_string<S: Serializer>(r: &Ratio<u64>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

fn ratios_as_strings<S: Serializer>(rs: &[Ratio<u64>], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(rs.iter().map(|r| r.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    /// Loads in the unrolled body.
    pub uspill: u64,
    /// Loads per original iteration, `uspill / unroll`.
    #[serde(serialize_with = "ratio_as_string")]
    pub spill: Ratio<u64>,
    /// Loads caused by spilled edges.
    pub stream_cost: u64,
    /// Loads caused by spilled states.
    pub state_cost: u64,
    /// Per-node state charge per iteration computed from the carried values
    /// before distance rescaling: `Σ min(distance, width) × reg / width` for
    /// spilled states. Diagnostic only.
    #[serde(serialize_with = "ratios_as_strings")]
    pub carried_state_cost: Vec<Ratio<u64>>,
}

impl CostReport {
    pub fn spill_f64(&self) -> f64 {
        *self.spill.numer() as f64 / *self.spill.denom() as f64
    }
}

pub fn cost(sol: &TilingSolution, inst: &ProblemInstance) -> CostReport {
    let g = &inst.graph;
    let unroll = u64::from(inst.unroll);
    let stream_cost: u64 = g
        .edges()
        .iter()
        .zip(&sol.edge_spill)
        .filter(|(_, &s)| s)
        .map(|(e, _)| u64::from(e.reg) * unroll)
        .sum();
    let tiles = node_tile_assignment(sol);
    let mut state_cost = 0;
    let mut carried_state_cost = Vec::with_capacity(g.node_count());
    for (i, node) in g.nodes().iter().enumerate() {
        if !sol.state_spill[i] {
            carried_state_cost.push(Ratio::from_integer(0));
            continue;
        }
        let width = u64::from(sol.tile_widths[tiles[i]]);
        state_cost += unroll.div_ceil(width) * u64::from(node.state);
        let per_iter = node
            .carried
            .iter()
            .map(|c| Ratio::new(u64::from(c.distance).min(width) * u64::from(c.reg), width))
            .fold(Ratio::from_integer(0), |a, b| a + b);
        carried_state_cost.push(per_iter);
    }
    let uspill = stream_cost + state_cost;
    CostReport {
        uspill,
        spill: Ratio::new(uspill, unroll),
        stream_cost,
        state_cost,
        carried_state_cost,
    }
}

/// Solution document: nodes and edges referenced by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionDoc {
    pub order: Vec<String>,
    pub tile_points: Vec<i64>,
    pub tile_widths: Vec<u32>,
    pub spill_edges: Vec<String>,
    pub spill_states: Vec<String>,
}

impl SolutionDoc {
    pub fn parse(text: &str) -> Result<Self, SolutionError> {
        serde_json::from_str(text).map_err(|e| SolutionError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn from_solution(sol: &TilingSolution, g: &DataFlowGraph) -> Self {
        Self {
            order: sol.order.iter().map(|&v| g.nodes()[v].id.clone()).collect(),
            tile_points: sol.tile_points.clone(),
            tile_widths: sol.tile_widths.clone(),
            spill_edges: g
                .edges()
                .iter()
                .zip(&sol.edge_spill)
                .filter(|(_, &s)| s)
                .map(|(e, _)| e.id.clone())
                .collect(),
            spill_states: g
                .nodes()
                .iter()
                .zip(&sol.state_spill)
                .filter(|(_, &s)| s)
                .map(|(n, _)| n.id.clone())
                .collect(),
        }
    }

    pub fn to_solution(&self, g: &DataFlowGraph) -> Result<TilingSolution, SolutionError> {
        let node = |id: &String| {
            g.node_index(id).ok_or_else(|| SolutionError::UnknownId {
                kind: "node",
                id: id.clone(),
            })
        };
        let order = self.order.iter().map(node).collect::<Result<Vec<_>, _>>()?;
        let mut edge_spill = vec![false; g.edge_count()];
        for id in &self.spill_edges {
            let e = g.edge_index(id).ok_or_else(|| SolutionError::UnknownId {
                kind: "edge",
                id: id.clone(),
            })?;
            edge_spill[e] = true;
        }
        let mut state_spill = vec![false; g.node_count()];
        for id in &self.spill_states {
            state_spill[node(id)?] = true;
        }
        let sol = TilingSolution {
            order,
            tile_points: self.tile_points.clone(),
            tile_widths: self.tile_widths.clone(),
            edge_spill,
            state_spill,
        };
        sol.check_structure(g)?;
        Ok(sol)
    }
}
