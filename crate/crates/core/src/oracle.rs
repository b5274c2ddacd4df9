//! Exhaustive reference optimizer for small instances.
//!
//! Enumerates topological orders, tile compositions, width vectors and spill
//! subsets, scoring every candidate with [`crate::model`] only.

use num_rational::Ratio;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dfg::{DataFlowGraph, ProblemInstance};
use crate::model::{self, CostReport, SolutionDoc, TilingSolution};

/// Hard ceiling on instance size; enumeration is exponential.
pub const ORACLE_MAX_NODES: usize = 7;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("instance has {nodes} nodes; the oracle supports at most {max}")]
    TooLarge { nodes: usize, max: usize },
    #[error("no feasible tiling: register limit {limit} is below the largest node demand {max_comp}")]
    NoFeasibleSolution { limit: u32, max_comp: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleCaps {
    pub max_nodes: usize,
}

impl Default for OracleCaps {
    fn default() -> Self {
        Self {
            max_nodes: ORACLE_MAX_NODES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OracleResult {
    #[serde(skip)]
    pub witness: TilingSolution,
    pub cost: CostReport,
    /// Candidates scored with the cost model.
    pub examined: u64,
}

impl OracleResult {
    pub fn spill(&self) -> Ratio<u64> {
        self.cost.spill
    }

    pub fn to_json(&self, inst: &ProblemInstance) -> serde_json::Value {
        serde_json::json!({
            "spill": self.cost.spill.to_string(),
            "witness": SolutionDoc::from_solution(&self.witness, &inst.graph),
            "cost": self.cost,
            "examined": self.examined,
        })
    }
}

struct Candidate {
    solution: TilingSolution,
    cost: CostReport,
    key: String,
}

fn sort_key(sol: &TilingSolution, g: &DataFlowGraph) -> String {
    serde_json::to_string(&SolutionDoc::from_solution(sol, g)).expect("solution serializes")
}

/// Keeps the cheaper candidate, then the smaller serialized form.
fn better(a: Option<Candidate>, b: Option<Candidate>) -> Option<Candidate> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => {
            if (a.cost.uspill, &a.key) <= (b.cost.uspill, &b.key) {
                Some(a)
            } else {
                Some(b)
            }
        }
    }
}

pub fn brute_force(inst: &ProblemInstance, caps: OracleCaps) -> Result<OracleResult, OracleError> {
    let g = &inst.graph;
    let n = g.node_count();
    let max = caps.max_nodes.min(ORACLE_MAX_NODES);
    if n > max {
        return Err(OracleError::TooLarge { nodes: n, max });
    }
    if !inst.has_feasible_tiling() {
        return Err(OracleError::NoFeasibleSolution {
            limit: inst.limit,
            max_comp: g.max_comp(),
        });
    }

    let orders = topological_orders(g);
    let compositions = compositions(n);
    let per_order: Vec<(Option<Candidate>, u64)> = orders
        .par_iter()
        .map(|order| {
            let mut best = None;
            let mut examined = 0;
            for tp in &compositions {
                search_tiling(inst, order, tp, &mut best, &mut examined);
            }
            (best, examined)
        })
        .collect();

    let examined = per_order.iter().map(|(_, k)| k).sum();
    let best = per_order
        .into_iter()
        .map(|(c, _)| c)
        .fold(None, better)
        .expect("every topological order admits the all-spill candidate");
    Ok(OracleResult {
        witness: best.solution,
        cost: best.cost,
        examined,
    })
}

fn search_tiling(
    inst: &ProblemInstance,
    order: &[usize],
    tile_points: &[i64],
    best: &mut Option<Candidate>,
    examined: &mut u64,
) {
    let g = &inst.graph;
    let n = order.len();
    let shape = TilingSolution {
        order: order.to_vec(),
        tile_points: tile_points.to_vec(),
        tile_widths: vec![1; n],
        edge_spill: vec![false; g.edge_count()],
        state_spill: vec![false; n],
    };
    let tiles = model::node_tile_assignment(&shape);
    let nonempty: Vec<usize> = (0..n).filter(|&t| !shape.is_tile_empty(t)).collect();

    // crossing edges are forced; internal edges with registers and nonzero
    // states are free; everything else stays unspilled
    let mut forced = vec![false; g.edge_count()];
    let mut free = Vec::new();
    for (i, e) in g.edges().iter().enumerate() {
        if tiles[e.src] != tiles[e.dst] {
            forced[i] = true;
        } else if e.reg > 0 {
            free.push(Flag::Edge(i));
        }
    }
    free.extend(
        g.nodes()
            .iter()
            .enumerate()
            .filter(|(_, v)| v.state > 0)
            .map(|(i, _)| Flag::State(i)),
    );
    let masks = masks_by_popcount(free.len());

    let mut widths = vec![1u32; nonempty.len()];
    loop {
        let mut sol = shape.clone();
        for (&t, &w) in nonempty.iter().zip(&widths) {
            sol.tile_widths[t] = w;
        }
        let mut feasible_masks: Vec<u32> = Vec::new();
        for &mask in &masks {
            if feasible_masks.iter().any(|&f| f & !mask == 0) {
                continue;
            }
            sol.edge_spill.clone_from(&forced);
            sol.state_spill.fill(false);
            for (bit, flag) in free.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    match *flag {
                        Flag::Edge(i) => sol.edge_spill[i] = true,
                        Flag::State(i) => sol.state_spill[i] = true,
                    }
                }
            }
            *examined += 1;
            let cost = model::cost(&sol, inst);
            if best.as_ref().is_some_and(|b| cost.uspill > b.cost.uspill) {
                continue;
            }
            if !model::feasible(&sol, inst).feasible {
                continue;
            }
            feasible_masks.push(mask);
            let key = sort_key(&sol, g);
            *best = better(
                best.take(),
                Some(Candidate {
                    solution: sol.clone(),
                    cost,
                    key,
                }),
            );
        }
        if !next_widths(&mut widths, inst.max_width) {
            break;
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Flag {
    Edge(usize),
    State(usize),
}

/// Odometer over `[1, max]^k`; false once every vector was produced.
fn next_widths(widths: &mut [u32], max: u32) -> bool {
    for w in widths.iter_mut() {
        if *w < max {
            *w += 1;
            return true;
        }
        *w = 1;
    }
    false
}

fn masks_by_popcount(bits: usize) -> Vec<u32> {
    let mut masks: Vec<u32> = (0..1u32 << bits).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    masks
}

/// Every topological order of `g`, in lexicographic order.
pub fn topological_orders(g: &DataFlowGraph) -> Vec<Vec<usize>> {
    let n = g.node_count();
    let mut indegree = vec![0usize; n];
    for e in g.edges() {
        indegree[e.dst] += 1;
    }
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    extend_orders(g, &mut indegree, &mut placed, &mut prefix, &mut out);
    out
}

fn extend_orders(
    g: &DataFlowGraph,
    indegree: &mut [usize],
    placed: &mut [bool],
    prefix: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if prefix.len() == indegree.len() {
        out.push(prefix.clone());
        return;
    }
    for v in 0..indegree.len() {
        if placed[v] || indegree[v] > 0 {
            continue;
        }
        placed[v] = true;
        prefix.push(v);
        for e in g.edges().iter().filter(|e| e.src == v) {
            indegree[e.dst] -= 1;
        }
        extend_orders(g, indegree, placed, prefix, out);
        for e in g.edges().iter().filter(|e| e.src == v) {
            indegree[e.dst] += 1;
        }
        prefix.pop();
        placed[v] = false;
    }
}

/// Tile point vectors for every composition of `n` ranks into non-empty
/// tiles, padded with trailing empty tiles.
pub fn compositions(n: usize) -> Vec<Vec<i64>> {
    if n == 0 {
        return vec![vec![]];
    }
    // each of the n-1 gaps between ranks either is a border or not
    (0..1u32 << (n - 1))
        .map(|cuts| {
            let mut points: Vec<i64> = (0..n - 1).filter(|&r| cuts & (1 << r) != 0).map(|r| r as i64).collect();
            points.resize(n, n as i64 - 1);
            points
        })
        .collect()
}
