//! Depth-first branch-and-bound over the tiling control variables.
//!
//! Variables are ranks, tile points, tile widths, edge spill flags and state
//! spill flags. Each search node propagates, checks the admissible cost bound
//! against the incumbent and branches two ways (`var = v` / `var != v`) on the
//! most-constrained undecided variable.

mod domains;

use std::time::{Duration, Instant};

use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dfg::ProblemInstance;
use crate::model::{self, CostReport, SolutionDoc, TilingSolution};

use domains::ModelData;
pub use domains::{break_symmetry, Contradiction, Domains, Interval, Var};

/// Largest instance the bitset rank domains can represent.
pub const MAX_SOLVER_NODES: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SolveError {
    #[error("instance has {nodes} nodes; the solver supports at most {max}")]
    TooLarge { nodes: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchConfig {
    pub seed: u64,
    pub time_budget: Option<Duration>,
    /// Maximum number of search nodes; 0 means unlimited.
    pub node_budget: u64,
    pub symmetry_breaking: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            time_budget: None,
            node_budget: 0,
            symmetry_breaking: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    FeasibleUnproven,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SearchStats {
    pub explored: u64,
    pub backtracks: u64,
    pub solutions: u64,
    /// Loads per unrolled body of every incumbent, in discovery order.
    pub incumbents: Vec<u64>,
    #[serde(rename = "wall_ms")]
    #[serde(serialize_with = "as_millis")]
    pub wall_time: Duration,
}

fn as_millis<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(d.as_millis() as u64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Best {
    pub solution: TilingSolution,
    pub cost: CostReport,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// `None` only when the instance is infeasible.
    pub best: Option<Best>,
    pub stats: SearchStats,
}

impl SolveOutcome {
    pub fn to_json(&self, inst: &ProblemInstance) -> serde_json::Value {
        let best = self.best.as_ref().map(|b| {
            serde_json::json!({
                "solution": SolutionDoc::from_solution(&b.solution, &inst.graph),
                "cost": b.cost,
            })
        });
        serde_json::json!({
            "status": self.status,
            "best": best,
            "stats": self.stats,
        })
    }
}

/// Finds a minimum-spill tiling of `inst`.
pub fn solve(inst: &ProblemInstance, cfg: &SearchConfig) -> Result<SolveOutcome, SolveError> {
    let n = inst.node_count();
    if n > MAX_SOLVER_NODES {
        return Err(SolveError::TooLarge {
            nodes: n,
            max: MAX_SOLVER_NODES,
        });
    }
    let started = Instant::now();
    let mut stats = SearchStats {
        explored: 0,
        backtracks: 0,
        solutions: 0,
        incumbents: vec![],
        wall_time: Duration::ZERO,
    };
    if !inst.has_feasible_tiling() {
        stats.wall_time = started.elapsed();
        return Ok(SolveOutcome {
            status: SolveStatus::Infeasible,
            best: None,
            stats,
        });
    }

    let fallback = TilingSolution::fallback(&inst.graph);
    let fallback_cost = model::cost(&fallback, inst);
    stats.incumbents.push(fallback_cost.uspill);
    let mut search = Search {
        inst,
        data: ModelData::new(inst, cfg.symmetry_breaking),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        deadline: cfg.time_budget.map(|b| started + b),
        node_budget: cfg.node_budget,
        best: Best {
            solution: fallback,
            cost: fallback_cost,
        },
        stats,
        stopped: false,
    };
    search.run();

    let mut stats = search.stats;
    stats.wall_time = started.elapsed();
    Ok(SolveOutcome {
        status: if search.stopped {
            SolveStatus::FeasibleUnproven
        } else {
            SolveStatus::Optimal
        },
        best: Some(search.best),
        stats,
    })
}

/// Runs propagation on `domains` for `inst`; exposed for testing and tooling.
pub fn propagate(inst: &ProblemInstance, domains: &mut Domains, symmetry_breaking: bool) -> Result<(), Contradiction> {
    ModelData::new(inst, symmetry_breaking).propagate(domains)
}

/// Root domains of `inst` before any propagation.
pub fn initial_domains(inst: &ProblemInstance) -> Domains {
    ModelData::new(inst, false).initial_domains()
}

struct Search<'a> {
    inst: &'a ProblemInstance,
    data: ModelData,
    rng: ChaCha8Rng,
    deadline: Option<Instant>,
    node_budget: u64,
    best: Best,
    stats: SearchStats,
    stopped: bool,
}

impl Search<'_> {
    fn run(&mut self) {
        let mut stack = vec![self.data.initial_domains()];
        while let Some(mut d) = stack.pop() {
            if self.out_of_budget() {
                self.stopped = true;
                return;
            }
            self.stats.explored += 1;
            if self.data.propagate(&mut d).is_err() {
                self.stats.backtracks += 1;
                continue;
            }
            if self.data.cost_lower_bound(&d) >= self.best.cost.uspill as i64 {
                self.stats.backtracks += 1;
                continue;
            }
            match self.select(&d) {
                None => self.leaf(&d),
                Some(Var::Width(t)) => {
                    // Widths with equal ceil(unroll / width) reload states
                    // equally often and the narrowest of them has the lowest
                    // pressure, so (w, hi] is skipped.
                    let w = self.narrowest_equivalent_width(d.width[t]);
                    let mut left = d.clone();
                    left.assign(Var::Width(t), w);
                    d.width[t].hi = w - 1;
                    stack.push(d);
                    stack.push(left);
                }
                Some(var) => {
                    let value = self.value(var, &d);
                    let mut left = d.clone();
                    left.assign(var, value);
                    d.remove(var, value);
                    stack.push(d);
                    stack.push(left);
                }
            }
        }
    }

    fn out_of_budget(&self) -> bool {
        (self.node_budget > 0 && self.stats.explored >= self.node_budget)
            || self.deadline.is_some_and(|t| Instant::now() >= t)
    }

    fn leaf(&mut self, d: &Domains) {
        let n = self.data.n;
        let mut order = vec![0; n];
        for (v, &bits) in d.order.iter().enumerate() {
            order[bits.trailing_zeros() as usize] = v;
        }
        let sol = TilingSolution {
            order,
            tile_points: d.tile_point.iter().map(|p| p.lo).collect(),
            tile_widths: d.width.iter().map(|w| w.lo as u32).collect(),
            edge_spill: d.edge_spill.iter().map(|s| s.lo == 1).collect(),
            state_spill: d.state_spill.iter().map(|s| s.lo == 1).collect(),
        };
        if !model::feasible(&sol, self.inst).feasible {
            self.stats.backtracks += 1;
            return;
        }
        self.stats.solutions += 1;
        let cost = model::cost(&sol, self.inst);
        if cost.uspill < self.best.cost.uspill {
            self.stats.incumbents.push(cost.uspill);
            self.best = Best { solution: sol, cost };
        }
    }

    /// Undecided variable taking part in the most constraints that still
    /// have another undecided variable; ties go to the lowest index in the
    /// order ranks, points, widths, edge flags, state flags.
    fn select(&self, d: &Domains) -> Option<Var> {
        let n = self.data.n;
        let edges = &self.data.edges;
        let open_order: Vec<bool> = (0..n).map(|i| !d.is_fixed(Var::Order(i))).collect();
        let open_point: Vec<bool> = (0..n).map(|t| !d.is_fixed(Var::TilePoint(t))).collect();
        let open_width: Vec<bool> = (0..n).map(|t| !d.is_fixed(Var::Width(t))).collect();
        let open_edge: Vec<bool> = (0..edges.len()).map(|e| !d.is_fixed(Var::EdgeSpill(e))).collect();
        let open_state: Vec<bool> = (0..n).map(|i| !d.is_fixed(Var::StateSpill(i))).collect();
        let count = |v: &[bool]| v.iter().filter(|&&b| b).count();
        let (orders, points, widths) = (count(&open_order), count(&open_point), count(&open_width));
        let total = orders + points + widths + count(&open_edge) + count(&open_state);
        if total == 0 {
            return None;
        }

        // score = constraints in which the variable has an undecided peer
        let mut order_deg = vec![0usize; n];
        let mut point_deg = vec![0usize; n];
        let mut width_deg = vec![0usize; n];
        let mut edge_deg = vec![0usize; edges.len()];
        let state_deg = vec![0usize; n];
        // pressure at each point and the cost objective span every variable
        let global = if total >= 2 { n + 1 } else { 0 };
        let bump = |deg: &mut usize, own: bool, open_in_scope: usize, times: usize| {
            if own && open_in_scope >= 2 {
                *deg += times;
            }
        };
        for i in 0..n {
            // alldifferent
            bump(&mut order_deg[i], open_order[i], orders, 1);
            // node-tile: rank with every point and width
            let scope = usize::from(open_order[i]) + points + widths;
            bump(&mut order_deg[i], open_order[i], scope, 1);
            for t in 0..n {
                bump(&mut point_deg[t], open_point[t], scope, 1);
                bump(&mut width_deg[t], open_width[t], scope, 1);
            }
        }
        for (e, &(s, t, _, _)) in edges.iter().enumerate() {
            let pair = usize::from(open_order[s]) + usize::from(open_order[t]);
            bump(&mut order_deg[s], open_order[s], pair, 1);
            bump(&mut order_deg[t], open_order[t], pair, 1);
            // internal/spill: both ranks, every point and the flag
            let scope = pair + points + usize::from(open_edge[e]);
            bump(&mut order_deg[s], open_order[s], scope, 1);
            bump(&mut order_deg[t], open_order[t], scope, 1);
            bump(&mut edge_deg[e], open_edge[e], scope, 1);
            for (deg, &open) in point_deg.iter_mut().zip(&open_point) {
                bump(deg, open, scope, 1);
            }
        }
        for t in 1..n {
            let pair = usize::from(open_point[t - 1]) + usize::from(open_point[t]);
            bump(&mut point_deg[t - 1], open_point[t - 1], pair, 1);
            bump(&mut point_deg[t], open_point[t], pair, 1);
        }
        if self.data.symmetry_breaking {
            for (deg, &open) in point_deg.iter_mut().zip(&open_point) {
                bump(deg, open, points, 1);
            }
        }

        let candidates = (0..n)
            .map(|i| (Var::Order(i), open_order[i], order_deg[i]))
            .chain((0..n).map(|t| (Var::TilePoint(t), open_point[t], point_deg[t])))
            .chain((0..n).map(|t| (Var::Width(t), open_width[t], width_deg[t])))
            .chain((0..edges.len()).map(|e| (Var::EdgeSpill(e), open_edge[e], edge_deg[e])))
            .chain((0..n).map(|i| (Var::StateSpill(i), open_state[i], state_deg[i])));
        let mut best: Option<(Var, usize)> = None;
        for (var, open, deg) in candidates {
            if open && best.is_none_or(|(_, b)| deg + global > b) {
                best = Some((var, deg + global));
            }
        }
        best.map(|(v, _)| v)
    }

    /// Smallest width in `dom` with the same reload count as `dom.hi`.
    fn narrowest_equivalent_width(&self, dom: Interval) -> i64 {
        let u = self.data.unroll;
        let reloads = (u + dom.hi - 1) / dom.hi;
        ((u + reloads - 1) / reloads).clamp(dom.lo, dom.hi)
    }

    fn value(&mut self, var: Var, d: &Domains) -> i64 {
        match var {
            Var::Order(i) => {
                let bits = d.order[i];
                let r = (0..64u32)
                    .filter(|&r| bits & (1u64 << r) != 0)
                    .choose(&mut self.rng)
                    .expect("open domain");
                i64::from(r)
            }
            Var::TilePoint(t) => d.tile_point[t].hi,
            Var::Width(t) => d.width[t].hi,
            Var::EdgeSpill(e) => d.edge_spill[e].lo,
            Var::StateSpill(i) => d.state_spill[i].lo,
        }
    }
}
