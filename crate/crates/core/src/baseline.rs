//! Load counts of the untransformed loop: the naive cost and register
//! pipelining in the original statement order without unrolling.

use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::dfg::{DataFlowGraph, Node};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BaselineError {
    #[error("savings need at least one variable")]
    NoVariables,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BaselineReport {
    pub naive_loads: u64,
    pub pipelined_loads: u64,
    /// Ids of nodes whose state stays in registers.
    pub promoted: Vec<String>,
    pub budget: u64,
    pub budget_used: u64,
}

/// Every inter-iteration value is reloaded each iteration.
pub fn naive_cost(g: &DataFlowGraph) -> u64 {
    g.total_state()
}

/// Loads saved per iteration by keeping the node's state in registers.
fn saving(node: &Node) -> u64 {
    if node.carried.is_empty() {
        node.state.into()
    } else {
        node.reload_words().into()
    }
}

/// Greedily promotes states by saving per register, ties by node id. A state
/// that does not fit is skipped and smaller ones are still considered.
pub fn register_pipelining(g: &DataFlowGraph, budget: u64) -> BaselineReport {
    let mut candidates: Vec<&Node> = g.nodes().iter().filter(|v| v.state > 0).collect();
    // higher saving/state first: compare a/b > c/d as a*d > c*b
    candidates.sort_by(|a, b| {
        let lhs = saving(a) * u64::from(b.state);
        let rhs = saving(b) * u64::from(a.state);
        rhs.cmp(&lhs).then_with(|| a.id.cmp(&b.id))
    });
    let naive = naive_cost(g);
    let mut used = 0;
    let mut saved = 0;
    let mut promoted = Vec::new();
    for v in candidates {
        let size = u64::from(v.state);
        if used + size <= budget {
            used += size;
            saved += saving(v);
            promoted.push(v.id.clone());
        }
    }
    BaselineReport {
        naive_loads: naive,
        pipelined_loads: naive - saved.min(naive),
        promoted,
        budget,
        budget_used: used,
    }
}

/// `100 * (min(base, cp) - base) / vars`; zero or negative, lower is better.
pub fn savings_percent(vars: u64, load_base: u64, load_cp: u64) -> Result<Ratio<i64>, BaselineError> {
    if vars == 0 {
        return Err(BaselineError::NoVariables);
    }
    let load = load_base.min(load_cp) as i64;
    Ok(Ratio::new(100 * (load - load_base as i64), vars as i64))
}
