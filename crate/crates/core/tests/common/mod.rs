//! Random instances, random solutions and independent reference checks
//! shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::HashSet;
use std::ops::RangeInclusive;

use lrt_core::dfg::{DataFlowGraph, EdgeSpec, Node, ProblemInstance, RawDependenceGraph, RawEdge, RawNode};
use lrt_core::model::TilingSolution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Envelope {
    pub nodes: RangeInclusive<usize>,
    pub max_edges: usize,
    pub register_slack: RangeInclusive<u32>,
    pub unroll: RangeInclusive<u32>,
    pub max_width: u32,
}

/// Within the solver exactness envelope: at most 5 nodes, 6 edges, width 4
/// and unroll 6.
pub const SMALL: Envelope = Envelope {
    nodes: 1..=5,
    max_edges: 6,
    register_slack: 0..=5,
    unroll: 1..=6,
    max_width: 4,
};

pub fn random_instance(rng: &mut ChaCha8Rng, env: &Envelope) -> ProblemInstance {
    let n = rng.gen_range(env.nodes.clone());
    let nodes: Vec<Node> = (0..n)
        .map(|i| Node {
            id: format!("N{i}"),
            comp: rng.gen_range(1..=3),
            state: if rng.gen_bool(0.6) { rng.gen_range(1..=2) } else { 0 },
            carried: vec![],
        })
        .collect();
    let mut edges: Vec<EdgeSpec> = Vec::new();
    let mut used = HashSet::new();
    let wanted = if n > 1 { rng.gen_range(0..=env.max_edges) } else { 0 };
    for k in 0..wanted {
        let s = rng.gen_range(0..n - 1);
        let d = rng.gen_range(s + 1..n);
        if !used.insert((s, d)) {
            continue;
        }
        // some edges share the value their source defines
        let variable = match rng.gen_range(0..3) {
            0 => None,
            1 => Some(format!("v{s}")),
            _ => Some(format!("w{k}")),
        };
        let mut reg = rng.gen_range(0..=2);
        if let Some(prev) = edges
            .iter()
            .find(|e| e.src == s && e.variable.is_some() && e.variable == variable)
        {
            reg = prev.reg;
        }
        edges.push(EdgeSpec {
            id: format!("e{k}"),
            src: s,
            dst: d,
            reg,
            variable,
        });
    }
    let g = DataFlowGraph::new(nodes, edges).expect("valid random graph");
    let unroll = rng.gen_range(env.unroll.clone());
    let max_width = rng.gen_range(1..=unroll.min(env.max_width));
    let limit = g.max_comp() + rng.gen_range(env.register_slack.clone());
    ProblemInstance::new("random", g, limit, unroll, Some(max_width)).unwrap()
}

/// Random topological order, random borders, random widths and random spill
/// flags, with crossing edges spilled. Not necessarily within the limit.
pub fn random_solution(rng: &mut ChaCha8Rng, inst: &ProblemInstance) -> TilingSolution {
    let g = &inst.graph;
    let n = g.node_count();
    let mut indegree = vec![0; n];
    for e in g.edges() {
        indegree[e.dst] += 1;
    }
    let mut order = Vec::with_capacity(n);
    let mut ready: Vec<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
    while !ready.is_empty() {
        let k = rng.gen_range(0..ready.len());
        let v = ready.swap_remove(k);
        order.push(v);
        for e in g.edges().iter().filter(|e| e.src == v) {
            indegree[e.dst] -= 1;
            if indegree[e.dst] == 0 {
                ready.push(e.dst);
            }
        }
    }
    let mut tile_points: Vec<i64> = (0..n.saturating_sub(1))
        .filter(|_| rng.gen_bool(0.4))
        .map(|r| r as i64)
        .collect();
    tile_points.resize(n, n as i64 - 1);
    let mut sol = TilingSolution {
        order,
        tile_points,
        tile_widths: (0..n).map(|_| rng.gen_range(1..=inst.max_width)).collect(),
        edge_spill: (0..g.edge_count()).map(|_| rng.gen_bool(0.3)).collect(),
        state_spill: (0..n).map(|_| rng.gen_bool(0.5)).collect(),
    };
    sol.canonicalize();
    let ranks = sol.ranks();
    let tile = sol.tile_of_rank();
    for (i, e) in g.edges().iter().enumerate() {
        if tile[ranks[e.src]] != tile[ranks[e.dst]] {
            sol.edge_spill[i] = true;
        }
    }
    sol
}

/// Raw graph with random intra-iteration and carried edges; cycles allowed.
pub fn random_raw_graph(
    rng: &mut ChaCha8Rng,
    max_nodes: usize,
) -> (usize, Vec<(usize, usize, u32)>, RawDependenceGraph) {
    let n = rng.gen_range(1..=max_nodes);
    let m = rng.gen_range(0..=2 * n);
    let mut spec = Vec::new();
    for _ in 0..m {
        let s = rng.gen_range(0..n);
        let d = rng.gen_range(0..n);
        let dist = if s == d {
            rng.gen_range(1..=2)
        } else {
            *[0, 0, 0, 1].choose(rng).unwrap()
        };
        spec.push((s, d, dist));
    }
    let nodes = (0..n)
        .map(|i| RawNode {
            id: format!("N{i}"),
            comp: 1,
        })
        .collect();
    let edges = spec
        .iter()
        .enumerate()
        .map(|(k, &(s, d, dist))| RawEdge {
            id: format!("e{k}"),
            src: format!("N{s}"),
            dst: format!("N{d}"),
            reg: 1,
            distance: dist,
            variable: None,
        })
        .collect();
    (n, spec.clone(), RawDependenceGraph::new(nodes, edges).unwrap())
}

/// Number of mutual-reachability classes over distance-0 edges, from the
/// transitive closure.
pub fn closure_scc_count(n: usize, edges: &[(usize, usize, u32)]) -> usize {
    let mut reach = vec![vec![false; n]; n];
    for (v, row) in reach.iter_mut().enumerate() {
        row[v] = true;
    }
    for &(s, d, dist) in edges {
        if dist == 0 {
            reach[s][d] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                let via = reach[k].clone();
                for (to, &r) in reach[i].iter_mut().zip(&via) {
                    *to |= r;
                }
            }
        }
    }
    let mut seen = vec![false; n];
    let mut count = 0;
    for i in 0..n {
        if !seen[i] {
            count += 1;
            for j in 0..n {
                if reach[i][j] && reach[j][i] {
                    seen[j] = true;
                }
            }
        }
    }
    count
}
