use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::{CarriedValue, DataFlowGraph, DfgError, EdgeSpec, Node, RawDependenceGraph, RawEdge, RawNode};

/// Strongly connected components of a graph on `n` vertices. Each component
/// is sorted, and components are ordered by their smallest member.
pub fn scc_components(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut g = DiGraph::<(), ()>::with_capacity(n, 0);
    let ids: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for (s, d) in edges {
        g.add_edge(ids[s], ids[d], ());
    }
    let mut comps: Vec<Vec<usize>> = tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut c: Vec<usize> = c.into_iter().map(|ix| ix.index()).collect();
            c.sort_unstable();
            c
        })
        .collect();
    comps.sort_unstable_by_key(|c| c[0]);
    comps
}

/// Fuses every strongly connected component (over distance-0 edges) into a
/// single macro-instruction.
///
/// The fused node's `comp` is the sum of its members' `comp` plus the
/// registers of the distance-0 edges it absorbs. Loop-carried edges between
/// members become self-edges of the fused node. Edges between different
/// components are kept, endpoints remapped; parallel edges stay distinct.
pub fn condense_sccs(g: &RawDependenceGraph) -> RawDependenceGraph {
    let n = g.nodes().len();
    let vertical = g
        .edges()
        .iter()
        .filter(|e| e.distance == 0 && !e.is_self_edge())
        .map(|e| (g.node_index(&e.src).unwrap(), g.node_index(&e.dst).unwrap()));
    let comps = scc_components(n, vertical);

    let mut comp_of = vec![0usize; n];
    for (c, members) in comps.iter().enumerate() {
        for &m in members {
            comp_of[m] = c;
        }
    }

    let mut nodes: Vec<RawNode> = comps
        .iter()
        .map(|members| RawNode {
            id: members
                .iter()
                .map(|&m| g.nodes()[m].id.as_str())
                .collect::<Vec<_>>()
                .join("+"),
            comp: members.iter().map(|&m| g.nodes()[m].comp).sum(),
        })
        .collect();

    let mut edges = Vec::with_capacity(g.edges().len());
    for e in g.edges() {
        let cs = comp_of[g.node_index(&e.src).unwrap()];
        let cd = comp_of[g.node_index(&e.dst).unwrap()];
        if cs == cd && e.distance == 0 {
            nodes[cs].comp += e.reg;
            continue;
        }
        edges.push(RawEdge {
            src: nodes[cs].id.clone(),
            dst: nodes[cd].id.clone(),
            ..e.clone()
        });
    }
    RawDependenceGraph::new(nodes, edges).expect("condensation preserves validity")
}

/// Splits every loop-carried edge between distinct nodes into a self-edge on
/// its source (same registers and distance) followed by a distance-0 edge to
/// its destination that keeps the edge's id and variable.
pub fn decompose_diagonal(g: &RawDependenceGraph) -> RawDependenceGraph {
    let mut edges = Vec::with_capacity(g.edges().len());
    for e in g.edges() {
        if e.is_self_edge() || e.distance == 0 {
            edges.push(e.clone());
            continue;
        }
        edges.push(RawEdge {
            id: format!("{}.carry", e.id),
            src: e.src.clone(),
            dst: e.src.clone(),
            reg: e.reg,
            distance: e.distance,
            variable: e.variable.clone(),
        });
        edges.push(RawEdge {
            distance: 0,
            ..e.clone()
        });
    }
    RawDependenceGraph::new(g.nodes().to_vec(), edges).expect("decomposition preserves validity")
}

/// Folds self-edges into node states (registers × distance) and builds the
/// normalized graph from the remaining distance-0 edges.
pub fn normalize_states(g: &RawDependenceGraph) -> Result<DataFlowGraph, DfgError> {
    let mut nodes: Vec<Node> = g
        .nodes()
        .iter()
        .map(|n| Node {
            id: n.id.clone(),
            comp: n.comp,
            state: 0,
            carried: Vec::new(),
        })
        .collect();
    let mut specs = Vec::new();
    for e in g.edges() {
        let src = g.node_index(&e.src).unwrap();
        if e.is_self_edge() {
            if e.distance == 0 {
                return Err(DfgError::ZeroDistanceSelfEdge {
                    edge: e.id.clone(),
                    node: e.src.clone(),
                });
            }
            let node = &mut nodes[src];
            node.state += e.reg * e.distance;
            node.carried.push(CarriedValue {
                variable: e.variable.clone().unwrap_or_else(|| e.id.clone()),
                reg: e.reg,
                distance: e.distance,
            });
        } else if e.distance > 0 {
            return Err(DfgError::NotDecomposed { edge: e.id.clone() });
        } else {
            specs.push(EdgeSpec {
                id: e.id.clone(),
                src,
                dst: g.node_index(&e.dst).unwrap(),
                reg: e.reg,
                variable: e.variable.clone(),
            });
        }
    }
    DataFlowGraph::new(nodes, specs)
}

/// condense → decompose → normalize.
pub(crate) fn normalize_pipeline(g: &RawDependenceGraph) -> Result<DataFlowGraph, DfgError> {
    normalize_states(&decompose_diagonal(&condense_sccs(g)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfg::tests::toy_graph;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn node(id: &str, comp: u32) -> RawNode {
        RawNode { id: id.into(), comp }
    }

    fn edge(id: &str, src: &str, dst: &str, reg: u32, distance: u32) -> RawEdge {
        RawEdge {
            id: id.into(),
            src: src.into(),
            dst: dst.into(),
            reg,
            distance,
            variable: Some(id.into()),
        }
    }

    /// Counts SCCs by mutual reachability in the reflexive transitive closure.
    pub(crate) fn closure_scc_count(n: usize, edges: &[(usize, usize)]) -> usize {
        let mut reach = vec![vec![false; n]; n];
        for (i, row) in reach.iter_mut().enumerate() {
            row[i] = true;
        }
        for &(s, d) in edges {
            reach[s][d] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        let mut seen = vec![false; n];
        let mut count = 0;
        for i in 0..n {
            if seen[i] {
                continue;
            }
            count += 1;
            for j in 0..n {
                if reach[i][j] && reach[j][i] {
                    seen[j] = true;
                }
            }
        }
        count
    }

    fn random_raw(rng: &mut ChaCha8Rng, n: usize) -> RawDependenceGraph {
        let nodes = (0..n).map(|i| node(&format!("N{i}"), rng.gen_range(0..4))).collect();
        let m = rng.gen_range(0..=2 * n);
        let edges = (0..m)
            .map(|k| {
                let s = rng.gen_range(0..n);
                let d = rng.gen_range(0..n);
                let dist = if s == d {
                    rng.gen_range(1..3)
                } else {
                    rng.gen_range(0..2) * rng.gen_range(0..3)
                };
                edge(
                    &format!("e{k}"),
                    &format!("N{s}"),
                    &format!("N{d}"),
                    rng.gen_range(0..3),
                    dist,
                )
            })
            .collect();
        RawDependenceGraph::new(nodes, edges).unwrap()
    }

    fn vertical_pairs(g: &RawDependenceGraph) -> Vec<(usize, usize)> {
        g.edges()
            .iter()
            .filter(|e| e.distance == 0 && !e.is_self_edge())
            .map(|e| (g.node_index(&e.src).unwrap(), g.node_index(&e.dst).unwrap()))
            .collect()
    }

    #[test]
    fn two_cycle_collapses() {
        let g = RawDependenceGraph::new(
            vec![node("A", 1), node("B", 2), node("C", 3)],
            vec![edge("x", "A", "B", 1, 0), edge("y", "B", "A", 2, 0)],
        )
        .unwrap();
        let c = condense_sccs(&g);
        assert_eq!(c.nodes().len(), 2);
        assert_eq!(c.nodes()[0], node("A+B", 1 + 2 + 1 + 2));
        assert_eq!(c.nodes()[1], node("C", 3));
        assert!(c.edges().is_empty());
    }

    #[test]
    fn carried_edge_inside_scc_becomes_self_edge() {
        let g = RawDependenceGraph::new(
            vec![node("A", 1), node("B", 1)],
            vec![
                edge("x", "A", "B", 1, 0),
                edge("y", "B", "A", 1, 0),
                edge("z", "B", "A", 2, 3),
            ],
        )
        .unwrap();
        let c = condense_sccs(&g);
        assert_eq!(c.edges(), &[edge("z", "A+B", "A+B", 2, 3)]);
        let dfg = normalize_states(&decompose_diagonal(&c)).unwrap();
        assert_eq!(dfg.nodes()[0].state, 6);
    }

    #[test]
    fn back_edge_with_distance_does_not_merge() {
        let g = RawDependenceGraph::new(
            vec![node("A", 1), node("B", 1)],
            vec![edge("x", "A", "B", 1, 0), edge("y", "B", "A", 1, 1)],
        )
        .unwrap();
        assert_eq!(condense_sccs(&g).nodes().len(), 2);
    }

    #[test]
    fn toy_is_already_condensed() {
        let raw = toy_graph().to_raw();
        let c = condense_sccs(&raw);
        assert_eq!(c.nodes().len(), 4);
        assert_eq!(c, raw);
    }

    #[test]
    fn diagonal_edge_splits() {
        let g = RawDependenceGraph::new(vec![node("Sa", 1), node("Sb", 1)], vec![edge("f", "Sa", "Sb", 1, 2)]).unwrap();
        let d = decompose_diagonal(&g);
        assert_eq!(
            d.edges(),
            &[
                RawEdge {
                    id: "f.carry".into(),
                    ..edge("f", "Sa", "Sa", 1, 2)
                },
                edge("f", "Sa", "Sb", 1, 0),
            ]
        );
        assert_eq!(d.carried_volume(), g.carried_volume());
    }

    #[test]
    fn vertical_edges_untouched_by_decomposition() {
        let raw = toy_graph().to_raw();
        assert_eq!(decompose_diagonal(&raw), raw);
    }

    #[test]
    fn states_scale_by_distance() {
        let g = RawDependenceGraph::new(vec![node("A", 1), node("B", 1)], vec![edge("s", "A", "A", 1, 3)]).unwrap();
        let dfg = normalize_states(&g).unwrap();
        assert_eq!(dfg.nodes()[0].state, 3);
        assert_eq!(dfg.nodes()[1].state, 0);
        assert_eq!(dfg.nodes()[0].reload_words(), 1);
    }

    #[test]
    fn toy_states_from_self_edges() {
        let dfg = normalize_states(&toy_graph().to_raw()).unwrap();
        assert_eq!(dfg.nodes()[0].state, 2);
        assert_eq!(dfg.nodes()[1].state, 1);
        assert_eq!(dfg.nodes()[0].state_name(), "X");
    }

    #[test]
    fn undecomposed_diagonal_is_rejected() {
        let g = RawDependenceGraph::new(vec![node("A", 1), node("B", 1)], vec![edge("f", "A", "B", 1, 1)]).unwrap();
        assert!(matches!(normalize_states(&g), Err(DfgError::NotDecomposed { .. })));
    }

    #[test]
    fn backward_carried_edge_creates_a_cycle() {
        let g = RawDependenceGraph::new(
            vec![node("A", 1), node("B", 1)],
            vec![edge("x", "A", "B", 1, 0), edge("y", "B", "A", 1, 1)],
        )
        .unwrap();
        assert!(matches!(normalize_pipeline(&g), Err(DfgError::Cycle(_))));
    }

    #[test]
    fn pipeline_is_identity_on_normalized_graphs() {
        let g = toy_graph();
        assert_eq!(normalize_pipeline(&g.to_raw()).unwrap(), g);
    }

    #[test]
    fn scc_count_matches_closure_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(1..=10);
            let g = random_raw(&mut rng, n);
            let pairs = vertical_pairs(&g);
            let c = condense_sccs(&g);
            assert_eq!(c.nodes().len(), closure_scc_count(n, &pairs));
            // condensed graph is acyclic over distance-0 edges
            let cp = vertical_pairs(&c);
            assert_eq!(closure_scc_count(c.nodes().len(), &cp), c.nodes().len());
            assert!(cp.iter().all(|(s, d)| s != d));
        }
    }

    proptest! {
        #[test]
        fn decomposition_is_idempotent_and_volume_preserving(seed in any::<u64>(), n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = condense_sccs(&random_raw(&mut rng, n));
            let once = decompose_diagonal(&g);
            prop_assert_eq!(decompose_diagonal(&once), once.clone());
            prop_assert_eq!(once.carried_volume(), g.carried_volume());
        }

        #[test]
        fn total_state_equals_self_edge_volume(seed in any::<u64>(), n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = decompose_diagonal(&condense_sccs(&random_raw(&mut rng, n)));
            if let Ok(dfg) = normalize_states(&d) {
                let self_volume: u64 = d.edges().iter().filter(|e| e.is_self_edge())
                    .map(|e| u64::from(e.reg) * u64::from(e.distance)).sum();
                prop_assert_eq!(dfg.total_state(), self_volume);
            }
        }
    }
}
