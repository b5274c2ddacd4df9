//! Corpus statistics: SCC counts, original-schedule register pressure and
//! instance classification, plus a seeded synthetic instance generator.

use std::io::Write;
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dfg::{
    self, DataFlowGraph, EdgeDoc, InstanceDoc, NodeDoc, ProblemInstance, RawDependenceGraph, SelfEdgeDoc,
};
use crate::model::{self, TilingSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InstanceStats {
    pub scc_count: usize,
    pub max_pressure: u64,
    pub interesting: bool,
}

/// Strongly connected components over intra-iteration edges.
pub fn scc_count(g: &RawDependenceGraph) -> usize {
    let edges = g
        .edges()
        .iter()
        .filter(|e| e.distance == 0)
        .map(|e| (g.node_index(&e.src).unwrap(), g.node_index(&e.dst).unwrap()));
    dfg::scc_components(g.nodes().len(), edges).len()
}

/// Pressure of the declaration-order schedule with one width-1 tile and
/// nothing spilled.
pub fn original_pressure(g: &DataFlowGraph) -> u64 {
    let n = g.node_count();
    if n == 0 {
        return 0;
    }
    let sol = TilingSolution {
        order: (0..n).collect(),
        tile_points: vec![n as i64 - 1; n],
        tile_widths: vec![1; n],
        edge_spill: vec![false; g.edge_count()],
        state_spill: vec![false; n],
    };
    // pressure never looks at limit or unroll
    let inst = ProblemInstance::new("original", g.clone(), 0, 1, None).expect("unroll 1 is valid");
    model::pressure(&sol, &inst).max_pressure
}

pub fn classify(raw: &RawDependenceGraph, inst: &ProblemInstance) -> InstanceStats {
    let max_pressure = original_pressure(&inst.graph);
    InstanceStats {
        scc_count: scc_count(raw),
        max_pressure,
        interesting: max_pressure > u64::from(inst.limit),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub seed: u64,
    pub count: usize,
    pub nodes: RangeInclusive<u32>,
    /// Probability of a forward edge between any ordered node pair.
    pub edge_density: f64,
    /// Probability that a forward intra-iteration edge gets a reverse edge,
    /// fusing its ends into one component.
    pub cycle_probability: f64,
    /// Probability that a forward edge is loop-carried (distance 1 or 2).
    pub diagonal_probability: f64,
    pub state_probability: f64,
    pub comp: RangeInclusive<u32>,
    pub reg: RangeInclusive<u32>,
    pub state: RangeInclusive<u32>,
    pub unroll: RangeInclusive<u32>,
    /// Registers above the largest node demand.
    pub register_slack: RangeInclusive<u32>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 100,
            nodes: 3..=8,
            edge_density: 0.35,
            cycle_probability: 0.1,
            diagonal_probability: 0.15,
            state_probability: 0.5,
            comp: 1..=4,
            reg: 0..=2,
            state: 1..=2,
            unroll: 1..=8,
            register_slack: 0..=6,
        }
    }
}

/// Deterministic corpus of raw instance documents, each of which ingests.
pub fn generate_corpus(cfg: &CorpusConfig) -> Vec<InstanceDoc> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.count)
        .map(|k| {
            let name = format!("gen-{}-{k}", cfg.seed);
            // a loop-carried edge can close a cycle through fused components;
            // retry with fresh draws, then fall back to an intra-iteration DAG
            (0..8)
                .find_map(|_| finish(random_doc(&mut rng, cfg, &name, true), &mut rng, cfg))
                .unwrap_or_else(|| {
                    finish(random_doc(&mut rng, cfg, &name, false), &mut rng, cfg).expect("forward DAG ingests")
                })
        })
        .collect()
}

fn random_doc(rng: &mut ChaCha8Rng, cfg: &CorpusConfig, name: &str, carried: bool) -> InstanceDoc {
    let n = rng.gen_range(cfg.nodes.clone()) as usize;
    let id = |i: usize| format!("S{i}");
    let nodes = (0..n)
        .map(|i| NodeDoc {
            id: id(i),
            comp: i64::from(rng.gen_range(cfg.comp.clone())),
            state: None,
        })
        .collect();
    let mut self_edges = Vec::new();
    for i in 0..n {
        if rng.gen_bool(cfg.state_probability) {
            self_edges.push(SelfEdgeDoc {
                node: id(i),
                reg: i64::from(rng.gen_range(cfg.state.clone())),
                distance: 1,
                variable: format!("v{i}"),
            });
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        // values defined by S{i}, shared by every edge that reads them
        let value_reg = i64::from(rng.gen_range(cfg.reg.clone()));
        for j in i + 1..n {
            if !rng.gen_bool(cfg.edge_density) {
                continue;
            }
            let diagonal = carried && rng.gen_bool(cfg.diagonal_probability);
            let k = edges.len();
            edges.push(EdgeDoc {
                id: format!("e{k}"),
                src: id(i),
                dst: id(j),
                reg: value_reg,
                distance: if diagonal { rng.gen_range(1..=2) } else { 0 },
                variable: Some(format!("t{i}")),
            });
            if !diagonal && rng.gen_bool(cfg.cycle_probability) {
                edges.push(EdgeDoc {
                    id: format!("e{}", k + 1),
                    src: id(j),
                    dst: id(i),
                    reg: 0,
                    distance: 0,
                    variable: None,
                });
            }
        }
    }
    InstanceDoc {
        name: name.into(),
        registers: 0,
        unroll: i64::from(rng.gen_range(cfg.unroll.clone())),
        max_width: None,
        nodes,
        self_edges: Some(self_edges),
        edges,
    }
}

/// Sets the register limit from the normalized graph, or `None` when the
/// document does not ingest.
fn finish(mut doc: InstanceDoc, rng: &mut ChaCha8Rng, cfg: &CorpusConfig) -> Option<InstanceDoc> {
    let loaded = doc.validate().ok()?;
    doc.registers = i64::from(loaded.instance.graph.max_comp() + rng.gen_range(cfg.register_slack.clone()));
    Some(doc)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatsRow {
    pub instance: String,
    pub name: String,
    pub nodes: usize,
    pub scc_count: usize,
    pub max_pressure: u64,
    pub interesting: bool,
}

impl StatsRow {
    pub fn new(instance: impl Into<String>, raw: &RawDependenceGraph, inst: &ProblemInstance) -> Self {
        let s = classify(raw, inst);
        Self {
            instance: instance.into(),
            name: inst.name.clone(),
            nodes: raw.nodes().len(),
            scc_count: s.scc_count,
            max_pressure: s.max_pressure,
            interesting: s.interesting,
        }
    }
}

pub fn write_csv<W: Write>(rows: &[StatsRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfg::tests::toy_graph;
    use crate::dfg::{ingest, Node, RawEdge, RawNode};

    fn raw(n: usize, edges: &[(usize, usize, u32)]) -> RawDependenceGraph {
        let nodes = (0..n)
            .map(|i| RawNode {
                id: format!("N{i}"),
                comp: 1,
            })
            .collect();
        let edges = edges
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
        RawDependenceGraph::new(nodes, edges).unwrap()
    }

    #[test]
    fn scc_count_examples() {
        let toy = ingest(include_str!("../data/toy.json")).unwrap();
        assert_eq!(scc_count(&toy.raw), 4);
        assert_eq!(scc_count(&raw(3, &[(0, 1, 0), (1, 0, 0)])), 2);
        // a carried back edge does not fuse
        assert_eq!(scc_count(&raw(2, &[(0, 1, 0), (1, 0, 1)])), 2);
    }

    #[test]
    fn original_pressure_examples() {
        assert_eq!(original_pressure(&toy_graph()), 10);
        assert_eq!(original_pressure(&DataFlowGraph::empty()), 0);
        let one = Node {
            id: "A".into(),
            comp: 2,
            state: 0,
            carried: vec![],
        };
        assert_eq!(original_pressure(&DataFlowGraph::new(vec![one], vec![]).unwrap()), 2);
    }

    #[test]
    fn classify_toy() {
        let toy = ingest(include_str!("../data/toy.json")).unwrap();
        let at = |limit| {
            let inst = toy.instance.with_overrides(Some(limit), None, None).unwrap();
            classify(&toy.raw, &inst)
        };
        assert!(at(3).interesting);
        assert!(!at(16).interesting);
        assert_eq!(at(3).scc_count, 4);
        let empty = RawDependenceGraph::new(vec![], vec![]).unwrap();
        let inst = ProblemInstance::new("e", DataFlowGraph::empty(), 0, 1, None).unwrap();
        assert!(!classify(&empty, &inst).interesting);
    }

    #[test]
    fn corpus_is_deterministic_and_valid() {
        let cfg = CorpusConfig {
            seed: 1,
            count: 10,
            ..CorpusConfig::default()
        };
        assert_eq!(generate_corpus(&cfg), generate_corpus(&cfg));
        let big = CorpusConfig {
            seed: 3,
            count: 200,
            nodes: 3..=5,
            ..CorpusConfig::default()
        };
        for doc in generate_corpus(&big) {
            let loaded = doc.validate().unwrap();
            assert!((3..=5).contains(&loaded.raw.nodes().len()));
            assert!(loaded.instance.has_feasible_tiling());
        }
    }

    #[test]
    fn corpus_has_fused_components() {
        let cfg = CorpusConfig {
            seed: 9,
            count: 50,
            cycle_probability: 0.5,
            ..CorpusConfig::default()
        };
        let fused = generate_corpus(&cfg)
            .iter()
            .filter(|d| {
                let l = d.validate().unwrap();
                scc_count(&l.raw) < l.raw.nodes().len()
            })
            .count();
        assert!(fused > 0);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let toy = ingest(include_str!("../data/toy.json")).unwrap();
        let rows = vec![StatsRow::new("0", &toy.raw, &toy.instance)];
        let mut out = Vec::new();
        write_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "instance,name,nodes,scc_count,max_pressure,interesting\n0,toy,4,4,10,true\n"
        );
    }
}
