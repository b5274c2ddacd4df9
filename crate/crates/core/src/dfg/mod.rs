//! Loop-body dependence graphs.
//!
//! A loop body enters as a [`RawDependenceGraph`]: statements with an internal
//! register requirement and dependence edges labeled with the number of
//! registers they carry and their iteration distance. The raw graph may be
//! cyclic. It is brought into the normalized [`DataFlowGraph`] form by the
//! fixed pipeline [`condense_sccs`] → [`decompose_diagonal`] →
//! [`normalize_states`]:
//!
//! - every strongly connected component becomes one macro-instruction,
//! - every loop-carried edge between distinct nodes is split into a carried
//!   state on its source plus an intra-iteration ("vertical") edge,
//! - every carried state is rescaled to distance one.
//!
//! The normalized graph is acyclic and has no self-edge records: the carried
//! state of a node is the [`Node::state`] field.

mod ingest;
mod transform;

use std::collections::HashMap;

use petgraph::algo::toposort;
use petgraph::graph::DiGraph;
use thiserror::Error;

pub use ingest::{ingest, EdgeDoc, InstanceDoc, LoadedInstance, NodeDoc, SelfEdgeDoc};
pub use transform::{condense_sccs, decompose_diagonal, normalize_states, scc_components};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DfgError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("field `{field}` must be non-negative, got {value}")]
    Negative { field: String, value: i64 },
    #[error("field `{field}`: {message}")]
    InvalidField { field: String, message: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("edge `{edge}` references undeclared node `{node}`")]
    DanglingNode { edge: String, node: String },
    #[error("self-edge `{edge}` on node `{node}` has iteration distance 0")]
    ZeroDistanceSelfEdge { edge: String, node: String },
    #[error("edge `{edge}` is loop-carried between distinct nodes; decompose it first")]
    NotDecomposed { edge: String },
    #[error("intra-iteration edges form a cycle through {0:?}")]
    Cycle(Vec<String>),
    #[error("edge `{edge}` carries {found} registers but its group `{group}` carries {expected}")]
    GroupRegMismatch {
        group: String,
        edge: String,
        expected: u32,
        found: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawNode {
    pub id: String,
    /// Internal register requirement of the macro-instruction.
    pub comp: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEdge {
    pub id: String,
    pub src: String,
    pub dst: String,
    /// Registers carried; 0 marks an ordering-only dependence.
    pub reg: u32,
    /// Iteration distance.
    pub distance: u32,
    pub variable: Option<String>,
}

impl RawEdge {
    pub fn is_self_edge(&self) -> bool {
        self.src == self.dst
    }
}

/// A possibly cyclic dependence graph as declared by the front end.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawDependenceGraph {
    nodes: Vec<RawNode>,
    edges: Vec<RawEdge>,
    index: HashMap<String, usize>,
}

impl RawDependenceGraph {
    pub fn new(nodes: Vec<RawNode>, edges: Vec<RawEdge>) -> Result<Self, DfgError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(DfgError::DuplicateId(n.id.clone()));
            }
        }
        let mut edge_ids = std::collections::HashSet::with_capacity(edges.len());
        for e in &edges {
            if !edge_ids.insert(e.id.as_str()) {
                return Err(DfgError::DuplicateId(e.id.clone()));
            }
            for end in [&e.src, &e.dst] {
                if !index.contains_key(end) {
                    return Err(DfgError::DanglingNode {
                        edge: e.id.clone(),
                        node: end.clone(),
                    });
                }
            }
            if e.is_self_edge() && e.distance == 0 {
                return Err(DfgError::ZeroDistanceSelfEdge {
                    edge: e.id.clone(),
                    node: e.src.clone(),
                });
            }
        }
        Ok(Self { nodes, edges, index })
    }

    pub fn nodes(&self) -> &[RawNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[RawEdge] {
        &self.edges
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Σ reg × distance over every edge, self-edges included.
    pub fn carried_volume(&self) -> u64 {
        self.edges
            .iter()
            .map(|e| u64::from(e.reg) * u64::from(e.distance))
            .sum()
    }
}

/// One loop-carried value folded into a node's state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CarriedValue {
    pub variable: String,
    pub reg: u32,
    pub distance: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub comp: u32,
    /// Registers needed to carry the node's state to the next iteration,
    /// after rescaling every carried value to distance one.
    pub state: u32,
    /// The carried values that make up `state`, before rescaling.
    pub carried: Vec<CarriedValue>,
}

impl Node {
    /// Name used for the node's state value in emitted code.
    pub fn state_name(&self) -> String {
        match self.carried.as_slice() {
            [] => format!("{}.state", self.id),
            [one] => one.variable.clone(),
            many => many.iter().map(|c| c.variable.as_str()).collect::<Vec<_>>().join("+"),
        }
    }

    /// Words reloaded per iteration when the carried values go through memory
    /// in the original schedule (before distance rescaling).
    pub fn reload_words(&self) -> u32 {
        self.carried.iter().map(|c| c.reg).sum()
    }
}

/// An intra-iteration (distance 0) edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub id: String,
    pub src: usize,
    pub dst: usize,
    pub reg: u32,
    pub group: usize,
    pub variable: Option<String>,
}

/// Edges leaving one node that carry the same variable. The value occupies
/// registers once per group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeGroup {
    pub id: String,
    pub variable: String,
    pub src: usize,
    pub reg: u32,
    pub members: Vec<usize>,
}

/// Normalized acyclic loop-body graph.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DataFlowGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    groups: Vec<EdgeGroup>,
    index: HashMap<String, usize>,
}

/// Input to [`DataFlowGraph::new`]: an edge before group derivation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSpec {
    pub id: String,
    pub src: usize,
    pub dst: usize,
    pub reg: u32,
    pub variable: Option<String>,
}

impl DataFlowGraph {
    /// Builds the graph, deriving edge groups from `(src, variable)` and
    /// rejecting cycles. Ordering-only edges (reg 0) and edges without a
    /// variable get singleton groups.
    pub fn new(nodes: Vec<Node>, edge_specs: Vec<EdgeSpec>) -> Result<Self, DfgError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(DfgError::DuplicateId(n.id.clone()));
            }
        }

        let mut edges = Vec::with_capacity(edge_specs.len());
        let mut groups: Vec<EdgeGroup> = Vec::new();
        let mut group_of: HashMap<(usize, String), usize> = HashMap::new();
        let mut edge_ids = std::collections::HashSet::new();
        for spec in edge_specs {
            if !edge_ids.insert(spec.id.clone()) {
                return Err(DfgError::DuplicateId(spec.id));
            }
            for end in [spec.src, spec.dst] {
                if end >= nodes.len() {
                    return Err(DfgError::DanglingNode {
                        edge: spec.id.clone(),
                        node: format!("#{end}"),
                    });
                }
            }
            if spec.src == spec.dst {
                return Err(DfgError::ZeroDistanceSelfEdge {
                    edge: spec.id.clone(),
                    node: nodes[spec.src].id.clone(),
                });
            }
            let key = match (&spec.variable, spec.reg) {
                (Some(v), r) if r > 0 => v.clone(),
                _ => spec.id.clone(),
            };
            let e_idx = edges.len();
            let g_idx = match group_of.get(&(spec.src, key.clone())) {
                Some(&g) => {
                    let group = &mut groups[g];
                    if group.reg != spec.reg {
                        return Err(DfgError::GroupRegMismatch {
                            group: group.id.clone(),
                            edge: spec.id.clone(),
                            expected: group.reg,
                            found: spec.reg,
                        });
                    }
                    group.members.push(e_idx);
                    g
                }
                None => {
                    let g = groups.len();
                    groups.push(EdgeGroup {
                        id: format!("{}/{}", nodes[spec.src].id, key),
                        variable: spec.variable.clone().unwrap_or_else(|| spec.id.clone()),
                        src: spec.src,
                        reg: spec.reg,
                        members: vec![e_idx],
                    });
                    group_of.insert((spec.src, key), g);
                    g
                }
            };
            edges.push(Edge {
                id: spec.id,
                src: spec.src,
                dst: spec.dst,
                reg: spec.reg,
                group: g_idx,
                variable: spec.variable,
            });
        }

        let graph = Self {
            nodes,
            edges,
            groups,
            index,
        };
        graph.check_acyclic()?;
        Ok(graph)
    }

    fn check_acyclic(&self) -> Result<(), DfgError> {
        let mut g = DiGraph::<(), ()>::with_capacity(self.nodes.len(), self.edges.len());
        let ids: Vec<_> = (0..self.nodes.len()).map(|_| g.add_node(())).collect();
        for e in &self.edges {
            g.add_edge(ids[e.src], ids[e.dst], ());
        }
        if toposort(&g, None).is_err() {
            let comps = scc_components(self.nodes.len(), self.edges.iter().map(|e| (e.src, e.dst)));
            let cyclic = comps
                .into_iter()
                .find(|c| c.len() > 1)
                .map(|c| c.into_iter().map(|i| self.nodes[i].id.clone()).collect())
                .unwrap_or_default();
            return Err(DfgError::Cycle(cyclic));
        }
        Ok(())
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn groups(&self) -> &[EdgeGroup] {
        &self.groups
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn edge_index(&self, id: &str) -> Option<usize> {
        self.edges.iter().position(|e| e.id == id)
    }

    pub fn max_comp(&self) -> u32 {
        self.nodes.iter().map(|n| n.comp).max().unwrap_or(0)
    }

    pub fn total_state(&self) -> u64 {
        self.nodes.iter().map(|n| u64::from(n.state)).sum()
    }

    /// Smallest-index-first topological order (Kahn).
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for e in &self.edges {
            indeg[e.dst] += 1;
        }
        let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for e in self.edges.iter().filter(|e| e.src == i) {
                indeg[e.dst] -= 1;
                if indeg[e.dst] == 0 {
                    ready.insert(e.dst);
                }
            }
        }
        order
    }

    /// Transitive predecessor / successor sets as bitmasks over node indices.
    /// Only meaningful for graphs of at most 64 nodes.
    pub(crate) fn reachability_masks(&self) -> (Vec<u64>, Vec<u64>) {
        let n = self.nodes.len();
        let order = self.topological_order();
        let mut anc = vec![0u64; n];
        let mut desc = vec![0u64; n];
        for &v in &order {
            for e in self.edges.iter().filter(|e| e.dst == v) {
                anc[v] |= anc[e.src] | (1u64 << e.src);
            }
        }
        for &v in order.iter().rev() {
            for e in self.edges.iter().filter(|e| e.src == v) {
                desc[v] |= desc[e.dst] | (1u64 << e.dst);
            }
        }
        (anc, desc)
    }

    /// Converts back to raw form: vertical edges plus one self-edge per
    /// carried value.
    pub fn to_raw(&self) -> RawDependenceGraph {
        let nodes = self
            .nodes
            .iter()
            .map(|n| RawNode {
                id: n.id.clone(),
                comp: n.comp,
            })
            .collect();
        let mut edges = Vec::new();
        for n in &self.nodes {
            for c in &n.carried {
                edges.push(RawEdge {
                    id: format!("{}@{}", c.variable, n.id),
                    src: n.id.clone(),
                    dst: n.id.clone(),
                    reg: c.reg,
                    distance: c.distance,
                    variable: Some(c.variable.clone()),
                });
            }
        }
        for e in &self.edges {
            edges.push(RawEdge {
                id: e.id.clone(),
                src: self.nodes[e.src].id.clone(),
                dst: self.nodes[e.dst].id.clone(),
                reg: e.reg,
                distance: 0,
                variable: e.variable.clone(),
            });
        }
        RawDependenceGraph::new(nodes, edges).expect("normalized graph converts to a valid raw graph")
    }
}

/// A normalized graph together with the machine and unrolling parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemInstance {
    pub name: String,
    pub graph: DataFlowGraph,
    /// Allocatable registers.
    pub limit: u32,
    /// Unrolling factor.
    pub unroll: u32,
    /// Upper bound on tile widths.
    pub max_width: u32,
}

impl ProblemInstance {
    pub fn new(
        name: impl Into<String>,
        graph: DataFlowGraph,
        limit: u32,
        unroll: u32,
        max_width: Option<u32>,
    ) -> Result<Self, DfgError> {
        if unroll == 0 {
            return Err(DfgError::InvalidField {
                field: "unroll".into(),
                message: "must be at least 1".into(),
            });
        }
        let max_width = max_width.unwrap_or(unroll);
        if max_width == 0 || max_width > unroll {
            return Err(DfgError::InvalidField {
                field: "max_width".into(),
                message: format!("must lie in [1, unroll = {unroll}], got {max_width}"),
            });
        }
        Ok(Self {
            name: name.into(),
            graph,
            limit,
            unroll,
            max_width,
        })
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// True when at least one tiling can satisfy the register limit.
    pub fn has_feasible_tiling(&self) -> bool {
        self.limit >= self.graph.max_comp()
    }

    /// Copy with some parameters replaced. When `unroll` changes without an
    /// explicit `max_width`, a width that equalled the old unroll follows the
    /// new one; any other width is clamped to the new unroll.
    pub fn with_overrides(
        &self,
        limit: Option<u32>,
        unroll: Option<u32>,
        max_width: Option<u32>,
    ) -> Result<Self, DfgError> {
        let unroll_v = unroll.unwrap_or(self.unroll);
        let width = match (max_width, unroll) {
            (Some(w), _) => w,
            (None, Some(u)) if self.max_width == self.unroll => u,
            (None, Some(u)) => self.max_width.min(u),
            (None, None) => self.max_width,
        };
        Self::new(
            self.name.clone(),
            self.graph.clone(),
            limit.unwrap_or(self.limit),
            unroll_v,
            Some(width),
        )
    }
}
