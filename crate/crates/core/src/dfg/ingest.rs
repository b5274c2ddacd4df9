use serde::{Deserialize, Serialize};

use super::transform::normalize_pipeline;
use super::{DfgError, ProblemInstance, RawDependenceGraph, RawEdge, RawNode};

/// Instance document. Integers are read as signed so that negative values
/// surface as validation errors naming the field rather than parse errors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub name: String,
    pub registers: i64,
    pub unroll: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_width: Option<i64>,
    pub nodes: Vec<NodeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_edges: Option<Vec<SelfEdgeDoc>>,
    pub edges: Vec<EdgeDoc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: String,
    pub comp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfEdgeDoc {
    pub node: String,
    pub reg: i64,
    pub distance: i64,
    pub variable: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub id: String,
    pub src: String,
    pub dst: String,
    pub reg: i64,
    pub distance: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
}

/// A validated document: the graph as declared and its normalized instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedInstance {
    pub raw: RawDependenceGraph,
    pub instance: ProblemInstance,
}

fn non_negative(field: impl FnOnce() -> String, value: i64) -> Result<u32, DfgError> {
    if value < 0 {
        return Err(DfgError::Negative { field: field(), value });
    }
    u32::try_from(value).map_err(|_| DfgError::InvalidField {
        field: field(),
        message: format!("{value} is out of range"),
    })
}

impl InstanceDoc {
    pub fn parse(text: &str) -> Result<Self, DfgError> {
        serde_json::from_str(text).map_err(|e| DfgError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    /// A document is in normalized form when it declares no self-edges and
    /// every edge is intra-iteration. Cycles are then an error instead of
    /// being fused.
    pub fn is_normalized_form(&self) -> bool {
        self.self_edges.is_none() && self.edges.iter().all(|e| e.distance == 0)
    }

    pub fn to_raw_graph(&self) -> Result<RawDependenceGraph, DfgError> {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        let mut edges = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let comp = non_negative(|| format!("nodes[{i}].comp"), n.comp)?;
            nodes.push(RawNode { id: n.id.clone(), comp });
            if let Some(state) = n.state {
                let state = non_negative(|| format!("nodes[{i}].state"), state)?;
                if state > 0 {
                    edges.push(RawEdge {
                        id: format!("{}.state", n.id),
                        src: n.id.clone(),
                        dst: n.id.clone(),
                        reg: state,
                        distance: 1,
                        variable: Some(format!("{}.state", n.id)),
                    });
                }
            }
        }
        for (i, s) in self.self_edges.iter().flatten().enumerate() {
            let reg = non_negative(|| format!("self_edges[{i}].reg"), s.reg)?;
            let distance = non_negative(|| format!("self_edges[{i}].distance"), s.distance)?;
            edges.push(RawEdge {
                id: format!("{}@{}", s.variable, s.node),
                src: s.node.clone(),
                dst: s.node.clone(),
                reg,
                distance,
                variable: Some(s.variable.clone()),
            });
        }
        for (i, e) in self.edges.iter().enumerate() {
            edges.push(RawEdge {
                id: e.id.clone(),
                src: e.src.clone(),
                dst: e.dst.clone(),
                reg: non_negative(|| format!("edges[{i}].reg"), e.reg)?,
                distance: non_negative(|| format!("edges[{i}].distance"), e.distance)?,
                variable: e.variable.clone(),
            });
        }
        RawDependenceGraph::new(nodes, edges)
    }

    pub fn validate(&self) -> Result<LoadedInstance, DfgError> {
        let raw = self.to_raw_graph()?;
        let graph = if self.is_normalized_form() {
            super::normalize_states(&raw)?
        } else {
            normalize_pipeline(&raw)?
        };
        let limit = non_negative(|| "registers".into(), self.registers)?;
        let unroll = non_negative(|| "unroll".into(), self.unroll)?;
        let max_width = self
            .max_width
            .map(|w| non_negative(|| "max_width".into(), w))
            .transpose()?;
        let instance = ProblemInstance::new(self.name.clone(), graph, limit, unroll, max_width)?;
        Ok(LoadedInstance { raw, instance })
    }

    /// Serializes an instance in raw form (carried values as self-edges), so
    /// that ingesting the result reproduces the instance.
    pub fn from_instance(inst: &ProblemInstance) -> Self {
        let g = &inst.graph;
        let self_edges: Vec<SelfEdgeDoc> = g
            .nodes()
            .iter()
            .flat_map(|n| {
                n.carried.iter().map(|c| SelfEdgeDoc {
                    node: n.id.clone(),
                    reg: c.reg.into(),
                    distance: c.distance.into(),
                    variable: c.variable.clone(),
                })
            })
            .collect();
        Self {
            name: inst.name.clone(),
            registers: inst.limit.into(),
            unroll: inst.unroll.into(),
            max_width: Some(inst.max_width.into()),
            nodes: g
                .nodes()
                .iter()
                .map(|n| NodeDoc {
                    id: n.id.clone(),
                    comp: n.comp.into(),
                    state: None,
                })
                .collect(),
            self_edges: Some(self_edges),
            edges: g
                .edges()
                .iter()
                .map(|e| EdgeDoc {
                    id: e.id.clone(),
                    src: g.nodes()[e.src].id.clone(),
                    dst: g.nodes()[e.dst].id.clone(),
                    reg: e.reg.into(),
                    distance: 0,
                    variable: e.variable.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance documents serialize")
    }
}

/// Parses and validates an instance document, normalizing raw form.
pub fn ingest(text: &str) -> Result<LoadedInstance, DfgError> {
    InstanceDoc::parse(text)?.validate()
}
