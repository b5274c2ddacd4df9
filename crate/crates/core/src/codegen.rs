//! Unrolled schedule emission and linear-scan register assignment.
//!
//! Tiles are written out in order. A tile of width `w` is repeated over
//! consecutive column ranges of at most `w` iterations; each repetition runs
//! row by row (node by node) with columns left to right. Spilled values are
//! loaded right before the EXEC that reads them and stored right after the
//! EXEC that defines them, one op per register word.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::dfg::ProblemInstance;
use crate::model::{self, SolutionError, TilingSolution, Violation};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodegenError {
    #[error(transparent)]
    Structure(#[from] SolutionError),
    #[error("solution is infeasible ({0}); pass force to emit it anyway")]
    Infeasible(Violation),
}

/// Register holding a value after assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reg {
    Phys(u32),
    Spilled,
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reg::Phys(r) => write!(f, "r{r}"),
            Reg::Spilled => f.write_str("SPILLED"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Exec {
        node: String,
        col: u32,
        comp: u32,
        /// Register values read, excluding states kept in registers.
        inputs: Vec<String>,
        outputs: Vec<String>,
    },
    Load {
        value: String,
        reg: Option<Reg>,
    },
    Store {
        value: String,
        reg: Option<Reg>,
    },
}

fn reg_text(reg: &Option<Reg>, value: &str) -> String {
    match reg {
        Some(r) => r.to_string(),
        None => format!("%{value}"),
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Exec { node, col, .. } => write!(f, "EXEC {node} col={col}"),
            Op::Load { value, reg } => write!(f, "LOAD {value} -> {}", reg_text(reg, value)),
            Op::Store { value, reg } => write!(f, "STORE {} -> {value}", reg_text(reg, value)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Overflow {
    /// Index of the op in the program.
    pub op: usize,
    pub demand: u32,
    pub limit: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScheduleProgram {
    pub ops: Vec<Op>,
    pub unroll: u32,
    /// Induction step of the rewritten loop header.
    pub loop_step: u32,
    /// Words of states kept in registers for the whole loop.
    pub live_in: Vec<String>,
    pub register_map: BTreeMap<String, Reg>,
    pub remainder_note: String,
    pub diagnostics: Vec<String>,
    pub overflows: Vec<Overflow>,
}

impl ScheduleProgram {
    pub fn load_count(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, Op::Load { .. })).count()
    }

    pub fn store_count(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, Op::Store { .. })).count()
    }

    /// `(node, column)` of every EXEC, in program order.
    pub fn exec_sequence(&self) -> Vec<(&str, u32)> {
        self.ops
            .iter()
            .filter_map(|op| match op {
                Op::Exec { node, col, .. } => Some((node.as_str(), *col)),
                _ => None,
            })
            .collect()
    }

    /// One op per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for op in &self.ops {
            out.push_str(&op.to_string());
            out.push('\n');
        }
        out
    }

    /// Checks that every value is defined before it is read.
    pub fn check_def_before_use(&self) -> Result<(), UseBeforeDef> {
        let mut defined: HashSet<&str> = HashSet::new();
        for (i, op) in self.ops.iter().enumerate() {
            let missing = |v: &String, defined: &HashSet<&str>| {
                (!defined.contains(v.as_str())).then(|| UseBeforeDef {
                    op: i,
                    value: v.clone(),
                })
            };
            match op {
                Op::Load { value, .. } => {
                    defined.insert(value);
                }
                Op::Store { value, .. } => {
                    if let Some(err) = missing(value, &defined) {
                        return Err(err);
                    }
                }
                Op::Exec { inputs, outputs, .. } => {
                    if let Some(err) = inputs.iter().find_map(|v| missing(v, &defined)) {
                        return Err(err);
                    }
                    defined.extend(outputs.iter().map(String::as_str));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("op {op} reads {value} before it is defined")]
pub struct UseBeforeDef {
    pub op: usize,
    pub value: String,
}

fn words(name: &str, reg: u32) -> Vec<String> {
    if reg == 1 {
        vec![name.to_string()]
    } else {
        (0..reg).map(|k| format!("{name}.{k}")).collect()
    }
}

fn at_col(name: &str, col: i64) -> String {
    format!("{name}@col{col}")
}

/// Names of edge groups and node states, made unique across both.
struct Names {
    group: Vec<String>,
    state: Vec<String>,
}

impl Names {
    fn new(inst: &ProblemInstance) -> Self {
        let g = &inst.graph;
        let mut count: HashMap<&str, usize> = HashMap::new();
        for grp in g.groups() {
            *count.entry(grp.variable.as_str()).or_default() += 1;
        }
        let group: Vec<String> = g
            .groups()
            .iter()
            .map(|grp| {
                if count[grp.variable.as_str()] > 1 {
                    grp.id.clone()
                } else {
                    grp.variable.clone()
                }
            })
            .collect();
        let taken: HashSet<&str> = group.iter().map(String::as_str).collect();
        let state = g
            .nodes()
            .iter()
            .map(|v| {
                let name = v.state_name();
                if taken.contains(name.as_str()) {
                    format!("{name}~{}", v.id)
                } else {
                    name
                }
            })
            .collect();
        Self { group, state }
    }
}

/// Emits the unrolled body of `sol`. Infeasible solutions are rejected
/// unless `force` is set, in which case the violation is recorded as a
/// diagnostic.
pub fn generate(sol: &TilingSolution, inst: &ProblemInstance, force: bool) -> Result<ScheduleProgram, CodegenError> {
    let g = &inst.graph;
    sol.check_structure(g)?;
    let mut diagnostics = Vec::new();
    if let Some(v) = model::feasible(sol, inst).violation {
        if !force {
            return Err(CodegenError::Infeasible(v));
        }
        diagnostics.push(format!("emitted despite infeasibility: {v}"));
    }

    let n = g.node_count();
    let u = inst.unroll;
    let names = Names::new(inst);
    let tiles = sol.tile_of_rank();
    let mut incoming: Vec<Vec<usize>> = vec![vec![]; n];
    for (i, e) in g.edges().iter().enumerate() {
        incoming[e.dst].push(i);
    }
    let mut groups_of: Vec<Vec<usize>> = vec![vec![]; n];
    for (k, grp) in g.groups().iter().enumerate() {
        if grp.reg > 0 {
            groups_of[grp.src].push(k);
        }
    }
    let group_spilled: Vec<bool> = g
        .groups()
        .iter()
        .map(|grp| grp.members.iter().any(|&m| sol.edge_spill[m]))
        .collect();

    let live_in: Vec<String> = (0..n)
        .filter(|&v| !sol.state_spill[v])
        .flat_map(|v| words(&names.state[v], g.nodes()[v].state))
        .collect();

    let mut ops = Vec::new();
    for t in 0..n {
        if sol.is_tile_empty(t) {
            continue;
        }
        let rows: Vec<usize> = (0..n).filter(|&r| tiles[r] == t).map(|r| sol.order[r]).collect();
        let width = sol.tile_widths[t].max(1);
        let mut start = 0;
        while start < u {
            let end = (start + width).min(u);
            for &v in &rows {
                let node = &g.nodes()[v];
                let state_words = node.state;
                let spilled_state = sol.state_spill[v] && state_words > 0;
                for c in start..end {
                    let col = i64::from(c);
                    let mut inputs = Vec::new();
                    if spilled_state {
                        let prev = words(&at_col(&names.state[v], col - 1), state_words);
                        if c == start {
                            for w in &prev {
                                ops.push(Op::Load {
                                    value: w.clone(),
                                    reg: None,
                                });
                            }
                        }
                        inputs.extend(prev);
                    }
                    for &e in &incoming[v] {
                        let edge = &g.edges()[e];
                        if edge.reg == 0 {
                            continue;
                        }
                        let value = words(&at_col(&names.group[edge.group], col), edge.reg);
                        if sol.edge_spill[e] {
                            for w in &value {
                                ops.push(Op::Load {
                                    value: w.clone(),
                                    reg: None,
                                });
                            }
                        }
                        for w in value {
                            if !inputs.contains(&w) {
                                inputs.push(w);
                            }
                        }
                    }
                    let mut outputs = Vec::new();
                    let mut stores = Vec::new();
                    for &k in &groups_of[v] {
                        let value = words(&at_col(&names.group[k], col), g.groups()[k].reg);
                        if group_spilled[k] {
                            stores.extend(value.iter().cloned());
                        }
                        outputs.extend(value);
                    }
                    if spilled_state {
                        let value = words(&at_col(&names.state[v], col), state_words);
                        if c + 1 == end {
                            stores.extend(value.iter().cloned());
                        }
                        outputs.extend(value);
                    }
                    ops.push(Op::Exec {
                        node: node.id.clone(),
                        col: c,
                        comp: node.comp,
                        inputs,
                        outputs,
                    });
                    ops.extend(stores.into_iter().map(|value| Op::Store { value, reg: None }));
                }
            }
            start = end;
        }
    }

    Ok(ScheduleProgram {
        ops,
        unroll: u,
        loop_step: u,
        live_in,
        register_map: BTreeMap::new(),
        remainder_note: remainder_note(u),
        diagnostics,
        overflows: vec![],
    })
}

pub fn remainder_note(unroll: u32) -> String {
    if unroll == 1 {
        "loop step is 1; no remainder iterations".into()
    } else {
        format!(
            "loop step is {unroll}; when the trip count is not a multiple of {unroll}, \
             the last (trip count mod {unroll}) iterations run the original body"
        )
    }
}

/// Linear-scan register assignment over the emitted order. States kept in
/// registers take the lowest registers for the whole loop. An EXEC needs the
/// registers live around it plus `max(comp, inputs, outputs)`, and at least
/// one. Values that find no register below `limit` are marked spilled and
/// every overflow is reported.
pub fn assign_registers(mut p: ScheduleProgram, limit: u32) -> ScheduleProgram {
    // A reloaded value shares its name with the original definition, so
    // liveness is tracked per definition rather than per name.
    let mut current: HashMap<&str, usize> = HashMap::new();
    let mut last_use: Vec<Option<usize>> = Vec::new();
    let mut uses: Vec<Vec<usize>> = Vec::with_capacity(p.ops.len());
    let mut defs: Vec<Vec<usize>> = Vec::with_capacity(p.ops.len());
    for (i, op) in p.ops.iter().enumerate() {
        let (read, written): (Vec<&String>, Vec<&String>) = match op {
            Op::Load { value, .. } => (vec![], vec![value]),
            Op::Store { value, .. } => (vec![value], vec![]),
            Op::Exec { inputs, outputs, .. } => (inputs.iter().collect(), outputs.iter().collect()),
        };
        let read: Vec<usize> = read.iter().filter_map(|v| current.get(v.as_str()).copied()).collect();
        for &d in &read {
            last_use[d] = Some(i);
        }
        let written: Vec<usize> = written
            .into_iter()
            .map(|v| {
                last_use.push(None);
                current.insert(v, last_use.len() - 1);
                last_use.len() - 1
            })
            .collect();
        uses.push(read);
        defs.push(written);
    }

    let mut free: Vec<bool> = vec![true; limit as usize];
    let mut live: HashMap<usize, Reg> = HashMap::new();
    let mut map = BTreeMap::new();
    let mut overflows = Vec::new();
    let take = |free: &mut Vec<bool>| -> Reg {
        match free.iter().position(|&f| f) {
            Some(r) => {
                free[r] = false;
                Reg::Phys(r as u32)
            }
            None => Reg::Spilled,
        }
    };
    let release = |free: &mut Vec<bool>, reg: Reg| {
        if let Reg::Phys(r) = reg {
            free[r as usize] = true;
        }
    };

    let pinned = p.live_in.len() as u32;
    for value in &p.live_in {
        let reg = take(&mut free);
        if reg == Reg::Spilled {
            overflows.push(Overflow {
                op: 0,
                demand: pinned,
                limit,
                message: format!("no register for live-in state {value}"),
            });
        }
        map.insert(value.clone(), reg);
    }

    for i in 0..p.ops.len() {
        if let Op::Exec {
            node,
            col,
            comp,
            inputs,
            outputs,
        } = &p.ops[i]
        {
            let held = uses[i].iter().filter(|d| live.contains_key(d)).count() as u32;
            let others = pinned + live.len() as u32 - held;
            let need = (*comp).max(inputs.len() as u32).max(outputs.len() as u32).max(1);
            if others + need > limit {
                overflows.push(Overflow {
                    op: i,
                    demand: others + need,
                    limit,
                    message: format!("EXEC {node} col={col} needs {} registers", others + need),
                });
            }
        }
        let read_regs: Vec<Reg> = uses[i]
            .iter()
            .map(|d| live.get(d).copied().unwrap_or(Reg::Spilled))
            .collect();
        for &d in &uses[i] {
            if last_use[d] == Some(i) {
                if let Some(r) = live.remove(&d) {
                    release(&mut free, r);
                }
            }
        }
        let names: Vec<String> = match &p.ops[i] {
            Op::Load { value, .. } => vec![value.clone()],
            Op::Exec { outputs, .. } => outputs.clone(),
            Op::Store { .. } => vec![],
        };
        let mut written = Vec::with_capacity(names.len());
        for (&d, name) in defs[i].iter().zip(&names) {
            let r = take(&mut free);
            if r == Reg::Spilled {
                overflows.push(Overflow {
                    op: i,
                    demand: pinned + live.len() as u32 + 1,
                    limit,
                    message: format!("no register for {name}"),
                });
            }
            map.insert(name.clone(), r);
            if last_use[d].is_some() {
                live.insert(d, r);
            } else {
                release(&mut free, r);
            }
            written.push(r);
        }
        match &mut p.ops[i] {
            Op::Load { reg, .. } => *reg = written.first().copied(),
            Op::Store { reg, .. } => *reg = Some(read_regs.first().copied().unwrap_or(Reg::Spilled)),
            Op::Exec { .. } => {}
        }
    }

    p.diagnostics.extend(
        overflows
            .iter()
            .map(|o| format!("overflow at op {}: {}", o.op, o.message)),
    );
    p.register_map = map;
    p.overflows = overflows;
    p
}
