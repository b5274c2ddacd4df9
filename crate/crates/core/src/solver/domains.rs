//! Variable domains and the propagators of the tiling model.
//!
//! Ranks are bitsets (at most 64 nodes); tile points, widths and spill flags
//! are integer intervals. Every propagator only removes values that cannot
//! appear in a feasible solution, so pruning never loses an optimum.

use crate::dfg::ProblemInstance;

/// Raised when propagation empties a domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Contradiction;

pub(crate) type Propagation = Result<bool, Contradiction>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub lo: i64,
    pub hi: i64,
}

impl Interval {
    pub fn new(lo: i64, hi: i64) -> Self {
        Self { lo, hi }
    }

    pub fn fixed(v: i64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn is_fixed(&self) -> bool {
        self.lo == self.hi
    }

    pub fn size(&self) -> u64 {
        (self.hi - self.lo + 1).max(0) as u64
    }

    fn raise_lo(&mut self, v: i64) -> Propagation {
        if v <= self.lo {
            return Ok(false);
        }
        self.lo = v;
        if self.lo > self.hi {
            Err(Contradiction)
        } else {
            Ok(true)
        }
    }

    fn lower_hi(&mut self, v: i64) -> Propagation {
        if v >= self.hi {
            return Ok(false);
        }
        self.hi = v;
        if self.lo > self.hi {
            Err(Contradiction)
        } else {
            Ok(true)
        }
    }

    /// Removes `[a, b]` when that only shaves an end of the interval.
    fn exclude_range(&mut self, a: i64, b: i64) -> Propagation {
        if a > b || self.hi < a || self.lo > b {
            return Ok(false);
        }
        let mut changed = false;
        if self.lo >= a {
            changed |= self.raise_lo(b + 1)?;
        }
        if self.hi <= b {
            changed |= self.lower_hi(a - 1)?;
        }
        Ok(changed)
    }
}

/// A control variable of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    Order(usize),
    TilePoint(usize),
    Width(usize),
    EdgeSpill(usize),
    StateSpill(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Domains {
    /// Allowed ranks of each node, as a bitset.
    pub order: Vec<u64>,
    pub tile_point: Vec<Interval>,
    pub width: Vec<Interval>,
    pub edge_spill: Vec<Interval>,
    pub state_spill: Vec<Interval>,
}

fn lowest(bits: u64) -> i64 {
    i64::from(bits.trailing_zeros())
}

fn highest(bits: u64) -> i64 {
    63 - i64::from(bits.leading_zeros())
}

fn single(bits: u64) -> Option<i64> {
    (bits.count_ones() == 1).then(|| lowest(bits))
}

/// Mask of ranks `0..=r` (empty when `r < 0`).
fn upto(r: i64) -> u64 {
    if r < 0 {
        0
    } else if r >= 63 {
        u64::MAX
    } else {
        (1u64 << (r + 1)) - 1
    }
}

impl Domains {
    pub fn is_fixed(&self, var: Var) -> bool {
        match var {
            Var::Order(i) => self.order[i].count_ones() == 1,
            Var::TilePoint(t) => self.tile_point[t].is_fixed(),
            Var::Width(t) => self.width[t].is_fixed(),
            Var::EdgeSpill(e) => self.edge_spill[e].is_fixed(),
            Var::StateSpill(i) => self.state_spill[i].is_fixed(),
        }
    }

    fn interval_mut(&mut self, var: Var) -> &mut Interval {
        match var {
            Var::TilePoint(t) => &mut self.tile_point[t],
            Var::Width(t) => &mut self.width[t],
            Var::EdgeSpill(e) => &mut self.edge_spill[e],
            Var::StateSpill(i) => &mut self.state_spill[i],
            Var::Order(_) => unreachable!("ranks are bitsets"),
        }
    }

    pub fn assign(&mut self, var: Var, value: i64) {
        match var {
            Var::Order(i) => self.order[i] &= 1u64 << value,
            _ => {
                let d = self.interval_mut(var);
                if value < d.lo || value > d.hi {
                    *d = Interval::new(1, 0);
                } else {
                    *d = Interval::fixed(value);
                }
            }
        }
    }

    /// Removes `value`. Interval domains only support removing an end point.
    pub fn remove(&mut self, var: Var, value: i64) {
        match var {
            Var::Order(i) => self.order[i] &= !(1u64 << value),
            _ => {
                let d = self.interval_mut(var);
                if value == d.hi {
                    d.hi -= 1;
                } else if value == d.lo {
                    d.lo += 1;
                } else {
                    panic!("cannot remove interior value {value} from {d:?}");
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.order.contains(&0)
            || self
                .tile_point
                .iter()
                .chain(&self.width)
                .chain(&self.edge_spill)
                .chain(&self.state_spill)
                .any(|d| d.lo > d.hi)
    }

    /// Bounds of `tile_points[t - 1]`, with the constant `-1` before tile 0.
    fn prev_point(&self, t: usize) -> Interval {
        if t == 0 {
            Interval::fixed(-1)
        } else {
            self.tile_point[t - 1]
        }
    }

    fn fixed_rank(&self, node: usize) -> Option<i64> {
        single(self.order[node])
    }

    /// Tiles that may own rank `r`.
    fn candidate_tiles(&self, r: i64) -> impl Iterator<Item = usize> + '_ {
        (0..self.tile_point.len()).filter(move |&t| self.prev_point(t).lo < r && self.tile_point[t].hi >= r)
    }
}

/// Static view of the instance used by the propagators and the search.
#[derive(Debug, Clone)]
pub(crate) struct ModelData {
    pub n: usize,
    pub limit: i64,
    pub unroll: i64,
    pub max_width: i64,
    pub comp: Vec<i64>,
    pub state: Vec<i64>,
    /// (src, dst, reg, group)
    pub edges: Vec<(usize, usize, i64, usize)>,
    pub group_count: usize,
    pub symmetry_breaking: bool,
    /// Earliest and latest rank of each node from its ancestor and descendant counts.
    pub rank_bounds: Vec<(i64, i64)>,
}

impl ModelData {
    pub fn new(inst: &ProblemInstance, symmetry_breaking: bool) -> Self {
        let g = &inst.graph;
        let n = g.node_count();
        let (anc, desc) = g.reachability_masks();
        Self {
            n,
            limit: inst.limit.into(),
            unroll: inst.unroll.into(),
            max_width: inst.max_width.into(),
            comp: g.nodes().iter().map(|x| x.comp.into()).collect(),
            state: g.nodes().iter().map(|x| x.state.into()).collect(),
            edges: g
                .edges()
                .iter()
                .map(|e| (e.src, e.dst, e.reg.into(), e.group))
                .collect(),
            group_count: g.groups().len(),
            symmetry_breaking,
            rank_bounds: (0..n)
                .map(|i| {
                    (
                        i64::from(anc[i].count_ones()),
                        n as i64 - 1 - i64::from(desc[i].count_ones()),
                    )
                })
                .collect(),
        }
    }

    pub fn initial_domains(&self) -> Domains {
        let n = self.n;
        let last = n as i64 - 1;
        Domains {
            order: self
                .rank_bounds
                .iter()
                .map(|&(lo, hi)| upto(hi) & !upto(lo - 1))
                .collect(),
            tile_point: (0..n)
                .map(|t| {
                    if t + 1 == n {
                        Interval::fixed(last)
                    } else {
                        Interval::new(-1, last)
                    }
                })
                .collect(),
            width: vec![Interval::new(1, self.max_width); n],
            edge_spill: vec![Interval::new(0, 1); self.edges.len()],
            state_spill: self
                .state
                .iter()
                .map(|&s| {
                    if s == 0 {
                        Interval::fixed(0)
                    } else {
                        Interval::new(0, 1)
                    }
                })
                .collect(),
        }
    }

    /// Runs every propagator to a fixpoint.
    pub fn propagate(&self, d: &mut Domains) -> Result<(), Contradiction> {
        if d.is_empty() {
            return Err(Contradiction);
        }
        loop {
            let mut changed = false;
            changed |= self.all_different(d)?;
            changed |= self.precedences(d)?;
            changed |= self.tile_order(d)?;
            if self.symmetry_breaking {
                changed |= break_symmetry(d)?;
            }
            changed |= self.empty_tile_widths(d)?;
            changed |= self.border_spills(d)?;
            changed |= self.pressure(d)?;
            if !changed {
                return Ok(());
            }
        }
    }

    fn all_different(&self, d: &mut Domains) -> Propagation {
        let n = self.n;
        let mut changed = false;
        loop {
            let mut round = false;
            for i in 0..n {
                if d.order[i] == 0 {
                    return Err(Contradiction);
                }
                if d.order[i].count_ones() == 1 {
                    let bit = d.order[i];
                    for j in (0..n).filter(|&j| j != i) {
                        if d.order[j] & bit != 0 {
                            d.order[j] &= !bit;
                            if d.order[j] == 0 {
                                return Err(Contradiction);
                            }
                            round = true;
                        }
                    }
                }
            }
            // every rank must be taken by some node
            for r in 0..n {
                let bit = 1u64 << r;
                let mut holders = (0..n).filter(|&i| d.order[i] & bit != 0);
                match (holders.next(), holders.next()) {
                    (None, _) => return Err(Contradiction),
                    (Some(i), None) if d.order[i] != bit => {
                        d.order[i] = bit;
                        round = true;
                    }
                    _ => {}
                }
            }
            if !round {
                return Ok(changed);
            }
            changed = true;
        }
    }

    fn precedences(&self, d: &mut Domains) -> Propagation {
        let mut changed = false;
        for &(s, t, _, _) in &self.edges {
            let keep_dst = !upto(lowest(d.order[s]));
            if d.order[t] & !keep_dst != 0 {
                d.order[t] &= keep_dst;
                changed = true;
            }
            let keep_src = upto(highest(d.order[t]) - 1);
            if d.order[s] & !keep_src != 0 {
                d.order[s] &= keep_src;
                changed = true;
            }
            if d.order[s] == 0 || d.order[t] == 0 {
                return Err(Contradiction);
            }
        }
        Ok(changed)
    }

    fn tile_order(&self, d: &mut Domains) -> Propagation {
        if self.n == 0 {
            return Ok(false);
        }
        let mut changed = d.tile_point[0].raise_lo(-1)?;
        for t in 1..self.n {
            let prev = d.tile_point[t - 1];
            changed |= d.tile_point[t].raise_lo(prev.lo)?;
        }
        for t in (1..self.n).rev() {
            let next = d.tile_point[t];
            changed |= d.tile_point[t - 1].lower_hi(next.hi)?;
        }
        Ok(changed)
    }

    fn empty_tile_widths(&self, d: &mut Domains) -> Propagation {
        let mut changed = false;
        for t in 0..self.n {
            let (p, q) = (d.prev_point(t), d.tile_point[t]);
            if p.is_fixed() && q.is_fixed() && p.lo == q.lo && !d.width[t].is_fixed() {
                d.width[t] = Interval::fixed(1);
                changed = true;
            }
        }
        Ok(changed)
    }

    /// An edge whose ends are certainly split by a border must be spilled;
    /// an unspilled edge with known ends keeps every border off its span.
    fn border_spills(&self, d: &mut Domains) -> Propagation {
        let mut changed = false;
        for (e, &(s, t, _, _)) in self.edges.iter().enumerate() {
            let last_src = highest(d.order[s]);
            let first_dst = lowest(d.order[t]);
            if d.edge_spill[e].lo == 0 {
                let split = d.tile_point.iter().any(|p| p.lo >= last_src && p.hi < first_dst);
                if split {
                    changed |= d.edge_spill[e].raise_lo(1)?;
                }
            }
            if d.edge_spill[e].hi == 0 {
                if let (Some(rs), Some(rd)) = (d.fixed_rank(s), d.fixed_rank(t)) {
                    for p in d.tile_point.iter_mut() {
                        changed |= p.exclude_range(rs, rd - 1)?;
                    }
                }
            }
        }
        Ok(changed)
    }

    /// Pressure lower bounds: fail when a point certainly exceeds the limit,
    /// cap the width of a tile by the groups known to cross it, and force
    /// spilling of states that cannot fit next to the known demand.
    fn pressure(&self, d: &mut Domains) -> Propagation {
        let n = self.n;
        if n == 0 {
            return Ok(false);
        }
        let reserve: i64 = (0..n)
            .filter(|&i| d.state_spill[i].hi == 0)
            .map(|i| self.state[i])
            .sum();
        let mut cross = vec![0i64; n];
        let mut group_seen = vec![u64::MAX; self.group_count];
        for (e, &(s, t, reg, grp)) in self.edges.iter().enumerate() {
            if reg == 0 || d.edge_spill[e].hi != 0 {
                continue;
            }
            if let (Some(rs), Some(rd)) = (d.fixed_rank(s), d.fixed_rank(t)) {
                for j in rs..rd {
                    let j = j as usize;
                    // count each group once per point
                    if group_seen[grp] != j as u64 {
                        if !self.group_crosses_before(d, grp, e, j) {
                            cross[j] += reg;
                        }
                        group_seen[grp] = j as u64;
                    }
                }
            }
        }

        let mut changed = false;
        let mut peak = 0i64;
        for (j, &crossing) in cross.iter().enumerate() {
            let r = j as i64;
            let comp = (0..n)
                .filter(|&i| d.order[i] & (1u64 << j) != 0)
                .map(|i| self.comp[i])
                .min()
                .ok_or(Contradiction)?;
            let tiles: Vec<usize> = d.candidate_tiles(r).collect();
            let (&first, only) = match tiles.as_slice() {
                [] => return Err(Contradiction),
                [t] => (t, true),
                [t, ..] => (t, false),
            };
            let width_lo = tiles.iter().map(|&t| d.width[t].lo).min().unwrap_or(1);
            let demand = comp + reserve + crossing * width_lo;
            if demand > self.limit {
                return Err(Contradiction);
            }
            if only && crossing > 0 {
                let cap = (self.limit - comp - reserve) / crossing;
                changed |= d.width[first].lower_hi(cap)?;
            }
            peak = peak.max(comp + crossing * width_lo);
        }
        for i in 0..n {
            if d.state_spill[i].lo == 0 && d.state_spill[i].hi == 1 && peak + reserve + self.state[i] > self.limit {
                changed |= d.state_spill[i].raise_lo(1)?;
            }
        }
        Ok(changed)
    }

    /// True when an earlier member of `grp` (index below `e`) already counted
    /// the group at point `j`.
    fn group_crosses_before(&self, d: &Domains, grp: usize, e: usize, j: usize) -> bool {
        self.edges[..e].iter().enumerate().any(|(k, &(s, t, reg, g))| {
            g == grp
                && reg > 0
                && d.edge_spill[k].hi == 0
                && matches!((d.fixed_rank(s), d.fixed_rank(t)), (Some(rs), Some(rd)) if rs <= j as i64 && (j as i64) < rd)
        })
    }

    /// Admissible lower bound on the loads of any completion.
    pub fn cost_lower_bound(&self, d: &Domains) -> i64 {
        let stream: i64 = self
            .edges
            .iter()
            .zip(&d.edge_spill)
            .filter(|(_, s)| s.lo == 1)
            .map(|(&(_, _, reg, _), _)| reg * self.unroll)
            .sum();
        let widest = d.width.iter().map(|w| w.hi).max().unwrap_or(1).max(1);
        let state: i64 = (0..self.n)
            .filter(|&i| d.state_spill[i].lo == 1 && self.state[i] > 0)
            .map(|i| {
                let w = match d.fixed_rank(i) {
                    Some(r) => d.candidate_tiles(r).map(|t| d.width[t].hi).max().unwrap_or(widest),
                    None => widest,
                }
                .max(1);
                ((self.unroll + w - 1) / w) * self.state[i]
            })
            .sum();
        stream + state
    }
}

/// Keeps empty tiles behind every non-empty one: a tile may only be empty
/// when its start point is already the last rank, so the points strictly
/// increase until they reach `C` and stay there.
pub fn break_symmetry(d: &mut Domains) -> Propagation {
    let n = d.tile_point.len();
    if n == 0 {
        return Ok(false);
    }
    let last = n as i64 - 1;
    let mut changed = false;
    for t in 0..n {
        let prev = d.prev_point(t);
        let cur = d.tile_point[t];
        // tile t may only be empty if tile_points[t-1] == C
        if prev.hi < last || cur.hi < last {
            changed |= d.tile_point[t].raise_lo(prev.lo + 1)?;
            if t > 0 {
                let cur = d.tile_point[t];
                changed |= d.tile_point[t - 1].lower_hi(cur.hi - 1)?;
            }
        }
    }
    Ok(changed)
}
