//! Intensity- and connection-aware dataflow parallelization.
//!
//! Per schedule: measure node intensity and record how connected nodes
//! align their loops on each shared buffer; order nodes by connectivity;
//! give each node a parallel factor proportional to its intensity; then pick
//! each node's unroll vector by exhaustive search under the alignment
//! constraints imposed by already-parallelized neighbours. Array partitions
//! follow from the chosen unroll factors.

use crate::estimator::{estimate_node, CostModel};
use crate::exec::{self, Exec};
use crate::ir::*;
use crate::structural::NodeGraph;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// A loop of a node, in pre-order. Loops of nested schedules belong to the
/// nested nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLoop {
    pub iv: String,
    pub trip: u64,
    pub reduction: bool,
    pub tile: Option<u32>,
    pub unroll: u32,
    /// The loop encloses a nested schedule and must stay sequential.
    pub holds_schedule: bool,
}

pub fn node_loops(node: &Node) -> Vec<NodeLoop> {
    fn walk(r: &Region, out: &mut Vec<NodeLoop>) {
        for op in &r.ops {
            if let Op::Loop(l) = op {
                let mut holds = false;
                for_each_op(&l.body, &mut |o| holds |= matches!(o, Op::Schedule(_)));
                out.push(NodeLoop {
                    iv: l.iv.clone(),
                    trip: l.trip_count(),
                    reduction: l.reduction,
                    tile: l.tile,
                    unroll: l.unroll,
                    holds_schedule: holds,
                });
                walk(&l.body, out);
            } else if !matches!(op, Op::Schedule(_) | Op::Node(_)) {
                if let Some(inner) = op.region() {
                    walk(inner, out);
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(&node.body, &mut out);
    out
}

/// Visits the accesses of a node's own loops with the pre-order index of
/// the innermost enclosing loop binding each subscript's iv.
fn for_each_node_access(node: &Node, f: &mut dyn FnMut(&Access, &dyn Fn(&str) -> Option<usize>)) {
    fn walk(
        r: &Region,
        next: &mut usize,
        stack: &mut Vec<(String, usize)>,
        f: &mut dyn FnMut(&Access, &dyn Fn(&str) -> Option<usize>),
    ) {
        for op in &r.ops {
            match op {
                Op::Loop(l) => {
                    stack.push((l.iv.clone(), *next));
                    *next += 1;
                    walk(&l.body, next, stack, f);
                    stack.pop();
                }
                Op::Compute(c) => {
                    let lookup = |iv: &str| stack.iter().rev().find(|(n, _)| n == iv).map(|(_, i)| *i);
                    for a in c.reads.iter().chain(std::iter::once(&c.write)) {
                        f(a, &lookup);
                    }
                }
                Op::Schedule(_) | Op::Node(_) => {}
                other => {
                    if let Some(inner) = other.region() {
                        walk(inner, next, stack, f);
                    }
                }
            }
        }
    }
    walk(&node.body, &mut 0, &mut Vec::new(), f);
}

// ---------------------------------------------------------------------------
// Connections.

/// Alignment of two connected nodes on one buffer.
///
/// `perm_s2t` has one entry per target loop naming the aligned source loop;
/// `perm_t2s` one entry per source loop naming the aligned target loop.
/// `scale_s2t[s]` is the source stride over the target stride on source
/// loop `s`; `scale_t2s[t]` the inverse, per target loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connection {
    pub source: String,
    pub target: String,
    pub buffer: String,
    pub perm_s2t: Vec<Option<usize>>,
    pub perm_t2s: Vec<Option<usize>>,
    pub scale_s2t: Vec<Option<Rational>>,
    pub scale_t2s: Vec<Option<Rational>>,
}

impl Connection {
    pub fn is_aligned(&self) -> bool {
        self.perm_s2t.iter().any(Option::is_some)
    }

    /// Constraint on the source's unroll vector given the target's.
    pub fn source_constraint(&self, target_unroll: &[u32]) -> Vec<Option<u64>> {
        project(target_unroll, &self.scale_t2s, &self.perm_t2s)
    }

    /// Constraint on the target's unroll vector given the source's.
    pub fn target_constraint(&self, source_unroll: &[u32]) -> Vec<Option<u64>> {
        project(source_unroll, &self.scale_s2t, &self.perm_s2t)
    }
}

fn rabs(r: Rational) -> Rational {
    if r < Rational::from_integer(0) {
        -r
    } else {
        r
    }
}

/// `out[k] = ceil((u ⊙ scale)[perm[k]])`.
fn project(u: &[u32], scale: &[Option<Rational>], perm: &[Option<usize>]) -> Vec<Option<u64>> {
    perm.iter()
        .map(|p| {
            let i = (*p)?;
            let s = (*scale.get(i)?)?;
            let v = s * Rational::from_integer(*u.get(i)? as i64);
            Some(v.ceil().to_integer().max(1) as u64)
        })
        .collect()
}

/// Per array dimension, the `(loop, stride)` every access of `buffer` in
/// `node` uses, or `None` for constant or mixed dimensions. `Err` if one
/// dimension is indexed inconsistently.
fn dim_alignment(node: &Node, buffer: &str) -> Result<Vec<Option<(usize, Rational)>>, ()> {
    let mut dims: Option<Vec<Option<Option<(usize, Rational)>>>> = None;
    let mut consistent = true;
    for_each_node_access(node, &mut |a, lookup| {
        if a.array != buffer {
            return;
        }
        let here: Vec<Option<(usize, Rational)>> = a
            .indices
            .iter()
            .map(|s| match s {
                Subscript::Affine { iv, stride, .. } => lookup(iv).map(|l| (l, *stride)),
                _ => None,
            })
            .collect();
        match &mut dims {
            None => dims = Some(here.into_iter().map(Some).collect()),
            Some(d) => {
                for (slot, h) in d.iter_mut().zip(here) {
                    match slot {
                        Some(prev) if *prev != h => consistent = false,
                        _ => {}
                    }
                }
            }
        }
    });
    if !consistent {
        return Err(());
    }
    Ok(dims.unwrap_or_default().into_iter().map(|d| d.flatten()).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Analysis {
    /// Node ids in textual order.
    pub nodes: Vec<String>,
    pub intensity: BTreeMap<String, u64>,
    pub connections: Vec<Connection>,
    pub warnings: Vec<String>,
}

impl Analysis {
    pub fn connection_count(&self, node: &str) -> usize {
        self.connections
            .iter()
            .filter(|c| c.source == node || c.target == node)
            .count()
    }
}

/// Intensities and connections of the nodes of one schedule.
pub fn analyze_connections(program: &Program, schedule: &Schedule) -> Analysis {
    let graph = NodeGraph::new(program, schedule);
    let nodes: Vec<&Node> = schedule.nodes().collect();
    let mut warnings = Vec::new();
    let mut connections = Vec::new();
    let mut seen = BTreeSet::new();
    for (s, buffer, t) in &graph.edges {
        if !seen.insert((*s, buffer.clone(), *t)) {
            continue;
        }
        let (src, tgt) = (nodes[*s], nodes[*t]);
        let (ns, nt) = (node_loops(src).len(), node_loops(tgt).len());
        let mut c = Connection {
            source: src.id.clone(),
            target: tgt.id.clone(),
            buffer: buffer.clone(),
            perm_s2t: vec![None; nt],
            perm_t2s: vec![None; ns],
            scale_s2t: vec![None; ns],
            scale_t2s: vec![None; nt],
        };
        match (dim_alignment(src, buffer), dim_alignment(tgt, buffer)) {
            (Ok(ds), Ok(dt)) => {
                let mut ok = true;
                for (a, b) in ds.iter().zip(&dt) {
                    let (Some((ls, ss)), Some((lt, st))) = (a, b) else {
                        continue;
                    };
                    if ss.numer() == &0 || st.numer() == &0 {
                        continue;
                    }
                    let clash = c.perm_t2s[*ls].is_some_and(|x| x != *lt) || c.perm_s2t[*lt].is_some_and(|x| x != *ls);
                    if clash {
                        ok = false;
                        break;
                    }
                    c.perm_t2s[*ls] = Some(*lt);
                    c.perm_s2t[*lt] = Some(*ls);
                    c.scale_s2t[*ls] = Some(rabs(ss / st));
                    c.scale_t2s[*lt] = Some(rabs(st / ss));
                }
                if !ok {
                    warnings.push(format!(
                        "{} -> {} on `{buffer}`: loops do not align consistently; no constraint imposed",
                        c.source, c.target
                    ));
                    c.perm_s2t = vec![None; nt];
                    c.perm_t2s = vec![None; ns];
                    c.scale_s2t = vec![None; ns];
                    c.scale_t2s = vec![None; nt];
                }
            }
            _ => warnings.push(format!(
                "{} -> {} on `{buffer}`: accesses are not affinely aligned; no constraint imposed",
                c.source, c.target
            )),
        }
        connections.push(c);
    }
    Analysis {
        nodes: nodes.iter().map(|n| n.id.clone()).collect(),
        intensity: nodes
            .iter()
            .map(|n| (n.id.clone(), intensity(program, &n.body)))
            .collect(),
        connections,
        warnings,
    }
}

/// Most connected first, then most intense, then textual order.
pub fn sort_nodes(analysis: &Analysis) -> Vec<String> {
    let mut order: Vec<(usize, &String)> = analysis.nodes.iter().enumerate().collect();
    order.sort_by_key(|(i, id)| {
        (
            std::cmp::Reverse(analysis.connection_count(id)),
            std::cmp::Reverse(analysis.intensity[*id]),
            *i,
        )
    });
    order.into_iter().map(|(_, id)| id.clone()).collect()
}

// ---------------------------------------------------------------------------
// Parallel factors.

pub fn divisors(n: u64) -> Vec<u64> {
    if n == 0 {
        return vec![1];
    }
    let mut d: Vec<u64> = (1..=n).take_while(|k| k * k <= n).filter(|k| n % k == 0).collect();
    let upper: Vec<u64> = d.iter().rev().map(|k| n / k).filter(|k| k * k != n).collect();
    d.extend(upper);
    d
}

/// Products reachable by choosing one divisor of each trip count.
pub fn feasible_products(trips: &[u64], cap: u64) -> BTreeSet<u64> {
    let mut set = BTreeSet::from([1u64]);
    for &t in trips {
        let mut next = BTreeSet::new();
        for &p in &set {
            for d in divisors(t) {
                if p * d <= cap {
                    next.insert(p * d);
                }
            }
        }
        set = next;
    }
    set
}

/// Parallel factor per node: proportional to intensity (largest feasible
/// value not above `max_factor * I / I_max`, at least 1) with IA, or
/// `max_factor` for everyone without.
pub fn generate_parallel_factors(
    intensity: &BTreeMap<String, u64>,
    trips: &BTreeMap<String, Vec<u64>>,
    max_factor: u64,
    intensity_aware: bool,
) -> BTreeMap<String, u64> {
    let max_factor = max_factor.max(1);
    let imax = intensity.values().copied().max().unwrap_or(0);
    intensity
        .iter()
        .map(|(id, &i)| {
            if !intensity_aware {
                return (id.clone(), max_factor);
            }
            if imax == 0 {
                return (id.clone(), 1);
            }
            // floor(max * i / imax) without floating point.
            let target = (max_factor as u128 * i as u128 / imax as u128) as u64;
            let feasible = feasible_products(trips.get(id).map_or(&[][..], |v| v), max_factor);
            let f = feasible.range(..=target.max(1)).next_back().copied().unwrap_or(1);
            (id.clone(), f.max(1))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Partition requirements.

/// Per on-chip array, the per-dimension cyclic factor that unrolled accesses
/// in `node` need: the unroll factor of the indexing loop times the stride
/// numerator, or 1.
pub fn node_requirements(program: &Program, node: &Node, unroll: &[u32]) -> BTreeMap<String, Vec<u64>> {
    let mut req: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for_each_node_access(node, &mut |a, lookup| {
        let Some(decl) = program.array(&a.array) else { return };
        if decl.placement != Placement::OnChip {
            return;
        }
        let entry = req.entry(a.array.clone()).or_insert_with(|| vec![1; decl.rank()]);
        for (d, s) in a.indices.iter().enumerate() {
            if let Subscript::Affine { iv, stride, .. } = s {
                let u = lookup(iv).and_then(|l| unroll.get(l)).copied().unwrap_or(1) as u64;
                if u > 1 {
                    let need = u * stride.numer().unsigned_abs();
                    if d < entry.len() {
                        entry[d] = entry[d].max(need);
                    }
                }
            }
        }
    });
    req
}

fn banks_of(program: &Program, array: &str, factors: &[u64]) -> u64 {
    let shape = &program.array(array).expect("declared").shape;
    factors.iter().zip(shape).map(|(f, e)| (*f).min(*e).max(1)).product()
}

// ---------------------------------------------------------------------------
// Node DSE.

#[derive(Debug, Clone)]
pub struct Options {
    pub max_factor: u64,
    pub intensity_aware: bool,
    pub connection_aware: bool,
    /// Let the search unroll reduction loops too.
    pub unroll_reductions: bool,
    pub cost: CostModel,
    pub exec: Exec,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            max_factor: 32,
            intensity_aware: true,
            connection_aware: true,
            unroll_reductions: false,
            cost: CostModel::default(),
            exec: Exec::default(),
        }
    }
}

/// Chosen parallelization of every node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParallelPlan {
    pub parallel_factor: BTreeMap<String, u64>,
    pub unroll: BTreeMap<String, Vec<u32>>,
    /// Constraint vectors each node was searched under.
    pub constraints: BTreeMap<String, Vec<Vec<Option<u64>>>>,
    /// Parallelization order, per schedule, outermost first.
    pub order: Vec<Vec<String>>,
    pub diagnostics: Vec<String>,
}

fn mutually_divisible(u: u64, c: u64) -> bool {
    u % c == 0 || c % u == 0
}

/// Every unroll vector within the search space of `loops`, in lexicographic
/// order, with product at most `cap`.
pub fn candidates(loops: &[NodeLoop], cap: u64, unroll_reductions: bool) -> Vec<Vec<u32>> {
    let choices: Vec<Vec<u64>> = loops
        .iter()
        .map(|l| {
            if l.holds_schedule || (l.reduction && !unroll_reductions) {
                return vec![1];
            }
            divisors(l.trip)
                .into_iter()
                .filter(|d| l.tile.is_none_or(|t| t as u64 % d == 0))
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    fn rec(choices: &[Vec<u64>], cap: u64, cur: &mut Vec<u32>, prod: u64, out: &mut Vec<Vec<u32>>) {
        let Some((first, rest)) = choices.split_first() else {
            out.push(cur.clone());
            return;
        };
        for &d in first {
            if prod * d > cap {
                break;
            }
            cur.push(d as u32);
            rec(rest, cap, cur, prod * d, out);
            cur.pop();
        }
    }
    rec(&choices, cap.max(1), &mut Vec::new(), 1, &mut out);
    out
}

pub fn set_unroll(node: &mut Node, unroll: &[u32]) {
    fn walk(r: &mut Region, unroll: &[u32], next: &mut usize) {
        for op in &mut r.ops {
            if let Op::Loop(l) = op {
                l.unroll = unroll.get(*next).copied().unwrap_or(1);
                *next += 1;
                walk(&mut l.body, unroll, next);
            } else if !matches!(op, Op::Schedule(_) | Op::Node(_)) {
                if let Some(inner) = op.region_mut() {
                    walk(inner, unroll, next);
                }
            }
        }
    }
    walk(&mut node.body, unroll, &mut 0);
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Score {
    latency: u64,
    dsp: u64,
    banks: u64,
    max_factor: u32,
    vector: Vec<u32>,
}

/// Searches unroll vectors for one node. `global` holds partition
/// requirements already fixed by parallelized nodes; it only shapes the
/// bank objective when `connection_aware`.
pub fn parallelize_node(
    program: &Program,
    node: &Node,
    parallel_factor: u64,
    constraints: &[Vec<Option<u64>>],
    global: &BTreeMap<String, Vec<u64>>,
    opts: &Options,
) -> Result<Vec<u32>, String> {
    let loops = node_loops(node);
    let cands: Vec<Vec<u32>> = candidates(&loops, parallel_factor, opts.unroll_reductions)
        .into_iter()
        .filter(|u| {
            !opts.connection_aware
                || constraints.iter().all(|c| {
                    c.iter()
                        .zip(u)
                        .all(|(c, &u)| c.is_none_or(|c| mutually_divisible(u as u64, c)))
                })
        })
        .collect();
    let scores = exec::map(opts.exec, &cands, |u| {
        let mut n = node.clone();
        set_unroll(&mut n, u);
        let q = estimate_node(program, &n, &opts.cost);
        let req = node_requirements(program, node, u);
        let banks = req
            .iter()
            .map(|(a, f)| {
                let merged: Vec<u64> = match global.get(a).filter(|_| opts.connection_aware) {
                    Some(g) => f.iter().zip(g).map(|(x, y)| *x.max(y)).collect(),
                    None => f.clone(),
                };
                banks_of(program, a, &merged)
            })
            .sum();
        Score {
            latency: q.latency,
            dsp: q.dsp,
            banks,
            max_factor: u.iter().copied().max().unwrap_or(1),
            vector: u.clone(),
        }
    });
    scores.into_iter().min().map(|s| s.vector).ok_or_else(|| {
        format!(
            "{}: no unroll vector satisfies the constraints; keeping it sequential",
            node.id
        )
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanError {
    MissingNode(String),
    Arity {
        node: String,
        expected: usize,
        got: usize,
    },
    NotDividing {
        node: String,
        iv: String,
        factor: u32,
        trip: u64,
    },
}

impl fmt::Display for PlanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanError::MissingNode(n) => write!(f, "plan refers to unknown node `{n}`"),
            PlanError::Arity { node, expected, got } => {
                write!(f, "{node}: plan has {got} unroll factors for {expected} loops")
            }
            PlanError::NotDividing { node, iv, factor, trip } => {
                write!(
                    f,
                    "{node}: unroll factor {factor} does not divide the {trip} iterations of `{iv}`"
                )
            }
        }
    }
}

impl std::error::Error for PlanError {}

/// Plans every schedule, outermost first.
pub fn plan(program: &Program, opts: &Options) -> ParallelPlan {
    let mut plan = ParallelPlan::default();
    let mut global: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    let mut schedules = Vec::new();
    for_each_op(&program.top, &mut |op| {
        if let Op::Schedule(s) = op {
            schedules.push(s);
        }
    });
    for s in schedules {
        let analysis = analyze_connections(program, s);
        plan.diagnostics.extend(analysis.warnings.iter().cloned());
        let trips: BTreeMap<String, Vec<u64>> = s
            .nodes()
            .map(|n| {
                let loops = node_loops(n);
                let t = loops
                    .iter()
                    .map(|l| if l.holds_schedule { 1 } else { l.trip })
                    .collect();
                (n.id.clone(), t)
            })
            .collect();
        let factors = generate_parallel_factors(&analysis.intensity, &trips, opts.max_factor, opts.intensity_aware);
        let order = sort_nodes(&analysis);
        for id in &order {
            let node = s.nodes().find(|n| n.id == *id).expect("analysed node");
            let mut constraints = Vec::new();
            for c in &analysis.connections {
                if c.target == *id {
                    if let Some(u) = plan.unroll.get(&c.source) {
                        constraints.push(c.target_constraint(u));
                    }
                } else if c.source == *id {
                    if let Some(u) = plan.unroll.get(&c.target) {
                        constraints.push(c.source_constraint(u));
                    }
                }
            }
            let pf = factors[id];
            let u = match parallelize_node(program, node, pf, &constraints, &global, opts) {
                Ok(u) => u,
                Err(msg) => {
                    plan.diagnostics.push(msg);
                    vec![1; node_loops(node).len()]
                }
            };
            for (a, f) in node_requirements(program, node, &u) {
                let g = global.entry(a).or_insert_with(|| vec![1; f.len()]);
                for (x, y) in g.iter_mut().zip(f) {
                    *x = (*x).max(y);
                }
            }
            plan.parallel_factor.insert(id.clone(), pf);
            plan.unroll.insert(id.clone(), u);
            plan.constraints.insert(id.clone(), constraints);
        }
        plan.order.push(order);
    }
    plan
}

/// Annotates every planned node's loops with its unroll factors.
pub fn apply_plan(program: &Program, plan: &ParallelPlan) -> Result<Program, PlanError> {
    let ids: BTreeSet<String> = program.node_ids().into_iter().collect();
    if let Some(missing) = plan.unroll.keys().find(|k| !ids.contains(*k)) {
        return Err(PlanError::MissingNode(missing.clone()));
    }
    let mut p = program.clone();
    let mut err = None;
    for_each_op_mut(&mut p.top, &mut |op| {
        let Op::Node(n) = op else { return };
        let Some(u) = plan.unroll.get(&n.id) else { return };
        let loops = node_loops(n);
        if loops.len() != u.len() {
            err.get_or_insert(PlanError::Arity {
                node: n.id.clone(),
                expected: loops.len(),
                got: u.len(),
            });
            return;
        }
        for (l, &f) in loops.iter().zip(u) {
            if f == 0 || (l.trip > 0 && l.trip % f as u64 != 0) {
                err.get_or_insert(PlanError::NotDividing {
                    node: n.id.clone(),
                    iv: l.iv.clone(),
                    factor: f,
                    trip: l.trip,
                });
                return;
            }
        }
        set_unroll(n, u);
    });
    match err {
        Some(e) => Err(e),
        None => Ok(p),
    }
}

/// Plans and applies in one step.
pub fn parallelize(program: &Program, opts: &Options) -> Result<(Program, ParallelPlan), PlanError> {
    let plan = plan(program, opts);
    let p = apply_plan(program, &plan)?;
    Ok((p, plan))
}

/// Sets cyclic partitions on every on-chip array from the unroll
/// annotations in the program. Returns warnings for clamped factors.
pub fn partition_arrays(program: &Program) -> (Program, Vec<String>) {
    let mut req: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for_each_op(&program.top, &mut |op| {
        if let Op::Node(n) = op {
            let u: Vec<u32> = {
                let mut v = Vec::new();
                fn collect(r: &Region, v: &mut Vec<u32>) {
                    for op in &r.ops {
                        if let Op::Loop(l) = op {
                            v.push(l.unroll.max(1));
                            collect(&l.body, v);
                        } else if !matches!(op, Op::Schedule(_) | Op::Node(_)) {
                            if let Some(inner) = op.region() {
                                collect(inner, v);
                            }
                        }
                    }
                }
                collect(&n.body, &mut v);
                v
            };
            for (a, f) in node_requirements(program, n, &u) {
                let g = req.entry(a).or_insert_with(|| vec![1; f.len()]);
                for (x, y) in g.iter_mut().zip(f) {
                    *x = (*x).max(y);
                }
            }
        }
    });
    let mut p = program.clone();
    let mut warnings = Vec::new();
    for a in &mut p.arrays {
        if a.placement != Placement::OnChip {
            continue;
        }
        let factors = req.get(&a.name).cloned().unwrap_or_else(|| vec![1; a.rank()]);
        a.partition = factors
            .iter()
            .zip(&a.shape)
            .enumerate()
            .map(|(d, (&f, &extent))| {
                let f = if f > extent {
                    warnings.push(format!(
                        "`{}` dimension {d}: partition factor {f} exceeds extent {extent}; clamped",
                        a.name
                    ));
                    extent
                } else {
                    f
                };
                DimPartition::cyclic(f as u32)
            })
            .collect();
    }
    (p, warnings)
}

/// Strip-mines (as an annotation) every node loop longer than `tile` whose
/// trip count it divides.
pub fn apply_tiling(program: &Program, tile: u32) -> Program {
    let mut p = program.clone();
    if tile == 0 {
        return p;
    }
    for_each_op_mut(&mut p.top, &mut |op| {
        if let Op::Loop(l) = op {
            let trip = l.trip_count();
            if trip > tile as u64 && trip % tile as u64 == 0 {
                l.tile = Some(tile);
            }
        }
    });
    p
}
