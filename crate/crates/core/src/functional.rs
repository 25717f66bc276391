//! Functional dataflow: building dispatch/task hierarchies and task fusion.

use crate::ir::*;
use std::collections::BTreeSet;
use std::fmt;

/// Wraps every dispatchable region in a dispatch with one task per op.
///
/// A region is dispatchable when it belongs to a loop (or is the top region)
/// and holds at least two loops. Regions are visited in post-order, so inner
/// dataflow is built before the enclosing one.
pub fn construct_dataflow(program: &Program) -> Program {
    let mut p = program.clone();
    build(&mut p.top);
    p
}

fn build(region: &mut Region) {
    for op in &mut region.ops {
        if let Op::Loop(l) = op {
            build(&mut l.body);
        }
    }
    if region.ops.iter().filter(|op| op.is_iterative()).count() >= 2 {
        let tasks = std::mem::take(&mut region.ops)
            .into_iter()
            .map(|op| Op::Task(Region::new(vec![op])))
            .collect();
        region.ops = vec![Op::Dispatch(Region::new(tasks))];
    }
}

/// Predicate over two textually consecutive tasks `(t, next)`.
#[derive(Clone, Copy)]
pub struct FusionPattern {
    pub name: &'static str,
    pub matches: fn(&Region, &Region) -> bool,
}

impl fmt::Debug for FusionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

impl PartialEq for FusionPattern {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

/// Both tasks are element-wise over the same iteration space and `next`
/// consumes something `t` produces.
pub const ELEMENTWISE: FusionPattern = FusionPattern {
    name: "elementwise",
    matches: |t, next| {
        let (Some(a), Some(b)) = (elementwise_space(t), elementwise_space(next)) else {
            return false;
        };
        a == b && connected(t, next)
    },
};

/// Both tasks iterate over the same space (any access pattern) and are
/// connected through a buffer.
pub const PRODUCER_CONSUMER: FusionPattern = FusionPattern {
    name: "producer-consumer",
    matches: |t, next| {
        let (Some(a), Some(b)) = (iteration_space(t), iteration_space(next)) else {
            return false;
        };
        a == b && connected(t, next)
    },
};

pub const BUILTIN_PATTERNS: &[FusionPattern] = &[ELEMENTWISE, PRODUCER_CONSUMER];

/// Parses a comma-separated pattern list; `none` selects nothing.
pub fn patterns_by_name(list: &str) -> Result<Vec<FusionPattern>, String> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if name == "none" {
            continue;
        }
        let p = BUILTIN_PATTERNS
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| format!("unknown fusion pattern `{name}` (known: elementwise, producer-consumer, none)"))?;
        if !out.contains(p) {
            out.push(*p);
        }
    }
    Ok(out)
}

/// When the criticality-driven step may fuse the least critical pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profitability {
    Never,
    /// Fuse while the merged intensity does not exceed the current maximum
    /// task intensity of the dispatch.
    CriticalBound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub patterns: Vec<FusionPattern>,
    pub profitability: Profitability,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            patterns: vec![ELEMENTWISE],
            profitability: Profitability::Never,
        }
    }
}

impl FusionConfig {
    pub fn disabled() -> Self {
        FusionConfig {
            patterns: Vec::new(),
            profitability: Profitability::Never,
        }
    }
}

/// Pattern-driven fusion followed by criticality-driven fusion, per
/// dispatch, outermost first. Ends with [`simplify_hierarchy`].
pub fn fuse_tasks(program: &Program, cfg: &FusionConfig) -> Program {
    let mut p = program.clone();
    let arrays = p.clone();
    fuse_region(&arrays, &mut p.top, cfg);
    simplify_hierarchy(&p)
}

fn fuse_region(program: &Program, region: &mut Region, cfg: &FusionConfig) {
    for op in &mut region.ops {
        if let Op::Dispatch(d) = op {
            fuse_dispatch(program, d, cfg);
        }
        if let Some(r) = op.region_mut() {
            fuse_region(program, r, cfg);
        }
    }
}

fn task_body(op: &Op) -> Option<&Region> {
    match op {
        Op::Task(r) => Some(r),
        _ => None,
    }
}

fn fuse_at(d: &mut Region, i: usize) {
    let Op::Task(second) = d.ops.remove(i + 1) else {
        unreachable!("dispatch bodies hold tasks")
    };
    let Op::Task(first) = &mut d.ops[i] else {
        unreachable!("dispatch bodies hold tasks")
    };
    first.ops.extend(second.ops);
}

fn fuse_dispatch(program: &Program, d: &mut Region, cfg: &FusionConfig) {
    // Pattern worklist, to fixpoint.
    'changed: loop {
        for i in 0..d.ops.len().saturating_sub(1) {
            let (Some(a), Some(b)) = (task_body(&d.ops[i]), task_body(&d.ops[i + 1])) else {
                continue;
            };
            if cfg.patterns.iter().any(|p| (p.matches)(a, b)) {
                fuse_at(d, i);
                continue 'changed;
            }
        }
        break;
    }
    if cfg.profitability == Profitability::Never {
        return;
    }
    // Least critical adjacent pair, while it does not become critical.
    while d.ops.len() >= 2 {
        let load: Vec<u64> = d
            .ops
            .iter()
            .map(|op| op.region().map_or(0, |r| intensity(program, r)))
            .collect();
        let max = *load.iter().max().expect("non-empty");
        let (i, sum) = (0..load.len() - 1)
            .map(|i| (i, load[i] + load[i + 1]))
            .min_by_key(|&(i, s)| (s, i))
            .expect("at least one pair");
        if sum > max {
            break;
        }
        fuse_at(d, i);
    }
}

/// Canonicalizes the functional hierarchy to a fixpoint: a dispatch with one
/// task becomes that task, a task nested directly in a task is inlined, and
/// empty tasks and dispatches disappear.
pub fn simplify_hierarchy(program: &Program) -> Program {
    let mut p = program.clone();
    while simplify(&mut p.top) {}
    p
}

fn simplify(region: &mut Region) -> bool {
    let mut changed = false;
    for op in &mut region.ops {
        if let Some(r) = op.region_mut() {
            changed |= simplify(r);
        }
    }
    let ops = std::mem::take(&mut region.ops);
    let mut out = Vec::with_capacity(ops.len());
    for op in ops {
        match op {
            Op::Task(r) | Op::Dispatch(r) if r.is_empty() => changed = true,
            Op::Dispatch(mut r) if r.ops.len() == 1 && matches!(r.ops[0], Op::Task(_)) => {
                out.push(r.ops.pop().expect("one op"));
                changed = true;
            }
            Op::Task(r) if r.ops.iter().any(|o| matches!(o, Op::Task(_))) => {
                let mut flat = Vec::new();
                for inner in r.ops {
                    match inner {
                        Op::Task(t) => flat.extend(t.ops),
                        other => flat.push(other),
                    }
                }
                out.push(Op::Task(Region::new(flat)));
                changed = true;
            }
            other => out.push(other),
        }
    }
    region.ops = out;
    changed
}

/// Trip vector of a perfect loop nest, plus its innermost body.
pub fn perfect_nest(op: &Op) -> Option<(Vec<u64>, &Region)> {
    let Op::Loop(l) = op else { return None };
    let mut l: &Loop = l;
    let mut trips = vec![l.trip_count()];
    loop {
        match l.body.ops.as_slice() {
            [Op::Loop(inner)] => {
                trips.push(inner.trip_count());
                l = inner;
            }
            ops if ops.iter().all(|o| matches!(o, Op::Compute(_))) => return Some((trips, &l.body)),
            _ => return None,
        }
    }
}

fn nest_ivs(op: &Op) -> Vec<&str> {
    let mut ivs = Vec::new();
    let mut cur = op;
    while let Op::Loop(l) = cur {
        ivs.push(l.iv.as_str());
        match l.body.ops.as_slice() {
            [inner @ Op::Loop(_)] => cur = inner,
            _ => break,
        }
    }
    ivs
}

/// Common trip vector of a task made only of perfect nests.
fn iteration_space(task: &Region) -> Option<Vec<u64>> {
    let mut space = None;
    for op in &task.ops {
        let (trips, _) = perfect_nest(op)?;
        match &space {
            None => space = Some(trips),
            Some(s) if *s == trips => {}
            Some(_) => return None,
        }
    }
    space
}

/// Like [`iteration_space`], but every access must index dimension `d` with
/// exactly the `d`-th loop of its nest.
fn elementwise_space(task: &Region) -> Option<Vec<u64>> {
    let space = iteration_space(task)?;
    for op in &task.ops {
        let ivs = nest_ivs(op);
        let (_, body) = perfect_nest(op)?;
        let mut ok = true;
        for_each_access(body, &mut |a, _| {
            ok &= a.indices.len() == ivs.len() && a.indices.iter().zip(&ivs).all(|(s, iv)| *s == Subscript::iv(*iv));
        });
        if !ok {
            return None;
        }
    }
    Some(space)
}

/// `next` reads a buffer that `t` writes.
fn connected(t: &Region, next: &Region) -> bool {
    let written: BTreeSet<String> = buffer_effects(t)
        .into_iter()
        .filter(|(_, e)| e.writes())
        .map(|(b, _)| b)
        .collect();
    buffer_effects(next)
        .iter()
        .any(|(b, e)| e.reads() && written.contains(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::frontend::parse_str;

    fn tasks_in_dispatch(p: &Program) -> usize {
        match p.top.ops.as_slice() {
            [Op::Dispatch(d)] => d.ops.len(),
            _ => 0,
        }
    }

    #[test]
    fn listing1_becomes_one_dispatch_of_three_tasks() {
        let p = construct_dataflow(&corpus::load("listing1"));
        assert_eq!(tasks_in_dispatch(&p), 3);
    }

    #[test]
    fn single_loop_is_not_dispatchable() {
        let p = corpus::load("single-loop");
        assert_eq!(construct_dataflow(&p), p);
    }

    #[test]
    fn nested_dispatch_inside_a_loop() {
        let p = construct_dataflow(&corpus::load("jacobi2d-small"));
        let [Op::Loop(t)] = p.top.ops.as_slice() else {
            panic!("{:?}", p.top)
        };
        let [Op::Dispatch(d)] = t.body.ops.as_slice() else {
            panic!()
        };
        assert_eq!(d.ops.len(), 2);
        assert!(d.ops.iter().all(|o| matches!(o, Op::Task(_))));
    }

    #[test]
    fn two_level_nest_hand_trace() {
        // Outer top region has two loops, the first of which holds two more.
        let p = parse_str(
            "array X[4] : f32 @ external; array Y[4] : f32 @ external;\
             for i in 0..4 { for j in 0..4 { Y[j] = X[j]; } for k in 0..4 { Y[k] += X[k]; } }\
             for i in 0..4 { Y[i] = Y[i] * 2.0; }",
            "t",
        )
        .unwrap();
        let p = construct_dataflow(&p);
        let [Op::Dispatch(outer)] = p.top.ops.as_slice() else {
            panic!()
        };
        assert_eq!(outer.ops.len(), 2);
        let Op::Task(t0) = &outer.ops[0] else { panic!() };
        let [Op::Loop(i)] = t0.ops.as_slice() else { panic!() };
        let [Op::Dispatch(inner)] = i.body.ops.as_slice() else {
            panic!()
        };
        assert_eq!(inner.ops.len(), 2);
    }

    #[test]
    fn elementwise_chain_fuses_to_one_task() {
        let p = construct_dataflow(&corpus::load("elementwise-chain"));
        let f = fuse_tasks(&p, &FusionConfig::default());
        assert!(
            matches!(f.top.ops.as_slice(), [Op::Task(t)] if t.ops.len() == 3),
            "{:?}",
            f.top
        );
    }

    #[test]
    fn disabled_fusion_keeps_listing1() {
        let p = construct_dataflow(&corpus::load("listing1"));
        assert_eq!(fuse_tasks(&p, &FusionConfig::disabled()), p);
        // The default patterns find nothing to fuse either.
        assert_eq!(fuse_tasks(&p, &FusionConfig::default()), p);
    }

    #[test]
    fn critical_bound_stops_before_a_new_critical_task() {
        // Intensities 10, 20, 100.
        let p = parse_str(
            "array X[100] : f32 @ external; array Y[100] : f32 @ external;\
             for i in 0..10 { Y[i] = X[i]; }\
             for i in 0..20 { Y[i] = X[i]; }\
             for i in 0..100 { Y[i] = X[i]; }",
            "t",
        )
        .unwrap();
        let p = construct_dataflow(&p);
        let cfg = FusionConfig {
            patterns: vec![],
            profitability: Profitability::CriticalBound,
        };
        let f = fuse_tasks(&p, &cfg);
        let [Op::Dispatch(d)] = f.top.ops.as_slice() else {
            panic!()
        };
        let loads: Vec<u64> = d.ops.iter().map(|t| intensity(&f, t.region().unwrap())).collect();
        assert_eq!(loads, [30, 100]);
    }

    #[test]
    fn simplify_examples() {
        let l = || Op::Loop(Loop::new("i", 4, Region::default()));
        let mut p = Program::new("t");
        p.top = Region::new(vec![Op::Task(Region::new(vec![Op::Task(Region::new(vec![l()]))]))]);
        assert_eq!(simplify_hierarchy(&p).top.ops, vec![Op::Task(Region::new(vec![l()]))]);
        p.top = Region::new(vec![Op::Dispatch(Region::new(vec![Op::Task(Region::new(vec![l()]))]))]);
        assert_eq!(simplify_hierarchy(&p).top.ops, vec![Op::Task(Region::new(vec![l()]))]);
        p.top = Region::new(vec![Op::Task(Region::default()), l()]);
        assert_eq!(simplify_hierarchy(&p).top.ops, vec![l()]);
        let canon = simplify_hierarchy(&p);
        assert_eq!(simplify_hierarchy(&canon), canon);
    }

    #[test]
    fn pattern_names() {
        assert_eq!(patterns_by_name("none").unwrap(), vec![]);
        assert_eq!(
            patterns_by_name("elementwise,producer-consumer").unwrap(),
            vec![ELEMENTWISE, PRODUCER_CONSUMER]
        );
        assert!(patterns_by_name("bogus").is_err());
    }
}
