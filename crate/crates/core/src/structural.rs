//! Structural dataflow optimizations: multi-producer elimination and data
//! path balancing.

use crate::ir::*;
use crate::lowering::{assign_depths, refresh_interfaces};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

/// Producer/consumer graph of one schedule. Soft-FIFO buffers are excluded:
/// their ordering is carried by tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeGraph {
    /// Node ids in textual order.
    pub nodes: Vec<String>,
    /// `(producer, buffer, consumer)` as indices into `nodes`.
    pub edges: Vec<(usize, String, usize)>,
    /// Writers of each buffer, in textual order.
    pub producers: BTreeMap<String, Vec<usize>>,
}

impl NodeGraph {
    pub fn new(program: &Program, schedule: &Schedule) -> NodeGraph {
        let nodes: Vec<&Node> = schedule.nodes().collect();
        let fifo = |b: &str| program.array(b).is_some_and(|a| a.fifo_slots.is_some());
        let mut producers: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut edges = Vec::new();
        for (c, n) in nodes.iter().enumerate() {
            for input in &n.inputs {
                if fifo(&input.buffer) {
                    continue;
                }
                if input.effect.reads() {
                    // The latest earlier writer feeds this read.
                    if let Some(&p) = producers.get(&input.buffer).and_then(|ps| ps.last()) {
                        edges.push((p, input.buffer.clone(), c));
                    }
                }
                if input.effect.writes() {
                    producers.entry(input.buffer.clone()).or_default().push(c);
                }
            }
        }
        NodeGraph {
            nodes: nodes.iter().map(|n| n.id.clone()).collect(),
            edges,
            producers,
        }
    }

    /// Longest-path distance from a source node. Edges always point forward
    /// in textual order, so one sweep suffices.
    pub fn levels(&self) -> Vec<usize> {
        let mut level = vec![0; self.nodes.len()];
        for c in 0..self.nodes.len() {
            for (p, _, _) in self.edges.iter().filter(|e| e.2 == c) {
                level[c] = level[c].max(level[*p] + 1);
            }
        }
        level
    }

    /// True if every node's incoming edges start at the same level.
    pub fn is_balanced(&self) -> bool {
        let level = self.levels();
        (0..self.nodes.len()).all(|c| {
            let froms: BTreeSet<usize> = self.edges.iter().filter(|e| e.2 == c).map(|e| level[e.0]).collect();
            froms.len() <= 1
        })
    }

    pub fn index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == id)
    }
}

/// Fresh `Node<k>` ids past every existing one.
struct IdGen(usize);

impl IdGen {
    fn new(p: &Program) -> IdGen {
        let max = p
            .node_ids()
            .iter()
            .filter_map(|id| id.strip_prefix("Node")?.parse::<usize>().ok())
            .max();
        IdGen(max.map_or(0, |m| m + 1))
    }

    fn next(&mut self) -> String {
        self.0 += 1;
        format!("Node{}", self.0 - 1)
    }
}

/// Visits every schedule, outermost first, with mutable access to the
/// program's declarations.
fn for_each_schedule(p: &mut Program, f: &mut dyn FnMut(&mut Program, &mut Schedule)) {
    fn walk(p: &mut Program, r: &mut Region, f: &mut dyn FnMut(&mut Program, &mut Schedule)) {
        for op in &mut r.ops {
            if let Op::Schedule(s) = op {
                f(p, s);
            }
            if let Some(inner) = op.region_mut() {
                walk(p, inner, f);
            }
        }
    }
    let mut top = std::mem::take(&mut p.top);
    walk(p, &mut top, f);
    p.top = top;
}

fn refresh_schedule(s: &mut Schedule) {
    let mut tmp = Program::new("");
    tmp.top = Region::new(vec![Op::Schedule(std::mem::replace(
        s,
        Schedule {
            inputs: vec![],
            params: vec![],
            body: Region::default(),
        },
    ))]);
    refresh_interfaces(&mut tmp);
    let Some(Op::Schedule(done)) = tmp.top.ops.pop() else {
        unreachable!()
    };
    *s = done;
}

// ---------------------------------------------------------------------------
// Multi-producer elimination.

/// Ensures every buffer has one producing node per schedule.
///
/// Buffers allocated by the schedule get a fresh version per additional
/// producer; a producer that reads the buffer, or may leave part of it
/// untouched, starts by copying the previous version. Every later use sees
/// the new version. Buffers owned elsewhere cannot be versioned, so their
/// producers and everything between them are fused into one node.
pub fn eliminate_multi_producers(program: &Program) -> Program {
    let mut p = program.clone();
    for_each_schedule(&mut p, &mut |p, s| {
        refresh_schedule(s);
        version_internal(p, s);
        fuse_external(p, s);
    });
    refresh_interfaces(&mut p);
    assign_depths(&mut p);
    p
}

fn node_positions(s: &Schedule) -> Vec<usize> {
    s.body
        .ops
        .iter()
        .enumerate()
        .filter(|(_, op)| matches!(op, Op::Node(_)))
        .map(|(i, _)| i)
        .collect()
}

fn version_internal(p: &mut Program, s: &mut Schedule) {
    let owned: Vec<String> = s.allocs().map(str::to_string).collect();
    for b in owned {
        let writers: Vec<String> = s
            .nodes()
            .filter(|n| n.effect_on(&b).is_some_and(Effect::writes))
            .map(|n| n.id.clone())
            .collect();
        if writers.len() < 2 {
            continue;
        }
        let mut cur = b.clone();
        for id in &writers[1..] {
            let w = s
                .body
                .ops
                .iter()
                .position(|op| matches!(op, Op::Node(n) if n.id == *id))
                .expect("writer present");
            let decl = p.array(&cur).expect("allocated buffers are declared").clone();
            let clone_name = p.fresh_name(&format!("{b}_v"));
            let mut clone = decl.clone();
            clone.name = clone_name.clone();
            p.arrays.push(clone);

            let Op::Node(n) = &s.body.ops[w] else { unreachable!() };
            let reads = n.effect_on(&cur).is_some_and(Effect::reads);
            let needs_copy = reads || !fully_overwrites(&n.body, &decl);
            for op in &mut s.body.ops[w..] {
                rename_buffer_in_op(op, &cur, &clone_name);
            }
            if needs_copy {
                let Op::Node(n) = &mut s.body.ops[w] else {
                    unreachable!()
                };
                n.body.ops.insert(
                    0,
                    Op::Copy {
                        src: cur.clone(),
                        dst: clone_name.clone(),
                    },
                );
            }
            let at = s
                .body
                .ops
                .iter()
                .position(|op| matches!(op, Op::Alloc { buffer } if *buffer == cur))
                .expect("version chain is allocated");
            s.body.ops.insert(
                at + 1,
                Op::Alloc {
                    buffer: clone_name.clone(),
                },
            );
            cur = clone_name;
        }
        refresh_schedule(s);
    }
}

fn fuse_external(p: &Program, s: &mut Schedule) {
    loop {
        refresh_schedule(s);
        let owned: HashSet<&str> = s.allocs().collect();
        let mut span = None;
        let mut writers: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for i in node_positions(s) {
            let Op::Node(n) = &s.body.ops[i] else { unreachable!() };
            for input in n.inputs.iter().filter(|x| x.effect.writes()) {
                if !owned.contains(input.buffer.as_str()) && p.array(&input.buffer).is_some() {
                    writers.entry(input.buffer.clone()).or_default().push(i);
                }
            }
        }
        for ws in writers.values() {
            if ws.len() >= 2 {
                span = Some((ws[0], *ws.last().expect("non-empty")));
                break;
            }
        }
        let Some((first, last)) = span else { return };
        // Everything between the first and last producer joins them; allocs
        // in the span stay in front of the fused node.
        let mut merged = Vec::new();
        let mut allocs = Vec::new();
        for op in s.body.ops.drain(first + 1..=last) {
            match op {
                Op::Node(n) => merged.extend(n.body.ops),
                other => allocs.push(other),
            }
        }
        let Op::Node(head) = &mut s.body.ops[first] else {
            unreachable!()
        };
        head.body.ops.extend(merged);
        for (k, a) in allocs.into_iter().enumerate() {
            s.body.ops.insert(first + k, a);
        }
    }
}

/// Whether `body` certainly writes every element of `decl` with plain
/// assignments, judged by enumerating the write footprint. Gives up (false)
/// on large iteration spaces or writes that depend on outer ivs.
pub fn fully_overwrites(body: &Region, decl: &ArrayDecl) -> bool {
    const CAP: u64 = 1 << 20;
    let total = decl.len();
    if total > CAP {
        return false;
    }
    let mut seen = vec![false; total as usize];
    let mut ok = true;
    fn walk(
        r: &Region,
        decl: &ArrayDecl,
        env: &mut Vec<(String, i64, u64)>,
        seen: &mut [bool],
        ok: &mut bool,
        budget: &mut u64,
    ) {
        for op in &r.ops {
            if !*ok {
                return;
            }
            match op {
                Op::Loop(l) => {
                    env.push((l.iv.clone(), 0, l.trip_count()));
                    for k in 0..l.trip_count() {
                        env.last_mut().expect("pushed").1 = l.lower + k as i64 * l.step;
                        walk(&l.body, decl, env, seen, ok, budget);
                        if *budget == 0 {
                            *ok = false;
                        }
                        if !*ok {
                            break;
                        }
                    }
                    env.pop();
                }
                Op::Compute(c) if c.write.array == decl.name && !c.accumulate => {
                    *budget = budget.saturating_sub(1);
                    let mut flat = 0u64;
                    for (s, &extent) in c.write.indices.iter().zip(&decl.shape) {
                        let idx = match s {
                            Subscript::Const(v) => Some(*v),
                            Subscript::Affine { iv, stride, offset } => {
                                env.iter().rev().find(|(n, _, _)| n == iv).and_then(|(_, v, _)| {
                                    let x = stride * Rational::from_integer(*v);
                                    x.is_integer().then(|| x.to_integer() + offset)
                                })
                            }
                            Subscript::Rotating { .. } => None,
                        };
                        match idx {
                            Some(i) if i >= 0 && (i as u64) < extent => flat = flat * extent + i as u64,
                            _ => {
                                *ok = false;
                                return;
                            }
                        }
                    }
                    seen[flat as usize] = true;
                }
                Op::Copy { dst, .. } if *dst == decl.name => seen.iter_mut().for_each(|x| *x = true),
                other => {
                    if let Some(inner) = other.region() {
                        walk(inner, decl, env, seen, ok, budget);
                    }
                }
            }
        }
    }
    let mut budget = CAP;
    walk(body, decl, &mut Vec::new(), &mut seen, &mut ok, &mut budget);
    ok && seen.iter().all(|&x| x)
}

// ---------------------------------------------------------------------------
// Path balancing.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BalanceMode {
    Off,
    /// Duplicate the buffer on the short path through chained copy nodes.
    OnChip,
    /// Move the buffer to external memory as a rotating soft FIFO and order
    /// its producer and consumers with token channels.
    SoftFifo,
}

impl std::str::FromStr for BalanceMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "off" => Ok(BalanceMode::Off),
            "onchip" => Ok(BalanceMode::OnChip),
            "softfifo" => Ok(BalanceMode::SoftFifo),
            other => Err(format!("unknown balance mode `{other}` (onchip, softfifo, off)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BalanceError {
    NoExternalMemory,
}

impl fmt::Display for BalanceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BalanceError::NoExternalMemory => {
                f.write_str("soft FIFOs need external memory, which this configuration does not provide")
            }
        }
    }
}

impl std::error::Error for BalanceError {}

/// Equalizes path lengths into every node.
///
/// `external_memory` says whether soft FIFOs may be placed off-chip; `None`
/// means "if the program already uses external memory".
pub fn balance_paths(
    program: &Program,
    mode: BalanceMode,
    external_memory: Option<bool>,
) -> Result<Program, BalanceError> {
    if mode == BalanceMode::Off {
        return Ok(program.clone());
    }
    if mode == BalanceMode::SoftFifo {
        let available =
            external_memory.unwrap_or_else(|| program.arrays.iter().any(|a| a.placement == Placement::External));
        if !available {
            return Err(BalanceError::NoExternalMemory);
        }
    }
    let mut p = program.clone();
    let mut ids = IdGen::new(&p);
    for_each_schedule(&mut p, &mut |p, s| {
        refresh_schedule(s);
        if mode == BalanceMode::SoftFifo {
            soft_fifos(p, s);
            refresh_schedule(s);
        }
        duplicate(p, s, &mut ids);
        refresh_schedule(s);
    });
    refresh_interfaces(&mut p);
    assign_depths(&mut p);
    Ok(p)
}

fn imbalanced(p: &Program, s: &Schedule) -> Vec<(usize, String, usize, usize)> {
    let g = NodeGraph::new(p, s);
    let level = g.levels();
    g.edges
        .iter()
        .filter_map(|(a, b, c)| {
            let gap = level[*c] - level[*a] - 1;
            (gap > 0).then(|| (*a, b.clone(), *c, gap))
        })
        .collect()
}

fn duplicate(p: &mut Program, s: &mut Schedule, ids: &mut IdGen) {
    let edges = imbalanced(p, s);
    if edges.is_empty() {
        return;
    }
    let g = NodeGraph::new(p, s);
    // Work on node ids: positions shift as copy nodes are inserted.
    for (a, buffer, c, gap) in edges {
        let producer = g.nodes[a].clone();
        let consumer = g.nodes[c].clone();
        let decl = p.array(&buffer).expect("declared").clone();
        let mut chain = Vec::new();
        let mut prev = buffer.clone();
        for _ in 0..gap {
            let mut copy = decl.clone();
            copy.name = p.fresh_name(&format!("{buffer}_d"));
            copy.placement = Placement::OnChip;
            copy.interface = false;
            copy.fifo_slots = None;
            let name = copy.name.clone();
            p.arrays.push(copy);
            chain.push((prev.clone(), name.clone()));
            prev = name;
        }
        let pos = |s: &Schedule, id: &str| {
            s.body
                .ops
                .iter()
                .position(|op| matches!(op, Op::Node(n) if n.id == id))
                .expect("node present")
        };
        let mut at = pos(s, &producer) + 1;
        // Land after copy nodes already placed behind this producer.
        while matches!(&s.body.ops.get(at), Some(Op::Node(n)) if is_copy_node(n)) {
            at += 1;
        }
        for (src, dst) in &chain {
            s.body.ops.insert(
                at,
                Op::Node(Node {
                    id: ids.next(),
                    inputs: Vec::new(),
                    params: Vec::new(),
                    body: Region::new(vec![Op::Copy {
                        src: src.clone(),
                        dst: dst.clone(),
                    }]),
                }),
            );
            at += 1;
        }
        let alloc_at = s
            .body
            .ops
            .iter()
            .take_while(|op| matches!(op, Op::Alloc { .. }))
            .count();
        for (k, (_, dst)) in chain.iter().enumerate() {
            s.body.ops.insert(alloc_at + k, Op::Alloc { buffer: dst.clone() });
        }
        let ci = pos(s, &consumer);
        rename_buffer_in_op(&mut s.body.ops[ci], &buffer, &prev);
    }
}

fn is_copy_node(n: &Node) -> bool {
    matches!(n.body.ops.as_slice(), [Op::Copy { .. }])
}

fn soft_fifos(p: &mut Program, s: &mut Schedule) {
    let edges = imbalanced(p, s);
    let g = NodeGraph::new(p, s);
    let mut gaps: BTreeMap<String, usize> = BTreeMap::new();
    for (_, b, _, gap) in &edges {
        let e = gaps.entry(b.clone()).or_default();
        *e = (*e).max(*gap);
    }
    let owned: HashSet<String> = s.allocs().map(str::to_string).collect();
    for (b, gap) in gaps {
        // Interface buffers stay where the caller expects them, and copies
        // cannot address a rotating slot.
        if !owned.contains(&b) || touches_copy(s, &b) {
            continue;
        }
        let slots = gap as u32 + 2;
        let mut decl = p.array(&b).expect("declared").clone();
        let fifo = p.fresh_name(&format!("{b}_fifo"));
        decl.name = fifo.clone();
        decl.shape.insert(0, slots as u64);
        decl.partition.insert(0, DimPartition::NONE);
        decl.placement = Placement::External;
        decl.interface = false;
        decl.fifo_slots = Some(slots);
        decl.depth = 1;
        p.arrays.push(decl);
        let producer = g.producers[&b][0];
        let consumers: Vec<usize> = g.edges.iter().filter(|e| e.1 == b).map(|e| e.2).collect();
        let chans: Vec<String> = consumers
            .iter()
            .map(|_| {
                let id = p.fresh_name(&format!("{b}_token"));
                p.streams.push(StreamSpec {
                    id: id.clone(),
                    elem: ElemType::I32,
                    entries: slots,
                });
                id
            })
            .collect();
        rename_buffer(&mut s.body, &b, &fifo);
        for_each_access_mut(&mut s.body, &mut |a, _| {
            if a.array == fifo {
                a.indices.insert(0, Subscript::Rotating { slots });
            }
        });
        let mut nodes: Vec<&mut Node> = s.nodes_mut().collect();
        nodes[producer].body.ops.push(Op::TokenSend { chans: chans.clone() });
        for (c, chan) in consumers.iter().zip(&chans) {
            nodes[*c].body.ops.insert(0, Op::TokenRecv { chan: chan.clone() });
        }
        p.arrays.retain(|a| a.name != b);
    }
}

fn touches_copy(s: &Schedule, b: &str) -> bool {
    let mut found = false;
    for_each_op(&s.body, &mut |op| {
        if let Op::Copy { src, dst } = op {
            found |= src == b || dst == b;
        }
    });
    found
}

/// Producers per buffer in every schedule, for invariant checks.
pub fn producer_counts(program: &Program) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for_each_op(&program.top, &mut |op| {
        if let Op::Schedule(s) = op {
            let g = NodeGraph::new(program, s);
            for (b, ps) in &g.producers {
                out.push((b.clone(), ps.len()));
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::functional::{construct_dataflow, fuse_tasks, FusionConfig};
    use crate::interp::{compare, random_inputs, run};
    use crate::lowering::lower_to_structural;

    fn lowered(name: &str) -> Program {
        let p = construct_dataflow(&corpus::load(name));
        let p = fuse_tasks(&p, &FusionConfig::default());
        lower_to_structural(&p).unwrap()
    }

    fn same_outputs(a: &Program, b: &Program) {
        for seed in 0..5 {
            let x = random_inputs(a, seed);
            compare(&run(a, &x).unwrap(), &run(b, &x).unwrap(), 0).unwrap();
        }
    }

    #[test]
    fn internal_multi_producer_is_versioned() {
        let p = lowered("multiproducer-internal");
        let e = eliminate_multi_producers(&p);
        verify(&e).unwrap();
        same_outputs(&p, &e);
        let s = e.top_schedule().unwrap();
        let g = NodeGraph::new(&e, s);
        assert_eq!(g.producers["Buf2"], [0]);
        assert_eq!(g.producers["Buf2_v"], [1]);
        // Node1 read Buf2, so it starts with a copy into the new version.
        let n1 = e.find_node("Node1").unwrap();
        assert_eq!(
            n1.body.ops[0],
            Op::Copy {
                src: "Buf2".into(),
                dst: "Buf2_v".into()
            }
        );
        assert_eq!(e.find_node("Node2").unwrap().inputs[0].buffer, "Buf2_v");
    }

    #[test]
    fn full_overwrite_needs_no_copy() {
        let src = "array X[8] : f32 @ external; array T[8] : f32 @ onchip;\
                   array Y[8] : f32 @ external; array Z[8] : f32 @ external;\
                   for i in 0..8 { T[i] = X[i]; }\
                   for i in 0..8 { Y[i] = T[7 - i]; }\
                   for i in 0..8 { T[7 - i] = X[i] * 2.0; }\
                   for i in 0..8 { Z[i] = T[i]; }";
        let p = construct_dataflow(&crate::frontend::parse_str(src, "t").unwrap());
        let p = lower_to_structural(&fuse_tasks(&p, &FusionConfig::disabled())).unwrap();
        let e = eliminate_multi_producers(&p);
        verify(&e).unwrap();
        same_outputs(&p, &e);
        let n2 = e.find_node("Node2").unwrap();
        assert!(!matches!(n2.body.ops[0], Op::Copy { .. }));
    }

    #[test]
    fn external_producers_are_fused() {
        let p = lowered("multiproducer-external");
        let e = eliminate_multi_producers(&p);
        verify(&e).unwrap();
        same_outputs(&p, &e);
        let g = NodeGraph::new(&e, e.top_schedule().unwrap());
        assert_eq!(g.producers["Buf2"].len(), 1);
        assert_eq!(g.nodes.len(), 2);
    }

    #[test]
    fn single_producer_unchanged() {
        let p = lowered("listing1");
        assert_eq!(eliminate_multi_producers(&p), p);
    }

    #[test]
    fn footprint() {
        let p = corpus::load("listing1");
        let a = p.array("A").unwrap();
        let Op::Loop(l) = &p.top.ops[0] else { panic!() };
        assert!(fully_overwrites(&Region::new(vec![Op::Loop(l.clone())]), a));
        let Op::Loop(l2) = &p.top.ops[2] else { panic!() };
        let c = p.array("C").unwrap();
        assert!(!fully_overwrites(&Region::new(vec![Op::Loop(l2.clone())]), c));
    }

    #[test]
    fn diamond_onchip() {
        let p = lowered("diamond");
        assert!(!NodeGraph::new(&p, p.top_schedule().unwrap()).is_balanced());
        let b = balance_paths(&p, BalanceMode::OnChip, None).unwrap();
        verify(&b).unwrap();
        same_outputs(&p, &b);
        let g = NodeGraph::new(&b, b.top_schedule().unwrap());
        assert!(g.is_balanced());
        assert_eq!(g.nodes, ["Node0", "Node3", "Node1", "Node2"]);
        assert!(is_copy_node(b.find_node("Node3").unwrap()));
        assert!(b.find_node("Node2").unwrap().input("T_d").is_some());
    }

    #[test]
    fn diamond_softfifo() {
        let p = lowered("diamond");
        let b = balance_paths(&p, BalanceMode::SoftFifo, None).unwrap();
        verify(&b).unwrap();
        same_outputs(&p, &b);
        let fifo = b.array("T_fifo").unwrap();
        assert_eq!(fifo.fifo_slots, Some(3));
        assert_eq!(fifo.shape, [3, 16, 16]);
        let mut sends = 0;
        let mut recvs = 0;
        for_each_op(&b.top, &mut |op| match op {
            Op::TokenSend { chans } => sends += chans.len().min(1),
            Op::TokenRecv { .. } => recvs += 1,
            _ => {}
        });
        assert_eq!((sends, recvs), (1, 2));
        assert!(NodeGraph::new(&b, b.top_schedule().unwrap()).is_balanced());
    }

    #[test]
    fn softfifo_needs_external_memory() {
        let p = lowered("diamond");
        assert_eq!(
            balance_paths(&p, BalanceMode::SoftFifo, Some(false)),
            Err(BalanceError::NoExternalMemory)
        );
    }

    #[test]
    fn balanced_chain_unchanged() {
        let p = lowered("listing1");
        assert_eq!(balance_paths(&p, BalanceMode::OnChip, None).unwrap(), p);
    }
}
