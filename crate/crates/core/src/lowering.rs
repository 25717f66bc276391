//! Functional to structural lowering.
//!
//! Dispatches become schedules and their tasks become isolated nodes. Every
//! internal buffer gets an `alloc` in the top schedule; node and schedule
//! interfaces (live-in buffers, effects, induction variables) are derived
//! from the bodies.

use crate::ir::*;
use std::collections::BTreeSet;
use std::fmt;

/// Memory-mapped port latency in cycles for external interface arrays.
pub const DEFAULT_PORT_LATENCY: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LowerError {
    AlreadyStructural,
    Unresolved { buffer: String },
}

impl fmt::Display for LowerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LowerError::AlreadyStructural => f.write_str("program already contains schedules or nodes"),
            LowerError::Unresolved { buffer } => write!(f, "live-in `{buffer}` is not a declared buffer"),
        }
    }
}

impl std::error::Error for LowerError {}

pub fn lower_to_structural(program: &Program) -> Result<Program, LowerError> {
    let mut structural = false;
    for_each_op(&program.top, &mut |op| {
        structural |= matches!(op, Op::Node(_) | Op::Schedule(_));
    });
    if structural {
        return Err(LowerError::AlreadyStructural);
    }
    for b in accessed_buffers(&program.top) {
        if program.array(&b).is_none() {
            return Err(LowerError::Unresolved { buffer: b });
        }
    }

    let mut p = program.clone();
    let top = std::mem::take(&mut p.top);
    let mut body = match <[Op; 1]>::try_from(top.ops) {
        Ok([Op::Dispatch(d)]) => schedule_body(d),
        Ok([other]) => vec![node(vec![other])],
        Err(ops) if ops.is_empty() => Vec::new(),
        Err(ops) => vec![node(ops)],
    };

    // Buffers that nothing touches are dead.
    let used: BTreeSet<String> = accessed_buffers(&Region::new(body.clone())).into_iter().collect();
    p.arrays.retain(|a| !a.is_internal() || used.contains(&a.name));
    let allocs: Vec<Op> = p
        .arrays
        .iter()
        .filter(|a| a.is_internal())
        .map(|a| Op::Alloc { buffer: a.name.clone() })
        .collect();
    body.splice(0..0, allocs);
    p.top = Region::new(vec![Op::Schedule(Schedule {
        inputs: Vec::new(),
        params: Vec::new(),
        body: Region::new(body),
    })]);

    number_nodes(&mut p);
    refresh_interfaces(&mut p);
    assign_depths(&mut p);
    p.ports = p
        .arrays
        .iter()
        .filter(|a| a.interface && a.placement == Placement::External)
        .map(|a| PortSpec {
            id: a.name.clone(),
            kind: PortKind::MemoryMapped,
            latency: DEFAULT_PORT_LATENCY,
        })
        .collect();
    Ok(p)
}

fn node(ops: Vec<Op>) -> Op {
    Op::Node(Node {
        id: String::new(),
        inputs: Vec::new(),
        params: Vec::new(),
        body: Region::new(convert(ops)),
    })
}

fn schedule_body(dispatch: Region) -> Vec<Op> {
    dispatch
        .ops
        .into_iter()
        .map(|op| match op {
            Op::Task(t) => node(t.ops),
            other => node(vec![other]),
        })
        .collect()
}

/// Lowers the inside of a node: nested dispatches become schedules and
/// stray tasks are inlined.
fn convert(ops: Vec<Op>) -> Vec<Op> {
    let mut out = Vec::with_capacity(ops.len());
    for op in ops {
        match op {
            Op::Dispatch(d) => out.push(Op::Schedule(Schedule {
                inputs: Vec::new(),
                params: Vec::new(),
                body: Region::new(schedule_body(d)),
            })),
            Op::Task(t) => out.extend(convert(t.ops)),
            Op::Loop(mut l) => {
                l.body = Region::new(convert(std::mem::take(&mut l.body.ops)));
                out.push(Op::Loop(l));
            }
            other => out.push(other),
        }
    }
    out
}

/// Gives every node a `Node<k>` id in pre-order.
pub fn number_nodes(p: &mut Program) {
    let mut k = 0;
    for_each_op_mut(&mut p.top, &mut |op| {
        if let Op::Node(n) = op {
            n.id = format!("Node{k}");
            k += 1;
        }
    });
}

/// Recomputes node inputs/effects/params and schedule inputs/params from
/// the bodies, innermost first.
pub fn refresh_interfaces(p: &mut Program) {
    refresh_region(&mut p.top);
}

fn refresh_region(r: &mut Region) {
    for op in &mut r.ops {
        if let Some(inner) = op.region_mut() {
            refresh_region(inner);
        }
        match op {
            Op::Node(n) => {
                n.inputs = node_effects(n)
                    .into_iter()
                    .map(|(buffer, effect)| NodeInput { buffer, effect })
                    .collect();
                n.params = free_ivs(&n.body);
            }
            Op::Schedule(s) => {
                s.inputs = accessed_buffers(&s.body);
                s.params = free_ivs(&s.body);
            }
            _ => {}
        }
    }
}

/// Ping-pong depth: 2 for on-chip buffers shared by two or more nodes of one
/// schedule, 1 otherwise.
pub fn assign_depths(p: &mut Program) {
    let mut shared = BTreeSet::new();
    for_each_op(&p.top, &mut |op| {
        if let Op::Schedule(s) = op {
            let mut seen = BTreeSet::new();
            for n in s.nodes() {
                for i in &n.inputs {
                    if !seen.insert(i.buffer.clone()) {
                        shared.insert(i.buffer.clone());
                    }
                }
            }
        }
    });
    for a in &mut p.arrays {
        if a.placement == Placement::OnChip {
            a.depth = if shared.contains(&a.name) { 2 } else { 1 };
        }
    }
}
