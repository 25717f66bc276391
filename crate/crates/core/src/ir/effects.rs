//! Memory-effect and live-in analysis.
//!
//! Effects are always recomputed from the accesses in a region; declared
//! effects on nodes are only a cache checked by the verifier.

use super::{for_each_op, Access, Effect, Node, Op, Region, Subscript};
use std::collections::{BTreeSet, HashMap};

#[derive(Default)]
struct EffectScan {
    order: Vec<String>,
    state: HashMap<String, Effect>,
    allocated: BTreeSet<String>,
    /// Accesses written so far in the enclosing loop bodies. A read of a
    /// write-first buffer keeps it write-only only if it hits one of these.
    written: Vec<Access>,
}

impl EffectScan {
    fn touch(&mut self, buffer: &str, write: bool) {
        match self.state.get_mut(buffer) {
            None => {
                self.order.push(buffer.to_string());
                let e = if write { Effect::WriteOnly } else { Effect::ReadOnly };
                self.state.insert(buffer.to_string(), e);
            }
            Some(e @ Effect::ReadOnly) if write => *e = Effect::ReadWrite,
            Some(_) => {}
        }
    }

    fn read(&mut self, access: &Access) {
        if self.state.get(&access.array) == Some(&Effect::WriteOnly) && !self.written.contains(access) {
            self.state.insert(access.array.clone(), Effect::ReadWrite);
        }
        self.touch(&access.array, false);
    }

    fn scan(&mut self, region: &Region) {
        for op in &region.ops {
            match op {
                Op::Compute(c) => {
                    for r in &c.reads {
                        self.read(r);
                    }
                    if c.accumulate {
                        self.read(&c.write);
                    }
                    self.touch(&c.write.array, true);
                    self.written.push(c.write.clone());
                }
                Op::Copy { src, dst } => {
                    self.touch(src, false);
                    self.touch(dst, true);
                }
                Op::Alloc { buffer } => {
                    self.allocated.insert(buffer.clone());
                }
                other => {
                    if let Some(r) = other.region() {
                        let mark = self.written.len();
                        self.scan(r);
                        self.written.truncate(mark);
                    }
                }
            }
        }
    }
}

/// Effects of `region` on every buffer it touches, in order of first access.
/// Buffers allocated inside the region are excluded.
pub fn buffer_effects(region: &Region) -> Vec<(String, Effect)> {
    let mut scan = EffectScan::default();
    scan.scan(region);
    let EffectScan {
        order,
        state,
        allocated,
        ..
    } = scan;
    order
        .into_iter()
        .filter(|b| !allocated.contains(b))
        .map(|b| {
            let e = state[&b];
            (b, e)
        })
        .collect()
}

/// Effects a node's body has on its live-in buffers, grouped by effect
/// (read-only, write-only, read-write) and ordered by first access within a
/// group.
pub fn node_effects(node: &Node) -> Vec<(String, Effect)> {
    let mut effects = buffer_effects(&node.body);
    effects.sort_by_key(|(_, e)| *e);
    effects
}

/// Buffers read or written in `region`, excluding those allocated inside it.
pub fn accessed_buffers(region: &Region) -> Vec<String> {
    buffer_effects(region).into_iter().map(|(b, _)| b).collect()
}

/// Induction variables used in `region` but not bound by a loop inside it,
/// in order of first use. Node/schedule params count as uses.
pub fn free_ivs(region: &Region) -> Vec<String> {
    fn walk(region: &Region, bound: &mut Vec<String>, out: &mut Vec<String>) {
        let use_iv = |iv: &str, bound: &Vec<String>, out: &mut Vec<String>| {
            if !bound.iter().any(|b| b == iv) && !out.iter().any(|o| o == iv) {
                out.push(iv.to_string());
            }
        };
        for op in &region.ops {
            match op {
                Op::Loop(l) => {
                    bound.push(l.iv.clone());
                    walk(&l.body, bound, out);
                    bound.pop();
                }
                Op::Compute(c) => {
                    for a in c.reads.iter().chain(std::iter::once(&c.write)) {
                        for s in &a.indices {
                            if let Subscript::Affine { iv, .. } = s {
                                use_iv(iv, bound, out);
                            }
                        }
                    }
                }
                Op::Node(n) => {
                    for p in &n.params {
                        use_iv(p, bound, out);
                    }
                    walk(&n.body, bound, out);
                }
                Op::Schedule(s) => {
                    for p in &s.params {
                        use_iv(p, bound, out);
                    }
                    walk(&s.body, bound, out);
                }
                other => {
                    if let Some(r) = other.region() {
                        walk(r, bound, out);
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(region, &mut Vec::new(), &mut out);
    out
}

/// True if `region` touches a soft FIFO (uses the frame counter).
pub fn uses_frame(region: &Region) -> bool {
    let mut found = false;
    for_each_op(region, &mut |op| {
        if let Op::Compute(c) = op {
            found |= c
                .reads
                .iter()
                .chain(std::iter::once(&c.write))
                .any(|a| a.indices.iter().any(|s| matches!(s, Subscript::Rotating { .. })));
        }
    });
    found
}
