use super::{Access, Op, Region};

/// Pre-order visit of every op in `region`, recursing into nested regions.
pub fn for_each_op<'a>(region: &'a Region, f: &mut dyn FnMut(&'a Op)) {
    for op in &region.ops {
        f(op);
        if let Some(r) = op.region() {
            for_each_op(r, f);
        }
    }
}

pub fn for_each_op_mut(region: &mut Region, f: &mut dyn FnMut(&mut Op)) {
    for op in &mut region.ops {
        f(op);
        if let Some(r) = op.region_mut() {
            for_each_op_mut(r, f);
        }
    }
}

/// Visits every array access of every compute, `(access, is_write)`.
/// Reads of a statement are visited before its write.
pub fn for_each_access<'a>(region: &'a Region, f: &mut dyn FnMut(&'a Access, bool)) {
    for_each_op(region, &mut |op| {
        if let Op::Compute(c) = op {
            for r in &c.reads {
                f(r, false);
            }
            f(&c.write, true);
        }
    });
}

pub fn for_each_access_mut(region: &mut Region, f: &mut dyn FnMut(&mut Access, bool)) {
    for_each_op_mut(region, &mut |op| {
        if let Op::Compute(c) = op {
            for r in &mut c.reads {
                f(r, false);
            }
            f(&mut c.write, true);
        }
    });
}

/// Replaces every reference to buffer `from` with `to` inside `region`:
/// accesses, copies, node/schedule inputs and allocs.
pub fn rename_buffer(region: &mut Region, from: &str, to: &str) {
    for_each_op_mut(region, &mut |op| match op {
        Op::Compute(c) => {
            for a in c.reads.iter_mut().chain(std::iter::once(&mut c.write)) {
                if a.array == from {
                    a.array = to.to_string();
                }
            }
        }
        Op::Copy { src, dst } => {
            if src == from {
                *src = to.to_string();
            }
            if dst == from {
                *dst = to.to_string();
            }
        }
        Op::Node(n) => {
            for i in &mut n.inputs {
                if i.buffer == from {
                    i.buffer = to.to_string();
                }
            }
        }
        Op::Schedule(s) => {
            for i in &mut s.inputs {
                if i == from {
                    *i = to.to_string();
                }
            }
        }
        Op::Alloc { buffer } if buffer == from => *buffer = to.to_string(),
        _ => {}
    });
}

/// Like [`rename_buffer`] but for a single op and everything below it.
pub fn rename_buffer_in_op(op: &mut Op, from: &str, to: &str) {
    let mut tmp = Region::new(vec![std::mem::replace(op, Op::Task(Region::default()))]);
    rename_buffer(&mut tmp, from, to);
    *op = tmp.ops.pop().expect("one op");
}
