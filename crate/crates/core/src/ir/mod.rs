//! Hierarchical dataflow IR.
//!
//! A [`Program`] is a tree of [`Region`]s. Two dataflow levels share the same
//! op set:
//!
//! - **Functional**: [`Op::Dispatch`] / [`Op::Task`] are transparent and may
//!   reference anything visible in an enclosing scope.
//! - **Structural**: [`Op::Schedule`] / [`Op::Node`] are isolated; every
//!   buffer and induction variable they touch is declared on the op.
//!
//! Buffers are program-level [`ArrayDecl`]s. An [`Op::Alloc`] marks the
//! schedule that owns an internal buffer.

mod effects;
mod text;
mod verify;
mod walk;

pub use effects::{accessed_buffers, buffer_effects, free_ivs, node_effects, uses_frame};
pub use text::{dump, load};
pub use verify::{verify, Diagnostic, DiagnosticKind};
pub use walk::{
    for_each_access, for_each_access_mut, for_each_op, for_each_op_mut, rename_buffer, rename_buffer_in_op,
};

use num_rational::Ratio;
use std::fmt;

pub type Rational = Ratio<i64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElemType {
    I32,
    F32,
}

impl ElemType {
    pub fn bits(self) -> u64 {
        32
    }

    pub fn is_float(self) -> bool {
        matches!(self, ElemType::F32)
    }
}

impl fmt::Display for ElemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElemType::I32 => "i32",
            ElemType::F32 => "f32",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Placement {
    OnChip,
    External,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::OnChip => "onchip",
            Placement::External => "external",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PartitionFashion {
    None,
    Cyclic,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DimPartition {
    pub fashion: PartitionFashion,
    pub factor: u32,
}

impl DimPartition {
    pub const NONE: DimPartition = DimPartition {
        fashion: PartitionFashion::None,
        factor: 1,
    };

    pub fn cyclic(factor: u32) -> Self {
        if factor <= 1 {
            Self::NONE
        } else {
            DimPartition {
                fashion: PartitionFashion::Cyclic,
                factor,
            }
        }
    }
}

/// A buffer: shape, element type, placement and memory layout.
///
/// `interface` arrays are parameters of the top function; everything else is
/// owned by the design. Soft FIFOs carry their slot count in `fifo_slots` and
/// have the slot dimension as their leading extent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayDecl {
    pub name: String,
    pub shape: Vec<u64>,
    pub elem: ElemType,
    pub placement: Placement,
    pub interface: bool,
    pub partition: Vec<DimPartition>,
    pub depth: u32,
    pub fifo_slots: Option<u32>,
}

impl ArrayDecl {
    pub fn new(name: impl Into<String>, shape: Vec<u64>, elem: ElemType, placement: Placement) -> Self {
        let rank = shape.len();
        ArrayDecl {
            name: name.into(),
            shape,
            elem,
            placement,
            interface: placement == Placement::External,
            partition: vec![DimPartition::NONE; rank],
            depth: 1,
            fifo_slots: None,
        }
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> u64 {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn banks(&self) -> u64 {
        self.partition.iter().map(|p| p.factor as u64).product()
    }

    /// Buffers owned by a schedule: on-chip and invisible from outside.
    pub fn is_internal(&self) -> bool {
        !self.interface && self.placement == Placement::OnChip
    }
}

/// Token channel or data stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamSpec {
    pub id: String,
    pub elem: ElemType,
    pub entries: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortKind {
    MemoryMapped,
    Stream,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortSpec {
    pub id: String,
    pub kind: PortKind,
    pub latency: u32,
}

/// One array dimension of an access.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Subscript {
    Const(i64),
    /// `stride * iv + offset`
    Affine {
        iv: String,
        stride: Rational,
        offset: i64,
    },
    /// `frame mod slots`: the rotating slot of a soft FIFO.
    Rotating {
        slots: u32,
    },
}

impl Subscript {
    pub fn iv(name: impl Into<String>) -> Self {
        Subscript::Affine {
            iv: name.into(),
            stride: Rational::from_integer(1),
            offset: 0,
        }
    }

    pub fn affine(name: impl Into<String>, stride: i64, offset: i64) -> Self {
        Subscript::Affine {
            iv: name.into(),
            stride: Rational::from_integer(stride),
            offset,
        }
    }

    pub fn iv_name(&self) -> Option<&str> {
        match self {
            Subscript::Affine { iv, .. } => Some(iv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Access {
    pub array: String,
    pub indices: Vec<Subscript>,
}

impl Access {
    pub fn new(array: impl Into<String>, indices: Vec<Subscript>) -> Self {
        Access {
            array: array.into(),
            indices,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Literal {
    Int(i64),
    Float(f32),
}

impl Eq for Literal {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

/// Right-hand side of a compute statement. `Read(i)` refers to
/// `Compute::reads[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Lit(Literal),
    Read(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn count_ops(&self, pred: &dyn Fn(BinOp) -> bool) -> u32 {
        match self {
            Expr::Lit(_) | Expr::Read(_) => 0,
            Expr::Neg(e) => e.count_ops(pred),
            Expr::Bin(op, a, b) => u32::from(pred(*op)) + a.count_ops(pred) + b.count_ops(pred),
        }
    }
}

/// A single assignment `write (=|+=) expr`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Compute {
    pub write: Access,
    pub accumulate: bool,
    pub reads: Vec<Access>,
    pub expr: Expr,
    /// Arithmetic operators executed per instance, including the implicit
    /// add of an accumulation.
    pub opcount: u32,
}

impl Compute {
    pub fn new(write: Access, accumulate: bool, reads: Vec<Access>, expr: Expr) -> Self {
        let opcount = expr.count_ops(&|_| true) + u32::from(accumulate);
        Compute {
            write,
            accumulate,
            reads,
            expr,
            opcount,
        }
    }

    /// Number of multiplications per instance (MACs when accumulating).
    pub fn muls(&self) -> u32 {
        self.expr.count_ops(&|op| matches!(op, BinOp::Mul))
    }

    pub fn adds(&self) -> u32 {
        self.expr.count_ops(&|op| matches!(op, BinOp::Add | BinOp::Sub)) + u32::from(self.accumulate)
    }

    pub fn divs(&self) -> u32 {
        self.expr.count_ops(&|op| matches!(op, BinOp::Div))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Loop {
    pub iv: String,
    pub lower: i64,
    pub upper: i64,
    pub step: i64,
    pub body: Region,
    /// Some `+=` statement in the body does not index its target with `iv`.
    pub reduction: bool,
    pub unroll: u32,
    pub tile: Option<u32>,
}

impl Loop {
    pub fn new(iv: impl Into<String>, upper: i64, body: Region) -> Self {
        Loop {
            iv: iv.into(),
            lower: 0,
            upper,
            step: 1,
            body,
            reduction: false,
            unroll: 1,
            tile: None,
        }
    }

    pub fn trip_count(&self) -> u64 {
        if self.step <= 0 || self.upper <= self.lower {
            return 0;
        }
        ((self.upper - self.lower + self.step - 1) / self.step) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Effect {
    ReadOnly,
    WriteOnly,
    ReadWrite,
}

impl Effect {
    pub fn reads(self) -> bool {
        matches!(self, Effect::ReadOnly | Effect::ReadWrite)
    }

    pub fn writes(self) -> bool {
        matches!(self, Effect::WriteOnly | Effect::ReadWrite)
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Effect::ReadOnly => "ro",
            Effect::WriteOnly => "wo",
            Effect::ReadWrite => "rw",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeInput {
    pub buffer: String,
    pub effect: Effect,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub inputs: Vec<NodeInput>,
    /// Induction variables of enclosing loops used inside the node.
    pub params: Vec<String>,
    pub body: Region,
}

impl Node {
    pub fn input(&self, buffer: &str) -> Option<&NodeInput> {
        self.inputs.iter().find(|i| i.buffer == buffer)
    }

    pub fn effect_on(&self, buffer: &str) -> Option<Effect> {
        self.input(buffer).map(|i| i.effect)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub inputs: Vec<String>,
    pub params: Vec<String>,
    pub body: Region,
}

impl Schedule {
    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.body.ops.iter().filter_map(|op| match op {
            Op::Node(n) => Some(n),
            _ => None,
        })
    }

    pub fn nodes_mut(&mut self) -> impl Iterator<Item = &mut Node> {
        self.body.ops.iter_mut().filter_map(|op| match op {
            Op::Node(n) => Some(n),
            _ => None,
        })
    }

    pub fn allocs(&self) -> impl Iterator<Item = &str> {
        self.body.ops.iter().filter_map(|op| match op {
            Op::Alloc { buffer } => Some(buffer.as_str()),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Loop(Loop),
    Compute(Compute),
    Task(Region),
    Dispatch(Region),
    Node(Node),
    Schedule(Schedule),
    Alloc {
        buffer: String,
    },
    Copy {
        src: String,
        dst: String,
    },
    /// One token pushed to each listed channel.
    TokenSend {
        chans: Vec<String>,
    },
    TokenRecv {
        chan: String,
    },
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Loop(_) => "for",
            Op::Compute(_) => "compute",
            Op::Task(_) => "task",
            Op::Dispatch(_) => "dispatch",
            Op::Node(_) => "node",
            Op::Schedule(_) => "schedule",
            Op::Alloc { .. } => "alloc",
            Op::Copy { .. } => "copy",
            Op::TokenSend { .. } => "token.send",
            Op::TokenRecv { .. } => "token.recv",
        }
    }

    pub fn region(&self) -> Option<&Region> {
        match self {
            Op::Loop(l) => Some(&l.body),
            Op::Task(r) | Op::Dispatch(r) => Some(r),
            Op::Node(n) => Some(&n.body),
            Op::Schedule(s) => Some(&s.body),
            _ => None,
        }
    }

    pub fn region_mut(&mut self) -> Option<&mut Region> {
        match self {
            Op::Loop(l) => Some(&mut l.body),
            Op::Task(r) | Op::Dispatch(r) => Some(r),
            Op::Node(n) => Some(&mut n.body),
            Op::Schedule(s) => Some(&mut s.body),
            _ => None,
        }
    }

    pub fn is_iterative(&self) -> bool {
        matches!(self, Op::Loop(_))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Region {
    pub ops: Vec<Op>,
}

impl Region {
    pub fn new(ops: Vec<Op>) -> Self {
        Region { ops }
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub name: String,
    pub arrays: Vec<ArrayDecl>,
    pub streams: Vec<StreamSpec>,
    pub ports: Vec<PortSpec>,
    pub top: Region,
}

impl Program {
    pub fn new(name: impl Into<String>) -> Self {
        Program {
            name: name.into(),
            arrays: Vec::new(),
            streams: Vec::new(),
            ports: Vec::new(),
            top: Region::default(),
        }
    }

    pub fn array(&self, name: &str) -> Option<&ArrayDecl> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn array_mut(&mut self, name: &str) -> Option<&mut ArrayDecl> {
        self.arrays.iter_mut().find(|a| a.name == name)
    }

    /// Interface arrays written somewhere in the program.
    pub fn outputs(&self) -> Vec<String> {
        let mut written = std::collections::BTreeSet::new();
        for_each_op(&self.top, &mut |op| match op {
            Op::Compute(c) => {
                written.insert(c.write.array.clone());
            }
            Op::Copy { dst, .. } => {
                written.insert(dst.clone());
            }
            _ => {}
        });
        self.arrays
            .iter()
            .filter(|a| a.interface && written.contains(&a.name))
            .map(|a| a.name.clone())
            .collect()
    }

    /// A name not yet used by any array or stream, derived from `base`.
    pub fn fresh_name(&self, base: &str) -> String {
        let taken = |n: &str| self.array(n).is_some() || self.streams.iter().any(|s| s.id == n);
        if !taken(base) {
            return base.to_string();
        }
        (1..)
            .map(|i| format!("{base}_{i}"))
            .find(|n| !taken(n))
            .expect("unbounded")
    }

    /// Top-level schedule of a structural program.
    pub fn top_schedule(&self) -> Option<&Schedule> {
        match self.top.ops.as_slice() {
            [Op::Schedule(s)] => Some(s),
            _ => None,
        }
    }

    pub fn top_schedule_mut(&mut self) -> Option<&mut Schedule> {
        match self.top.ops.as_mut_slice() {
            [Op::Schedule(s)] => Some(s),
            _ => None,
        }
    }

    pub fn is_structural(&self) -> bool {
        self.top_schedule().is_some()
    }

    /// Node ids in pre-order, including nodes of nested schedules.
    pub fn node_ids(&self) -> Vec<String> {
        let mut ids = Vec::new();
        for_each_op(&self.top, &mut |op| {
            if let Op::Node(n) = op {
                ids.push(n.id.clone());
            }
        });
        ids
    }

    pub fn find_node(&self, id: &str) -> Option<&Node> {
        fn find<'a>(r: &'a Region, id: &str) -> Option<&'a Node> {
            for op in &r.ops {
                if let Op::Node(n) = op {
                    if n.id == id {
                        return Some(n);
                    }
                }
                if let Some(found) = op.region().and_then(|r| find(r, id)) {
                    return Some(found);
                }
            }
            None
        }
        find(&self.top, id)
    }

    /// First free `Node<k>` identifier.
    pub fn fresh_node_id(&self) -> String {
        let ids = self.node_ids();
        (0..)
            .map(|i| format!("Node{i}"))
            .find(|n| !ids.contains(n))
            .expect("unbounded")
    }
}

/// Statement instances executed by a region: every compute counts once per
/// enclosing iteration, a copy once per element.
pub fn intensity(program: &Program, region: &Region) -> u64 {
    region
        .ops
        .iter()
        .map(|op| match op {
            Op::Loop(l) => l.trip_count() * intensity(program, &l.body),
            Op::Compute(_) => 1,
            Op::Copy { dst, .. } => program.array(dst).map_or(0, |a| a.len()),
            other => other.region().map_or(0, |r| intensity(program, r)),
        })
        .sum()
}
