//! Reference interpreter.
//!
//! Runs any stage of a program (functional or structural) sequentially.
//! Dataflow ops are plain sequencing here; unroll, tile, partition and depth
//! annotations have no semantic effect. Soft-FIFO slots rotate with the
//! frame counter and token channels are checked as ordering constraints.

use crate::ir::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

/// Contents of one array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub enum Data {
    F32(Vec<f32>),
    I32(Vec<i32>),
}

impl Data {
    pub fn zeros(elem: ElemType, len: usize) -> Self {
        match elem {
            ElemType::F32 => Data::F32(vec![0.0; len]),
            ElemType::I32 => Data::I32(vec![0; len]),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Data::F32(v) => v.len(),
            Data::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn elem(&self) -> ElemType {
        match self {
            Data::F32(_) => ElemType::F32,
            Data::I32(_) => ElemType::I32,
        }
    }

    fn get_f32(&self, i: usize) -> f32 {
        match self {
            Data::F32(v) => v[i],
            Data::I32(v) => v[i] as f32,
        }
    }

    fn get_i32(&self, i: usize) -> i32 {
        match self {
            Data::F32(v) => v[i] as i32,
            Data::I32(v) => v[i],
        }
    }

    /// Parses whitespace/comma separated values.
    pub fn parse(elem: ElemType, text: &str) -> Result<Self, String> {
        let items = text
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty());
        match elem {
            ElemType::F32 => items
                .map(|s| s.parse::<f32>().map_err(|e| format!("`{s}`: {e}")))
                .collect::<Result<_, _>>()
                .map(Data::F32),
            ElemType::I32 => items
                .map(|s| s.parse::<i32>().map_err(|e| format!("`{s}`: {e}")))
                .collect::<Result<_, _>>()
                .map(Data::I32),
        }
    }

    /// One value per line in a form that parses back exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match self {
            Data::F32(v) => v.iter().for_each(|x| out.push_str(&format!("{x:?}\n"))),
            Data::I32(v) => v.iter().for_each(|x| out.push_str(&format!("{x}\n"))),
        }
        out
    }
}

pub type Buffers = BTreeMap<String, Data>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InterpError {
    MissingInput(String),
    ShapeMismatch {
        array: String,
        expected: usize,
        got: usize,
    },
    OutOfBounds {
        path: String,
        array: String,
        dim: usize,
        index: i64,
        extent: u64,
        ivs: String,
    },
    NonIntegralIndex {
        path: String,
        array: String,
        ivs: String,
    },
    Uninitialized {
        path: String,
        array: String,
        ivs: String,
    },
    DivisionByZero {
        path: String,
        ivs: String,
    },
    TokenUnderflow {
        chan: String,
    },
    Unresolved(String),
}

impl fmt::Display for InterpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InterpError::MissingInput(a) => write!(f, "no input given for interface array `{a}`"),
            InterpError::ShapeMismatch { array, expected, got } => {
                write!(f, "input `{array}` has {got} values, expected {expected}")
            }
            InterpError::OutOfBounds {
                path,
                array,
                dim,
                index,
                extent,
                ivs,
            } => write!(
                f,
                "{path}: index {index} out of bounds for dimension {dim} of `{array}` (extent {extent}) at {ivs}"
            ),
            InterpError::NonIntegralIndex { path, array, ivs } => {
                write!(f, "{path}: non-integral index into `{array}` at {ivs}")
            }
            InterpError::Uninitialized { path, array, ivs } => {
                write!(f, "{path}: read of uninitialized element of `{array}` at {ivs}")
            }
            InterpError::DivisionByZero { path, ivs } => write!(f, "{path}: integer division by zero at {ivs}"),
            InterpError::TokenUnderflow { chan } => write!(f, "token.recv on empty channel `{chan}`"),
            InterpError::Unresolved(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for InterpError {}

#[derive(Debug, Clone, Copy)]
pub struct Options {
    /// Error on reads of never-written elements of non-input arrays instead
    /// of reading zero.
    pub strict: bool,
    /// Dataflow frames (invocations of the top region) to execute.
    pub frames: u32,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            strict: false,
            frames: 1,
        }
    }
}

/// Seeded inputs for every interface array: integers in [-8, 8], floats in
/// [-1, 1).
pub fn random_inputs(program: &Program, seed: u64) -> Buffers {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Buffers::new();
    for a in program.arrays.iter().filter(|a| a.interface) {
        let n = a.len() as usize;
        let data = match a.elem {
            ElemType::I32 => Data::I32((0..n).map(|_| rng.gen_range(-8..=8)).collect()),
            ElemType::F32 => Data::F32((0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()),
        };
        out.insert(a.name.clone(), data);
    }
    out
}

/// Runs `program` and returns the final contents of its outputs (interface
/// arrays that are written).
pub fn run(program: &Program, inputs: &Buffers) -> Result<Buffers, InterpError> {
    run_with(program, inputs, Options::default())
}

pub fn run_with(program: &Program, inputs: &Buffers, opts: Options) -> Result<Buffers, InterpError> {
    let all = run_all(program, inputs, opts)?;
    let outputs = program.outputs();
    Ok(all.into_iter().filter(|(k, _)| outputs.contains(k)).collect())
}

/// Runs `program` and returns every array's final contents.
pub fn run_all(program: &Program, inputs: &Buffers, opts: Options) -> Result<Buffers, InterpError> {
    let prepared = Prepared::new(program)?;
    let mut m = Machine::new(program, &prepared, inputs, opts)?;
    for frame in 0..opts.frames {
        m.frame = frame as i64;
        m.exec(&prepared.body)?;
    }
    Ok(program
        .arrays
        .iter()
        .zip(m.mem)
        .map(|(a, d)| (a.name.clone(), d))
        .collect())
}

// ---------------------------------------------------------------------------
// Prepared form: names resolved to indices, strides flattened.

#[derive(Debug, Clone, Copy)]
enum Dim {
    Const(i64),
    Affine {
        slot: usize,
        num: i64,
        den: i64,
        offset: i64,
    },
    Rotating {
        slots: i64,
    },
}

#[derive(Debug)]
struct PAccess {
    array: usize,
    dims: Vec<Dim>,
}

#[derive(Debug)]
enum PExpr {
    Lit(Literal),
    Read(usize),
    Neg(Box<PExpr>),
    Bin(BinOp, Box<PExpr>, Box<PExpr>),
}

#[derive(Debug)]
struct PCompute {
    write: PAccess,
    accumulate: bool,
    reads: Vec<PAccess>,
    expr: PExpr,
    elem: ElemType,
    path: String,
}

#[derive(Debug)]
enum POp {
    Loop {
        slot: usize,
        name: usize,
        lower: i64,
        step: i64,
        trip: i64,
        body: Vec<POp>,
    },
    Compute(Box<PCompute>),
    Seq(Vec<POp>),
    Copy {
        src: usize,
        dst: usize,
    },
    Send(Vec<usize>),
    Recv(usize),
}

struct Prepared {
    body: Vec<POp>,
    /// Loop iv names, for diagnostics.
    iv_names: Vec<String>,
    depth: usize,
    streams: Vec<String>,
}

struct Prep<'a> {
    program: &'a Program,
    arrays: HashMap<&'a str, usize>,
    streams: Vec<String>,
    scope: Vec<String>,
    iv_names: Vec<String>,
    depth: usize,
    path: Vec<String>,
}

impl Prepared {
    fn new(program: &Program) -> Result<Prepared, InterpError> {
        let mut p = Prep {
            program,
            arrays: program
                .arrays
                .iter()
                .enumerate()
                .map(|(i, a)| (a.name.as_str(), i))
                .collect(),
            streams: program.streams.iter().map(|s| s.id.clone()).collect(),
            scope: Vec::new(),
            iv_names: Vec::new(),
            depth: 0,
            path: Vec::new(),
        };
        let body = p.region(&program.top)?;
        Ok(Prepared {
            body,
            iv_names: p.iv_names,
            depth: p.depth,
            streams: p.streams,
        })
    }
}

impl Prep<'_> {
    fn region(&mut self, r: &Region) -> Result<Vec<POp>, InterpError> {
        r.ops
            .iter()
            .enumerate()
            .map(|(i, op)| self.op(op, i))
            .collect::<Result<Vec<_>, _>>()
    }

    fn with_seg<T>(&mut self, seg: String, f: impl FnOnce(&mut Self) -> T) -> T {
        self.path.push(seg);
        let out = f(self);
        self.path.pop();
        out
    }

    fn array(&self, name: &str) -> Result<usize, InterpError> {
        self.arrays
            .get(name)
            .copied()
            .ok_or_else(|| InterpError::Unresolved(format!("undeclared array `{name}`")))
    }

    fn stream(&mut self, name: &str) -> usize {
        match self.streams.iter().position(|s| s == name) {
            Some(i) => i,
            None => {
                self.streams.push(name.to_string());
                self.streams.len() - 1
            }
        }
    }

    fn op(&mut self, op: &Op, idx: usize) -> Result<POp, InterpError> {
        Ok(match op {
            Op::Loop(l) => {
                let slot = self.scope.len();
                self.scope.push(l.iv.clone());
                self.depth = self.depth.max(slot + 1);
                let name = self.iv_names.len();
                self.iv_names.push(l.iv.clone());
                let body = self.with_seg(format!("for {}", l.iv), |s| s.region(&l.body));
                self.scope.pop();
                POp::Loop {
                    slot,
                    name,
                    lower: l.lower,
                    step: l.step.max(1),
                    trip: l.trip_count() as i64,
                    body: body?,
                }
            }
            Op::Compute(c) => {
                let path = {
                    let mut p = self.path.clone();
                    p.push(format!("compute#{idx}"));
                    p.join("/")
                };
                let write = self.access(&c.write)?;
                let reads = c.reads.iter().map(|a| self.access(a)).collect::<Result<_, _>>()?;
                let elem = self.program.arrays[write.array].elem;
                POp::Compute(Box::new(PCompute {
                    write,
                    accumulate: c.accumulate,
                    reads,
                    expr: expr(&c.expr),
                    elem,
                    path,
                }))
            }
            Op::Task(r) | Op::Dispatch(r) => {
                let seg = format!("{}#{idx}", op.kind());
                POp::Seq(self.with_seg(seg, |s| s.region(r))?)
            }
            Op::Node(n) => POp::Seq(self.with_seg(n.id.clone(), |s| s.region(&n.body))?),
            Op::Schedule(sc) => POp::Seq(self.with_seg(format!("schedule#{idx}"), |s| s.region(&sc.body))?),
            Op::Alloc { .. } => POp::Seq(Vec::new()),
            Op::Copy { src, dst } => {
                let (s, d) = (self.array(src)?, self.array(dst)?);
                if self.program.arrays[s].len() != self.program.arrays[d].len() {
                    return Err(InterpError::Unresolved(format!(
                        "copy `{src}` -> `{dst}` between different shapes"
                    )));
                }
                POp::Copy { src: s, dst: d }
            }
            Op::TokenSend { chans } => POp::Send(chans.iter().map(|c| self.stream(c)).collect()),
            Op::TokenRecv { chan } => POp::Recv(self.stream(chan)),
        })
    }

    fn access(&self, a: &Access) -> Result<PAccess, InterpError> {
        let array = self.array(&a.array)?;
        let dims = a
            .indices
            .iter()
            .map(|s| match s {
                Subscript::Const(c) => Ok(Dim::Const(*c)),
                Subscript::Affine { iv, stride, offset } => {
                    let slot = self
                        .scope
                        .iter()
                        .rposition(|n| n == iv)
                        .ok_or_else(|| InterpError::Unresolved(format!("unbound induction variable `{iv}`")))?;
                    Ok(Dim::Affine {
                        slot,
                        num: *stride.numer(),
                        den: *stride.denom(),
                        offset: *offset,
                    })
                }
                Subscript::Rotating { slots } => Ok(Dim::Rotating { slots: *slots as i64 }),
            })
            .collect::<Result<_, InterpError>>()?;
        Ok(PAccess { array, dims })
    }
}

fn expr(e: &Expr) -> PExpr {
    match e {
        Expr::Lit(l) => PExpr::Lit(*l),
        Expr::Read(i) => PExpr::Read(*i),
        Expr::Neg(x) => PExpr::Neg(Box::new(expr(x))),
        Expr::Bin(op, a, b) => PExpr::Bin(*op, Box::new(expr(a)), Box::new(expr(b))),
    }
}

// ---------------------------------------------------------------------------
// Execution.

struct Machine<'a> {
    prepared: &'a Prepared,
    shapes: Vec<Vec<u64>>,
    names: Vec<String>,
    mem: Vec<Data>,
    /// Per-element written flags, strict mode only.
    init: Option<Vec<Vec<bool>>>,
    env: Vec<i64>,
    env_names: Vec<usize>,
    tokens: Vec<u64>,
    frame: i64,
}

impl<'a> Machine<'a> {
    fn new(program: &Program, prepared: &'a Prepared, inputs: &Buffers, opts: Options) -> Result<Self, InterpError> {
        let mut mem = Vec::with_capacity(program.arrays.len());
        let mut init = Vec::new();
        for a in &program.arrays {
            let n = a.len() as usize;
            if a.interface {
                let given = inputs
                    .get(&a.name)
                    .ok_or_else(|| InterpError::MissingInput(a.name.clone()))?;
                if given.len() != n {
                    return Err(InterpError::ShapeMismatch {
                        array: a.name.clone(),
                        expected: n,
                        got: given.len(),
                    });
                }
                let data = match (a.elem, given) {
                    (ElemType::F32, Data::F32(v)) => Data::F32(v.clone()),
                    (ElemType::I32, Data::I32(v)) => Data::I32(v.clone()),
                    (ElemType::F32, Data::I32(v)) => Data::F32(v.iter().map(|&x| x as f32).collect()),
                    (ElemType::I32, Data::F32(v)) => Data::I32(v.iter().map(|&x| x as i32).collect()),
                };
                mem.push(data);
                init.push(vec![true; n]);
            } else {
                mem.push(Data::zeros(a.elem, n));
                init.push(vec![false; n]);
            }
        }
        Ok(Machine {
            prepared,
            shapes: program.arrays.iter().map(|a| a.shape.clone()).collect(),
            names: program.arrays.iter().map(|a| a.name.clone()).collect(),
            mem,
            init: opts.strict.then_some(init),
            env: vec![0; prepared.depth],
            env_names: vec![0; prepared.depth],
            tokens: vec![0; prepared.streams.len()],
            frame: 0,
        })
    }

    fn ivs(&self, depth: usize) -> String {
        let parts: Vec<String> = (0..depth)
            .map(|d| format!("{}={}", self.prepared.iv_names[self.env_names[d]], self.env[d]))
            .collect();
        if parts.is_empty() {
            "top level".to_string()
        } else {
            parts.join(", ")
        }
    }

    fn exec(&mut self, ops: &[POp]) -> Result<(), InterpError> {
        self.exec_at(ops, 0)
    }

    fn exec_at(&mut self, ops: &[POp], depth: usize) -> Result<(), InterpError> {
        for op in ops {
            match op {
                POp::Loop {
                    slot,
                    name,
                    lower,
                    step,
                    trip,
                    body,
                } => {
                    self.env_names[*slot] = *name;
                    for k in 0..*trip {
                        self.env[*slot] = lower + k * step;
                        self.exec_at(body, slot + 1)?;
                    }
                }
                POp::Compute(c) => self.compute(c, depth)?,
                POp::Seq(body) => self.exec_at(body, depth)?,
                POp::Copy { src, dst } => {
                    let data = self.mem[*src].clone();
                    let converted = match (self.mem[*dst].elem(), data) {
                        (ElemType::F32, Data::I32(v)) => Data::F32(v.into_iter().map(|x| x as f32).collect()),
                        (ElemType::I32, Data::F32(v)) => Data::I32(v.into_iter().map(|x| x as i32).collect()),
                        (_, d) => d,
                    };
                    self.mem[*dst] = converted;
                    if let Some(init) = &mut self.init {
                        init[*dst] = init[*src].clone();
                    }
                }
                POp::Send(chans) => {
                    for &c in chans {
                        self.tokens[c] += 1;
                    }
                }
                POp::Recv(c) => {
                    if self.tokens[*c] == 0 {
                        return Err(InterpError::TokenUnderflow {
                            chan: self.prepared.streams[*c].clone(),
                        });
                    }
                    self.tokens[*c] -= 1;
                }
            }
        }
        Ok(())
    }

    fn flat(&self, a: &PAccess, path: &str, depth: usize) -> Result<usize, InterpError> {
        let shape = &self.shapes[a.array];
        let mut flat: usize = 0;
        for (d, (dim, &extent)) in a.dims.iter().zip(shape).enumerate() {
            let idx = match *dim {
                Dim::Const(c) => c,
                Dim::Affine { slot, num, den, offset } => {
                    let scaled = num * self.env[slot];
                    if scaled % den != 0 {
                        return Err(InterpError::NonIntegralIndex {
                            path: path.to_string(),
                            array: self.names[a.array].clone(),
                            ivs: self.ivs(depth),
                        });
                    }
                    scaled / den + offset
                }
                Dim::Rotating { slots } => self.frame.rem_euclid(slots),
            };
            if idx < 0 || idx as u64 >= extent {
                return Err(InterpError::OutOfBounds {
                    path: path.to_string(),
                    array: self.names[a.array].clone(),
                    dim: d,
                    index: idx,
                    extent,
                    ivs: self.ivs(depth),
                });
            }
            flat = flat * extent as usize + idx as usize;
        }
        Ok(flat)
    }

    fn compute(&mut self, c: &PCompute, depth: usize) -> Result<(), InterpError> {
        let mut read_at = Vec::with_capacity(c.reads.len());
        for r in &c.reads {
            let i = self.flat(r, &c.path, depth)?;
            self.check_init(r.array, i, &c.path, depth)?;
            read_at.push((r.array, i));
        }
        let w = self.flat(&c.write, &c.path, depth)?;
        if c.accumulate {
            self.check_init(c.write.array, w, &c.path, depth)?;
        }
        match c.elem {
            ElemType::F32 => {
                let v = self.eval_f32(&c.expr, &read_at);
                let Data::F32(dst) = &mut self.mem[c.write.array] else {
                    unreachable!("element type fixed at preparation")
                };
                dst[w] = if c.accumulate { dst[w] + v } else { v };
            }
            ElemType::I32 => {
                let v = self
                    .eval_i32(&c.expr, &read_at)
                    .ok_or_else(|| InterpError::DivisionByZero {
                        path: c.path.clone(),
                        ivs: self.ivs(depth),
                    })?;
                let Data::I32(dst) = &mut self.mem[c.write.array] else {
                    unreachable!("element type fixed at preparation")
                };
                dst[w] = if c.accumulate { dst[w].wrapping_add(v) } else { v };
            }
        }
        if let Some(init) = &mut self.init {
            init[c.write.array][w] = true;
        }
        Ok(())
    }

    fn check_init(&self, array: usize, i: usize, path: &str, depth: usize) -> Result<(), InterpError> {
        match &self.init {
            Some(init) if !init[array][i] => Err(InterpError::Uninitialized {
                path: path.to_string(),
                array: self.names[array].clone(),
                ivs: self.ivs(depth),
            }),
            _ => Ok(()),
        }
    }

    fn eval_f32(&self, e: &PExpr, reads: &[(usize, usize)]) -> f32 {
        match e {
            PExpr::Lit(Literal::Float(x)) => *x,
            PExpr::Lit(Literal::Int(x)) => *x as f32,
            PExpr::Read(i) => {
                let (a, k) = reads[*i];
                self.mem[a].get_f32(k)
            }
            PExpr::Neg(x) => -self.eval_f32(x, reads),
            PExpr::Bin(op, a, b) => {
                let (a, b) = (self.eval_f32(a, reads), self.eval_f32(b, reads));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
        }
    }

    fn eval_i32(&self, e: &PExpr, reads: &[(usize, usize)]) -> Option<i32> {
        Some(match e {
            PExpr::Lit(Literal::Int(x)) => *x as i32,
            PExpr::Lit(Literal::Float(x)) => *x as i32,
            PExpr::Read(i) => {
                let (a, k) = reads[*i];
                self.mem[a].get_i32(k)
            }
            PExpr::Neg(x) => self.eval_i32(x, reads)?.wrapping_neg(),
            PExpr::Bin(op, a, b) => {
                let (a, b) = (self.eval_i32(a, reads)?, self.eval_i32(b, reads)?);
                match op {
                    BinOp::Add => a.wrapping_add(b),
                    BinOp::Sub => a.wrapping_sub(b),
                    BinOp::Mul => a.wrapping_mul(b),
                    BinOp::Div => {
                        if b == 0 {
                            return None;
                        }
                        a.wrapping_div(b)
                    }
                }
            }
        })
    }
}

/// Distance in units in the last place between two floats; NaNs compare
/// equal only to identical bit patterns.
pub fn ulp_distance(a: f32, b: f32) -> u32 {
    if a == b {
        return 0;
    }
    if a.is_nan() || b.is_nan() {
        return if a.to_bits() == b.to_bits() { 0 } else { u32::MAX };
    }
    let key = |x: f32| {
        let bits = x.to_bits() as i32;
        if bits < 0 {
            i32::MIN.wrapping_sub(bits) as i64
        } else {
            bits as i64
        }
    };
    (key(a) - key(b)).unsigned_abs().min(u32::MAX as u64) as u32
}

/// Compares two result sets: integers exactly, floats within `max_ulp`.
/// Returns a description of the first mismatch.
pub fn compare(expected: &Buffers, actual: &Buffers, max_ulp: u32) -> Result<(), String> {
    if expected.keys().ne(actual.keys()) {
        return Err(format!(
            "output sets differ: {:?} vs {:?}",
            expected.keys().collect::<Vec<_>>(),
            actual.keys().collect::<Vec<_>>()
        ));
    }
    for (name, e) in expected {
        let a = &actual[name];
        match (e, a) {
            (Data::I32(x), Data::I32(y)) => {
                if let Some(i) = (0..x.len()).find(|&i| x[i] != y[i]) {
                    return Err(format!("`{name}`[{i}]: {} vs {}", x[i], y[i]));
                }
            }
            (Data::F32(x), Data::F32(y)) => {
                if x.len() != y.len() {
                    return Err(format!("`{name}`: length {} vs {}", x.len(), y.len()));
                }
                if let Some(i) = (0..x.len()).find(|&i| ulp_distance(x[i], y[i]) > max_ulp) {
                    return Err(format!("`{name}`[{i}]: {:?} vs {:?}", x[i], y[i]));
                }
            }
            _ => return Err(format!("`{name}`: element types differ")),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::frontend::parse_str;

    #[test]
    fn listing1_matches_direct_matmul() {
        let p = corpus::load("listing1");
        let inputs = random_inputs(&p, 7);
        let out = run(&p, &inputs).unwrap();
        let (Data::F32(a), Data::F32(b), Data::F32(c0)) = (&inputs["A_in"], &inputs["B_in"], &inputs["C"]) else {
            panic!()
        };
        let mut c = c0.clone();
        for i in 0..16 {
            for j in 0..16 {
                for k in 0..16 {
                    c[i * 16 + j] += a[(i * 2) * 16 + k] * b[k * 16 + j];
                }
            }
        }
        assert_eq!(out["C"], Data::F32(c));
        assert_eq!(out.keys().collect::<Vec<_>>(), ["C"]);
    }

    #[test]
    fn empty_program_has_no_outputs() {
        let p = Program::new("empty");
        assert!(run(&p, &Buffers::new()).unwrap().is_empty());
    }

    #[test]
    fn integer_kernel_against_oracle() {
        let p = corpus::load("3mm-small");
        let inputs = random_inputs(&p, 3);
        let out = run(&p, &inputs).unwrap();
        let get = |n: &str| match &inputs[n] {
            Data::I32(v) => v.clone(),
            _ => panic!(),
        };
        let mm = |x: &[i32], y: &[i32], n: usize, k: usize, m: usize| {
            let mut z = vec![0i32; n * m];
            for i in 0..n {
                for j in 0..m {
                    for t in 0..k {
                        z[i * m + j] = z[i * m + j].wrapping_add(x[i * k + t].wrapping_mul(y[t * m + j]));
                    }
                }
            }
            z
        };
        let e = mm(&get("A"), &get("B"), 16, 12, 16);
        let f = mm(&get("C"), &get("D"), 16, 8, 16);
        assert_eq!(out["G"], Data::I32(mm(&e, &f, 16, 16, 16)));
    }

    #[test]
    fn out_of_bounds_reports_path_and_ivs() {
        let p = parse_str(
            "array X[4] : f32 @ external; array Y[4] : f32 @ external;\
             for i in 0..4 { Y[i] = X[i + 1]; }",
            "t",
        )
        .unwrap();
        let err = run(&p, &random_inputs(&p, 0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("for i/compute#0"), "{msg}");
        assert!(msg.contains("i=3"), "{msg}");
    }

    #[test]
    fn strict_mode_flags_uninitialized_reads() {
        let p = parse_str(
            "array X[4] : f32 @ external; array T[4] : f32 @ onchip; array Y[4] : f32 @ external;\
             for i in 0..2 { T[i] = X[i]; } for i in 0..4 { Y[i] = T[i]; }",
            "t",
        )
        .unwrap();
        let inputs = random_inputs(&p, 0);
        assert!(run(&p, &inputs).is_ok());
        let err = run_with(
            &p,
            &inputs,
            Options {
                strict: true,
                frames: 1,
            },
        )
        .unwrap_err();
        assert!(matches!(err, InterpError::Uninitialized { .. }), "{err}");
    }

    #[test]
    fn token_underflow_is_an_error() {
        let mut p = Program::new("t");
        p.top = Region::new(vec![Op::TokenRecv { chan: "c".into() }]);
        assert_eq!(
            run(&p, &Buffers::new()).unwrap_err(),
            InterpError::TokenUnderflow { chan: "c".into() }
        );
        p.top.ops.insert(
            0,
            Op::TokenSend {
                chans: vec!["c".into()],
            },
        );
        assert!(run(&p, &Buffers::new()).is_ok());
    }

    #[test]
    fn deterministic_inputs() {
        let p = corpus::load("listing1");
        assert_eq!(random_inputs(&p, 11), random_inputs(&p, 11));
        assert_ne!(random_inputs(&p, 11), random_inputs(&p, 12));
    }

    #[test]
    fn ulp_distance_basics() {
        assert_eq!(ulp_distance(1.0, 1.0), 0);
        assert_eq!(ulp_distance(1.0, f32::from_bits(1.0f32.to_bits() + 1)), 1);
        assert_eq!(ulp_distance(0.0, -0.0), 0);
        assert_eq!(ulp_distance(f32::from_bits(1), -f32::from_bits(1)), 2);
    }
}
