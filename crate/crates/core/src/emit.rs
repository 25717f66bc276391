//! HLS-style C++ emission.
//!
//! One function per node and per nested schedule; the top function holds
//! the top schedule under a dataflow pragma. Pragma text comes from a
//! [`Dialect`]; [`Plain`] emits none and yields portable C++ that a host
//! compiler can build and run against the interpreter.

use crate::ir::*;
use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

/// Pragma vocabulary of a downstream HLS tool. Every hook returns the full
/// pragma lines, or nothing.
pub trait Dialect {
    fn name(&self) -> &'static str;
    fn includes(&self, uses_streams: bool) -> Vec<String>;
    /// Declaration of `token_t`, the channel type token ops use.
    fn token_type(&self) -> String;
    fn dataflow(&self) -> Vec<String>;
    fn pipeline(&self, ii: u32) -> Vec<String>;
    fn unroll(&self, factor: u32) -> Vec<String>;
    fn partition(&self, var: &str, dim: usize, p: DimPartition) -> Vec<String>;
    fn stream(&self, var: &str, depth: u32) -> Vec<String>;
    fn pingpong(&self, var: &str, depth: u32) -> Vec<String>;
    fn interface(&self, var: &str, decl: &ArrayDecl) -> Vec<String>;
}

/// AMD Vitis HLS pragma spelling.
pub struct Vitis;

impl Dialect for Vitis {
    fn name(&self) -> &'static str {
        "vitis"
    }

    fn includes(&self, uses_streams: bool) -> Vec<String> {
        if uses_streams {
            vec!["#include <hls_stream.h>".into()]
        } else {
            Vec::new()
        }
    }

    fn token_type(&self) -> String {
        "typedef hls::stream<int> token_t;".into()
    }

    fn dataflow(&self) -> Vec<String> {
        vec!["#pragma HLS dataflow".into()]
    }

    fn pipeline(&self, ii: u32) -> Vec<String> {
        vec![format!("#pragma HLS pipeline II={ii}")]
    }

    fn unroll(&self, factor: u32) -> Vec<String> {
        vec![format!("#pragma HLS unroll factor={factor}")]
    }

    fn partition(&self, var: &str, dim: usize, p: DimPartition) -> Vec<String> {
        let kind = match p.fashion {
            PartitionFashion::None => return Vec::new(),
            PartitionFashion::Cyclic => "cyclic",
            PartitionFashion::Block => "block",
        };
        if p.factor <= 1 {
            return Vec::new();
        }
        vec![format!(
            "#pragma HLS array_partition variable={var} {kind} factor={} dim={}",
            p.factor,
            dim + 1
        )]
    }

    fn stream(&self, var: &str, depth: u32) -> Vec<String> {
        vec![format!("#pragma HLS stream variable={var} depth={depth}")]
    }

    fn pingpong(&self, var: &str, depth: u32) -> Vec<String> {
        vec![format!("#pragma HLS stream variable={var} type=pipo depth={depth}")]
    }

    fn interface(&self, var: &str, decl: &ArrayDecl) -> Vec<String> {
        match decl.placement {
            Placement::External => vec![format!(
                "#pragma HLS interface mode=m_axi port={var} offset=slave bundle=gmem_{var} depth={}",
                decl.len()
            )],
            Placement::OnChip => vec![format!("#pragma HLS interface mode=ap_memory port={var}")],
        }
    }
}

/// No pragmas; token channels become plain counters.
pub struct Plain;

impl Dialect for Plain {
    fn name(&self) -> &'static str {
        "plain"
    }

    fn includes(&self, _: bool) -> Vec<String> {
        Vec::new()
    }

    fn token_type(&self) -> String {
        "struct token_t {\n    int n = 0;\n    void write(int) { ++n; }\n    int read() { return n--; }\n};".into()
    }

    fn dataflow(&self) -> Vec<String> {
        Vec::new()
    }

    fn pipeline(&self, _: u32) -> Vec<String> {
        Vec::new()
    }

    fn unroll(&self, _: u32) -> Vec<String> {
        Vec::new()
    }

    fn partition(&self, _: &str, _: usize, _: DimPartition) -> Vec<String> {
        Vec::new()
    }

    fn stream(&self, _: &str, _: u32) -> Vec<String> {
        Vec::new()
    }

    fn pingpong(&self, _: &str, _: u32) -> Vec<String> {
        Vec::new()
    }

    fn interface(&self, _: &str, _: &ArrayDecl) -> Vec<String> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmitError {
    /// Functional ops have no C++ mapping; lower first.
    Unsupported {
        op: &'static str,
    },
    UnknownBuffer(String),
}

impl fmt::Display for EmitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmitError::Unsupported { op } => {
                write!(f, "cannot emit `{op}`: lower the program to structural form first")
            }
            EmitError::UnknownBuffer(b) => write!(f, "reference to undeclared buffer `{b}`"),
        }
    }
}

impl std::error::Error for EmitError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emitted {
    pub name: String,
    pub header: String,
    pub source: String,
}

impl Emitted {
    /// `(file name, contents)` pairs.
    pub fn files(&self) -> Vec<(String, String)> {
        vec![
            (format!("{}.h", self.name), self.header.clone()),
            (format!("{}_top.cpp", self.name), self.source.clone()),
        ]
    }
}

const RESERVED: &[&str] = &[
    "auto",
    "bool",
    "break",
    "case",
    "char",
    "class",
    "const",
    "continue",
    "default",
    "delete",
    "do",
    "double",
    "else",
    "enum",
    "extern",
    "float",
    "for",
    "goto",
    "if",
    "inline",
    "int",
    "long",
    "main",
    "namespace",
    "new",
    "operator",
    "private",
    "public",
    "register",
    "return",
    "short",
    "signed",
    "sizeof",
    "static",
    "struct",
    "switch",
    "template",
    "this",
    "typedef",
    "union",
    "unsigned",
    "void",
    "volatile",
    "while",
    "token_t",
    "frame",
];

fn ident(name: &str) -> String {
    if RESERVED.contains(&name) {
        format!("v_{name}")
    } else {
        name.to_string()
    }
}

fn ctype(e: ElemType) -> &'static str {
    match e {
        ElemType::F32 => "float",
        ElemType::I32 => "int",
    }
}

fn float_lit(x: f32) -> String {
    if x.is_nan() {
        return "(0.0f / 0.0f)".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "(1.0f / 0.0f)" } else { "(-1.0f / 0.0f)" }.into();
    }
    let s = format!("{x:?}");
    let s = if s.contains(['.', 'e']) { s } else { format!("{s}.0") };
    if x < 0.0 {
        format!("({s}f)")
    } else {
        format!("{s}f")
    }
}

fn int_lit(x: i32) -> String {
    if x == i32::MIN {
        "(-2147483647 - 1)".into()
    } else if x < 0 {
        format!("({x})")
    } else {
        x.to_string()
    }
}

/// What a function needs from its caller.
struct Signature {
    buffers: Vec<String>,
    streams: Vec<String>,
    params: Vec<String>,
    frame: bool,
}

fn signature(program: &Program, body: &Region, params: &[String]) -> Signature {
    let mut allocated = BTreeSet::new();
    let mut used = BTreeSet::new();
    let mut streams = BTreeSet::new();
    for_each_op(body, &mut |op| match op {
        Op::Alloc { buffer } => {
            allocated.insert(buffer.clone());
        }
        Op::TokenSend { chans } => streams.extend(chans.iter().cloned()),
        Op::TokenRecv { chan } => {
            streams.insert(chan.clone());
        }
        _ => {}
    });
    for b in accessed_buffers(body) {
        used.insert(b);
    }
    Signature {
        buffers: program
            .arrays
            .iter()
            .filter(|a| used.contains(&a.name) && !allocated.contains(&a.name))
            .map(|a| a.name.clone())
            .collect(),
        streams: program
            .streams
            .iter()
            .filter(|s| streams.contains(&s.id))
            .map(|s| s.id.clone())
            .collect(),
        params: params.to_vec(),
        frame: uses_frame(body),
    }
}

struct Emitter<'a> {
    p: &'a Program,
    d: &'a dyn Dialect,
    /// Finished helper functions, callees before callers.
    functions: Vec<String>,
    schedules: usize,
}

fn line(out: &mut String, indent: usize, s: &str) {
    for _ in 0..indent {
        out.push_str("    ");
    }
    out.push_str(s);
    out.push('\n');
}

impl<'a> Emitter<'a> {
    fn decl(&self, name: &str) -> Result<&'a ArrayDecl, EmitError> {
        self.p
            .array(name)
            .ok_or_else(|| EmitError::UnknownBuffer(name.to_string()))
    }

    fn dims(decl: &ArrayDecl) -> String {
        decl.shape.iter().map(|e| format!("[{e}]")).collect()
    }

    fn param_list(&self, sig: &Signature) -> Result<String, EmitError> {
        let mut parts = Vec::new();
        for b in &sig.buffers {
            let d = self.decl(b)?;
            parts.push(format!("{} {}{}", ctype(d.elem), ident(b), Self::dims(d)));
        }
        for s in &sig.streams {
            parts.push(format!("token_t &{}", ident(s)));
        }
        for iv in &sig.params {
            parts.push(format!("int {}", ident(iv)));
        }
        if sig.frame {
            parts.push("int frame".into());
        }
        Ok(parts.join(", "))
    }

    fn arg_list(sig: &Signature) -> String {
        let mut parts: Vec<String> = sig
            .buffers
            .iter()
            .chain(&sig.streams)
            .chain(&sig.params)
            .map(|s| ident(s))
            .collect();
        if sig.frame {
            parts.push("frame".into());
        }
        parts.join(", ")
    }

    /// Local declaration of a buffer allocated in a schedule.
    fn local(&self, out: &mut String, indent: usize, name: &str) -> Result<(), EmitError> {
        let d = self.decl(name)?;
        let storage = if d.fifo_slots.is_some() { "static " } else { "" };
        line(
            out,
            indent,
            &format!("{storage}{} {}{} = {{}};", ctype(d.elem), ident(name), Self::dims(d)),
        );
        self.buffer_pragmas(out, indent, d);
        Ok(())
    }

    fn buffer_pragmas(&self, out: &mut String, indent: usize, d: &ArrayDecl) {
        for (k, p) in d.partition.iter().enumerate() {
            for l in self.d.partition(&ident(&d.name), k, *p) {
                line(out, indent, &l);
            }
        }
        if d.depth > 1 {
            for l in self.d.pingpong(&ident(&d.name), d.depth) {
                line(out, indent, &l);
            }
        }
    }

    fn access(&self, a: &Access) -> Result<String, EmitError> {
        self.decl(&a.array)?;
        let mut s = ident(&a.array);
        for sub in &a.indices {
            let idx = match sub {
                Subscript::Const(c) => c.to_string(),
                Subscript::Affine { iv, stride, offset } => {
                    let (n, den) = (*stride.numer(), *stride.denom());
                    let mut t = match n {
                        0 => String::new(),
                        1 => ident(iv),
                        _ => format!("{n} * {}", ident(iv)),
                    };
                    if den != 1 && n != 0 {
                        t = format!("({t}) / {den}");
                    }
                    match (t.is_empty(), *offset) {
                        (true, o) => o.to_string(),
                        (false, 0) => t,
                        (false, o) if o > 0 => format!("{t} + {o}"),
                        (false, o) => format!("{t} - {}", -o),
                    }
                }
                Subscript::Rotating { slots } => format!("frame % {slots}"),
            };
            let _ = write!(s, "[{idx}]");
        }
        Ok(s)
    }

    fn expr(&self, e: &Expr, reads: &[String], read_types: &[ElemType], ty: ElemType) -> String {
        match e {
            Expr::Lit(Literal::Float(x)) => match ty {
                ElemType::F32 => float_lit(*x),
                ElemType::I32 => int_lit(*x as i32),
            },
            Expr::Lit(Literal::Int(x)) => match ty {
                ElemType::F32 => float_lit(*x as f32),
                ElemType::I32 => int_lit(*x as i32),
            },
            Expr::Read(i) => {
                if read_types[*i] == ty {
                    reads[*i].clone()
                } else {
                    format!("(({}){})", ctype(ty), reads[*i])
                }
            }
            Expr::Neg(x) => format!("(-{})", self.expr(x, reads, read_types, ty)),
            Expr::Bin(op, a, b) => format!(
                "({} {} {})",
                self.expr(a, reads, read_types, ty),
                op.symbol(),
                self.expr(b, reads, read_types, ty)
            ),
        }
    }

    fn region(&mut self, out: &mut String, indent: usize, r: &Region) -> Result<(), EmitError> {
        for op in &r.ops {
            self.op(out, indent, op)?;
        }
        Ok(())
    }

    fn op(&mut self, out: &mut String, indent: usize, op: &Op) -> Result<(), EmitError> {
        match op {
            Op::Loop(l) => {
                let iv = ident(&l.iv);
                line(
                    out,
                    indent,
                    &format!(
                        "for (int {iv} = {}; {iv} < {}; {iv} += {}) {{",
                        l.lower, l.upper, l.step
                    ),
                );
                let innermost = !l
                    .body
                    .ops
                    .iter()
                    .any(|o| o.is_iterative() || matches!(o, Op::Schedule(_)));
                if let Some(t) = l.tile {
                    line(out, indent + 1, &format!("// tile {t}"));
                }
                if innermost {
                    for p in self.d.pipeline(1) {
                        line(out, indent + 1, &p);
                    }
                }
                if l.unroll > 1 {
                    for p in self.d.unroll(l.unroll) {
                        line(out, indent + 1, &p);
                    }
                }
                self.region(out, indent + 1, &l.body)?;
                line(out, indent, "}");
            }
            Op::Compute(c) => {
                let ty = self.decl(&c.write.array)?.elem;
                let reads = c.reads.iter().map(|a| self.access(a)).collect::<Result<Vec<_>, _>>()?;
                let types = c
                    .reads
                    .iter()
                    .map(|a| self.decl(&a.array).map(|d| d.elem))
                    .collect::<Result<Vec<_>, _>>()?;
                let rhs = self.expr(&c.expr, &reads, &types, ty);
                let assign = if c.accumulate { "+=" } else { "=" };
                line(out, indent, &format!("{} {assign} {rhs};", self.access(&c.write)?));
            }
            Op::Copy { src, dst } => {
                let (s, d) = (self.decl(src)?, self.decl(dst)?);
                let ivs: Vec<String> = (0..d.rank()).map(|k| format!("c{k}_")).collect();
                for (k, (iv, e)) in ivs.iter().zip(&d.shape).enumerate() {
                    line(out, indent + k, &format!("for (int {iv} = 0; {iv} < {e}; ++{iv}) {{"));
                }
                let inner = indent + ivs.len();
                for p in self.d.pipeline(1) {
                    line(out, inner, &p);
                }
                let idx: String = ivs.iter().map(|iv| format!("[{iv}]")).collect();
                let rhs = if s.elem == d.elem {
                    format!("{}{idx}", ident(src))
                } else {
                    format!("(({}){}{idx})", ctype(d.elem), ident(src))
                };
                line(out, inner, &format!("{}{idx} = {rhs};", ident(dst)));
                for k in (0..ivs.len()).rev() {
                    line(out, indent + k, "}");
                }
            }
            Op::TokenSend { chans } => {
                for c in chans {
                    line(out, indent, &format!("{}.write(1);", ident(c)));
                }
            }
            Op::TokenRecv { chan } => line(out, indent, &format!("(void){}.read();", ident(chan))),
            Op::Alloc { buffer } => self.local(out, indent, buffer)?,
            Op::Node(n) => {
                let sig = signature(self.p, &n.body, &n.params);
                let fname = format!("{}_{}", self.p.name, n.id.to_lowercase());
                let mut f = String::new();
                line(
                    &mut f,
                    0,
                    &format!("static void {fname}({}) {{", self.param_list(&sig)?),
                );
                self.region(&mut f, 1, &n.body)?;
                line(&mut f, 0, "}");
                self.functions.push(f);
                line(out, indent, &format!("{fname}({});", Self::arg_list(&sig)));
            }
            Op::Schedule(s) => {
                let k = self.schedules;
                self.schedules += 1;
                let sig = signature(self.p, &s.body, &s.params);
                let fname = format!("{}_schedule{k}", self.p.name);
                let mut f = String::new();
                line(
                    &mut f,
                    0,
                    &format!("static void {fname}({}) {{", self.param_list(&sig)?),
                );
                for p in self.d.dataflow() {
                    line(&mut f, 1, &p);
                }
                self.region(&mut f, 1, &s.body)?;
                line(&mut f, 0, "}");
                self.functions.push(f);
                line(out, indent, &format!("{fname}({});", Self::arg_list(&sig)));
            }
            Op::Task(_) | Op::Dispatch(_) => return Err(EmitError::Unsupported { op: op.kind() }),
        }
        Ok(())
    }
}

/// Emits the header and top-level source for a structural program.
pub fn emit(program: &Program, dialect: &dyn Dialect) -> Result<Emitted, EmitError> {
    let mut bad = None;
    for_each_op(&program.top, &mut |op| {
        if matches!(op, Op::Task(_) | Op::Dispatch(_)) {
            bad.get_or_insert(op.kind());
        }
    });
    if let Some(op) = bad {
        return Err(EmitError::Unsupported { op });
    }

    let mut e = Emitter {
        p: program,
        d: dialect,
        functions: Vec::new(),
        schedules: 0,
    };
    let interfaces: Vec<&ArrayDecl> = program.arrays.iter().filter(|a| a.interface).collect();
    let frame = uses_frame(&program.top);
    let proto = top_prototype(program, frame);

    let mut body = String::new();
    for a in &interfaces {
        for l in dialect.interface(&ident(&a.name), a) {
            line(&mut body, 1, &l);
        }
        e.buffer_pragmas(&mut body, 1, a);
    }
    // Channels and buffers nothing allocates live for the whole run.
    for s in &program.streams {
        line(&mut body, 1, &format!("static token_t {};", ident(&s.id)));
        for l in dialect.stream(&ident(&s.id), s.entries) {
            line(&mut body, 1, &l);
        }
    }
    let mut allocated = BTreeSet::new();
    for_each_op(&program.top, &mut |op| {
        if let Op::Alloc { buffer } = op {
            allocated.insert(buffer.clone());
        }
    });
    let used: BTreeSet<String> = accessed_buffers(&program.top).into_iter().collect();
    for a in &program.arrays {
        if !a.interface && !allocated.contains(&a.name) && used.contains(&a.name) {
            line(
                &mut body,
                1,
                &format!(
                    "static {} {}{} = {{}};",
                    ctype(a.elem),
                    ident(&a.name),
                    Emitter::dims(a)
                ),
            );
            e.buffer_pragmas(&mut body, 1, a);
        }
    }
    // The top schedule is the top function's own body.
    match program.top.ops.as_slice() {
        [Op::Schedule(s)] => {
            for p in dialect.dataflow() {
                line(&mut body, 1, &p);
            }
            e.region(&mut body, 1, &s.body)?;
        }
        _ => e.region(&mut body, 1, &program.top)?,
    }

    let mut header = String::new();
    let guard = format!("{}_H", program.name.to_uppercase());
    let _ = writeln!(header, "#ifndef {guard}\n#define {guard}\n");
    for inc in dialect.includes(!program.streams.is_empty()) {
        let _ = writeln!(header, "{inc}");
    }
    if !program.streams.is_empty() {
        let _ = writeln!(header, "{}\n", dialect.token_type());
    }
    let _ = writeln!(header, "{proto};\n\n#endif");

    let mut source = format!("#include \"{}.h\"\n", program.name);
    for f in &e.functions {
        source.push('\n');
        source.push_str(f);
    }
    source.push('\n');
    source.push_str(&format!("{proto} {{\n{body}}}\n"));
    Ok(Emitted {
        name: program.name.clone(),
        header,
        source,
    })
}

fn top_prototype(program: &Program, frame: bool) -> String {
    let mut params: Vec<String> = program
        .arrays
        .iter()
        .filter(|a| a.interface)
        .map(|a| format!("{} {}{}", ctype(a.elem), ident(&a.name), Emitter::dims(a)))
        .collect();
    if frame {
        params.push("int frame".into());
    }
    format!("void {}_top({})", program.name, params.join(", "))
}

/// A `main` that reads every interface array from stdin (declaration order,
/// whitespace separated), runs one frame and prints each output as its name
/// followed by its values in `%.9g`.
pub fn harness(program: &Program) -> String {
    let mut s = format!("#include <cstdio>\n#include \"{}.h\"\n\n", program.name);
    let interfaces: Vec<&ArrayDecl> = program.arrays.iter().filter(|a| a.interface).collect();
    for a in &interfaces {
        let _ = writeln!(s, "static {} {}{};", ctype(a.elem), ident(&a.name), Emitter::dims(a));
    }
    s.push_str("\nint main() {\n");
    for a in &interfaces {
        let (fmt, ty) = match a.elem {
            ElemType::F32 => ("%f", "float"),
            ElemType::I32 => ("%d", "int"),
        };
        let _ = writeln!(
            s,
            "    for (long k = 0; k < {n}; ++k) {{\n        if (std::scanf(\"{fmt}\", &(({ty} *){v})[k]) != 1) return 3;\n    }}",
            n = a.len(),
            v = ident(&a.name)
        );
    }
    let mut args: Vec<String> = interfaces.iter().map(|a| ident(&a.name)).collect();
    if uses_frame(&program.top) {
        args.push("0".into());
    }
    let _ = writeln!(s, "    {}_top({});", program.name, args.join(", "));
    for out in program.outputs() {
        let a = program.array(&out).expect("output declared");
        let (conv, ty) = match a.elem {
            ElemType::F32 => ("(double)", "float"),
            ElemType::I32 => ("(double)", "int"),
        };
        let _ = writeln!(
            s,
            "    std::printf(\"{name}\");\n    for (long k = 0; k < {n}; ++k) std::printf(\" %.9g\", {conv}(({ty} *){v})[k]);\n    std::printf(\"\\n\");",
            name = out,
            n = a.len(),
            v = ident(&out)
        );
    }
    s.push_str("    return 0;\n}\n");
    s
}

/// Formats inputs the way [`harness`] reads them. Floats use nine
/// significant digits, which round-trips every `f32`.
pub fn harness_input(program: &Program, inputs: &crate::interp::Buffers) -> String {
    use crate::interp::Data;
    let mut s = String::new();
    for a in program.arrays.iter().filter(|a| a.interface) {
        match inputs.get(&a.name) {
            Some(Data::F32(v)) => {
                for x in v {
                    let _ = write!(s, "{x:.8e} ");
                }
            }
            Some(Data::I32(v)) => {
                for x in v {
                    let _ = write!(s, "{x} ");
                }
            }
            None => {}
        }
        s.push('\n');
    }
    s
}

/// Parses the output lines [`harness`] prints.
pub fn parse_harness_output(program: &Program, text: &str) -> Result<crate::interp::Buffers, String> {
    use crate::interp::Data;
    let mut out = crate::interp::Buffers::new();
    for l in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut words = l.split_whitespace();
        let name = words.next().expect("non-empty line");
        let a = program.array(name).ok_or_else(|| format!("unknown output `{name}`"))?;
        let data = match a.elem {
            ElemType::F32 => Data::F32(
                words
                    .map(|w| w.parse::<f32>().map_err(|e| format!("{name}: {e}")))
                    .collect::<Result<_, _>>()?,
            ),
            ElemType::I32 => Data::I32(
                words
                    .map(|w| w.parse::<f64>().map(|x| x as i32).map_err(|e| format!("{name}: {e}")))
                    .collect::<Result<_, _>>()?,
            ),
        };
        out.insert(name.to_string(), data);
    }
    Ok(out)
}
