//! Structural validity checks. The verifier never stops at the first problem;
//! it returns every violation it finds, each tagged with the op path.

use super::effects::{accessed_buffers, free_ivs, node_effects};
use super::*;
use std::collections::{BTreeSet, HashMap};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiagnosticKind {
    Declaration,
    Rank,
    Scope,
    Isolation,
    EffectMismatch,
    Structure,
    Layout,
    Shape,
    Dominance,
    Type,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    /// Slash-separated op path, e.g. `schedule/Node2/for i/compute#0`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

struct Verifier<'p> {
    program: &'p Program,
    arrays: HashMap<&'p str, &'p ArrayDecl>,
    streams: BTreeSet<&'p str>,
    allocated: HashMap<String, String>,
    out: Vec<Diagnostic>,
}

pub fn verify(program: &Program) -> Result<(), Vec<Diagnostic>> {
    let mut v = Verifier {
        program,
        arrays: HashMap::new(),
        streams: BTreeSet::new(),
        allocated: HashMap::new(),
        out: Vec::new(),
    };
    v.declarations();
    let mut path = Vec::new();
    v.region(&program.top, &[], &mut path, Ctx::Free);
    if v.out.is_empty() {
        Ok(())
    } else {
        Err(v.out)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Ctx {
    Free,
    Dispatch,
    Schedule,
}

impl<'p> Verifier<'p> {
    fn diag(&mut self, kind: DiagnosticKind, path: &[String], message: impl Into<String>) {
        self.out.push(Diagnostic {
            kind,
            path: path.join("/"),
            message: message.into(),
        });
    }

    fn declarations(&mut self) {
        let p = self.program;
        for a in &p.arrays {
            let here = [format!("array {}", a.name)];
            if self.arrays.insert(&a.name, a).is_some() {
                self.diag(
                    DiagnosticKind::Declaration,
                    &here,
                    format!("array `{}` declared more than once", a.name),
                );
            }
            if a.shape.is_empty() || a.shape.contains(&0) {
                self.diag(
                    DiagnosticKind::Declaration,
                    &here,
                    "shape must be non-empty with extents >= 1",
                );
            }
            if a.depth == 0 {
                self.diag(DiagnosticKind::Layout, &here, "depth must be positive");
            }
            if a.partition.len() != a.rank() {
                self.diag(DiagnosticKind::Layout, &here, "partition list length differs from rank");
            }
            for (d, (part, &ext)) in a.partition.iter().zip(&a.shape).enumerate() {
                let ok = match part.fashion {
                    PartitionFashion::None => part.factor == 1,
                    _ => part.factor >= 1 && part.factor as u64 <= ext,
                };
                if !ok {
                    self.diag(
                        DiagnosticKind::Layout,
                        &here,
                        format!("invalid partition factor {} on dimension {d}", part.factor),
                    );
                }
            }
            if let Some(slots) = a.fifo_slots {
                if a.shape.first() != Some(&(slots as u64)) {
                    self.diag(
                        DiagnosticKind::Layout,
                        &here,
                        "soft FIFO leading extent must equal its slot count",
                    );
                }
            }
        }
        for s in &p.streams {
            if !self.streams.insert(&s.id) || self.arrays.contains_key(s.id.as_str()) {
                self.diag(
                    DiagnosticKind::Declaration,
                    &[format!("stream {}", s.id)],
                    format!("`{}` declared more than once", s.id),
                );
            }
            if s.entries == 0 {
                self.diag(
                    DiagnosticKind::Declaration,
                    &[format!("stream {}", s.id)],
                    "entries must be positive",
                );
            }
        }
        for port in &p.ports {
            if !self.arrays.contains_key(port.id.as_str()) {
                self.diag(
                    DiagnosticKind::Declaration,
                    &[format!("port {}", port.id)],
                    format!("port for undeclared array `{}`", port.id),
                );
            }
        }
    }

    fn check_buffer(&mut self, name: &str, path: &[String]) -> Option<&'p ArrayDecl> {
        let found = self.arrays.get(name).copied();
        if found.is_none() {
            self.diag(DiagnosticKind::Declaration, path, format!("undeclared array `{name}`"));
        }
        found
    }

    fn access(&mut self, a: &Access, scope: &[String], path: &[String]) {
        let Some(decl) = self.check_buffer(&a.array, path) else {
            return;
        };
        if decl.rank() != a.indices.len() {
            self.diag(
                DiagnosticKind::Rank,
                path,
                format!(
                    "`{}` has rank {} but is accessed with {} subscripts",
                    a.array,
                    decl.rank(),
                    a.indices.len()
                ),
            );
        }
        for (d, s) in a.indices.iter().enumerate() {
            match s {
                Subscript::Affine { iv, stride, .. } => {
                    if !scope.iter().any(|v| v == iv) {
                        self.diag(
                            DiagnosticKind::Scope,
                            path,
                            format!("induction variable `{iv}` is not in scope"),
                        );
                    }
                    if *stride.denom() <= 0 {
                        self.diag(DiagnosticKind::Rank, path, "malformed stride");
                    }
                }
                Subscript::Rotating { slots } => {
                    if d != 0 || decl.fifo_slots != Some(*slots) {
                        self.diag(
                            DiagnosticKind::Layout,
                            path,
                            format!(
                                "rotating subscript on `{}` does not match a soft FIFO slot dimension",
                                a.array
                            ),
                        );
                    }
                }
                Subscript::Const(_) => {}
            }
        }
    }

    fn compute(&mut self, c: &Compute, scope: &[String], path: &[String]) {
        let elem = self.arrays.get(c.write.array.as_str()).map(|a| a.elem);
        self.access(&c.write, scope, path);
        for r in &c.reads {
            self.access(r, scope, path);
        }
        if elem == Some(ElemType::I32) && has_float_literal(&c.expr) {
            self.diag(DiagnosticKind::Type, path, "float literal in an integer statement");
        }
        let mut bad = false;
        check_reads(&c.expr, c.reads.len(), &mut bad);
        if bad {
            self.diag(DiagnosticKind::Structure, path, "expression refers to a missing read");
        }
    }

    fn region(&mut self, region: &Region, scope: &[String], path: &mut Vec<String>, ctx: Ctx) {
        let mut counts: HashMap<&'static str, usize> = HashMap::new();
        for op in &region.ops {
            let k = op.kind();
            let idx = *counts.entry(k).and_modify(|c| *c += 1).or_insert(0);
            let seg = match op {
                Op::Loop(l) => format!("for {}", l.iv),
                Op::Node(n) => n.id.clone(),
                _ => format!("{k}#{idx}"),
            };
            path.push(seg);
            match ctx {
                Ctx::Dispatch if !matches!(op, Op::Task(_)) => {
                    self.diag(DiagnosticKind::Structure, path, "dispatch body may only hold tasks");
                }
                Ctx::Schedule if !matches!(op, Op::Node(_) | Op::Alloc { .. }) => {
                    self.diag(
                        DiagnosticKind::Structure,
                        path,
                        "schedule body may only hold nodes and allocs",
                    );
                }
                _ => {}
            }
            self.op(op, scope, path);
            path.pop();
        }
    }

    fn op(&mut self, op: &Op, scope: &[String], path: &mut Vec<String>) {
        match op {
            Op::Loop(l) => {
                if l.step <= 0 {
                    self.diag(DiagnosticKind::Structure, path, "loop step must be positive");
                }
                if l.upper < l.lower {
                    self.diag(DiagnosticKind::Structure, path, "loop upper bound below lower bound");
                }
                if l.unroll == 0 {
                    self.diag(DiagnosticKind::Structure, path, "unroll factor must be positive");
                }
                let mut inner = scope.to_vec();
                inner.push(l.iv.clone());
                self.region(&l.body, &inner, path, Ctx::Free);
            }
            Op::Compute(c) => self.compute(c, scope, path),
            Op::Task(r) => self.region(r, scope, path, Ctx::Free),
            Op::Dispatch(r) => self.region(r, scope, path, Ctx::Dispatch),
            Op::Node(n) => self.node(n, scope, path),
            Op::Schedule(s) => self.schedule(s, scope, path),
            Op::Alloc { buffer } => {
                if let Some(decl) = self.check_buffer(buffer, path) {
                    if decl.interface {
                        self.diag(
                            DiagnosticKind::Structure,
                            path,
                            format!("interface array `{buffer}` cannot be allocated"),
                        );
                    }
                }
                let here = path.join("/");
                if let Some(prev) = self.allocated.insert(buffer.clone(), here) {
                    self.diag(
                        DiagnosticKind::Structure,
                        path,
                        format!("`{buffer}` is already allocated at {prev}"),
                    );
                }
            }
            Op::Copy { src, dst } => {
                let s = self.check_buffer(src, path);
                let d = self.check_buffer(dst, path);
                if let (Some(s), Some(d)) = (s, d) {
                    if s.shape != d.shape {
                        self.diag(
                            DiagnosticKind::Shape,
                            path,
                            format!("copy between `{src}` and `{dst}` of different shapes"),
                        );
                    }
                }
            }
            Op::TokenSend { chans } => {
                if chans.is_empty() {
                    self.diag(DiagnosticKind::Structure, path, "token.send without channels");
                }
                for c in chans {
                    self.stream(c, path);
                }
            }
            Op::TokenRecv { chan } => self.stream(chan, path),
        }
    }

    fn stream(&mut self, id: &str, path: &[String]) {
        if !self.streams.contains(id) {
            self.diag(DiagnosticKind::Declaration, path, format!("undeclared stream `{id}`"));
        }
    }

    fn params_in_scope(&mut self, params: &[String], body: &Region, scope: &[String], path: &[String]) {
        for p in params {
            if !scope.contains(p) {
                self.diag(
                    DiagnosticKind::Scope,
                    path,
                    format!("param `{p}` is not bound at this point"),
                );
            }
        }
        for iv in free_ivs(body) {
            if !params.contains(&iv) {
                self.diag(
                    DiagnosticKind::Isolation,
                    path,
                    format!("isolation violated: induction variable `{iv}` used but not passed as a param"),
                );
            }
        }
    }

    fn node(&mut self, n: &Node, scope: &[String], path: &mut Vec<String>) {
        self.params_in_scope(&n.params, &n.body, scope, path);
        let declared: BTreeSet<&str> = n.inputs.iter().map(|i| i.buffer.as_str()).collect();
        if declared.len() != n.inputs.len() {
            self.diag(DiagnosticKind::Structure, path, "node lists an input more than once");
        }
        for i in &n.inputs {
            self.check_buffer(&i.buffer, path);
        }
        let actual = node_effects(n);
        for (b, e) in &actual {
            match n.effect_on(b) {
                None => self.diag(
                    DiagnosticKind::Isolation,
                    path,
                    format!("isolation violated: `{b}` is accessed but not a node input"),
                ),
                Some(d) if d != *e => self.diag(
                    DiagnosticKind::EffectMismatch,
                    path,
                    format!(
                        "effect mismatch on `{b}`: declared {} but body is {}",
                        d.keyword(),
                        e.keyword()
                    ),
                ),
                Some(_) => {}
            }
        }
        for i in &n.inputs {
            if !actual.iter().any(|(b, _)| *b == i.buffer) {
                self.diag(
                    DiagnosticKind::EffectMismatch,
                    path,
                    format!(
                        "effect mismatch on `{}`: declared {} but never accessed",
                        i.buffer,
                        i.effect.keyword()
                    ),
                );
            }
        }
        let scope = n.params.clone();
        self.region(&n.body, &scope, path, Ctx::Free);
    }

    fn schedule(&mut self, s: &Schedule, scope: &[String], path: &mut Vec<String>) {
        self.params_in_scope(&s.params, &s.body, scope, path);
        for b in accessed_buffers(&s.body) {
            if !s.inputs.contains(&b) {
                self.diag(
                    DiagnosticKind::Isolation,
                    path,
                    format!("isolation violated: `{b}` is used in the schedule but not an input"),
                );
            }
        }
        for b in &s.inputs {
            self.check_buffer(b, path);
        }
        // Internal buffers must be produced before a pure reader consumes them.
        for buf in s.allocs() {
            let mut written = false;
            for n in s.nodes() {
                match n.effect_on(buf) {
                    Some(Effect::ReadOnly) if !written => {
                        self.diag(
                            DiagnosticKind::Dominance,
                            path,
                            format!("dominance violated: {} reads `{buf}` before any node writes it", n.id),
                        );
                        break;
                    }
                    Some(e) if e.writes() => written = true,
                    _ => {}
                }
            }
        }
        let scope = s.params.clone();
        self.region(&s.body, &scope, path, Ctx::Schedule);
    }
}

fn has_float_literal(e: &Expr) -> bool {
    match e {
        Expr::Lit(Literal::Float(_)) => true,
        Expr::Lit(_) | Expr::Read(_) => false,
        Expr::Neg(x) => has_float_literal(x),
        Expr::Bin(_, a, b) => has_float_literal(a) || has_float_literal(b),
    }
}

fn check_reads(e: &Expr, n: usize, bad: &mut bool) {
    match e {
        Expr::Read(i) => *bad |= *i >= n,
        Expr::Lit(_) => {}
        Expr::Neg(x) => check_reads(x, n, bad),
        Expr::Bin(_, a, b) => {
            check_reads(a, n, bad);
            check_reads(b, n, bad);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::ir::load;
    use crate::pipeline::{compile_program, Options};

    fn optimized() -> Program {
        compile_program(&corpus::load("listing1"), &Options::default(), false)
            .unwrap()
            .program
    }

    fn kinds(p: &Program) -> Vec<DiagnosticKind> {
        verify(p)
            .err()
            .unwrap_or_default()
            .into_iter()
            .map(|d| d.kind)
            .collect()
    }

    fn node2(p: &mut Program) -> &mut Node {
        p.top_schedule_mut().unwrap().nodes_mut().nth(2).unwrap()
    }

    #[test]
    fn optimized_program_is_valid() {
        assert!(verify(&optimized()).is_ok());
    }

    #[test]
    fn missing_node_input_breaks_isolation() {
        let mut p = optimized();
        node2(&mut p).inputs.retain(|i| i.buffer != "B");
        assert_eq!(kinds(&p), [DiagnosticKind::Isolation]);
    }

    #[test]
    fn wrong_effect_is_reported() {
        let mut p = optimized();
        node2(&mut p).inputs[0].effect = Effect::ReadWrite;
        let d = verify(&p).unwrap_err();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::EffectMismatch);
        assert!(d[0].path.contains("Node2"), "{}", d[0].path);
    }

    #[test]
    fn unused_input_is_reported() {
        let mut p = optimized();
        node2(&mut p).inputs.push(NodeInput {
            buffer: "A_in".into(),
            effect: Effect::ReadOnly,
        });
        assert!(kinds(&p).contains(&DiagnosticKind::EffectMismatch));
    }

    #[test]
    fn reads_before_writes_break_dominance() {
        let mut p = optimized();
        let s = p.top_schedule_mut().unwrap();
        let n2 = s.body.ops.remove(4);
        s.body.ops.insert(2, n2);
        assert!(kinds(&p).contains(&DiagnosticKind::Dominance));
    }

    #[test]
    fn reports_every_problem_at_once() {
        let p = load(
            "program p\narray X[4] f32 external interface\nfor i = 0 to 4\n  compute Y[i] = X[j]\n  compute X[i][i] = 1.0\n",
        )
        .unwrap();
        let k = kinds(&p);
        assert!(k.contains(&DiagnosticKind::Declaration), "{k:?}");
        assert!(k.contains(&DiagnosticKind::Scope), "{k:?}");
        assert!(k.contains(&DiagnosticKind::Rank), "{k:?}");
    }

    #[test]
    fn duplicate_declarations_and_bad_layout() {
        let mut p = Program::new("p");
        p.arrays
            .push(ArrayDecl::new("X", vec![4], ElemType::F32, Placement::OnChip));
        p.arrays
            .push(ArrayDecl::new("X", vec![4], ElemType::F32, Placement::OnChip));
        let mut z = ArrayDecl::new("Z", vec![4], ElemType::F32, Placement::OnChip);
        z.depth = 0;
        p.arrays.push(z);
        let k = kinds(&p);
        assert!(k.contains(&DiagnosticKind::Declaration));
        assert!(k.contains(&DiagnosticKind::Layout));
    }

    #[test]
    fn free_iv_in_node_breaks_isolation() {
        let p = load(
            "program p\narray X[4][4] f32 external interface\nfor t = 0 to 4\n  schedule in(X) params()\n    node N in(X:wo) params()\n      for i = 0 to 4\n        compute X[t][i] = 1.0\n",
        )
        .unwrap();
        let k = kinds(&p);
        assert!(k.contains(&DiagnosticKind::Isolation), "{k:?}");
    }

    #[test]
    fn integer_statement_rejects_float_literal() {
        let p = load("program p\narray X[4] i32 external interface\nfor i = 0 to 4\n  compute X[i] = 1.5\n").unwrap();
        assert_eq!(kinds(&p), [DiagnosticKind::Type]);
    }
}
