//! Parser for the `.hk` kernel language (see `docs/lang.md`).
//!
//! ```text
//! kernel listing1;
//! array A[32][16] : f32 @ onchip;
//! for i in 0..32 { for k in 0..16 { A[i][k] = A_in[i][k]; } }
//! ```
//!
//! Loops are normalized on the way in: `for i in lo..hi step s` becomes a
//! zero-based unit-step loop and `lo`/`s` are folded into every subscript.

use crate::ir::*;
use crate::syntax::{lex, linear_to_subscript, LinearForm, ParseError, Parser, SubscriptForm, SubscriptRules, Tok};
use std::collections::{BTreeSet, HashMap};
use std::path::Path;

/// A kernel source file.
#[derive(Debug, Clone)]
pub struct SourceUnit {
    pub text: String,
    pub path: String,
}

impl SourceUnit {
    pub fn new(text: impl Into<String>, path: impl Into<String>) -> Self {
        SourceUnit {
            text: text.into(),
            path: path.into(),
        }
    }

    /// Program name derived from the file stem, made into a C identifier.
    pub fn default_name(&self) -> String {
        let stem = Path::new(&self.path)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("kernel");
        sanitize(stem)
    }
}

fn sanitize(s: &str) -> String {
    let mut out: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    if out.is_empty() || out.starts_with(|c: char| c.is_ascii_digit()) {
        out.insert(0, 'k');
    }
    out
}

pub fn parse(src: &SourceUnit) -> Result<Program, ParseError> {
    parse_str(&src.text, &src.default_name())
}

struct LoopFrame {
    name: String,
    lower: i64,
    step: i64,
    reduction: bool,
}

struct Front {
    p: Parser,
    program: Program,
    outs: BTreeSet<String>,
    loops: Vec<LoopFrame>,
    written: BTreeSet<String>,
    read: BTreeSet<String>,
}

/// Parses kernel source; `default_name` is used when there is no `kernel`
/// directive.
pub fn parse_str(text: &str, default_name: &str) -> Result<Program, ParseError> {
    let toks = lex(text, 0, 0)?;
    let mut f = Front {
        p: Parser::new(toks, SubscriptRules { ir_extensions: false }),
        program: Program::new(default_name),
        outs: BTreeSet::new(),
        loops: Vec::new(),
        written: BTreeSet::new(),
        read: BTreeSet::new(),
    };
    if f.p.eat_keyword("kernel") {
        f.program.name = f.p.ident()?;
        f.p.expect(";")?;
    }
    let mut ops = Vec::new();
    while !f.p.at_eof() {
        if matches!(f.p.peek(), Tok::Ident(s) if s == "array") {
            if !ops.is_empty() {
                return Err(f.p.error("array declarations must precede statements"));
            }
            f.declaration()?;
        } else {
            ops.push(f.statement()?);
        }
    }
    f.program.top = Region::new(ops);
    f.finish_interfaces();
    Ok(f.program)
}

impl Front {
    fn declaration(&mut self) -> Result<(), ParseError> {
        self.p.expect_keyword("array")?;
        let (line, col) = self.p.here();
        let name = self.p.ident()?;
        if self.program.array(&name).is_some() {
            return Err(ParseError::new(line, col, format!("array `{name}` declared twice")));
        }
        let mut shape = Vec::new();
        while self.p.eat("[") {
            let d = self.p.int()?;
            if d < 1 {
                return Err(self.p.error("array extents must be positive"));
            }
            shape.push(d as u64);
            self.p.expect("]")?;
        }
        if shape.is_empty() {
            return Err(self.p.error("array needs at least one dimension"));
        }
        self.p.expect(":")?;
        let elem = match self.p.ident()?.as_str() {
            "f32" | "float" | "float32" => ElemType::F32,
            "i32" | "int" | "int32" => ElemType::I32,
            other => return Err(self.p.error(format!("unknown element type `{other}`"))),
        };
        self.p.expect("@")?;
        let placement = match self.p.ident()?.as_str() {
            "onchip" => Placement::OnChip,
            "external" => Placement::External,
            other => return Err(self.p.error(format!("unknown placement `{other}`"))),
        };
        if self.p.eat_keyword("out") {
            self.outs.insert(name.clone());
        }
        self.p.expect(";")?;
        self.program.arrays.push(ArrayDecl::new(name, shape, elem, placement));
        Ok(())
    }

    fn statement(&mut self) -> Result<Op, ParseError> {
        if self.p.eat_keyword("for") {
            return self.for_loop();
        }
        let (line, col) = self.p.here();
        let loops: HashMap<String, (i64, i64)> =
            self.loops.iter().map(|l| (l.name.clone(), (l.lower, l.step))).collect();
        let mut conv = |form: SubscriptForm| -> Result<Subscript, ParseError> {
            match form {
                SubscriptForm::Rotating(_) => unreachable!("kernel mode has no rotating subscripts"),
                SubscriptForm::Linear(f, l, c) => normalize(f, &loops, l, c),
            }
        };
        let c = self.p.statement(&mut conv)?;
        self.p.expect(";")?;
        self.check_compute(&c, line, col)?;
        if c.accumulate {
            for frame in &mut self.loops {
                let indexed = c.write.indices.iter().any(|s| s.iv_name() == Some(frame.name.as_str()));
                if !indexed {
                    frame.reduction = true;
                }
            }
        }
        self.written.insert(c.write.array.clone());
        for r in &c.reads {
            self.read.insert(r.array.clone());
        }
        Ok(Op::Compute(c))
    }

    fn check_compute(&self, c: &Compute, line: usize, col: usize) -> Result<(), ParseError> {
        for a in std::iter::once(&c.write).chain(&c.reads) {
            let Some(decl) = self.program.array(&a.array) else {
                return Err(ParseError::new(line, col, format!("undeclared array `{}`", a.array)));
            };
            if decl.rank() != a.indices.len() {
                return Err(ParseError::new(
                    line,
                    col,
                    format!(
                        "`{}` has rank {} but is accessed with {} subscripts",
                        a.array,
                        decl.rank(),
                        a.indices.len()
                    ),
                ));
            }
        }
        let dest = self.program.array(&c.write.array).map(|a| a.elem);
        if dest == Some(ElemType::I32) && float_literal(&c.expr) {
            return Err(ParseError::new(line, col, "float literal in an integer statement"));
        }
        Ok(())
    }

    fn for_loop(&mut self) -> Result<Op, ParseError> {
        let (line, col) = self.p.here();
        let iv = self.p.ident()?;
        if self.loops.iter().any(|l| l.name == iv) {
            return Err(ParseError::new(
                line,
                col,
                format!("induction variable `{iv}` shadows an enclosing loop"),
            ));
        }
        self.p.expect_keyword("in")?;
        let lo = self.p.int()?;
        self.p.expect("..")?;
        let hi = self.p.int()?;
        let step = if self.p.eat_keyword("step") {
            let s = self.p.int()?;
            if s <= 0 {
                return Err(self.p.error("loop step must be positive"));
            }
            s
        } else {
            1
        };
        if hi < lo {
            return Err(ParseError::new(line, col, "loop upper bound is below its lower bound"));
        }
        self.loops.push(LoopFrame {
            name: iv.clone(),
            lower: lo,
            step,
            reduction: false,
        });
        self.p.expect("{")?;
        let mut body = Vec::new();
        while !self.p.eat("}") {
            if self.p.at_eof() {
                return Err(self.p.error("unterminated loop body: expected `}`"));
            }
            body.push(self.statement()?);
        }
        let frame = self.loops.pop().expect("pushed above");
        let trip = (hi - lo + step - 1) / step;
        let mut l = Loop::new(iv, trip, Region::new(body));
        l.reduction = frame.reduction;
        Ok(Op::Loop(l))
    }

    /// External arrays are always interface arrays. On-chip arrays are
    /// internal unless marked `out`, never read, or never written.
    fn finish_interfaces(&mut self) {
        for a in &mut self.program.arrays {
            if a.placement == Placement::External {
                a.interface = true;
                continue;
            }
            let w = self.written.contains(&a.name);
            let r = self.read.contains(&a.name);
            a.interface = self.outs.contains(&a.name) || (w != r);
        }
    }
}

/// Rewrites a subscript over source ivs into one over normalized ivs:
/// `iv = lower + step * iv'`.
fn normalize(
    mut form: LinearForm,
    loops: &HashMap<String, (i64, i64)>,
    line: usize,
    col: usize,
) -> Result<Subscript, ParseError> {
    for (name, coef) in &mut form.terms {
        let Some(&(lower, step)) = loops.get(name) else {
            return Err(ParseError::new(
                line,
                col,
                format!("unknown induction variable `{name}`"),
            ));
        };
        form.constant += *coef * lower;
        *coef *= step;
    }
    linear_to_subscript(form, line, col)
}

fn float_literal(e: &Expr) -> bool {
    match e {
        Expr::Lit(Literal::Float(_)) => true,
        Expr::Lit(_) | Expr::Read(_) => false,
        Expr::Neg(x) => float_literal(x),
        Expr::Bin(_, a, b) => float_literal(a) || float_literal(b),
    }
}
