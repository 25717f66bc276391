//! Lexer and statement parser shared by the kernel-language frontend and the
//! textual IR loader.

use crate::ir::{Access, BinOp, Compute, Expr, Literal, Rational, Subscript};
use std::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, col: usize, message: impl Into<String>) -> Self {
        ParseError {
            line,
            col,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Float(f32),
    Punct(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(i) => write!(f, "`{i}`"),
            Tok::Float(x) => write!(f, "`{x:?}`"),
            Tok::Punct(p) => write!(f, "`{p}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

const PUNCTS: &[&str] = &[
    "..", "+=", "->", "[", "]", "(", ")", "{", "}", ";", ":", ",", "@", "=", "+", "-", "*", "/", "%", "<", ">",
];

/// Splits `src` into tokens. `line_offset`/`col_offset` shift reported
/// positions when lexing a fragment of a larger file.
pub fn lex(src: &str, line_offset: usize, col_offset: usize) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let (mut i, mut line, mut col) = (0usize, 1 + line_offset, 1 + col_offset);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            let (l0, c0) = (line, col);
            i += 2;
            col += 2;
            loop {
                if i + 1 >= chars.len() {
                    return Err(ParseError::new(l0, c0, "unterminated block comment"));
                }
                if chars[i] == '*' && chars[i + 1] == '/' {
                    i += 2;
                    col += 2;
                    break;
                }
                if chars[i] == '\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                i += 1;
            }
            continue;
        }
        let start_col = col;
        if c.is_ascii_alphabetic() || c == '_' {
            let s: String = chars[i..]
                .iter()
                .take_while(|c| c.is_ascii_alphanumeric() || **c == '_')
                .collect();
            i += s.len();
            col += s.len();
            out.push(Token {
                tok: Tok::Ident(s),
                line,
                col: start_col,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let mut j = i;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            let mut is_float = false;
            // `0..16` is a range, not a float
            if j < chars.len() && chars[j] == '.' && chars.get(j + 1) != Some(&'.') {
                is_float = true;
                j += 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
            }
            if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                let mut k = j + 1;
                if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                    k += 1;
                }
                if k < chars.len() && chars[k].is_ascii_digit() {
                    is_float = true;
                    j = k;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
            }
            let text: String = chars[i..j].iter().collect();
            let mut len = j - i;
            // optional `f` suffix on float literals
            if j < chars.len() && chars[j] == 'f' && is_float {
                len += 1;
            }
            let tok =
                if is_float {
                    Tok::Float(
                        text.parse::<f32>()
                            .map_err(|_| ParseError::new(line, start_col, format!("bad float literal `{text}`")))?,
                    )
                } else {
                    Tok::Int(text.parse::<i64>().map_err(|_| {
                        ParseError::new(line, start_col, format!("integer literal `{text}` out of range"))
                    })?)
                };
            i += len;
            col += len;
            out.push(Token {
                tok,
                line,
                col: start_col,
            });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match PUNCTS.iter().find(|p| rest.starts_with(**p)) {
            Some(p) => {
                i += p.len();
                col += p.len();
                out.push(Token {
                    tok: Tok::Punct(p),
                    line,
                    col: start_col,
                });
            }
            None => return Err(ParseError::new(line, col, format!("unexpected character `{c}`"))),
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

/// `Σ coef·iv + constant` with rational coefficients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearForm {
    pub terms: Vec<(String, Rational)>,
    pub constant: Rational,
}

impl LinearForm {
    fn constant(c: Rational) -> Self {
        LinearForm {
            terms: Vec::new(),
            constant: c,
        }
    }

    fn var(name: String) -> Self {
        LinearForm {
            terms: vec![(name, Rational::from_integer(1))],
            constant: Rational::from_integer(0),
        }
    }

    fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    fn add(mut self, other: LinearForm, sign: i64) -> Self {
        for (v, c) in other.terms {
            let c = c * sign;
            match self.terms.iter_mut().find(|(n, _)| *n == v) {
                Some((_, k)) => *k += c,
                None => self.terms.push((v, c)),
            }
        }
        self.constant += other.constant * sign;
        self.terms.retain(|(_, c)| *c != Rational::from_integer(0));
        self
    }

    fn scale(mut self, k: Rational) -> Self {
        for (_, c) in &mut self.terms {
            *c *= k;
        }
        self.constant *= k;
        self.terms.retain(|(_, c)| *c != Rational::from_integer(0));
        self
    }
}

/// Options distinguishing kernel source from the IR text form.
#[derive(Debug, Clone, Copy)]
pub struct SubscriptRules {
    /// Accept `iv / n` (rational strides) and `frame % n` (rotating slots).
    pub ir_extensions: bool,
}

pub struct Parser {
    toks: Vec<Token>,
    pos: usize,
    pub rules: SubscriptRules,
}

impl Parser {
    pub fn new(toks: Vec<Token>, rules: SubscriptRules) -> Self {
        Parser { toks, pos: 0, rules }
    }

    pub fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    pub fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    pub fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    pub fn error(&self, msg: impl Into<String>) -> ParseError {
        let (l, c) = self.here();
        ParseError::new(l, c, msg)
    }

    pub fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    pub fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    pub fn eat(&mut self, p: &str) -> bool {
        if matches!(self.peek(), Tok::Punct(q) if *q == p) {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn expect(&mut self, p: &str) -> Result<(), ParseError> {
        if self.eat(p) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{p}`, found {}", self.peek())))
        }
    }

    pub fn eat_keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Tok::Ident(s) if s == kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{kw}`, found {}", self.peek())))
        }
    }

    pub fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => Err(self.error(format!("expected identifier, found {other}"))),
        }
    }

    pub fn int(&mut self) -> Result<i64, ParseError> {
        let neg = self.eat("-");
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(if neg { -i } else { i })
            }
            other => Err(self.error(format!("expected integer, found {other}"))),
        }
    }

    pub fn expect_eof(&self) -> Result<(), ParseError> {
        if self.at_eof() {
            Ok(())
        } else {
            Err(self.error(format!("unexpected {}", self.peek())))
        }
    }

    fn linear_atom(&mut self) -> Result<LinearForm, ParseError> {
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(LinearForm::constant(Rational::from_integer(i)))
            }
            Tok::Ident(s) => {
                self.bump();
                Ok(LinearForm::var(s))
            }
            Tok::Punct("(") => {
                self.bump();
                let f = self.linear_sum()?;
                self.expect(")")?;
                Ok(f)
            }
            Tok::Punct("-") => {
                self.bump();
                Ok(self.linear_atom()?.scale(Rational::from_integer(-1)))
            }
            other => Err(self.error(format!("expected index expression, found {other}"))),
        }
    }

    fn linear_product(&mut self) -> Result<LinearForm, ParseError> {
        let mut acc = self.linear_atom()?;
        loop {
            if self.eat("*") {
                let rhs = self.linear_atom()?;
                acc = match (acc.is_constant(), rhs.is_constant()) {
                    (true, _) => rhs.scale(acc.constant),
                    (_, true) => acc.scale(rhs.constant),
                    _ => return Err(self.error("non-affine subscript: product of induction variables")),
                };
            } else if matches!(self.peek(), Tok::Punct("/")) {
                if !self.rules.ir_extensions {
                    return Err(self.error("non-affine subscript: division is not allowed in subscripts"));
                }
                self.bump();
                let d = self.linear_atom()?;
                if !d.is_constant() || d.constant == Rational::from_integer(0) {
                    return Err(self.error("non-affine subscript: division by a non-constant or zero"));
                }
                acc = acc.scale(d.constant.recip());
            } else {
                return Ok(acc);
            }
        }
    }

    fn linear_sum(&mut self) -> Result<LinearForm, ParseError> {
        let mut acc = self.linear_product()?;
        loop {
            if self.eat("+") {
                acc = acc.add(self.linear_product()?, 1);
            } else if self.eat("-") {
                acc = acc.add(self.linear_product()?, -1);
            } else {
                return Ok(acc);
            }
        }
    }

    /// Parses one `[...]` subscript body into a linear form, or a rotating
    /// slot `frame % n` when IR extensions are on.
    pub fn subscript_form(&mut self) -> Result<SubscriptForm, ParseError> {
        if self.rules.ir_extensions
            && matches!(self.peek(), Tok::Ident(s) if s == "frame")
            && matches!(self.peek_at(1), Tok::Punct("%"))
        {
            self.bump();
            self.bump();
            let n = self.int()?;
            if n <= 0 {
                return Err(self.error("slot count must be positive"));
            }
            return Ok(SubscriptForm::Rotating(n as u32));
        }
        let (line, col) = self.here();
        let f = self.linear_sum()?;
        Ok(SubscriptForm::Linear(f, line, col))
    }

    /// Parses `name[sub]..[sub]`, converting each subscript with `conv`.
    pub fn access(
        &mut self,
        conv: &mut dyn FnMut(SubscriptForm) -> Result<Subscript, ParseError>,
    ) -> Result<Access, ParseError> {
        let name = self.ident()?;
        let mut indices = Vec::new();
        while self.eat("[") {
            let form = self.subscript_form()?;
            indices.push(conv(form)?);
            self.expect("]")?;
        }
        if indices.is_empty() {
            return Err(self.error(format!("array `{name}` needs at least one subscript")));
        }
        Ok(Access::new(name, indices))
    }

    fn expr_atom(
        &mut self,
        reads: &mut Vec<Access>,
        conv: &mut dyn FnMut(SubscriptForm) -> Result<Subscript, ParseError>,
    ) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(Expr::Lit(Literal::Int(i)))
            }
            Tok::Float(x) => {
                self.bump();
                Ok(Expr::Lit(Literal::Float(x)))
            }
            Tok::Ident(s) => {
                if !matches!(self.peek_at(1), Tok::Punct("[")) {
                    return Err(self.error(format!("`{s}` is not an array read; scalars are not supported")));
                }
                let a = self.access(conv)?;
                reads.push(a);
                Ok(Expr::Read(reads.len() - 1))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr_sum(reads, conv)?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Punct("-") => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.expr_atom(reads, conv)?)))
            }
            other => Err(self.error(format!("expected expression, found {other}"))),
        }
    }

    fn expr_product(
        &mut self,
        reads: &mut Vec<Access>,
        conv: &mut dyn FnMut(SubscriptForm) -> Result<Subscript, ParseError>,
    ) -> Result<Expr, ParseError> {
        let mut acc = self.expr_atom(reads, conv)?;
        loop {
            let op = if self.eat("*") {
                BinOp::Mul
            } else if self.eat("/") {
                BinOp::Div
            } else {
                return Ok(acc);
            };
            let rhs = self.expr_atom(reads, conv)?;
            acc = Expr::Bin(op, Box::new(acc), Box::new(rhs));
        }
    }

    fn expr_sum(
        &mut self,
        reads: &mut Vec<Access>,
        conv: &mut dyn FnMut(SubscriptForm) -> Result<Subscript, ParseError>,
    ) -> Result<Expr, ParseError> {
        let mut acc = self.expr_product(reads, conv)?;
        loop {
            let op = if self.eat("+") {
                BinOp::Add
            } else if self.eat("-") {
                BinOp::Sub
            } else {
                return Ok(acc);
            };
            let rhs = self.expr_product(reads, conv)?;
            acc = Expr::Bin(op, Box::new(acc), Box::new(rhs));
        }
    }

    /// `target (=|+=) expr` without the trailing `;`.
    pub fn statement(
        &mut self,
        conv: &mut dyn FnMut(SubscriptForm) -> Result<Subscript, ParseError>,
    ) -> Result<Compute, ParseError> {
        let write = self.access(conv)?;
        let accumulate = if self.eat("+=") {
            true
        } else {
            self.expect("=")?;
            false
        };
        let mut reads = Vec::new();
        let expr = self.expr_sum(&mut reads, conv)?;
        Ok(Compute::new(write, accumulate, reads, expr))
    }
}

pub enum SubscriptForm {
    Linear(LinearForm, usize, usize),
    Rotating(u32),
}

/// Converts a linear form to a single-variable subscript.
pub fn linear_to_subscript(form: LinearForm, line: usize, col: usize) -> Result<Subscript, ParseError> {
    if !form.constant.is_integer() {
        return Err(ParseError::new(line, col, "subscript offset must be an integer"));
    }
    let offset = form.constant.to_integer();
    match form.terms.len() {
        0 => Ok(Subscript::Const(offset)),
        1 => {
            let (iv, stride) = form.terms.into_iter().next().expect("one term");
            Ok(Subscript::Affine { iv, stride, offset })
        }
        _ => Err(ParseError::new(
            line,
            col,
            "unsupported subscript: more than one induction variable in a dimension",
        )),
    }
}

pub fn fmt_subscript(s: &Subscript) -> String {
    match s {
        Subscript::Const(c) => c.to_string(),
        Subscript::Rotating { slots } => format!("frame%{slots}"),
        Subscript::Affine { iv, stride, offset } => {
            let mut out = if *stride == Rational::from_integer(1) {
                iv.clone()
            } else if *stride == Rational::from_integer(-1) {
                format!("-{iv}")
            } else if stride.is_integer() {
                format!("{iv}*{}", stride.to_integer())
            } else {
                format!("{iv}*{}/{}", stride.numer(), stride.denom())
            };
            if *offset > 0 {
                out.push_str(&format!("+{offset}"));
            } else if *offset < 0 {
                out.push_str(&format!("{offset}"));
            }
            out
        }
    }
}

pub fn fmt_access(a: &Access) -> String {
    let mut s = a.array.clone();
    for i in &a.indices {
        s.push('[');
        s.push_str(&fmt_subscript(i));
        s.push(']');
    }
    s
}

pub fn fmt_literal(l: Literal) -> String {
    match l {
        Literal::Int(i) => i.to_string(),
        Literal::Float(x) => {
            let s = format!("{x:?}");
            if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
                s
            } else {
                format!("{s}.0")
            }
        }
    }
}

pub fn fmt_expr(e: &Expr, reads: &[Access]) -> String {
    match e {
        Expr::Lit(l) => fmt_literal(*l),
        Expr::Read(i) => fmt_access(&reads[*i]),
        Expr::Neg(inner) => format!("-{}", fmt_expr_atom(inner, reads)),
        Expr::Bin(op, a, b) => format!(
            "{} {} {}",
            fmt_expr_atom(a, reads),
            op.symbol(),
            fmt_expr_atom(b, reads)
        ),
    }
}

fn fmt_expr_atom(e: &Expr, reads: &[Access]) -> String {
    match e {
        Expr::Bin(..) => format!("({})", fmt_expr(e, reads)),
        _ => fmt_expr(e, reads),
    }
}

pub fn fmt_compute(c: &crate::ir::Compute) -> String {
    format!(
        "{} {} {}",
        fmt_access(&c.write),
        if c.accumulate { "+=" } else { "=" },
        fmt_expr(&c.expr, &c.reads)
    )
}
