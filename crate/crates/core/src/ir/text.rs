//! Line-oriented textual form of the IR. One op per line; indentation (two
//! spaces per level) gives region nesting. See `docs/ir.md`.

use super::*;
use crate::syntax::{fmt_compute, lex, linear_to_subscript, ParseError, Parser, SubscriptForm, SubscriptRules};
use std::fmt::Write as _;

pub fn dump(program: &Program) -> String {
    let mut out = String::new();
    writeln!(out, "program {}", program.name).ok();
    for a in &program.arrays {
        write!(out, "array {}", a.name).ok();
        for d in &a.shape {
            write!(out, "[{d}]").ok();
        }
        write!(out, " {} {}", a.elem, a.placement).ok();
        if a.interface {
            out.push_str(" interface");
        }
        if a.depth != 1 {
            write!(out, " depth={}", a.depth).ok();
        }
        if a.partition.iter().any(|p| *p != DimPartition::NONE) {
            let parts: Vec<String> = a
                .partition
                .iter()
                .map(|p| match p.fashion {
                    PartitionFashion::None => "none".to_string(),
                    PartitionFashion::Cyclic => format!("cyclic:{}", p.factor),
                    PartitionFashion::Block => format!("block:{}", p.factor),
                })
                .collect();
            write!(out, " partition=[{}]", parts.join(",")).ok();
        }
        if let Some(s) = a.fifo_slots {
            write!(out, " fifo={s}").ok();
        }
        out.push('\n');
    }
    for s in &program.streams {
        writeln!(out, "stream {} {} entries={}", s.id, s.elem, s.entries).ok();
    }
    for p in &program.ports {
        let kind = match p.kind {
            PortKind::MemoryMapped => "mm",
            PortKind::Stream => "stream",
        };
        writeln!(out, "port {} {} latency={}", p.id, kind, p.latency).ok();
    }
    dump_region(&program.top, 0, &mut out);
    out
}

fn dump_region(region: &Region, depth: usize, out: &mut String) {
    for op in &region.ops {
        let pad = "  ".repeat(depth);
        out.push_str(&pad);
        match op {
            Op::Loop(l) => {
                write!(out, "for {} = {} to {}", l.iv, l.lower, l.upper).ok();
                if l.step != 1 {
                    write!(out, " step {}", l.step).ok();
                }
                if l.unroll != 1 {
                    write!(out, " unroll={}", l.unroll).ok();
                }
                if let Some(t) = l.tile {
                    write!(out, " tile={t}").ok();
                }
                if l.reduction {
                    out.push_str(" reduction");
                }
            }
            Op::Compute(c) => {
                write!(out, "compute {}", fmt_compute(c)).ok();
            }
            Op::Task(_) => out.push_str("task"),
            Op::Dispatch(_) => out.push_str("dispatch"),
            Op::Node(n) => {
                let ins: Vec<String> = n
                    .inputs
                    .iter()
                    .map(|i| format!("{}:{}", i.buffer, i.effect.keyword()))
                    .collect();
                write!(
                    out,
                    "node {} in({}) params({})",
                    n.id,
                    ins.join(", "),
                    n.params.join(", ")
                )
                .ok();
            }
            Op::Schedule(s) => {
                write!(
                    out,
                    "schedule in({}) params({})",
                    s.inputs.join(", "),
                    s.params.join(", ")
                )
                .ok();
            }
            Op::Alloc { buffer } => {
                write!(out, "alloc {buffer}").ok();
            }
            Op::Copy { src, dst } => {
                write!(out, "copy {src} -> {dst}").ok();
            }
            Op::TokenSend { chans } => {
                write!(out, "token.send {}", chans.join(", ")).ok();
            }
            Op::TokenRecv { chan } => {
                write!(out, "token.recv {chan}").ok();
            }
        }
        out.push('\n');
        if let Some(r) = op.region() {
            dump_region(r, depth + 1, out);
        }
    }
}

struct Line<'a> {
    no: usize,
    indent: usize,
    text: &'a str,
}

pub fn load(text: &str) -> Result<Program, ParseError> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let no = i + 1;
        let body = raw.split("//").next().unwrap_or("");
        if body.trim().is_empty() {
            continue;
        }
        let spaces = body.len() - body.trim_start_matches(' ').len();
        if body[spaces..].starts_with('\t') {
            return Err(ParseError::new(no, spaces + 1, "tabs are not allowed for indentation"));
        }
        if spaces % 2 != 0 {
            return Err(ParseError::new(
                no,
                spaces + 1,
                "indentation must be a multiple of two spaces",
            ));
        }
        lines.push(Line {
            no,
            indent: spaces / 2,
            text: body.trim(),
        });
    }
    if lines.is_empty() {
        return Err(ParseError::new(1, 1, "empty input: expected `program <name>`"));
    }

    let mut idx = 0;
    let mut p = line_parser(&lines[0])?;
    p.expect_keyword("program")?;
    let mut program = Program::new(p.ident()?);
    p.expect_eof()?;
    idx += 1;

    while idx < lines.len() && lines[idx].indent == 0 {
        let line = &lines[idx];
        let mut p = line_parser(line)?;
        if p.eat_keyword("array") {
            program.arrays.push(parse_array(&mut p)?);
        } else if p.eat_keyword("stream") {
            let id = p.ident()?;
            let elem = parse_elem(&mut p)?;
            p.expect_keyword("entries")?;
            p.expect("=")?;
            let entries = positive(&mut p)?;
            program.streams.push(StreamSpec { id, elem, entries });
        } else if p.eat_keyword("port") {
            let id = p.ident()?;
            let kind = match p.ident()?.as_str() {
                "mm" => PortKind::MemoryMapped,
                "stream" => PortKind::Stream,
                other => return Err(p.error(format!("unknown port kind `{other}`"))),
            };
            p.expect_keyword("latency")?;
            p.expect("=")?;
            let latency = p.int()?;
            program.ports.push(PortSpec {
                id,
                kind,
                latency: u32::try_from(latency).map_err(|_| p.error("latency out of range"))?,
            });
        } else {
            break;
        }
        p.expect_eof()?;
        idx += 1;
    }

    program.top = parse_region(&lines, &mut idx, 0)?;
    if idx < lines.len() {
        let l = &lines[idx];
        return Err(ParseError::new(l.no, l.indent * 2 + 1, "unexpected indentation"));
    }
    Ok(program)
}

fn line_parser(line: &Line<'_>) -> Result<Parser, ParseError> {
    let toks = lex(line.text, line.no - 1, line.indent * 2)?;
    Ok(Parser::new(toks, SubscriptRules { ir_extensions: true }))
}

fn positive(p: &mut Parser) -> Result<u32, ParseError> {
    let v = p.int()?;
    if v <= 0 || v > u32::MAX as i64 {
        return Err(p.error("expected a positive integer"));
    }
    Ok(v as u32)
}

fn parse_elem(p: &mut Parser) -> Result<ElemType, ParseError> {
    match p.ident()?.as_str() {
        "f32" | "float" | "float32" => Ok(ElemType::F32),
        "i32" | "int" | "int32" => Ok(ElemType::I32),
        other => Err(p.error(format!("unknown element type `{other}`"))),
    }
}

fn parse_array(p: &mut Parser) -> Result<ArrayDecl, ParseError> {
    let name = p.ident()?;
    let mut shape = Vec::new();
    while p.eat("[") {
        shape.push(positive(p)? as u64);
        p.expect("]")?;
    }
    if shape.is_empty() {
        return Err(p.error("array needs at least one dimension"));
    }
    let elem = parse_elem(p)?;
    let placement = match p.ident()?.as_str() {
        "onchip" => Placement::OnChip,
        "external" => Placement::External,
        other => return Err(p.error(format!("unknown placement `{other}`"))),
    };
    let mut a = ArrayDecl::new(name, shape, elem, placement);
    a.interface = false;
    while !p.at_eof() {
        let key = p.ident()?;
        match key.as_str() {
            "interface" => a.interface = true,
            "depth" => {
                p.expect("=")?;
                a.depth = positive(p)?;
            }
            "fifo" => {
                p.expect("=")?;
                a.fifo_slots = Some(positive(p)?);
            }
            "partition" => {
                p.expect("=")?;
                p.expect("[")?;
                let mut parts = Vec::new();
                loop {
                    let fashion = match p.ident()?.as_str() {
                        "none" => PartitionFashion::None,
                        "cyclic" => PartitionFashion::Cyclic,
                        "block" => PartitionFashion::Block,
                        other => return Err(p.error(format!("unknown partition fashion `{other}`"))),
                    };
                    let factor = if fashion == PartitionFashion::None {
                        1
                    } else {
                        p.expect(":")?;
                        positive(p)?
                    };
                    parts.push(DimPartition { fashion, factor });
                    if !p.eat(",") {
                        break;
                    }
                }
                p.expect("]")?;
                if parts.len() != a.rank() {
                    return Err(p.error("partition list length must equal the array rank"));
                }
                a.partition = parts;
            }
            other => return Err(p.error(format!("unknown array attribute `{other}`"))),
        }
    }
    Ok(a)
}

fn ident_list(p: &mut Parser, kw: &str) -> Result<Vec<String>, ParseError> {
    p.expect_keyword(kw)?;
    p.expect("(")?;
    let mut out = Vec::new();
    if p.eat(")") {
        return Ok(out);
    }
    loop {
        out.push(p.ident()?);
        if p.eat(")") {
            return Ok(out);
        }
        p.expect(",")?;
    }
}

fn parse_region(lines: &[Line<'_>], idx: &mut usize, depth: usize) -> Result<Region, ParseError> {
    let mut ops = Vec::new();
    while *idx < lines.len() {
        let line = &lines[*idx];
        if line.indent < depth {
            break;
        }
        if line.indent > depth {
            return Err(ParseError::new(line.no, line.indent * 2 + 1, "unexpected indentation"));
        }
        *idx += 1;
        if let Some(op) = token_op(line)? {
            ops.push(op);
            continue;
        }
        let mut p = line_parser(line)?;
        let kw = p.ident()?;
        let op = match kw.as_str() {
            "for" => {
                let iv = p.ident()?;
                p.expect("=")?;
                let lower = p.int()?;
                p.expect_keyword("to")?;
                let upper = p.int()?;
                let mut l = Loop::new(iv, upper, Region::default());
                l.lower = lower;
                while !p.at_eof() {
                    match p.ident()?.as_str() {
                        "step" => {
                            l.step = p.int()?;
                            if l.step <= 0 {
                                return Err(p.error("loop step must be positive"));
                            }
                        }
                        "unroll" => {
                            p.expect("=")?;
                            l.unroll = positive(&mut p)?;
                        }
                        "tile" => {
                            p.expect("=")?;
                            l.tile = Some(positive(&mut p)?);
                        }
                        "reduction" => l.reduction = true,
                        other => return Err(p.error(format!("unknown loop attribute `{other}`"))),
                    }
                }
                l.body = parse_region(lines, idx, depth + 1)?;
                Op::Loop(l)
            }
            "compute" => {
                let c = p.statement(&mut |form| match form {
                    SubscriptForm::Rotating(slots) => Ok(Subscript::Rotating { slots }),
                    SubscriptForm::Linear(f, l, c) => linear_to_subscript(f, l, c),
                })?;
                p.expect_eof()?;
                Op::Compute(c)
            }
            "task" => {
                p.expect_eof()?;
                Op::Task(parse_region(lines, idx, depth + 1)?)
            }
            "dispatch" => {
                p.expect_eof()?;
                Op::Dispatch(parse_region(lines, idx, depth + 1)?)
            }
            "node" => {
                let id = p.ident()?;
                p.expect_keyword("in")?;
                p.expect("(")?;
                let mut inputs = Vec::new();
                if !p.eat(")") {
                    loop {
                        let buffer = p.ident()?;
                        p.expect(":")?;
                        let effect = match p.ident()?.as_str() {
                            "ro" => Effect::ReadOnly,
                            "wo" => Effect::WriteOnly,
                            "rw" => Effect::ReadWrite,
                            other => return Err(p.error(format!("unknown effect `{other}`"))),
                        };
                        inputs.push(NodeInput { buffer, effect });
                        if p.eat(")") {
                            break;
                        }
                        p.expect(",")?;
                    }
                }
                let params = ident_list(&mut p, "params")?;
                p.expect_eof()?;
                let body = parse_region(lines, idx, depth + 1)?;
                Op::Node(Node {
                    id,
                    inputs,
                    params,
                    body,
                })
            }
            "schedule" => {
                let inputs = ident_list(&mut p, "in")?;
                let params = ident_list(&mut p, "params")?;
                p.expect_eof()?;
                let body = parse_region(lines, idx, depth + 1)?;
                Op::Schedule(Schedule { inputs, params, body })
            }
            "alloc" => {
                let buffer = p.ident()?;
                p.expect_eof()?;
                Op::Alloc { buffer }
            }
            "copy" => {
                let src = p.ident()?;
                p.expect("->")?;
                let dst = p.ident()?;
                p.expect_eof()?;
                Op::Copy { src, dst }
            }
            other => {
                return Err(ParseError::new(
                    line.no,
                    line.indent * 2 + 1,
                    format!("unknown op `{other}`"),
                ))
            }
        };
        ops.push(op);
    }
    Ok(Region::new(ops))
}

// The lexer has no `.` token, so token ops are split off before lexing.
fn token_op(line: &Line<'_>) -> Result<Option<Op>, ParseError> {
    let (send, rest) = if let Some(r) = line.text.strip_prefix("token.send") {
        (true, r)
    } else if let Some(r) = line.text.strip_prefix("token.recv") {
        (false, r)
    } else {
        return Ok(None);
    };
    let col = line.indent * 2 + 10;
    let toks = lex(rest, line.no - 1, col)?;
    let mut p = Parser::new(toks, SubscriptRules { ir_extensions: true });
    let mut chans = vec![p.ident()?];
    while p.eat(",") {
        chans.push(p.ident()?);
    }
    p.expect_eof()?;
    if send {
        Ok(Some(Op::TokenSend { chans }))
    } else if chans.len() == 1 {
        Ok(Some(Op::TokenRecv { chan: chans.remove(0) }))
    } else {
        Err(ParseError::new(
            line.no,
            col + 1,
            "token.recv takes exactly one channel",
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::pipeline::{run_stage, Options, Stage};

    #[test]
    fn round_trips_every_stage() {
        let opts = Options::default();
        for (name, _) in corpus::KERNELS {
            let mut p = corpus::load(name);
            for s in Stage::ALL {
                p = run_stage(s, &p, &opts).unwrap().program;
                let text = dump(&p);
                let back = load(&text).unwrap_or_else(|e| panic!("{name}/{s}: {e}\n{text}"));
                assert_eq!(back, p, "{name}/{s}");
                assert_eq!(dump(&back), text, "{name}/{s}: dump is not byte-stable");
            }
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        let e = load("").unwrap_err();
        assert_eq!((e.line, e.col), (1, 1));
        assert!(load("// only a comment\n\n").is_err());
    }

    #[test]
    fn indentation_errors_point_at_the_line() {
        let e = load("program p\n array X[4] f32 onchip\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = load("program p\n\tarray X[4] f32 onchip\n").unwrap_err();
        assert_eq!(e.line, 2);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let p = load("program p // name\n\narray X[4] f32 external interface\nfor i = 0 to 4\n  compute X[i] = 1.0\n")
            .unwrap();
        assert_eq!(p.name, "p");
        assert_eq!(p.arrays.len(), 1);
        assert_eq!(p.top.ops.len(), 1);
    }
}
