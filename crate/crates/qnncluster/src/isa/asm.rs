//! Textual assembly for the emulator. One instruction per line, labels end
//! with ':', comments start with '#'. Branch and loop targets are labels or
//! absolute instruction indices written `@N`.

use super::instr::{
    AluOp, BranchCond, Instr, LoopCount, Program, ProgramBuilder, ProgramError, Shape, Sign,
    SrcReg, Target, Width,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AsmError {
    #[error("line {0}: {1}")]
    Line(usize, String),
    #[error(transparent)]
    Program(#[from] ProgramError),
}

fn parse_gpr(tok: &str) -> Result<u8, String> {
    let rest = tok
        .strip_prefix('x')
        .ok_or_else(|| format!("expected gp register, got `{tok}`"))?;
    let n: u8 = rest.parse().map_err(|_| format!("bad register `{tok}`"))?;
    if n > 31 {
        return Err(format!("register {tok} out of range"));
    }
    Ok(n)
}

fn parse_nn(tok: &str) -> Result<u8, String> {
    let rest = tok
        .strip_prefix('n')
        .ok_or_else(|| format!("expected nn register, got `{tok}`"))?;
    let n: u8 = rest.parse().map_err(|_| format!("bad register `{tok}`"))?;
    if n > 5 {
        return Err(format!("nn register {tok} out of range"));
    }
    Ok(n)
}

fn parse_src(tok: &str) -> Result<SrcReg, String> {
    if tok.starts_with('x') {
        Ok(SrcReg::Gpr(parse_gpr(tok)?))
    } else {
        Ok(SrcReg::Nn(parse_nn(tok)?))
    }
}

fn parse_imm(tok: &str) -> Result<i32, String> {
    let (neg, body) = match tok.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, tok),
    };
    let v = if let Some(hex) = body.strip_prefix("0x") {
        u32::from_str_radix(hex, 16).map_err(|_| format!("bad immediate `{tok}`"))? as i64
    } else {
        body.parse::<i64>().map_err(|_| format!("bad immediate `{tok}`"))?
    };
    let v = if neg { -v } else { v };
    i32::try_from(v)
        .or_else(|_| u32::try_from(v).map(|u| u as i32))
        .map_err(|_| format!("immediate `{tok}` out of 32-bit range"))
}

fn parse_target(tok: &str) -> Target {
    match tok.strip_prefix('@') {
        Some(n) => n
            .parse()
            .map(Target::Resolved)
            .unwrap_or_else(|_| Target::Label(tok.to_string())),
        None => Target::Label(tok.to_string()),
    }
}

/// "8(x2)" or "4(x2!)" -> (imm, reg, post_inc)
fn parse_addr(tok: &str) -> Result<(i32, u8, bool), String> {
    let open = tok.find('(').ok_or_else(|| format!("bad address `{tok}`"))?;
    let close = tok.find(')').ok_or_else(|| format!("bad address `{tok}`"))?;
    let imm = if open == 0 { 0 } else { parse_imm(&tok[..open])? };
    let mut reg = &tok[open + 1..close];
    let post_inc = reg.ends_with('!');
    if post_inc {
        reg = &reg[..reg.len() - 1];
    }
    Ok((imm, parse_gpr(reg)?, post_inc))
}

fn parse_instr(mnemonic: &str, ops: &[&str]) -> Result<Instr, String> {
    let need = |n: usize| -> Result<(), String> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(format!("{mnemonic} expects {n} operands, got {}", ops.len()))
        }
    };
    let alu_ops = [
        ("add", AluOp::Add),
        ("sub", AluOp::Sub),
        ("and", AluOp::And),
        ("or", AluOp::Or),
        ("xor", AluOp::Xor),
        ("sll", AluOp::Sll),
        ("srl", AluOp::Srl),
        ("sra", AluOp::Sra),
        ("mul", AluOp::Mul),
    ];
    for (name, op) in alu_ops {
        if mnemonic == name {
            need(3)?;
            return Ok(Instr::Alu {
                op,
                rd: parse_gpr(ops[0])?,
                rs1: parse_gpr(ops[1])?,
                rs2: parse_gpr(ops[2])?,
            });
        }
        if mnemonic == format!("{name}i") {
            need(3)?;
            return Ok(Instr::AluImm {
                op,
                rd: parse_gpr(ops[0])?,
                rs1: parse_gpr(ops[1])?,
                imm: parse_imm(ops[2])?,
            });
        }
    }
    let branches = [
        ("beq", BranchCond::Eq),
        ("bne", BranchCond::Ne),
        ("blt", BranchCond::Lt),
        ("bge", BranchCond::Ge),
    ];
    for (name, cond) in branches {
        if mnemonic == name {
            need(3)?;
            return Ok(Instr::Branch {
                cond,
                rs1: parse_gpr(ops[0])?,
                rs2: parse_gpr(ops[1])?,
                target: parse_target(ops[2]),
            });
        }
    }
    if let Some(rest) = mnemonic
        .strip_prefix("sdotp.")
        .map(|r| (r, true))
        .or_else(|| mnemonic.strip_prefix("dotp.").map(|r| (r, false)))
    {
        let (suffix, accumulate) = rest;
        let mut parts = suffix.split('.');
        let width = parts
            .next()
            .and_then(Width::from_suffix)
            .ok_or_else(|| format!("bad width in `{mnemonic}`"))?;
        let sign = parts
            .next()
            .and_then(Sign::from_suffix)
            .ok_or_else(|| format!("bad signedness in `{mnemonic}`"))?;
        let shape = match parts.next() {
            Some("sc") => Shape::VS,
            None => Shape::VV,
            Some(x) => return Err(format!("bad shape suffix `{x}`")),
        };
        need(3)?;
        return Ok(Instr::Dotp {
            rd: parse_gpr(ops[0])?,
            rs1: parse_src(ops[1])?,
            rs2: parse_src(ops[2])?,
            width,
            sign,
            shape,
            accumulate,
        });
    }
    if let Some(suffix) = mnemonic.strip_prefix("mlsdotp.") {
        let mut parts = suffix.split('.');
        let width = parts
            .next()
            .and_then(Width::from_suffix)
            .ok_or_else(|| format!("bad width in `{mnemonic}`"))?;
        let sign = parts
            .next()
            .and_then(Sign::from_suffix)
            .ok_or_else(|| format!("bad signedness in `{mnemonic}`"))?;
        if !(4..=5).contains(&ops.len()) {
            return Err(format!("{mnemonic} expects 4 or 5 operands"));
        }
        let refresh = if ops.len() == 5 {
            Some(parse_nn(ops[4])?)
        } else {
            None
        };
        return Ok(Instr::MacLoad {
            rd: parse_gpr(ops[0])?,
            na: parse_nn(ops[1])?,
            nb: parse_nn(ops[2])?,
            width,
            sign,
            rs: parse_gpr(ops[3])?,
            refresh,
        });
    }
    match mnemonic {
        "nop" => Ok(Instr::Nop),
        "halt" => Ok(Instr::Halt),
        "wfe" => Ok(Instr::Wfe),
        "barrier" => Ok(Instr::Barrier),
        "li" => {
            need(2)?;
            Ok(Instr::Li {
                rd: parse_gpr(ops[0])?,
                imm: parse_imm(ops[1])?,
            })
        }
        "lw" | "p.lw" => {
            need(2)?;
            let (imm, rs1, bang) = parse_addr(ops[1])?;
            Ok(Instr::Lw {
                rd: parse_gpr(ops[0])?,
                rs1,
                imm,
                post_inc: bang || mnemonic == "p.lw",
            })
        }
        "sw" | "p.sw" => {
            need(2)?;
            let (imm, rs1, bang) = parse_addr(ops[1])?;
            Ok(Instr::Sw {
                rs2: parse_gpr(ops[0])?,
                rs1,
                imm,
                post_inc: bang || mnemonic == "p.sw",
            })
        }
        "lp.setupi" | "lp.setup" => {
            need(4)?;
            let l: u8 = ops[0].parse().map_err(|_| format!("bad loop index `{}`", ops[0]))?;
            let count = if mnemonic == "lp.setupi" {
                LoopCount::Imm(
                    ops[1]
                        .parse()
                        .map_err(|_| format!("bad loop count `{}`", ops[1]))?,
                )
            } else {
                LoopCount::Reg(parse_gpr(ops[1])?)
            };
            Ok(Instr::LoopSetup {
                l,
                count,
                start: parse_target(ops[2]),
                end: parse_target(ops[3]),
            })
        }
        "nn.lw" => {
            need(2)?;
            Ok(Instr::NnLw {
                nd: parse_nn(ops[0])?,
                rs: parse_gpr(ops[1])?,
            })
        }
        "pv.shuffle2" => {
            need(4)?;
            Ok(Instr::Shuffle2 {
                rd: parse_gpr(ops[0])?,
                rs1: parse_gpr(ops[1])?,
                rs2: parse_gpr(ops[2])?,
                mask: parse_gpr(ops[3])?,
            })
        }
        "p.clipu" => {
            need(3)?;
            Ok(Instr::ClipU {
                rd: parse_gpr(ops[0])?,
                rs1: parse_gpr(ops[1])?,
                imm: parse_imm(ops[2])?,
            })
        }
        "pv.add.b" | "pv.add.h" => {
            need(3)?;
            Ok(Instr::SimdAdd {
                rd: parse_gpr(ops[0])?,
                rs1: parse_gpr(ops[1])?,
                rs2: parse_gpr(ops[2])?,
                width: if mnemonic.ends_with('b') {
                    Width::W8
                } else {
                    Width::W16
                },
            })
        }
        _ => Err(format!("unknown mnemonic `{mnemonic}`")),
    }
}

pub fn assemble(text: &str) -> Result<Program, AsmError> {
    let mut b = ProgramBuilder::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut rest = line;
        while let Some(colon) = rest.find(':') {
            let (label, tail) = rest.split_at(colon);
            let label = label.trim();
            if label.is_empty() || label.contains(char::is_whitespace) {
                break;
            }
            b.label(label).map_err(AsmError::Program)?;
            rest = tail[1..].trim();
        }
        if rest.is_empty() {
            continue;
        }
        let (mnemonic, ops_str) = match rest.find(char::is_whitespace) {
            Some(i) => rest.split_at(i),
            None => (rest, ""),
        };
        let ops: Vec<&str> = ops_str
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        let instr =
            parse_instr(mnemonic, &ops).map_err(|e| AsmError::Line(lineno + 1, e))?;
        b.push(instr);
    }
    Ok(b.finish()?)
}

fn fmt_target(t: &Target, prog: &Program) -> String {
    match t {
        Target::Label(l) => l.clone(),
        Target::Resolved(i) => prog
            .labels
            .iter()
            .find(|(_, v)| **v == *i)
            .map(|(k, _)| k.clone())
            .unwrap_or_else(|| format!("@{i}")),
    }
}

pub fn disassemble(prog: &Program) -> String {
    let mut by_index: std::collections::BTreeMap<usize, Vec<&str>> = Default::default();
    for (name, &idx) in &prog.labels {
        by_index.entry(idx).or_default().push(name);
    }
    let mut out = String::new();
    for (i, instr) in prog.instrs.iter().enumerate() {
        if let Some(names) = by_index.get(&i) {
            for n in names {
                out.push_str(n);
                out.push_str(":\n");
            }
        }
        out.push_str("    ");
        out.push_str(&fmt_instr(instr, prog));
        out.push('\n');
    }
    for (name, &idx) in &prog.labels {
        if idx == prog.instrs.len() {
            out.push_str(name);
            out.push_str(":\n");
        }
    }
    out
}

fn fmt_src(s: &SrcReg) -> String {
    match s {
        SrcReg::Gpr(r) => format!("x{r}"),
        SrcReg::Nn(i) => format!("n{i}"),
    }
}

fn fmt_instr(i: &Instr, prog: &Program) -> String {
    match i {
        Instr::Nop => "nop".into(),
        Instr::Halt => "halt".into(),
        Instr::Wfe => "wfe".into(),
        Instr::Barrier => "barrier".into(),
        Instr::Li { rd, imm } => format!("li x{rd}, {imm}"),
        Instr::Alu { op, rd, rs1, rs2 } => {
            format!("{} x{rd}, x{rs1}, x{rs2}", alu_name(*op))
        }
        Instr::AluImm { op, rd, rs1, imm } => {
            format!("{}i x{rd}, x{rs1}, {imm}", alu_name(*op))
        }
        Instr::Lw { rd, rs1, imm, post_inc } => {
            if *post_inc {
                format!("p.lw x{rd}, {imm}(x{rs1}!)")
            } else {
                format!("lw x{rd}, {imm}(x{rs1})")
            }
        }
        Instr::Sw { rs2, rs1, imm, post_inc } => {
            if *post_inc {
                format!("p.sw x{rs2}, {imm}(x{rs1}!)")
            } else {
                format!("sw x{rs2}, {imm}(x{rs1})")
            }
        }
        Instr::Branch { cond, rs1, rs2, target } => {
            let name = match cond {
                BranchCond::Eq => "beq",
                BranchCond::Ne => "bne",
                BranchCond::Lt => "blt",
                BranchCond::Ge => "bge",
            };
            format!("{name} x{rs1}, x{rs2}, {}", fmt_target(target, prog))
        }
        Instr::LoopSetup { l, count, start, end } => match count {
            LoopCount::Imm(c) => format!(
                "lp.setupi {l}, {c}, {}, {}",
                fmt_target(start, prog),
                fmt_target(end, prog)
            ),
            LoopCount::Reg(r) => format!(
                "lp.setup {l}, x{r}, {}, {}",
                fmt_target(start, prog),
                fmt_target(end, prog)
            ),
        },
        Instr::Dotp { rd, rs1, rs2, width, sign, shape, accumulate } => {
            let base = if *accumulate { "sdotp" } else { "dotp" };
            let sc = if *shape == Shape::VS { ".sc" } else { "" };
            format!(
                "{base}.{}.{}{sc} x{rd}, {}, {}",
                width.suffix(),
                sign.suffix(),
                fmt_src(rs1),
                fmt_src(rs2)
            )
        }
        Instr::MacLoad { rd, na, nb, width, sign, rs, refresh } => {
            let tail = refresh.map(|n| format!(", n{n}")).unwrap_or_default();
            format!(
                "mlsdotp.{}.{} x{rd}, n{na}, n{nb}, x{rs}{tail}",
                width.suffix(),
                sign.suffix()
            )
        }
        Instr::NnLw { nd, rs } => format!("nn.lw n{nd}, x{rs}"),
        Instr::Shuffle2 { rd, rs1, rs2, mask } => {
            format!("pv.shuffle2 x{rd}, x{rs1}, x{rs2}, x{mask}")
        }
        Instr::ClipU { rd, rs1, imm } => format!("p.clipu x{rd}, x{rs1}, {imm}"),
        Instr::SimdAdd { rd, rs1, rs2, width } => {
            let s = if *width == Width::W8 { "b" } else { "h" };
            format!("pv.add.{s} x{rd}, x{rs1}, x{rs2}")
        }
    }
}

fn alu_name(op: AluOp) -> &'static str {
    match op {
        AluOp::Add => "add",
        AluOp::Sub => "sub",
        AluOp::And => "and",
        AluOp::Or => "or",
        AluOp::Xor => "xor",
        AluOp::Sll => "sll",
        AluOp::Srl => "srl",
        AluOp::Sra => "sra",
        AluOp::Mul => "mul",
    }
}
