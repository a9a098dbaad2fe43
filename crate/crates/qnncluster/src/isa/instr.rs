use serde::{Deserialize, Serialize};

/// SIMD element width of the dot-product units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Width {
    W16,
    W8,
    W4,
    W2,
}

impl Width {
    pub fn bits(self) -> u32 {
        match self {
            Width::W16 => 16,
            Width::W8 => 8,
            Width::W4 => 4,
            Width::W2 => 2,
        }
    }

    pub fn lanes(self) -> u32 {
        32 / self.bits()
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Width::W16 => "h",
            Width::W8 => "b",
            Width::W4 => "n",
            Width::W2 => "c",
        }
    }

    pub fn from_suffix(s: &str) -> Option<Self> {
        match s {
            "h" => Some(Width::W16),
            "b" => Some(Width::W8),
            "n" => Some(Width::W4),
            "c" => Some(Width::W2),
            _ => None,
        }
    }
}

/// Per-operand signedness (first letter operand a, second operand b).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    SS,
    UU,
    US,
    SU,
}

impl Sign {
    pub fn a_signed(self) -> bool {
        matches!(self, Sign::SS | Sign::SU)
    }

    pub fn b_signed(self) -> bool {
        matches!(self, Sign::SS | Sign::US)
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Sign::SS => "ss",
            Sign::UU => "uu",
            Sign::US => "us",
            Sign::SU => "su",
        }
    }

    pub fn from_suffix(s: &str) -> Option<Self> {
        match s {
            "ss" => Some(Sign::SS),
            "uu" => Some(Sign::UU),
            "us" => Some(Sign::US),
            "su" => Some(Sign::SU),
            _ => None,
        }
    }
}

/// Vector-vector or vector-scalar operand shape; in vs form the scalar in
/// the low lane of the second operand is replicated across all lanes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    VV,
    VS,
}

/// A dotp source may come from the general-purpose RF or the NN-RF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SrcReg {
    Gpr(u8),
    Nn(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AluOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
    Sll,
    Srl,
    Sra,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchCond {
    Eq,
    Ne,
    Lt,
    Ge,
}

/// Branch / loop boundary reference; programs are built with labels and
/// linked to instruction indices before execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Label(String),
    Resolved(usize),
}

impl Target {
    pub fn index(&self) -> Option<usize> {
        match self {
            Target::Resolved(i) => Some(*i),
            Target::Label(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoopCount {
    Imm(u32),
    Reg(u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Instr {
    Nop,
    Halt,
    /// rd <- imm (pseudo-instruction, one cycle).
    Li { rd: u8, imm: i32 },
    Alu { op: AluOp, rd: u8, rs1: u8, rs2: u8 },
    AluImm { op: AluOp, rd: u8, rs1: u8, imm: i32 },
    /// rd <- mem[rs1 + imm]; post_inc additionally does rs1 += imm with the
    /// access at the un-incremented rs1.
    Lw { rd: u8, rs1: u8, imm: i32, post_inc: bool },
    Sw { rs2: u8, rs1: u8, imm: i32, post_inc: bool },
    Branch { cond: BranchCond, rs1: u8, rs2: u8, target: Target },
    /// Zero-overhead hardware loop `l` over body [start, end] inclusive.
    LoopSetup { l: u8, count: LoopCount, start: Target, end: Target },
    /// dotp/sdotp; accumulate selects sdotp (rd += sum) over dotp (rd = sum).
    Dotp {
        rd: u8,
        rs1: SrcReg,
        rs2: SrcReg,
        width: Width,
        sign: Sign,
        shape: Shape,
        accumulate: bool,
    },
    /// Fused MAC&LOAD: rd += dot(nnrf[na], nnrf[nb]); when refresh names an
    /// NN-RF register, that register is reloaded from mem[gprf[rs]] and
    /// rs += 4. The refreshed value is visible from the next instruction on.
    MacLoad {
        rd: u8,
        na: u8,
        nb: u8,
        width: Width,
        sign: Sign,
        rs: u8,
        refresh: Option<u8>,
    },
    /// nnrf[nd] <- mem[gprf[rs]]; rs += 4.
    NnLw { nd: u8, rs: u8 },
    /// Byte shuffle: each destination byte lane picks a byte from the
    /// {rs1, rs2} pool as selected by the mask register (bit 2 of each
    /// selector chooses rs2, bits 1:0 the source byte).
    Shuffle2 { rd: u8, rs1: u8, rs2: u8, mask: u8 },
    /// rd <- clamp(rs1 as signed, 0, imm) — unsigned clip.
    ClipU { rd: u8, rs1: u8, imm: i32 },
    /// Per-lane wrapping add.
    SimdAdd { rd: u8, rs1: u8, rs2: u8, width: Width },
    /// Sleep until an event (cluster-level; a lone core treats it as nop).
    Wfe,
    /// Cluster barrier.
    Barrier,
}

impl Instr {
    /// Does this instruction issue to the dot-product unit?
    pub fn is_dotp(&self) -> bool {
        matches!(self, Instr::Dotp { .. } | Instr::MacLoad { .. })
    }

    /// Histogram key: mnemonic without operands.
    pub fn class(&self) -> &'static str {
        match self {
            Instr::Nop => "nop",
            Instr::Halt => "halt",
            Instr::Li { .. } => "li",
            Instr::Alu { op, .. } | Instr::AluImm { op, .. } => match op {
                AluOp::Add => "add",
                AluOp::Sub => "sub",
                AluOp::And => "and",
                AluOp::Or => "or",
                AluOp::Xor => "xor",
                AluOp::Sll => "sll",
                AluOp::Srl => "srl",
                AluOp::Sra => "sra",
                AluOp::Mul => "mul",
            },
            Instr::Lw { .. } => "lw",
            Instr::Sw { .. } => "sw",
            Instr::Branch { .. } => "branch",
            Instr::LoopSetup { .. } => "lp.setup",
            Instr::Dotp {
                accumulate: true, ..
            } => "sdotp",
            Instr::Dotp { .. } => "dotp",
            Instr::MacLoad { .. } => "mlsdotp",
            Instr::NnLw { .. } => "nn.lw",
            Instr::Shuffle2 { .. } => "shuffle2",
            Instr::ClipU { .. } => "p.clipu",
            Instr::SimdAdd { .. } => "pv.add",
            Instr::Wfe => "wfe",
            Instr::Barrier => "barrier",
        }
    }
}

/// An instruction list plus the label table produced at build time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub instrs: Vec<Instr>,
    pub labels: std::collections::BTreeMap<String, usize>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProgramError {
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("nn register index {0} out of range 0..=5")]
    NnIndex(u8),
    #[error("gp register index {0} out of range 0..=31")]
    GprIndex(u8),
    #[error("hardware loop index {0} out of range 0..=1")]
    LoopIndex(u8),
    #[error("hardware loop {0} body [{1}, {2}] is empty or reversed")]
    LoopBody(u8, usize, usize),
    #[error("hardware loops are not properly nested")]
    LoopNesting,
    #[error("branch/loop target index {0} out of range")]
    TargetRange(usize),
}

impl Program {
    /// Resolves every label target to an instruction index and validates
    /// register ranges and loop nesting.
    pub fn link(&mut self) -> Result<(), ProgramError> {
        let labels = self.labels.clone();
        let n = self.instrs.len();
        let resolve = |t: &mut Target| -> Result<usize, ProgramError> {
            let idx = match t {
                Target::Resolved(i) => *i,
                Target::Label(name) => *labels
                    .get(name.as_str())
                    .ok_or_else(|| ProgramError::UndefinedLabel(name.clone()))?,
            };
            if idx > n {
                return Err(ProgramError::TargetRange(idx));
            }
            *t = Target::Resolved(idx);
            Ok(idx)
        };
        let mut loops: Vec<(u8, usize, usize)> = Vec::new();
        for instr in &mut self.instrs {
            match instr {
                Instr::Branch { target, .. } => {
                    resolve(target)?;
                }
                Instr::LoopSetup { l, start, end, .. } => {
                    if *l > 1 {
                        return Err(ProgramError::LoopIndex(*l));
                    }
                    let s = resolve(start)?;
                    let e = resolve(end)?;
                    if e < s || e >= n {
                        return Err(ProgramError::LoopBody(*l, s, e));
                    }
                    loops.push((*l, s, e));
                }
                Instr::MacLoad { na, nb, refresh, .. } => {
                    for &i in [*na, *nb].iter().chain(refresh.iter()) {
                        if i > 5 {
                            return Err(ProgramError::NnIndex(i));
                        }
                    }
                }
                Instr::NnLw { nd, .. } => {
                    if *nd > 5 {
                        return Err(ProgramError::NnIndex(*nd));
                    }
                }
                Instr::Dotp { rs1, rs2, .. } => {
                    for s in [rs1, rs2] {
                        if let SrcReg::Nn(i) = s {
                            if *i > 5 {
                                return Err(ProgramError::NnIndex(*i));
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        // properly nested: any two loop bodies are disjoint or contained
        for (i, &(_, s1, e1)) in loops.iter().enumerate() {
            for &(_, s2, e2) in &loops[i + 1..] {
                let disjoint = e1 < s2 || e2 < s1;
                let nested = (s1 <= s2 && e2 <= e1) || (s2 <= s1 && e1 <= e2);
                if !disjoint && !nested {
                    return Err(ProgramError::LoopNesting);
                }
            }
        }
        Ok(())
    }
}

/// Incremental program construction with label fixups for the kernel
/// generators and the assembler.
#[derive(Debug, Default)]
pub struct ProgramBuilder {
    prog: Program,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn label(&mut self, name: &str) -> Result<(), ProgramError> {
        if self
            .prog
            .labels
            .insert(name.to_string(), self.prog.instrs.len())
            .is_some()
        {
            return Err(ProgramError::DuplicateLabel(name.to_string()));
        }
        Ok(())
    }

    pub fn push(&mut self, i: Instr) -> usize {
        self.prog.instrs.push(i);
        self.prog.instrs.len() - 1
    }

    pub fn here(&self) -> usize {
        self.prog.instrs.len()
    }

    pub fn finish(mut self) -> Result<Program, ProgramError> {
        self.prog.link()?;
        Ok(self.prog)
    }
}
