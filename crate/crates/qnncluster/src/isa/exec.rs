use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::instr::{
    AluOp, BranchCond, Instr, LoopCount, Program, Shape, Sign, SrcReg, Target, Width,
};

/// Word-addressed 32-bit memory seen by a core. Alignment is checked by the
/// core before the access reaches the memory.
pub trait Mem {
    fn read32(&mut self, addr: u32) -> u32;
    fn write32(&mut self, addr: u32, val: u32);
}

/// Sparse flat memory for standalone (non-cluster) runs.
#[derive(Debug, Default, Clone)]
pub struct FlatMem {
    pub words: std::collections::HashMap<u32, u32>,
}

impl FlatMem {
    pub fn load_words(&mut self, base: u32, words: &[u32]) {
        for (i, &w) in words.iter().enumerate() {
            self.words.insert(base + 4 * i as u32, w);
        }
    }

    pub fn read_words(&self, base: u32, n: usize) -> Vec<u32> {
        (0..n)
            .map(|i| *self.words.get(&(base + 4 * i as u32)).unwrap_or(&0))
            .collect()
    }
}

impl Mem for FlatMem {
    fn read32(&mut self, addr: u32) -> u32 {
        *self.words.get(&addr).unwrap_or(&0)
    }

    fn write32(&mut self, addr: u32, val: u32) {
        self.words.insert(addr, val);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HwLoop {
    pub start: usize,
    pub end: usize,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoreState {
    pub pc: usize,
    pub gprf: [u32; 32],
    pub nnrf: [u32; 6],
    pub hwloops: [HwLoop; 2],
    pub cycles: u64,
    pub retired: BTreeMap<&'static str, u64>,
    pub dotp_cycles: u64,
    pub stalls: u64,
    pub loads: u64,
    /// Cycles / dotp issues attributed to each active hardware-loop body,
    /// used for steady-state utilization figures.
    pub loop_cycles: [u64; 2],
    pub loop_dotp: [u64; 2],
    pub halted: bool,
}

impl Default for CoreState {
    fn default() -> Self {
        CoreState {
            pc: 0,
            gprf: [0; 32],
            nnrf: [0; 6],
            hwloops: [HwLoop::default(); 2],
            cycles: 0,
            retired: BTreeMap::new(),
            dotp_cycles: 0,
            stalls: 0,
            loads: 0,
            loop_cycles: [0; 2],
            loop_dotp: [0; 2],
            halted: false,
        }
    }
}

/// Memory access a core wants to perform this cycle, exposed before commit
/// so the cluster can arbitrate bank conflicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemReq {
    pub addr: u32,
    pub write: bool,
}

/// What `step` tells the orchestrator beyond plain register updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    None,
    Wfe,
    Barrier,
    Halted,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum Trap {
    #[error("misaligned word access at 0x{0:08x} (pc {1})")]
    Misaligned(u32, usize),
    #[error("unresolved target at pc {0}; program not linked")]
    Unlinked(usize),
    #[error("pc {0} outside program of length {1}")]
    PcRange(usize, usize),
}

fn target_idx(t: &Target, pc: usize) -> Result<usize, Trap> {
    t.index().ok_or(Trap::Unlinked(pc))
}

/// Lane-wise dot product with 32-bit wrapping accumulation.
pub fn sdotp(a: u32, b: u32, acc: u32, width: Width, sign: Sign, shape: Shape) -> u32 {
    let w = width.bits();
    let lanes = width.lanes();
    let mask = if w == 32 { u32::MAX } else { (1u32 << w) - 1 };
    let ext = |v: u32, signed: bool| -> i32 {
        if signed {
            let shift = 32 - w;
            ((v << shift) as i32) >> shift
        } else {
            v as i32
        }
    };
    let b_scalar = ext(b & mask, sign.b_signed());
    let mut sum = acc;
    for k in 0..lanes {
        let av = ext((a >> (k * w)) & mask, sign.a_signed());
        let bv = match shape {
            Shape::VV => ext((b >> (k * w)) & mask, sign.b_signed()),
            Shape::VS => b_scalar,
        };
        sum = sum.wrapping_add(av.wrapping_mul(bv) as u32);
    }
    sum
}

fn shuffle2(rs1: u32, rs2: u32, mask: u32) -> u32 {
    let mut out = 0u32;
    for lane in 0..4 {
        let sel = (mask >> (8 * lane)) & 0x7;
        let pool = if sel & 4 != 0 { rs2 } else { rs1 };
        let byte = (pool >> (8 * (sel & 3))) & 0xFF;
        out |= byte << (8 * lane);
    }
    out
}

fn simd_add(a: u32, b: u32, width: Width) -> u32 {
    let w = width.bits();
    let mask = if w == 32 { u32::MAX } else { (1u32 << w) - 1 };
    let mut out = 0u32;
    for k in 0..width.lanes() {
        let s = ((a >> (k * w)) & mask).wrapping_add((b >> (k * w)) & mask) & mask;
        out |= s << (k * w);
    }
    out
}

impl CoreState {
    pub fn gpr(&self, r: u8) -> u32 {
        if r == 0 {
            0
        } else {
            self.gprf[r as usize]
        }
    }

    pub fn set_gpr(&mut self, r: u8, v: u32) {
        if r != 0 {
            self.gprf[r as usize] = v;
        }
    }

    fn src(&self, s: SrcReg) -> u32 {
        match s {
            SrcReg::Gpr(r) => self.gpr(r),
            SrcReg::Nn(i) => self.nnrf[i as usize],
        }
    }

    /// Memory access the instruction at pc will perform, if any. Used by the
    /// cluster for bank arbitration before commit.
    pub fn peek_mem_request(&self, prog: &Program) -> Option<MemReq> {
        match prog.instrs.get(self.pc)? {
            Instr::Lw { rs1, imm, post_inc, .. } => {
                let base = if *post_inc { 0 } else { *imm };
                Some(MemReq {
                    addr: self.gpr(*rs1).wrapping_add(base as u32),
                    write: false,
                })
            }
            Instr::Sw { rs1, imm, post_inc, .. } => {
                let base = if *post_inc { 0 } else { *imm };
                Some(MemReq {
                    addr: self.gpr(*rs1).wrapping_add(base as u32),
                    write: true,
                })
            }
            Instr::MacLoad { rs, refresh, .. } => refresh.map(|_| MemReq {
                addr: self.gpr(*rs),
                write: false,
            }),
            Instr::NnLw { rs, .. } => Some(MemReq {
                addr: self.gpr(*rs),
                write: false,
            }),
            _ => None,
        }
    }

    /// Executes one instruction. `extra_stalls` is the arbitration penalty
    /// the memory system charged this access (0 standalone).
    pub fn step(
        &mut self,
        prog: &Program,
        mem: &mut dyn Mem,
        extra_stalls: u64,
    ) -> Result<StepEvent, Trap> {
        if self.halted {
            return Ok(StepEvent::Halted);
        }
        if self.pc >= prog.instrs.len() {
            self.halted = true;
            return Ok(StepEvent::Halted);
        }
        let pc = self.pc;
        let instr = prog.instrs[pc].clone();
        let mut next_pc = pc + 1;
        let mut penalty = 0u64;
        let mut event = StepEvent::None;

        let check_align = |addr: u32| -> Result<(), Trap> {
            if addr % 4 != 0 {
                Err(Trap::Misaligned(addr, pc))
            } else {
                Ok(())
            }
        };

        match &instr {
            Instr::Nop | Instr::Wfe | Instr::Barrier => {
                event = match instr {
                    Instr::Wfe => StepEvent::Wfe,
                    Instr::Barrier => StepEvent::Barrier,
                    _ => StepEvent::None,
                };
            }
            Instr::Halt => {
                self.halted = true;
                event = StepEvent::Halted;
            }
            Instr::Li { rd, imm } => self.set_gpr(*rd, *imm as u32),
            Instr::Alu { op, rd, rs1, rs2 } => {
                let v = alu(*op, self.gpr(*rs1), self.gpr(*rs2));
                self.set_gpr(*rd, v);
            }
            Instr::AluImm { op, rd, rs1, imm } => {
                let v = alu(*op, self.gpr(*rs1), *imm as u32);
                self.set_gpr(*rd, v);
            }
            Instr::Lw { rd, rs1, imm, post_inc } => {
                let base = self.gpr(*rs1);
                let addr = if *post_inc { base } else { base.wrapping_add(*imm as u32) };
                check_align(addr)?;
                let v = mem.read32(addr);
                self.set_gpr(*rd, v);
                if *post_inc {
                    self.set_gpr(*rs1, base.wrapping_add(*imm as u32));
                }
                self.loads += 1;
            }
            Instr::Sw { rs2, rs1, imm, post_inc } => {
                let base = self.gpr(*rs1);
                let addr = if *post_inc { base } else { base.wrapping_add(*imm as u32) };
                check_align(addr)?;
                mem.write32(addr, self.gpr(*rs2));
                if *post_inc {
                    self.set_gpr(*rs1, base.wrapping_add(*imm as u32));
                }
            }
            Instr::Branch { cond, rs1, rs2, target } => {
                let a = self.gpr(*rs1);
                let b = self.gpr(*rs2);
                let taken = match cond {
                    BranchCond::Eq => a == b,
                    BranchCond::Ne => a != b,
                    BranchCond::Lt => (a as i32) < (b as i32),
                    BranchCond::Ge => (a as i32) >= (b as i32),
                };
                if taken {
                    next_pc = target_idx(target, pc)?;
                    penalty = 1;
                }
            }
            Instr::LoopSetup { l, count, start, end } => {
                let c = match count {
                    LoopCount::Imm(c) => *c,
                    LoopCount::Reg(r) => self.gpr(*r),
                };
                self.hwloops[*l as usize] = HwLoop {
                    start: target_idx(start, pc)?,
                    end: target_idx(end, pc)?,
                    count: c,
                };
                // a zero-iteration loop skips its body entirely
                if c == 0 {
                    next_pc = target_idx(end, pc)? + 1;
                }
            }
            Instr::Dotp { rd, rs1, rs2, width, sign, shape, accumulate } => {
                let acc = if *accumulate { self.gpr(*rd) } else { 0 };
                let v = sdotp(self.src(*rs1), self.src(*rs2), acc, *width, *sign, *shape);
                self.set_gpr(*rd, v);
            }
            Instr::MacLoad { rd, na, nb, width, sign, rs, refresh } => {
                // dotp sees the pre-refresh NN-RF contents
                let v = sdotp(
                    self.nnrf[*na as usize],
                    self.nnrf[*nb as usize],
                    self.gpr(*rd),
                    *width,
                    *sign,
                    Shape::VV,
                );
                self.set_gpr(*rd, v);
                if let Some(nd) = refresh {
                    let addr = self.gpr(*rs);
                    check_align(addr)?;
                    self.nnrf[*nd as usize] = mem.read32(addr);
                    self.set_gpr(*rs, addr.wrapping_add(4));
                    self.loads += 1;
                }
            }
            Instr::NnLw { nd, rs } => {
                let addr = self.gpr(*rs);
                check_align(addr)?;
                self.nnrf[*nd as usize] = mem.read32(addr);
                self.set_gpr(*rs, addr.wrapping_add(4));
                self.loads += 1;
            }
            Instr::Shuffle2 { rd, rs1, rs2, mask } => {
                let v = shuffle2(self.gpr(*rs1), self.gpr(*rs2), self.gpr(*mask));
                self.set_gpr(*rd, v);
            }
            Instr::ClipU { rd, rs1, imm } => {
                let v = (self.gpr(*rs1) as i32).clamp(0, *imm);
                self.set_gpr(*rd, v as u32);
            }
            Instr::SimdAdd { rd, rs1, rs2, width } => {
                let v = simd_add(self.gpr(*rs1), self.gpr(*rs2), *width);
                self.set_gpr(*rd, v);
            }
        }

        // zero-overhead loop back-edges; innermost (larger start) wins
        if !matches!(instr, Instr::Branch { .. }) {
            let mut order = [0usize, 1];
            if self.hwloops[1].start >= self.hwloops[0].start {
                order = [1, 0];
            }
            for l in order {
                let lp = &mut self.hwloops[l];
                if pc == lp.end && lp.count > 1 {
                    lp.count -= 1;
                    next_pc = lp.start;
                    break;
                } else if pc == lp.end && lp.count == 1 {
                    lp.count = 0;
                }
            }
        }

        let cost = 1 + penalty + extra_stalls;
        self.cycles += cost;
        self.stalls += penalty + extra_stalls;
        *self.retired.entry(instr.class()).or_insert(0) += 1;
        if instr.is_dotp() {
            self.dotp_cycles += 1;
        }
        for l in 0..2 {
            let lp = self.hwloops[l];
            if lp.count > 0 && pc >= lp.start && pc <= lp.end {
                self.loop_cycles[l] += cost;
                if instr.is_dotp() {
                    self.loop_dotp[l] += 1;
                }
            }
        }
        self.pc = next_pc;
        if self.pc >= prog.instrs.len() && !self.halted {
            self.halted = true;
            event = StepEvent::Halted;
        }
        Ok(event)
    }
}

fn alu(op: AluOp, a: u32, b: u32) -> u32 {
    match op {
        AluOp::Add => a.wrapping_add(b),
        AluOp::Sub => a.wrapping_sub(b),
        AluOp::And => a & b,
        AluOp::Or => a | b,
        AluOp::Xor => a ^ b,
        AluOp::Sll => a.wrapping_shl(b & 31),
        AluOp::Srl => a.wrapping_shr(b & 31),
        AluOp::Sra => ((a as i32).wrapping_shr(b & 31)) as u32,
        AluOp::Mul => a.wrapping_mul(b),
    }
}

/// Execution summary of a finished (or timed-out) program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub cycles: u64,
    pub retired: u64,
    pub histogram: BTreeMap<String, u64>,
    pub stalls: u64,
    pub loads: u64,
    pub dotp_cycles: u64,
    /// dotp issue cycles / total cycles.
    pub dotp_utilization: f64,
    /// Same ratio restricted to active hardware-loop bodies (steady state).
    pub loop_utilization: [f64; 2],
    pub loop_cycles: [u64; 2],
}

impl Trace {
    pub fn from_core(core: &CoreState) -> Self {
        let retired: u64 = core.retired.values().sum();
        let util = |d: u64, c: u64| if c == 0 { 0.0 } else { d as f64 / c as f64 };
        Trace {
            cycles: core.cycles,
            retired,
            histogram: core
                .retired
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            stalls: core.stalls,
            loads: core.loads,
            dotp_cycles: core.dotp_cycles,
            dotp_utilization: util(core.dotp_cycles, core.cycles),
            loop_utilization: [
                util(core.loop_dotp[0], core.loop_cycles[0]),
                util(core.loop_dotp[1], core.loop_cycles[1]),
            ],
            loop_cycles: core.loop_cycles,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("exceeded {max_cycles} cycles")]
    Timeout { max_cycles: u64, partial: Box<Trace> },
    #[error(transparent)]
    Trap(#[from] Trap),
}

/// Runs a linked program to completion on a fresh core.
pub fn run(prog: &Program, mem: &mut dyn Mem, max_cycles: u64) -> Result<(Trace, CoreState), RunError> {
    let mut core = CoreState::default();
    run_on(&mut core, prog, mem, max_cycles)?;
    let trace = Trace::from_core(&core);
    Ok((trace, core))
}

/// Runs a program on an existing core state (registers pre-loaded).
pub fn run_on(
    core: &mut CoreState,
    prog: &Program,
    mem: &mut dyn Mem,
    max_cycles: u64,
) -> Result<(), RunError> {
    while !core.halted {
        if core.cycles >= max_cycles {
            return Err(RunError::Timeout {
                max_cycles,
                partial: Box::new(Trace::from_core(core)),
            });
        }
        core.step(prog, mem, 0)?;
    }
    Ok(())
}
