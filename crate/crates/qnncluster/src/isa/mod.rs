//! Instruction-level emulator with cycle accounting for a RISC-V integer
//! core extended with hardware loops, post-increment memory ops, sub-byte
//! SIMD dot products, and the fused MAC&LOAD path through a small dedicated
//! vector register file (NN-RF).
//!
//! Timing model: in-order single-issue, 1 cycle per instruction, +1 for a
//! taken branch, zero-overhead hardware-loop back-edges, ideal instruction
//! fetch. Memory stalls are charged externally by the cluster model.

mod asm;
mod exec;
mod instr;

#[cfg(test)]
mod tests;

pub use asm::{assemble, disassemble, AsmError};
pub use exec::{
    run, run_on, sdotp, CoreState, FlatMem, HwLoop, Mem, MemReq, RunError, StepEvent, Trace, Trap,
};
pub use instr::{
    AluOp, BranchCond, Instr, LoopCount, Program, ProgramBuilder, ProgramError, Shape, Sign,
    SrcReg, Target, Width,
};
