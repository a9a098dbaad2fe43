//! Generators of emulator programs for QNN software kernels: register-tiled
//! matrix multiplication (with and without the fused MAC&LOAD path, plus a
//! baseline-ISA sub-byte variant that unpacks to 8-bit first), elementwise
//! vector add, and software normquant.

mod matmul;
mod simple;


pub use matmul::{
    gen_matmul, gen_matmul_baseline_subbyte, matmul_oracle, MatmulKernel, MatmulLayout,
};
pub use simple::{gen_normquant, gen_vecadd, NormquantKernel, VecaddKernel};

use serde::{Deserialize, Serialize};

use crate::isa::{FlatMem, Program, RunError, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    Matmul,
    Vecadd,
    Normquant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub precision: u8,
    pub use_macload: bool,
    /// Register accumulator tile (rows, cols).
    pub acc_tile: (usize, usize),
}

impl KernelSpec {
    /// Matmul spec with the canonical accumulator tile for the chosen path:
    /// 4x4 (16 accumulators) with MAC&LOAD, 2x4 without (GP-RF pressure).
    pub fn matmul(m: usize, n: usize, k: usize, precision: u8, use_macload: bool) -> Self {
        KernelSpec {
            kind: KernelKind::Matmul,
            m,
            n,
            k,
            precision,
            use_macload,
            acc_tile: if use_macload { (4, 4) } else { (2, 4) },
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum KernelError {
    #[error("unsupported element precision {0} (expected 2, 4 or 8)")]
    Precision(u8),
    #[error("baseline sub-byte path needs precision 2 or 4, got {0}")]
    BaselinePrecision(u8),
    #[error("accumulator tile {0}x{1} exceeds register budget (max {2} accumulators)")]
    RegisterPressure(usize, usize, usize),
    #[error("kernel spec kind mismatch: expected {0:?}")]
    Kind(KernelKind),
}

/// Execution statistics of a kernel run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelStats {
    pub instructions_retired: u64,
    pub cycles: u64,
    pub macs_performed: u64,
    pub instr_per_mac: f64,
    /// Instructions per MAC counting only the innermost (hardware-loop 0)
    /// kernel body — the steady-state figure prologues cannot dilute.
    pub inner_instr_per_mac: f64,
    pub dotp_utilization: f64,
    /// DOTP utilization restricted to the active inner-loop body.
    pub steady_utilization: f64,
    pub loads: u64,
}

impl KernelStats {
    pub fn from_trace(trace: &Trace, macs: u64) -> Self {
        let per_mac = |x: u64| if macs == 0 { 0.0 } else { x as f64 / macs as f64 };
        KernelStats {
            instructions_retired: trace.retired,
            cycles: trace.cycles,
            macs_performed: macs,
            instr_per_mac: per_mac(trace.retired),
            inner_instr_per_mac: per_mac(trace.loop_cycles[0] - 0),
            dotp_utilization: trace.dotp_utilization,
            steady_utilization: trace.loop_utilization[0],
            loads: trace.loads,
        }
    }
}

/// Runs a kernel program on the given memory image and reports stats.
pub fn measure(prog: &Program, mem: &mut FlatMem, macs: u64) -> Result<KernelStats, RunError> {
    let (trace, _) = crate::isa::run(prog, mem, 500_000_000)?;
    Ok(KernelStats::from_trace(&trace, macs))
}
