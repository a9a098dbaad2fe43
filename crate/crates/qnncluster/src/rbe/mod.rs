//! Bit-exact functional model and calibrated cycle model of the binary
//! convolution engine: 9 cores × 9 blocks × 4 binconvs × 32 lanes evaluating
//! convolutions as popcounts of AND-ed bit-planes scaled by powers of two,
//! followed by per-channel normalization.

mod model;


pub use model::{
    execute_functional, execute_timed, place_inputs, read_output, throughput_sweep, SweepRow,
};

use serde::{Deserialize, Serialize};

use crate::calib::RbeCalib;
use crate::quant::{BitWidth, ConvMode, NormParams, Padding};

/// Fixed engine geometry.
pub const CORES: usize = 9;
pub const BLOCKS_PER_CORE: usize = 9;
pub const BINCONVS_PER_BLOCK: usize = 4;
pub const LANES: usize = 32;
/// Total single-bit multipliers: 9·9·4·32.
pub const AND_GATES: usize = CORES * BLOCKS_PER_CORE * BINCONVS_PER_BLOCK * LANES;

/// 32-lane single-bit dot product: popcount of the AND.
pub fn binconv(act_word: u32, wgt_word: u32) -> u32 {
    (act_word & wgt_word).count_ones()
}

/// One convolution job as written into the engine's context register file.
/// Operand layouts are the packed bit-plane formats of the quant module;
/// strides are in 32-bit words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbeJob {
    pub mode: ConvMode,
    pub w_bits: BitWidth,
    pub i_bits: BitWidth,
    pub o_bits: BitWidth,
    pub kin: usize,
    pub kout: usize,
    pub hout: usize,
    pub wout: usize,
    pub padding: Padding,
    pub norm: NormParams,
    pub act_base: u32,
    pub wgt_base: u32,
    pub out_base: u32,
    /// Words between consecutive input pixels: ceil(Kin/32)·I.
    pub act_pixel_stride: usize,
    /// Words between consecutive output filters: ceil(Kin/32)·W·taps.
    pub wgt_kout_stride: usize,
    /// Words between consecutive output pixels: ceil(Kout/32)·O.
    pub out_pixel_stride: usize,
    /// Wrap accumulators on overflow instead of trapping.
    pub wrap_acc: bool,
}

impl RbeJob {
    /// Job with the canonical packed layouts at the given bases.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mode: ConvMode,
        w_bits: BitWidth,
        i_bits: BitWidth,
        o_bits: BitWidth,
        kin: usize,
        kout: usize,
        hout: usize,
        wout: usize,
        padding: Padding,
        norm: NormParams,
    ) -> Self {
        let kin32 = kin.div_ceil(32);
        let kout32 = kout.div_ceil(32);
        let act_pixel_stride = kin32 * i_bits.bits() as usize;
        let wgt_kout_stride = kin32 * w_bits.bits() as usize * mode.filter_taps();
        let out_pixel_stride = kout32 * o_bits.bits() as usize;
        let (hin, win) = match (mode, padding) {
            (ConvMode::Conv3x3, Padding::Valid) => (hout + 2, wout + 2),
            _ => (hout, wout),
        };
        let act_words = hin * win * act_pixel_stride;
        let wgt_words = kout * wgt_kout_stride;
        let act_base = 0x1000u32;
        let wgt_base = act_base + 4 * act_words as u32;
        let out_base = wgt_base + 4 * wgt_words as u32;
        RbeJob {
            mode,
            w_bits,
            i_bits,
            o_bits,
            kin,
            kout,
            hout,
            wout,
            padding,
            norm,
            act_base,
            wgt_base,
            out_base,
            act_pixel_stride,
            wgt_kout_stride,
            out_pixel_stride,
            wrap_acc: false,
        }
    }

    pub fn kin32(&self) -> usize {
        self.kin.div_ceil(32)
    }

    pub fn kout32(&self) -> usize {
        self.kout.div_ceil(32)
    }

    /// Input spatial extents implied by mode and padding.
    pub fn input_extent(&self) -> (usize, usize) {
        match (self.mode, self.padding) {
            (ConvMode::Conv3x3, Padding::Valid) => (self.hout + 2, self.wout + 2),
            _ => (self.hout, self.wout),
        }
    }

    pub fn macs(&self) -> u64 {
        (self.hout * self.wout * self.kout * self.kin * self.mode.filter_taps()) as u64
    }

    pub fn validate(&self) -> Result<(), Vec<JobError>> {
        let mut errs = vec![];
        for (name, b) in [("W", self.w_bits), ("I", self.i_bits), ("O", self.o_bits)] {
            if !(2..=8).contains(&b.bits()) {
                errs.push(JobError::Precision(name, b.bits()));
            }
        }
        for (name, v) in [
            ("Kin", self.kin),
            ("Kout", self.kout),
            ("Hout", self.hout),
            ("Wout", self.wout),
        ] {
            if v == 0 {
                errs.push(JobError::ZeroExtent(name));
            }
        }
        if errs.is_empty() {
            // stride checks only make sense once precisions are in range
            let want_act = self.kin32() * self.i_bits.bits() as usize;
            let want_wgt = self.kin32() * self.w_bits.bits() as usize * self.mode.filter_taps();
            let want_out = self.kout32() * self.o_bits.bits() as usize;
            for (name, got, want) in [
                ("act_pixel_stride", self.act_pixel_stride, want_act),
                ("wgt_kout_stride", self.wgt_kout_stride, want_wgt),
                ("out_pixel_stride", self.out_pixel_stride, want_out),
            ] {
                if got != want {
                    errs.push(JobError::Stride(name, got, want));
                }
            }
            if let Err(e) = self.norm.validate(self.kout) {
                errs.push(JobError::Norm(e.to_string()));
            }
        }
        if errs.is_empty() { Ok(()) } else { Err(errs) }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum JobError {
    #[error("{0} precision {1} outside [2, 8]")]
    Precision(&'static str, u8),
    #[error("extent {0} is zero")]
    ZeroExtent(&'static str),
    #[error("stride {0} = {1} does not match the packed layout ({2})")]
    Stride(&'static str, usize, usize),
    #[error("bad normalization parameters: {0}")]
    Norm(String),
    #[error("accumulator overflow at pixel ({0}, {1}) channel {2}")]
    AccOverflow(usize, usize, usize),
}

/// Per-phase cycle accounting of one job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub load: u64,
    pub compute: u64,
    pub normquant: u64,
    pub streamout: u64,
    pub overhead: u64,
    pub total: u64,
    /// MAC-pair operations (2 per MAC) at the job's W×I precision.
    pub ops: u64,
    /// Equivalent 1×1-bit operations: ops · W · I.
    pub binary_ops: u64,
    pub ops_per_cycle: f64,
    pub compute_ops_per_cycle: f64,
    pub binary_ops_per_cycle: f64,
}

impl CycleReport {
    pub fn gops(&self, freq_hz: f64) -> f64 {
        self.ops_per_cycle * freq_hz / 1e9
    }

    pub fn binary_gops(&self, freq_hz: f64) -> f64 {
        self.binary_ops_per_cycle * freq_hz / 1e9
    }
}

/// Completion notice handed to the event unit.
#[derive(Debug, Clone, PartialEq)]
pub struct JobDone {
    pub job_index: u64,
    pub report: CycleReport,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QueueError {
    #[error("job queue full (2 contexts)")]
    Full,
}

/// The engine's dual-context job queue: at most two enqueued jobs, executed
/// in FIFO order.
#[derive(Debug, Default)]
pub struct JobQueue {
    pending: std::collections::VecDeque<(u64, RbeJob)>,
    next_index: u64,
}

impl JobQueue {
    pub fn enqueue(&mut self, job: RbeJob) -> Result<u64, QueueError> {
        if self.pending.len() >= 2 {
            return Err(QueueError::Full);
        }
        let idx = self.next_index;
        self.next_index += 1;
        self.pending.push_back((idx, job));
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Runs the oldest pending job to completion: functional execution plus
    /// cycle accounting, emitting its done event.
    pub fn run_next(
        &mut self,
        mem: &mut dyn crate::isa::Mem,
        calib: &RbeCalib,
    ) -> Option<Result<JobDone, Vec<JobError>>> {
        let (idx, job) = self.pending.pop_front()?;
        Some(execute_functional(&job, mem).map(|()| JobDone {
            job_index: idx,
            report: execute_timed(&job, calib),
        }))
    }
}
