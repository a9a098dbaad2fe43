use serde::{Deserialize, Serialize};

use crate::calib::RbeCalib;
use crate::isa::Mem;
use crate::quant::{self, BitWidth, ConvMode, NormParams, Padding, QTensor};

use super::{binconv, CycleReport, JobError, RbeJob};

/// Places packed activations and weights at the job's base addresses.
pub fn place_inputs(
    job: &RbeJob,
    mem: &mut dyn Mem,
    acts: &QTensor,
    wgts: &QTensor,
) -> Result<(), quant::QuantError> {
    let pa = quant::pack_activations(acts, job.i_bits)?;
    let pw = quant::pack_weights(wgts, job.w_bits, job.mode)?;
    for (i, &w) in pa.buffer.iter().enumerate() {
        mem.write32(job.act_base + 4 * i as u32, w);
    }
    for (i, &w) in pw.buffer.iter().enumerate() {
        mem.write32(job.wgt_base + 4 * i as u32, w);
    }
    Ok(())
}

/// Reads the packed output region back as an (Hout, Wout, Kout) tensor.
pub fn read_output(job: &RbeJob, mem: &mut dyn Mem) -> QTensor {
    let obits = job.o_bits.bits() as usize;
    let mut data = vec![0i32; job.hout * job.wout * job.kout];
    for y in 0..job.hout {
        for x in 0..job.wout {
            let pix = (y * job.wout + x) * job.out_pixel_stride;
            for ko in 0..job.kout {
                let mut v = 0u32;
                for ob in 0..obits {
                    let addr = job.out_base + 4 * (pix + (ko / 32) * obits + ob) as u32;
                    let word = mem.read32(addr);
                    v |= ((word >> (ko % 32)) & 1) << ob;
                }
                data[(y * job.wout + x) * job.kout + ko] = v as i32;
            }
        }
    }
    QTensor::new(
        vec![job.hout, job.wout, job.kout],
        data,
        job.o_bits,
        false,
    )
    .expect("output in range")
}

/// Functional execution of one job: the convolution evaluated as AND/popcount
/// of bit-planes scaled by 2^(i+j) into 32-bit output-stationary accumulators,
/// then per-channel normalization, packing the result at the output base.
/// Bit-for-bit equal to the plain integer reference convolution.
pub fn execute_functional(job: &RbeJob, mem: &mut dyn Mem) -> Result<(), Vec<JobError>> {
    job.validate()?;
    let (hin, win) = job.input_extent();
    let taps = job.mode.filter_taps();
    let side = job.mode.filter_side();
    let kin32 = job.kin32();
    let wb = job.w_bits.bits() as usize;
    let ib = job.i_bits.bits() as usize;
    let ob = job.o_bits.bits() as usize;
    let pad = if job.mode == ConvMode::Conv3x3 && job.padding == Padding::Same {
        1isize
    } else {
        0
    };

    for oy in 0..job.hout {
        for ox in 0..job.wout {
            // one pixel group: accumulate every output channel, then
            // normalize and stream the packed words out exactly once
            let mut out_words = vec![0u32; job.out_pixel_stride];
            for ko in 0..job.kout {
                let mut acc: i64 = 0;
                for tap in 0..taps {
                    let iy = oy as isize + (tap / side) as isize - pad;
                    let ix = ox as isize + (tap % side) as isize - pad;
                    if iy < 0 || ix < 0 || iy >= hin as isize || ix >= win as isize {
                        continue;
                    }
                    let pix = (iy as usize * win + ix as usize) * job.act_pixel_stride;
                    for c32 in 0..kin32 {
                        for i in 0..wb {
                            let widx =
                                job.wgt_kout_stride * ko + (c32 * wb + i) * taps + tap;
                            let ww = mem.read32(job.wgt_base + 4 * widx as u32);
                            if ww == 0 {
                                continue;
                            }
                            for j in 0..ib {
                                let aidx = pix + c32 * ib + j;
                                let aw = mem.read32(job.act_base + 4 * aidx as u32);
                                acc += (binconv(aw, ww) as i64) << (i + j);
                            }
                        }
                    }
                }
                let acc32 = if acc > i32::MAX as i64 || acc < i32::MIN as i64 {
                    if job.wrap_acc {
                        acc as i32
                    } else {
                        return Err(vec![JobError::AccOverflow(oy, ox, ko)]);
                    }
                } else {
                    acc as i32
                };
                let v = quant::normquant(
                    acc32,
                    job.norm.scale[ko],
                    job.norm.bias[ko],
                    job.norm.shift,
                    job.norm.relu,
                    job.o_bits.bits(),
                ) as u32;
                for b in 0..ob {
                    if (v >> b) & 1 != 0 {
                        out_words[(ko / 32) * ob + b] |= 1 << (ko % 32);
                    }
                }
            }
            let base = job.out_base
                + 4 * ((oy * job.wout + ox) * job.out_pixel_stride) as u32;
            for (i, &w) in out_words.iter().enumerate() {
                mem.write32(base + 4 * i as u32, w);
            }
        }
    }
    Ok(())
}

/// Bit-plane counts per input pass: the engine input buffer holds four
/// planes, so I ≤ 4 is one pass and I > 4 takes two.
fn passes(ib: u8) -> Vec<u64> {
    if ib <= 4 {
        vec![ib as u64]
    } else {
        vec![4, ib as u64 - 4]
    }
}

/// Calibrated per-phase cycle model.
///
/// COMPUTE per (spatial tile, kin group, pass, kout group):
///   3×3: depth·W + overhead — W weight bit-planes serialized in time;
///   1×1: depth + overhead — W mapped bit-parallel across blocks, so the
///   count is W-invariant (the ninth block idles).
/// LOAD: the 5×5 input patch, `bits` words per pixel per pass, through the
/// 9-word streamer; repeated per kout group (no intra-job prefetch).
pub fn execute_timed(job: &RbeJob, calib: &RbeCalib) -> CycleReport {
    let n_sp = (job.hout.div_ceil(3) * job.wout.div_ceil(3)) as u64;
    let kin32 = job.kin32() as u64;
    let kout32 = job.kout32() as u64;
    let wb = job.w_bits.bits() as u64;
    let ob = job.o_bits.bits() as u64;
    let ipasses = passes(job.i_bits.bits());

    let mut compute = 0u64;
    let mut load = 0u64;
    for g in 0..kin32 {
        let depth = (job.kin as u64 - 32 * g).min(32);
        let per_tile = match job.mode {
            ConvMode::Conv3x3 => depth * wb + calib.compute_tile_overhead,
            ConvMode::Conv1x1 => depth + calib.compute_tile_overhead,
        };
        for bits in &ipasses {
            compute += n_sp * kout32 * per_tile;
            load += n_sp
                * kout32
                * (calib.input_patch_pixels * bits).div_ceil(calib.streamer_words_per_cycle);
        }
    }
    let normquant = calib.normquant_cycles * n_sp * kout32;
    let streamout = n_sp * kout32 * ob;
    let overhead = calib.job_overhead;
    let total = load + compute + normquant + streamout + overhead;

    let ops = 2 * job.macs();
    let binary_ops = ops * wb * job.i_bits.bits() as u64;
    CycleReport {
        load,
        compute,
        normquant,
        streamout,
        overhead,
        total,
        ops,
        binary_ops,
        ops_per_cycle: ops as f64 / total as f64,
        compute_ops_per_cycle: ops as f64 / compute as f64,
        binary_ops_per_cycle: binary_ops as f64 / total as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: ConvMode,
    pub w_bits: u8,
    pub i_bits: u8,
    pub report: CycleReport,
}

/// Throughput table over both modes and W, I over {2, 4, 8}, at the engine's
/// native job granularity: Kin = Kout = 64, one 3×3 output pixel group.
pub fn throughput_sweep(calib: &RbeCalib) -> Vec<SweepRow> {
    let mut rows = vec![];
    for mode in [ConvMode::Conv3x3, ConvMode::Conv1x1] {
        for w in [2u8, 4, 8] {
            for i in [2u8, 4, 8] {
                let job = RbeJob::new(
                    mode,
                    BitWidth(w),
                    BitWidth(i),
                    BitWidth(4),
                    64,
                    64,
                    3,
                    3,
                    Padding::Same,
                    NormParams::unit(64, true),
                );
                rows.push(SweepRow {
                    mode,
                    w_bits: w,
                    i_bits: i,
                    report: execute_timed(&job, calib),
                });
            }
        }
    }
    rows
}
