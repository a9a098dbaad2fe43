//! Register-tiled matmul generators. Operands are packed `precision`-bit
//! unsigned elements, `32/precision` per word. Both streams are laid out
//! tile-interleaved so the inner loop advances each with a single
//! post-incrementing pointer:
//!   A: per 4-row (or 2-row) tile, words ordered [k-chunk][row]
//!   B: per 4-column tile, words ordered [k-chunk][col]
//! Each tile stream is padded by one trailing chunk so the MAC&LOAD
//! prefetch of iteration `kc` may harmlessly read one chunk past the end.

use crate::isa::{
    AluOp, BranchCond, Instr, LoopCount, Program, ProgramBuilder, Shape, Sign, SrcReg, Target,
    Width,
};

use super::{KernelError, KernelKind, KernelSpec};
use crate::isa::{FlatMem, Mem};

// register map shared by all matmul variants
const PA: u8 = 1; // A stream pointer
const PB: u8 = 2; // B stream pointer
const PA_T: u8 = 3; // A tile base
const PB_T: u8 = 4; // B tile base
const PC: u8 = 5; // C output pointer
const MT: u8 = 6; // row-tile counter
const NT: u8 = 7; // column-tile counter
const ACC0: u8 = 8; // accumulators x8..

fn width_for(prec: u8) -> Result<Width, KernelError> {
    match prec {
        8 => Ok(Width::W8),
        4 => Ok(Width::W4),
        2 => Ok(Width::W2),
        _ => Err(KernelError::Precision(prec)),
    }
}

/// Placement and geometry of the packed operands in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct MatmulLayout {
    pub a_base: u32,
    pub b_base: u32,
    pub c_base: u32,
    pub tile_rows: usize,
    pub tile_cols: usize,
    pub m_tiles: usize,
    pub n_tiles: usize,
    pub k_chunks: usize,
    pub a_tile_words: usize,
    pub b_tile_words: usize,
    pub lanes: usize,
    pub precision: u8,
}

#[derive(Debug, Clone)]
pub struct MatmulKernel {
    pub prog: Program,
    pub spec: KernelSpec,
    pub layout: MatmulLayout,
}

impl MatmulKernel {
    /// Packs row-major A (m×k) and B (k×n) into the kernel's streams.
    pub fn load_inputs(&self, mem: &mut FlatMem, a: &[u32], b: &[u32]) {
        let l = &self.layout;
        let (m, n, k) = (self.spec.m, self.spec.n, self.spec.k);
        let prec = l.precision as usize;
        let mut aw = vec![0u32; l.m_tiles * l.a_tile_words];
        for mt in 0..l.m_tiles {
            for kc in 0..l.k_chunks {
                for row in 0..l.tile_rows {
                    let r = mt * l.tile_rows + row;
                    let mut word = 0u32;
                    for j in 0..l.lanes {
                        let kk = kc * l.lanes + j;
                        if r < m && kk < k {
                            word |= a[r * k + kk] << (j * prec);
                        }
                    }
                    aw[mt * l.a_tile_words + kc * l.tile_rows + row] = word;
                }
            }
        }
        let mut bw = vec![0u32; l.n_tiles * l.b_tile_words];
        for nt in 0..l.n_tiles {
            for kc in 0..l.k_chunks {
                for col in 0..l.tile_cols {
                    let c = nt * l.tile_cols + col;
                    let mut word = 0u32;
                    for j in 0..l.lanes {
                        let kk = kc * l.lanes + j;
                        if c < n && kk < k {
                            word |= b[kk * n + c] << (j * prec);
                        }
                    }
                    bw[nt * l.b_tile_words + kc * l.tile_cols + col] = word;
                }
            }
        }
        mem.load_words(l.a_base, &aw);
        mem.load_words(l.b_base, &bw);
    }

    /// Reads C back as a row-major m×n matrix of 32-bit accumulators.
    pub fn read_output(&self, mem: &mut FlatMem) -> Vec<u32> {
        let l = &self.layout;
        let (m, n) = (self.spec.m, self.spec.n);
        let mut c = vec![0u32; m * n];
        let mut addr = l.c_base;
        for mt in 0..l.m_tiles {
            for nt in 0..l.n_tiles {
                for col in 0..l.tile_cols {
                    for row in 0..l.tile_rows {
                        let v = mem.read32(addr);
                        addr += 4;
                        let r = mt * l.tile_rows + row;
                        let cc = nt * l.tile_cols + col;
                        if r < m && cc < n {
                            c[r * n + cc] = v;
                        }
                    }
                }
            }
        }
        c
    }
}

fn layout_for(spec: &KernelSpec, tile_rows: usize) -> Result<MatmulLayout, KernelError> {
    let lanes = 32 / spec.precision as usize;
    let tile_cols = 4;
    let m_tiles = spec.m.div_ceil(tile_rows);
    let n_tiles = spec.n.div_ceil(tile_cols);
    let k_chunks = spec.k.div_ceil(lanes).max(1);
    // one padding chunk absorbs the past-end prefetch of the last iteration
    let a_tile_words = (k_chunks + 1) * tile_rows;
    let b_tile_words = (k_chunks + 1) * tile_cols;
    let a_base = 0x1000u32;
    let b_base = a_base + 4 * (m_tiles * a_tile_words) as u32;
    let c_base = b_base + 4 * (n_tiles * b_tile_words) as u32;
    Ok(MatmulLayout {
        a_base,
        b_base,
        c_base,
        tile_rows,
        tile_cols,
        m_tiles,
        n_tiles,
        k_chunks,
        a_tile_words,
        b_tile_words,
        lanes,
        precision: spec.precision,
    })
}

/// Emits the two tile loops around a per-tile body closure.
fn emit_tile_loops(
    b: &mut ProgramBuilder,
    l: &MatmulLayout,
    tile: impl Fn(&mut ProgramBuilder),
) {
    b.push(Instr::Li { rd: MT, imm: l.m_tiles as i32 });
    b.push(Instr::Li { rd: PA_T, imm: l.a_base as i32 });
    b.push(Instr::Li { rd: PC, imm: l.c_base as i32 });
    b.label("outer").unwrap();
    b.push(Instr::Li { rd: NT, imm: l.n_tiles as i32 });
    b.push(Instr::Li { rd: PB_T, imm: l.b_base as i32 });
    b.label("inner").unwrap();
    b.push(Instr::AluImm { op: AluOp::Add, rd: PA, rs1: PA_T, imm: 0 });
    b.push(Instr::AluImm { op: AluOp::Add, rd: PB, rs1: PB_T, imm: 0 });
    tile(b);
    b.push(Instr::AluImm {
        op: AluOp::Add,
        rd: PB_T,
        rs1: PB_T,
        imm: (4 * l.b_tile_words) as i32,
    });
    b.push(Instr::AluImm { op: AluOp::Add, rd: NT, rs1: NT, imm: -1 });
    b.push(Instr::Branch {
        cond: BranchCond::Ne,
        rs1: NT,
        rs2: 0,
        target: Target::Label("inner".into()),
    });
    b.push(Instr::AluImm {
        op: AluOp::Add,
        rd: PA_T,
        rs1: PA_T,
        imm: (4 * l.a_tile_words) as i32,
    });
    b.push(Instr::AluImm { op: AluOp::Add, rd: MT, rs1: MT, imm: -1 });
    b.push(Instr::Branch {
        cond: BranchCond::Ne,
        rs1: MT,
        rs2: 0,
        target: Target::Label("outer".into()),
    });
    b.push(Instr::Halt);
}

fn zero_accs(b: &mut ProgramBuilder, n: usize) {
    for i in 0..n {
        b.push(Instr::Li { rd: ACC0 + i as u8, imm: 0 });
    }
}

fn store_accs(b: &mut ProgramBuilder, n: usize) {
    for i in 0..n {
        b.push(Instr::Sw {
            rs2: ACC0 + i as u8,
            rs1: PC,
            imm: 4,
            post_inc: true,
        });
    }
}

/// MAC&LOAD 4x4 kernel. NN-RF: n0..n3 hold the four A-row chunks, n4/n5
/// double-buffer the B-column word. The 17-instruction inner body issues
/// 16 mlsdotp (refreshing B after column groups 0..2 and A during group 3)
/// plus one trailing explicit nn.lw — 16 accumulators per 1 explicit load.
fn gen_matmul_macload(spec: &KernelSpec) -> Result<MatmulKernel, KernelError> {
    let width = width_for(spec.precision)?;
    let l = layout_for(spec, 4)?;
    let mut b = ProgramBuilder::new();
    emit_tile_loops(&mut b, &l, |b| {
        for nd in 0..4u8 {
            b.push(Instr::NnLw { nd, rs: PA });
        }
        b.push(Instr::NnLw { nd: 4, rs: PB });
        zero_accs(b, 16);
        b.push(Instr::LoopSetup {
            l: 0,
            count: LoopCount::Imm(l.k_chunks as u32),
            start: Target::Label("kbody".into()),
            end: Target::Label("kend".into()),
        });
        b.label("kbody").unwrap();
        for col in 0..4u8 {
            let nb = if col % 2 == 0 { 4 } else { 5 };
            for row in 0..4u8 {
                // groups 0-2 refresh the other B buffer on their last issue;
                // group 3 streams in the next A chunk one row at a time
                let refresh = match (col, row) {
                    (0, 3) => Some((5, PB)),
                    (1, 3) => Some((4, PB)),
                    (2, 3) => Some((5, PB)),
                    (3, r) => Some((r, PA)),
                    _ => None,
                };
                b.push(Instr::MacLoad {
                    rd: ACC0 + col * 4 + row,
                    na: row,
                    nb,
                    width,
                    sign: Sign::UU,
                    rs: refresh.map(|(_, rs)| rs).unwrap_or(PA),
                    refresh: refresh.map(|(nd, _)| nd),
                });
            }
        }
        b.label("kend").unwrap();
        b.push(Instr::NnLw { nd: 4, rs: PB });
        store_accs(b, 16);
    });
    // labels kbody/kend are emitted once because the tile body is shared
    // across tiles via the surrounding branch loops
    let prog = b.finish().expect("generated matmul program links");
    Ok(MatmulKernel { prog, spec: *spec, layout: l })
}

/// Plain (no MAC&LOAD) kernel with a 2x4 accumulator tile: every operand
/// word is an explicit post-incrementing load into the GP-RF.
fn gen_matmul_plain(spec: &KernelSpec) -> Result<MatmulKernel, KernelError> {
    let width = width_for(spec.precision)?;
    let l = layout_for(spec, 2)?;
    const A0: u8 = 16; // A row words
    const B0: u8 = 18; // B column words
    let mut b = ProgramBuilder::new();
    emit_tile_loops(&mut b, &l, |b| {
        zero_accs(b, 8);
        b.push(Instr::LoopSetup {
            l: 0,
            count: LoopCount::Imm(l.k_chunks as u32),
            start: Target::Label("kbody".into()),
            end: Target::Label("kend".into()),
        });
        b.label("kbody").unwrap();
        for row in 0..2u8 {
            b.push(Instr::Lw { rd: A0 + row, rs1: PA, imm: 4, post_inc: true });
        }
        for col in 0..4u8 {
            b.push(Instr::Lw { rd: B0 + col, rs1: PB, imm: 4, post_inc: true });
        }
        for col in 0..4u8 {
            for row in 0..2u8 {
                let last = col == 3 && row == 1;
                if last {
                    b.label("kend").unwrap();
                }
                b.push(Instr::Dotp {
                    rd: ACC0 + col * 2 + row,
                    rs1: SrcReg::Gpr(A0 + row),
                    rs2: SrcReg::Gpr(B0 + col),
                    width,
                    sign: Sign::UU,
                    shape: Shape::VV,
                    accumulate: true,
                });
            }
        }
        store_accs(b, 8);
    });
    let prog = b.finish().expect("generated matmul program links");
    Ok(MatmulKernel { prog, spec: *spec, layout: l })
}

pub fn gen_matmul(spec: &KernelSpec) -> Result<MatmulKernel, KernelError> {
    if spec.kind != KernelKind::Matmul {
        return Err(KernelError::Kind(KernelKind::Matmul));
    }
    let max = if spec.use_macload { 16 } else { 8 };
    if spec.acc_tile.0 * spec.acc_tile.1 > max {
        return Err(KernelError::RegisterPressure(spec.acc_tile.0, spec.acc_tile.1, max));
    }
    if spec.use_macload {
        gen_matmul_macload(spec)
    } else {
        gen_matmul_plain(spec)
    }
}

/// Baseline-ISA sub-byte kernel: 2- or 4-bit operands are unpacked to 8-bit
/// with shift/mask (and, at 4-bit, byte-shuffle) sequences before 8-bit
/// sdotp — modeling the data-manipulation overhead of an ISA whose lowest
/// dot-product precision is 8-bit.
pub fn gen_matmul_baseline_subbyte(spec: &KernelSpec) -> Result<MatmulKernel, KernelError> {
    if spec.kind != KernelKind::Matmul {
        return Err(KernelError::Kind(KernelKind::Matmul));
    }
    match spec.precision {
        4 => gen_baseline4(spec),
        2 => gen_baseline2(spec),
        p => Err(KernelError::BaselinePrecision(p)),
    }
}

fn gen_baseline4(spec: &KernelSpec) -> Result<MatmulKernel, KernelError> {
    let l = layout_for(spec, 2)?;
    const A0: u8 = 16; // 2 rows × 2 unpacked words
    const BL: u8 = 20; // B unpacked pair
    const W: u8 = 22; // packed word scratch
    const T: u8 = 23;
    const MSK_LO: u8 = 30;
    const MSK_HI: u8 = 31;
    // canonical-order interleave of even/odd nibbles: (e0,o0,e1,o1) and
    // (e2,o2,e3,o3) from the {rs1, rs2} byte pool
    let unpack4 = |b: &mut ProgramBuilder, lo: u8, hi: u8| {
        b.push(Instr::AluImm { op: AluOp::Srl, rd: T, rs1: W, imm: 4 });
        b.push(Instr::AluImm { op: AluOp::And, rd: W, rs1: W, imm: 0x0F0F0F0F });
        b.push(Instr::AluImm { op: AluOp::And, rd: T, rs1: T, imm: 0x0F0F0F0F });
        b.push(Instr::Shuffle2 { rd: lo, rs1: W, rs2: T, mask: MSK_LO });
        b.push(Instr::Shuffle2 { rd: hi, rs1: W, rs2: T, mask: MSK_HI });
    };
    let mut b = ProgramBuilder::new();
    b.push(Instr::Li { rd: MSK_LO, imm: 0x05010400 });
    b.push(Instr::Li { rd: MSK_HI, imm: 0x07030602 });
    emit_tile_loops(&mut b, &l, |b| {
        zero_accs(b, 8);
        b.push(Instr::LoopSetup {
            l: 0,
            count: LoopCount::Imm(l.k_chunks as u32),
            start: Target::Label("kbody".into()),
            end: Target::Label("kend".into()),
        });
        b.label("kbody").unwrap();
        for row in 0..2u8 {
            b.push(Instr::Lw { rd: W, rs1: PA, imm: 4, post_inc: true });
            unpack4(b, A0 + 2 * row, A0 + 2 * row + 1);
        }
        for col in 0..4u8 {
            b.push(Instr::Lw { rd: W, rs1: PB, imm: 4, post_inc: true });
            unpack4(b, BL, BL + 1);
            for row in 0..2u8 {
                for half in 0..2u8 {
                    let last = col == 3 && row == 1 && half == 1;
                    if last {
                        b.label("kend").unwrap();
                    }
                    b.push(Instr::Dotp {
                        rd: ACC0 + col * 2 + row,
                        rs1: SrcReg::Gpr(A0 + 2 * row + half),
                        rs2: SrcReg::Gpr(BL + half),
                        width: Width::W8,
                        sign: Sign::UU,
                        shape: Shape::VV,
                        accumulate: true,
                    });
                }
            }
        }
        store_accs(b, 8);
    });
    let prog = b.finish().expect("generated matmul program links");
    Ok(MatmulKernel { prog, spec: *spec, layout: l })
}

fn gen_baseline2(spec: &KernelSpec) -> Result<MatmulKernel, KernelError> {
    let l = layout_for(spec, 2)?;
    const A0: u8 = 16; // 2 rows × 4 unpacked words (x16..x23)
    const B0: u8 = 24; // B unpacked quad (x24..x27)
    const W: u8 = 28;
    const T1: u8 = 29;
    const T2: u8 = 30;
    const T3: u8 = 31;
    // crumb-decimated unpack: dest i holds elements 4b+i in byte lane b;
    // both operands use the same order so lane pairing stays aligned
    let unpack2 = |b: &mut ProgramBuilder, d: [u8; 4]| {
        b.push(Instr::AluImm { op: AluOp::Srl, rd: T1, rs1: W, imm: 2 });
        b.push(Instr::AluImm { op: AluOp::Srl, rd: T2, rs1: W, imm: 4 });
        b.push(Instr::AluImm { op: AluOp::Srl, rd: T3, rs1: W, imm: 6 });
        for (i, src) in [W, T1, T2, T3].into_iter().enumerate() {
            b.push(Instr::AluImm { op: AluOp::And, rd: d[i], rs1: src, imm: 0x03030303 });
        }
    };
    let mut b = ProgramBuilder::new();
    emit_tile_loops(&mut b, &l, |b| {
        zero_accs(b, 8);
        b.push(Instr::LoopSetup {
            l: 0,
            count: LoopCount::Imm(l.k_chunks as u32),
            start: Target::Label("kbody".into()),
            end: Target::Label("kend".into()),
        });
        b.label("kbody").unwrap();
        for row in 0..2u8 {
            b.push(Instr::Lw { rd: W, rs1: PA, imm: 4, post_inc: true });
            let base = A0 + 4 * row;
            unpack2(b, [base, base + 1, base + 2, base + 3]);
        }
        for col in 0..4u8 {
            b.push(Instr::Lw { rd: W, rs1: PB, imm: 4, post_inc: true });
            unpack2(b, [B0, B0 + 1, B0 + 2, B0 + 3]);
            for row in 0..2u8 {
                for q in 0..4u8 {
                    let last = col == 3 && row == 1 && q == 3;
                    if last {
                        b.label("kend").unwrap();
                    }
                    b.push(Instr::Dotp {
                        rd: ACC0 + col * 2 + row,
                        rs1: SrcReg::Gpr(A0 + 4 * row + q),
                        rs2: SrcReg::Gpr(B0 + q),
                        width: Width::W8,
                        sign: Sign::UU,
                        shape: Shape::VV,
                        accumulate: true,
                    });
                }
            }
        }
        store_accs(b, 8);
    });
    let prog = b.finish().expect("generated matmul program links");
    Ok(MatmulKernel { prog, spec: *spec, layout: l })
}

/// Plain nested-loop C = A·B over row-major operands, 32-bit wrapping.
pub fn matmul_oracle(a: &[u32], b: &[u32], m: usize, n: usize, k: usize) -> Vec<u32> {
    let mut c = vec![0u32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0u32;
            for kk in 0..k {
                acc = acc.wrapping_add(a[i * k + kk].wrapping_mul(b[kk * n + j]));
            }
            c[i * n + j] = acc;
        }
    }
    c
}
