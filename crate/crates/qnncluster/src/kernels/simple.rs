//! Elementwise kernels: packed 8-bit vector add and software normquant.

use crate::isa::{
    AluOp, FlatMem, Instr, LoopCount, Program, ProgramBuilder, Target,
};

/// c[i] = a[i] + b[i] over packed 8-bit lanes (wrapping per lane).
#[derive(Debug, Clone)]
pub struct VecaddKernel {
    pub prog: Program,
    pub n: usize,
    pub a_base: u32,
    pub b_base: u32,
    pub c_base: u32,
}

const PA: u8 = 1;
const PB: u8 = 2;
const PC: u8 = 3;
const W1: u8 = 8;
const W2: u8 = 9;

pub fn gen_vecadd(n: usize) -> VecaddKernel {
    let chunks = n.div_ceil(4).max(1);
    let a_base = 0x1000u32;
    let b_base = a_base + 4 * chunks as u32;
    let c_base = b_base + 4 * chunks as u32;
    let mut b = ProgramBuilder::new();
    b.push(Instr::Li { rd: PA, imm: a_base as i32 });
    b.push(Instr::Li { rd: PB, imm: b_base as i32 });
    b.push(Instr::Li { rd: PC, imm: c_base as i32 });
    b.push(Instr::LoopSetup {
        l: 0,
        count: LoopCount::Imm(chunks as u32),
        start: Target::Label("body".into()),
        end: Target::Label("end".into()),
    });
    b.label("body").unwrap();
    b.push(Instr::Lw { rd: W1, rs1: PA, imm: 4, post_inc: true });
    b.push(Instr::Lw { rd: W2, rs1: PB, imm: 4, post_inc: true });
    b.push(Instr::SimdAdd {
        rd: W1,
        rs1: W1,
        rs2: W2,
        width: crate::isa::Width::W8,
    });
    b.label("end").unwrap();
    b.push(Instr::Sw { rs2: W1, rs1: PC, imm: 4, post_inc: true });
    b.push(Instr::Halt);
    VecaddKernel {
        prog: b.finish().expect("generated vecadd program links"),
        n,
        a_base,
        b_base,
        c_base,
    }
}

impl VecaddKernel {
    pub fn load_inputs(&self, mem: &mut FlatMem, a: &[u8], b: &[u8]) {
        let pack = |v: &[u8]| -> Vec<u32> {
            v.chunks(4)
                .map(|c| {
                    c.iter()
                        .enumerate()
                        .fold(0u32, |w, (i, &x)| w | (x as u32) << (8 * i))
                })
                .collect()
        };
        mem.load_words(self.a_base, &pack(a));
        mem.load_words(self.b_base, &pack(b));
    }

    pub fn read_output(&self, mem: &FlatMem) -> Vec<u8> {
        let words = mem.read_words(self.c_base, self.n.div_ceil(4));
        (0..self.n)
            .map(|i| ((words[i / 4] >> (8 * (i % 4))) & 0xFF) as u8)
            .collect()
    }
}

/// out[i] = clamp(relu((scale·acc[i] + bias) >> shift), 0, 2^obits − 1) with
/// a single scale/bias pair, in 32-bit register arithmetic.
#[derive(Debug, Clone)]
pub struct NormquantKernel {
    pub prog: Program,
    pub n: usize,
    pub in_base: u32,
    pub out_base: u32,
}

pub fn gen_normquant(n: usize, scale: i32, bias: i32, shift: u8, obits: u8) -> NormquantKernel {
    let in_base = 0x1000u32;
    let out_base = in_base + 4 * n.max(1) as u32;
    const SC: u8 = 5;
    const BI: u8 = 6;
    const V: u8 = 8;
    let mut b = ProgramBuilder::new();
    b.push(Instr::Li { rd: PA, imm: in_base as i32 });
    b.push(Instr::Li { rd: PC, imm: out_base as i32 });
    b.push(Instr::Li { rd: SC, imm: scale });
    b.push(Instr::Li { rd: BI, imm: bias });
    b.push(Instr::LoopSetup {
        l: 0,
        count: LoopCount::Imm(n.max(1) as u32),
        start: Target::Label("body".into()),
        end: Target::Label("end".into()),
    });
    b.label("body").unwrap();
    b.push(Instr::Lw { rd: V, rs1: PA, imm: 4, post_inc: true });
    b.push(Instr::Alu { op: AluOp::Mul, rd: V, rs1: V, rs2: SC });
    b.push(Instr::Alu { op: AluOp::Add, rd: V, rs1: V, rs2: BI });
    b.push(Instr::AluImm { op: AluOp::Sra, rd: V, rs1: V, imm: shift as i32 });
    b.push(Instr::ClipU { rd: V, rs1: V, imm: (1i32 << obits) - 1 });
    b.label("end").unwrap();
    b.push(Instr::Sw { rs2: V, rs1: PC, imm: 4, post_inc: true });
    b.push(Instr::Halt);
    NormquantKernel {
        prog: b.finish().expect("generated normquant program links"),
        n,
        in_base,
        out_base,
    }
}

impl NormquantKernel {
    pub fn load_inputs(&self, mem: &mut FlatMem, accs: &[i32]) {
        let words: Vec<u32> = accs.iter().map(|&v| v as u32).collect();
        mem.load_words(self.in_base, &words);
    }

    pub fn read_output(&self, mem: &FlatMem) -> Vec<i32> {
        mem.read_words(self.out_base, self.n)
            .into_iter()
            .map(|w| w as i32)
            .collect()
    }
}
