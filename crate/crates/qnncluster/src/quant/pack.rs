use super::conv::ConvMode;
use super::tensor::{BitWidth, QTensor};
use super::QuantError;

/// LSB-first binary expansion of an unsigned value into `bits` bit-planes.
pub fn bit_decompose(value: u32, bits: BitWidth) -> Result<Vec<u8>, QuantError> {
    let b = bits.bits();
    if b < 32 && value >= (1u32 << b) {
        return Err(QuantError::ValueRange(value as i64, b, false));
    }
    Ok((0..b).map(|i| ((value >> i) & 1) as u8).collect())
}

/// Activations in (H, W, ceil(K/32), I, 32) order: one 32-bit word per
/// (pixel, channel-group, bit-plane), channel k in bit-lane k % 32.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedActivations {
    pub buffer: Vec<u32>,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub bitwidth: BitWidth,
}

impl PackedActivations {
    pub fn k32(&self) -> usize {
        self.k.div_ceil(32)
    }

    pub fn expected_words(&self) -> usize {
        self.h * self.w * self.k32() * self.bitwidth.bits() as usize
    }

    /// Word index of (pixel row, pixel col, channel group, bit-plane).
    pub fn word_index(&self, h: usize, w: usize, c32: usize, i: usize) -> usize {
        ((h * self.w + w) * self.k32() + c32) * self.bitwidth.bits() as usize + i
    }
}

/// Weights in (Kout, ceil(Kin/32), W, 9, 32) order for 3x3 filters, or
/// (Kout, ceil(Kin/32), W, 32) for 1x1. Filter positions run row-major
/// (fy, fx) along the 9-extent.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedWeights {
    pub buffer: Vec<u32>,
    pub mode: ConvMode,
    pub kout: usize,
    pub kin: usize,
    pub bitwidth: BitWidth,
}

impl PackedWeights {
    pub fn kin32(&self) -> usize {
        self.kin.div_ceil(32)
    }

    pub fn expected_words(&self) -> usize {
        self.kout * self.kin32() * self.bitwidth.bits() as usize * self.mode.filter_taps()
    }

    pub fn word_index(&self, ko: usize, c32: usize, i: usize, tap: usize) -> usize {
        let wb = self.bitwidth.bits() as usize;
        ((ko * self.kin32() + c32) * wb + i) * self.mode.filter_taps() + tap
    }
}

fn require_unsigned(t: &QTensor, bits: BitWidth) -> Result<(), QuantError> {
    if t.signed {
        return Err(QuantError::SignedPack);
    }
    let max = bits.umax();
    for &v in &t.data {
        if v < 0 || v > max {
            return Err(QuantError::ValueRange(v as i64, bits.bits(), false));
        }
    }
    Ok(())
}

pub fn pack_activations(t: &QTensor, i_bits: BitWidth) -> Result<PackedActivations, QuantError> {
    t.expect_rank(3)?;
    require_unsigned(t, i_bits)?;
    let (h, w, k) = (t.shape[0], t.shape[1], t.shape[2]);
    let mut p = PackedActivations {
        buffer: vec![],
        h,
        w,
        k,
        bitwidth: i_bits,
    };
    p.buffer = vec![0u32; p.expected_words()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..k {
                let v = t.data[(y * w + x) * k + c] as u32;
                for i in 0..i_bits.bits() as usize {
                    if (v >> i) & 1 != 0 {
                        let idx = p.word_index(y, x, c / 32, i);
                        p.buffer[idx] |= 1 << (c % 32);
                    }
                }
            }
        }
    }
    Ok(p)
}

pub fn unpack_activations(p: &PackedActivations) -> Result<QTensor, QuantError> {
    if p.buffer.len() != p.expected_words() {
        return Err(QuantError::BufferLength {
            expected: p.expected_words(),
            actual: p.buffer.len(),
        });
    }
    let mut data = vec![0i32; p.h * p.w * p.k];
    for y in 0..p.h {
        for x in 0..p.w {
            for c in 0..p.k {
                let mut v = 0u32;
                for i in 0..p.bitwidth.bits() as usize {
                    let word = p.buffer[p.word_index(y, x, c / 32, i)];
                    v |= ((word >> (c % 32)) & 1) << i;
                }
                data[(y * p.w + x) * p.k + c] = v as i32;
            }
        }
    }
    QTensor::new(vec![p.h, p.w, p.k], data, p.bitwidth, false)
}

pub fn pack_weights(
    t: &QTensor,
    w_bits: BitWidth,
    mode: ConvMode,
) -> Result<PackedWeights, QuantError> {
    t.expect_rank(4)?;
    require_unsigned(t, w_bits)?;
    let (kout, kin, fh, fw) = (t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
    let side = mode.filter_side();
    if fh != side || fw != side {
        return Err(QuantError::FilterGeometry(fh, fw, mode));
    }
    let mut p = PackedWeights {
        buffer: vec![],
        mode,
        kout,
        kin,
        bitwidth: w_bits,
    };
    p.buffer = vec![0u32; p.expected_words()];
    for ko in 0..kout {
        for ki in 0..kin {
            for tap in 0..mode.filter_taps() {
                let v = t.data[((ko * kin + ki) * fh + tap / fw) * fw + tap % fw] as u32;
                for i in 0..w_bits.bits() as usize {
                    if (v >> i) & 1 != 0 {
                        let idx = p.word_index(ko, ki / 32, i, tap);
                        p.buffer[idx] |= 1 << (ki % 32);
                    }
                }
            }
        }
    }
    Ok(p)
}

pub fn unpack_weights(p: &PackedWeights) -> Result<QTensor, QuantError> {
    if p.buffer.len() != p.expected_words() {
        return Err(QuantError::BufferLength {
            expected: p.expected_words(),
            actual: p.buffer.len(),
        });
    }
    let side = p.mode.filter_side();
    let mut data = vec![0i32; p.kout * p.kin * side * side];
    for ko in 0..p.kout {
        for ki in 0..p.kin {
            for tap in 0..p.mode.filter_taps() {
                let mut v = 0u32;
                for i in 0..p.bitwidth.bits() as usize {
                    let word = p.buffer[p.word_index(ko, ki / 32, i, tap)];
                    v |= ((word >> (ki % 32)) & 1) << i;
                }
                data[((ko * p.kin + ki) * side + tap / side) * side + tap % side] = v as i32;
            }
        }
    }
    QTensor::new(vec![p.kout, p.kin, side, side], data, p.bitwidth, false)
}
