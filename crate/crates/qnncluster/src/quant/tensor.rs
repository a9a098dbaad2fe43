use serde::{Deserialize, Serialize};

use super::QuantError;

/// Element width in bits. Engine-facing tensors use 2..=8; ISA-facing SIMD
/// vectors additionally allow 16 and 32.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitWidth(pub u8);

impl BitWidth {
    pub fn engine(bits: u8) -> Result<Self, QuantError> {
        if !(2..=8).contains(&bits) {
            return Err(QuantError::BitWidthRange(bits, 2, 8));
        }
        Ok(BitWidth(bits))
    }

    pub fn simd(bits: u8) -> Result<Self, QuantError> {
        if matches!(bits, 2 | 4 | 8 | 16 | 32) {
            Ok(BitWidth(bits))
        } else {
            Err(QuantError::BitWidthRange(bits, 2, 32))
        }
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    /// Largest representable unsigned value.
    pub fn umax(self) -> i32 {
        ((1u64 << self.0) - 1) as i32
    }
}

/// Dense integer tensor. Activations are (H, W, K) row-major; weights are
/// (Kout, Kin, Fh, Fw) row-major. Elements are stored widened to i32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i32>,
    pub bitwidth: BitWidth,
    pub signed: bool,
}

impl QTensor {
    pub fn new(
        shape: Vec<usize>,
        data: Vec<i32>,
        bitwidth: BitWidth,
        signed: bool,
    ) -> Result<Self, QuantError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(QuantError::ShapeMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        let b = bitwidth.bits();
        let (lo, hi) = if signed {
            (-(1i64 << (b - 1)), (1i64 << (b - 1)) - 1)
        } else {
            (0, (1i64 << b) - 1)
        };
        for &v in &data {
            if (v as i64) < lo || (v as i64) > hi {
                return Err(QuantError::ValueRange(v as i64, b, signed));
            }
        }
        Ok(QTensor {
            shape,
            data,
            bitwidth,
            signed,
        })
    }

    pub fn zeros(shape: Vec<usize>, bitwidth: BitWidth, signed: bool) -> Self {
        let n = shape.iter().product();
        QTensor {
            shape,
            data: vec![0; n],
            bitwidth,
            signed,
        }
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn expect_rank(&self, r: usize) -> Result<(), QuantError> {
        if self.rank() == r {
            Ok(())
        } else {
            Err(QuantError::Rank(r, self.shape.clone()))
        }
    }
}

/// Per-output-channel normalization: `(scale*acc + bias) >> shift`,
/// optionally rectified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub scale: Vec<i32>,
    pub bias: Vec<i32>,
    pub shift: u8,
    pub relu: bool,
}

impl NormParams {
    pub fn validate(&self, kout: usize) -> Result<(), QuantError> {
        if self.scale.len() != kout {
            return Err(QuantError::NormLength(self.scale.len(), kout));
        }
        if self.bias.len() != kout {
            return Err(QuantError::NormLength(self.bias.len(), kout));
        }
        if self.shift > 31 {
            return Err(QuantError::ShiftRange(self.shift));
        }
        Ok(())
    }

    /// Identity normalization: out = clamp(relu(acc)).
    pub fn unit(kout: usize, relu: bool) -> Self {
        NormParams {
            scale: vec![1; kout],
            bias: vec![0; kout],
            shift: 0,
            relu,
        }
    }
}
