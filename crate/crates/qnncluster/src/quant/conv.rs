use serde::{Deserialize, Serialize};

use super::tensor::{BitWidth, NormParams, QTensor};
use super::{normquant, QuantError};

/// The two filter geometries the engine accelerates natively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvMode {
    Conv3x3,
    Conv1x1,
}

impl ConvMode {
    pub fn filter_side(self) -> usize {
        match self {
            ConvMode::Conv3x3 => 3,
            ConvMode::Conv1x1 => 1,
        }
    }

    pub fn filter_taps(self) -> usize {
        let s = self.filter_side();
        s * s
    }
}

/// Spatial border policy for 3x3 filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// Zero-pad so output spatial size equals input spatial size.
    Same,
    /// No padding; output shrinks by filter_side - 1.
    Valid,
}

/// Golden convolution oracle: plain integer multiply-accumulate followed by
/// per-channel normalization. Accumulation runs in i64 and is checked into
/// the hardware's signed 32-bit accumulator range.
pub fn reference_conv(
    acts: &QTensor,
    wgts: &QTensor,
    norm: &NormParams,
    mode: ConvMode,
    padding: Padding,
    o_bits: BitWidth,
) -> Result<QTensor, QuantError> {
    acts.expect_rank(3)?;
    wgts.expect_rank(4)?;
    let (h, w, kin) = (acts.shape[0], acts.shape[1], acts.shape[2]);
    let (kout, wkin, fh, fw) = (wgts.shape[0], wgts.shape[1], wgts.shape[2], wgts.shape[3]);
    let side = mode.filter_side();
    if fh != side || fw != side {
        return Err(QuantError::FilterGeometry(fh, fw, mode));
    }
    if kin != wkin {
        return Err(QuantError::KinMismatch(kin, wkin));
    }
    norm.validate(kout)?;

    let (oh, ow, pad) = match (mode, padding) {
        (ConvMode::Conv1x1, _) => (h, w, 0isize),
        (ConvMode::Conv3x3, Padding::Same) => (h, w, 1),
        (ConvMode::Conv3x3, Padding::Valid) => (h - (side - 1), w - (side - 1), 0),
    };

    let mut out = vec![0i32; oh * ow * kout];
    for oy in 0..oh {
        for ox in 0..ow {
            for ko in 0..kout {
                let mut acc: i64 = 0;
                for fy in 0..side {
                    for fx in 0..side {
                        let iy = oy as isize + fy as isize - pad;
                        let ix = ox as isize + fx as isize - pad;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        let pix = (iy as usize * w + ix as usize) * kin;
                        let wrow = ((ko * kin) * side + fy) * side + fx;
                        for ki in 0..kin {
                            let a = acts.data[pix + ki] as i64;
                            let g = wgts.data[wrow + ki * side * side] as i64;
                            acc += a * g;
                        }
                    }
                }
                if acc < i32::MIN as i64 || acc > i32::MAX as i64 {
                    return Err(QuantError::AccOverflow {
                        h: oy,
                        w: ox,
                        ko,
                        acc,
                    });
                }
                out[(oy * ow + ox) * kout + ko] = normquant(
                    acc as i32,
                    norm.scale[ko],
                    norm.bias[ko],
                    norm.shift,
                    norm.relu,
                    o_bits.bits(),
                );
            }
        }
    }
    QTensor::new(vec![oh, ow, kout], out, o_bits, false)
}
