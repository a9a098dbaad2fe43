//! Integer quantization arithmetic, bit-plane packing into the accelerator
//! memory layouts, and the golden convolution oracle every accelerated path
//! is checked against.

mod conv;
mod io;
mod pack;
mod tensor;


pub use conv::{reference_conv, ConvMode, Padding};
pub use io::{load_qtensor, save_qtensor, TensorIoError};
pub use pack::{
    bit_decompose, pack_activations, pack_weights, unpack_activations, unpack_weights,
    PackedActivations, PackedWeights,
};
pub use tensor::{BitWidth, NormParams, QTensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QuantError {
    #[error("bitwidth {0} out of range [{1}, {2}]")]
    BitWidthRange(u8, u8, u8),
    #[error("value {0} not representable in {1} bits (signed={2})")]
    ValueRange(i64, u8, bool),
    #[error("shape {shape:?} product {expected} does not match data length {actual}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("expected rank-{0} tensor, got shape {1:?}")]
    Rank(usize, Vec<usize>),
    #[error("filter geometry {0}x{1} invalid for mode {2:?}")]
    FilterGeometry(usize, usize, ConvMode),
    #[error("packed buffer length {actual} does not match layout ({expected} words)")]
    BufferLength { expected: usize, actual: usize },
    #[error("accumulator overflow at output ({h}, {w}, {ko}): {acc}")]
    AccOverflow { h: usize, w: usize, ko: usize, acc: i64 },
    #[error("norm parameter arrays have length {0}, expected kout {1}")]
    NormLength(usize, usize),
    #[error("shift amount {0} exceeds 31")]
    ShiftRange(u8),
    #[error("tensor must be unsigned for packing")]
    SignedPack,
    #[error("kin mismatch: activations {0}, weights {1}")]
    KinMismatch(usize, usize),
}

/// Post-processing of one 32-bit accumulator: affine normalization,
/// arithmetic right shift (truncating), optional ReLU, then saturation to
/// the unsigned output range.
pub fn normquant(acc: i32, scale: i32, bias: i32, shift: u8, relu: bool, obits: u8) -> i32 {
    let v = (scale as i64 * acc as i64 + bias as i64) >> shift;
    let v = if relu { v.max(0) } else { v };
    let max = (1i64 << obits) - 1;
    v.clamp(0, max) as i32
}
