//! Functional and cycle-approximate simulator of a heterogeneous AI-IoT
//! compute cluster: 16 RISC-V cores with low-bitwidth SIMD and MAC&LOAD
//! extensions, a reconfigurable binary-convolution engine (RBE), a banked
//! TCDM memory system with DMA, a DNN tiling/scheduling layer, and a
//! closed-loop adaptive body-biasing model.

pub mod abb;
pub mod calib;
pub mod cluster;
pub mod isa;
pub mod kernels;
pub mod quant;
pub mod rbe;
pub mod tiler;
