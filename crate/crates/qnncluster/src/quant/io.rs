use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::{BitWidth, QTensor};

#[derive(Debug, thiserror::Error)]
pub enum TensorIoError {
    #[error("i/o error on {0}: {1}")]
    Io(String, std::io::Error),
    #[error("invalid tensor header: {0}")]
    Header(serde_json::Error),
    #[error("payload holds {actual} elements, header shape needs {expected}")]
    PayloadLength { expected: usize, actual: usize },
    #[error(transparent)]
    Quant(#[from] super::QuantError),
}

#[derive(Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    bitwidth: u8,
    signed: bool,
}

/// Writes `<path>` (JSON header) plus `<path>.bin` (little-endian i32 payload).
pub fn save_qtensor(path: &Path, t: &QTensor) -> Result<(), TensorIoError> {
    let header = Header {
        shape: t.shape.clone(),
        bitwidth: t.bitwidth.bits(),
        signed: t.signed,
    };
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    std::fs::write(path, text).map_err(|e| TensorIoError::Io(path.display().to_string(), e))?;
    let bin = path.with_extension("bin");
    let mut f = std::fs::File::create(&bin)
        .map_err(|e| TensorIoError::Io(bin.display().to_string(), e))?;
    for &v in &t.data {
        f.write_all(&v.to_le_bytes())
            .map_err(|e| TensorIoError::Io(bin.display().to_string(), e))?;
    }
    Ok(())
}

pub fn load_qtensor(path: &Path) -> Result<QTensor, TensorIoError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TensorIoError::Io(path.display().to_string(), e))?;
    let header: Header = serde_json::from_str(&text).map_err(TensorIoError::Header)?;
    let bin = path.with_extension("bin");
    let mut raw = Vec::new();
    std::fs::File::open(&bin)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| TensorIoError::Io(bin.display().to_string(), e))?;
    let expected: usize = header.shape.iter().product();
    if raw.len() != expected * 4 {
        return Err(TensorIoError::PayloadLength {
            expected,
            actual: raw.len() / 4,
        });
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(QTensor::new(
        header.shape,
        data,
        BitWidth(header.bitwidth),
        header.signed,
    )?)
}
