use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::util::{push_f32s, read_file, write_atomic, ByteReader};

pub const SSMF_MAGIC: &[u8; 4] = b"SSMF";
pub const SSMF_VERSION: u32 = 1;

/// Row-major float32 matrix: magic, version, rows, cols, payload (all LE).
pub fn encode_ssmf(m: &Array2<f32>) -> Vec<u8> {
    let (rows, cols) = m.dim();
    let mut out = Vec::with_capacity(16 + rows * cols * 4);
    out.extend_from_slice(SSMF_MAGIC);
    out.extend_from_slice(&SSMF_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    let values: Vec<f32> = m.iter().copied().collect();
    push_f32s(&mut out, &values);
    out
}

pub fn decode_ssmf(bytes: &[u8]) -> Result<Array2<f32>> {
    let mut r = ByteReader::new(bytes);
    let magic = r
        .take(4)
        .ok_or_else(|| Error::Format("SSMF header truncated".into()))?;
    if magic != SSMF_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let header = (r.u32(), r.u32(), r.u32());
    let (Some(version), Some(rows), Some(cols)) = header else {
        return Err(Error::Format("SSMF header truncated".into()));
    };
    if version != SSMF_VERSION {
        return Err(Error::Format(format!("unsupported SSMF version {version}")));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let expected = rows * cols * 4;
    if r.remaining() != expected {
        return Err(Error::Length(format!(
            "header declares {rows}x{cols} ({} floats) but payload holds {} bytes",
            rows * cols,
            r.remaining()
        )));
    }
    let values = r.f32s(rows * cols).expect("length checked");
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("SSMF payload contains non-finite values".into()));
    }
    Ok(Array2::from_shape_vec((rows, cols), values).expect("shape matches length"))
}

pub fn read_feature_matrix(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    decode_ssmf(&read_file(path.as_ref())?)
}

pub fn write_feature_matrix(path: impl AsRef<Path>, m: &Array2<f32>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_ssmf(m))
}
