//! Binary checkpoint: magic `STSF`, u32 version, u32 H, L, C, then the
//! parameter vector as little-endian f32 in layout order.

use std::io::{Read, Write};
use std::path::Path;

use super::network::{FieldConfig, FieldParams};
use super::FieldError;

pub const MAGIC: &[u8; 4] = b"STSF";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &FieldParams<f32>, mut w: W) -> std::io::Result<()> {
    let cfg = params.config();
    let mut buf = Vec::with_capacity(20 + 4 * params.data.len());
    buf.extend_from_slice(MAGIC);
    for v in [VERSION, cfg.hidden as u32, cfg.levels as u32, cfg.channels as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &params.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_checkpoint<R: Read>(mut r: R, expected: Option<FieldConfig>) -> Result<FieldParams<f32>, FieldError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(FieldError::Io)?;
    decode(&bytes, expected)
}

fn decode(bytes: &[u8], expected: Option<FieldConfig>) -> Result<FieldParams<f32>, FieldError> {
    if bytes.len() < 20 {
        return Err(FieldError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(FieldError::BadMagic);
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != VERSION {
        return Err(FieldError::Version(version));
    }
    let (hidden, levels, channels) = (word(1) as usize, word(2) as usize, word(3) as usize);
    if hidden == 0 || channels == 0 || levels > super::network::MAX_ENCODING_LEVELS {
        return Err(FieldError::Corrupt(format!("header H={hidden} L={levels} C={channels}")));
    }
    let found = FieldConfig::new(hidden, levels, channels);
    if let Some(want) = expected {
        if want != found {
            return Err(FieldError::ShapeMismatch { expected: want, found });
        }
    }
    let total = found.layout().total;
    let body = &bytes[20..];
    if body.len() != 4 * total {
        return Err(FieldError::Truncated);
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(FieldParams::from_data(found, data))
}

pub fn save_checkpoint(params: &FieldParams<f32>, path: impl AsRef<Path>) -> Result<(), FieldError> {
    let file = std::fs::File::create(path.as_ref()).map_err(FieldError::Io)?;
    write_checkpoint(params, std::io::BufWriter::new(file)).map_err(FieldError::Io)
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<FieldConfig>) -> Result<FieldParams<f32>, FieldError> {
    let bytes = std::fs::read(path.as_ref()).map_err(FieldError::Io)?;
    decode(&bytes, expected)
}
