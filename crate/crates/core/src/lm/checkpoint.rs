//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! b"AKLM" | u32 version | u32 n | n bytes of `key=value` config
//! | 32-byte vocabulary hash
//! | repeated until EOF: u32 name_len | name | u32 rows | u32 cols | rows*cols f64
//! ```

use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::matrix::Matrix;
use super::params::LstmParams;
use super::{LmConfig, LmError, LstmModel};

pub const MAGIC: &[u8; 4] = b"AKLM";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a model checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint was trained with a different vocabulary")]
    VocabMismatch,
    #[error("truncated or malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] LmError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn to_bytes(model: &LstmModel, vocab_hash: &[u8; 32]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = model.config().to_text();
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(vocab_hash);
    for (name, t) in model.params().tensors() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Malformed(format!("unexpected end at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Parses a checkpoint, refusing it unless it was written against a
/// vocabulary with hash `vocab_hash`.
pub fn from_bytes(bytes: &[u8], vocab_hash: &[u8; 32]) -> Result<LstmModel, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let n = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(n)?)
        .map_err(|_| CheckpointError::Malformed("config is not UTF-8".into()))?;
    let config = LmConfig::from_text(text)?;
    if r.take(32)? != vocab_hash {
        return Err(CheckpointError::VocabMismatch);
    }
    let mut params = LstmParams::zeros(&config);
    let mut seen = 0;
    {
        let mut slots = params.tensors_mut();
        while !r.at_end() {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(rows.saturating_mul(cols).saturating_mul(8))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let slot = slots
                .iter_mut()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| CheckpointError::Malformed(format!("unknown tensor `{name}`")))?;
            if slot.1.shape() != (rows, cols) {
                return Err(LmError::ShapeMismatch(format!(
                    "{name}: expected {:?}, got {:?}",
                    slot.1.shape(),
                    (rows, cols)
                ))
                .into());
            }
            *slot.1 = Matrix::from_vec(rows, cols, data).expect("sized above");
            seen += 1;
        }
        if seen != slots.len() {
            return Err(CheckpointError::Malformed(format!(
                "expected {} tensors, found {seen}",
                slots.len()
            )));
        }
    }
    Ok(LstmModel::from_parts(config, params)?)
}

pub fn save(path: &Path, model: &LstmModel, vocab_hash: &[u8; 32]) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(model, vocab_hash))?;
    Ok(())
}

pub fn load(path: &Path, vocab_hash: &[u8; 32]) -> Result<LstmModel, CheckpointError> {
    from_bytes(&fs::read(path)?, vocab_hash)
}

/// Lower-case hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
