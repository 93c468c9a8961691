//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `PERCMODL` |
//! | 4     | format version (`u32`, currently 1) |
//! | 8     | training seed (`u64`) |
//! | 4     | header length `n` (`u32`) |
//! | n     | UTF-8 JSON [`Architecture`] |
//! | …     | per layer: parameter count (`u64`) then that many `f64` |
//!
//! The file must end exactly after the last parameter block.

use std::path::Path;

use super::model::{Architecture, Model};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PERCMODL";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_to_bytes(model: &Model) -> Vec<u8> {
    let header = serde_json::to_vec(model.architecture()).expect("architecture serializes");
    let mut out = Vec::with_capacity(32 + header.len() + model.param_total() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&model.seed().to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for block in model.params() {
        out.extend_from_slice(&(block.len() as u64).to_le_bytes());
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Checkpoint {
            offset: self.offset,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.offset < n {
            return self.fail(format!("truncated while reading {what}"));
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn load_from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, offset: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        r.offset = 0;
        return r.fail("bad magic");
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        r.offset -= 4;
        return r.fail(format!("unsupported version {version}"));
    }
    let seed = r.u64("seed")?;
    let header_len = r.u32("header length")? as usize;
    let header_start = r.offset;
    let header = r.take(header_len, "header")?;
    let architecture: Architecture = serde_json::from_slice(header).map_err(|e| Error::Checkpoint {
        offset: header_start + e.column().saturating_sub(1),
        message: format!("invalid architecture header: {e}"),
    })?;
    let counts = architecture.param_counts().map_err(|e| Error::Checkpoint {
        offset: header_start,
        message: e.to_string(),
    })?;
    let mut params = Vec::with_capacity(counts.len());
    for (i, &expected) in counts.iter().enumerate() {
        let at = r.offset;
        let n = r.u64("parameter count")? as usize;
        if n != expected {
            r.offset = at;
            return r.fail(format!("layer {i} declares {n} parameters, architecture needs {expected}"));
        }
        let raw = r.take(n * 8, "parameters")?;
        let block: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(j) = block.iter().position(|v| !v.is_finite()) {
            r.offset = at + 8 + 8 * j;
            return r.fail("non-finite parameter");
        }
        params.push(block);
    }
    if r.offset != bytes.len() {
        return r.fail(format!("{} trailing bytes", bytes.len() - r.offset));
    }
    Model::from_params(architecture, params, seed)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, save_to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    load_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        Model::init(Architecture::small(8, 8, 3), 11).unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let m = model();
        let back = load_from_bytes(&save_to_bytes(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corrupt_files_report_offsets() {
        let bytes = save_to_bytes(&model());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(load_from_bytes(&bad), Err(Error::Checkpoint { offset: 0, .. })));

        let truncated = &bytes[..bytes.len() - 3];
        match load_from_bytes(truncated) {
            Err(Error::Checkpoint { offset, message }) => {
                assert!(message.contains("truncated"));
                assert!(offset > 20);
            }
            other => panic!("unexpected {other:?}"),
        }

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(
            load_from_bytes(&trailing),
            Err(Error::Checkpoint { offset, .. }) if offset == bytes.len()
        ));

        let mut version = bytes;
        version[8] = 9;
        assert!(matches!(load_from_bytes(&version), Err(Error::Checkpoint { offset: 8, .. })));
    }
}
