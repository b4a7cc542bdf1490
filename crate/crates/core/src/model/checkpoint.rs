//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "CONDSEP\0"
//! version u32      currently 1
//! hlen    u64      length of the JSON header in bytes
//! header  hlen     UTF-8 JSON object; `arrays` lists {name, rows, cols} in storage order
//! data             for each array, rows * cols f64 values in row-major order
//! ```
//!
//! The rest of the header is free-form metadata owned by the caller.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CONDSEP\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Map<String, Value>,
    pub arrays: Vec<(String, Array2<f64>)>,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Map<String, Value>) -> Self {
        Self {
            metadata,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.arrays.push((name.into(), value));
    }

    pub fn array(&self, name: &str) -> Option<&Array2<f64>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut header = self.metadata.clone();
        let infos: Vec<ArrayInfo> = self
            .arrays
            .iter()
            .map(|(name, a)| ArrayInfo {
                name: name.clone(),
                rows: a.nrows(),
                cols: a.ncols(),
            })
            .collect();
        header.insert("arrays".into(), serde_json::to_value(infos)?);
        let header = serde_json::to_vec(&Value::Object(header))?;
        let total: usize = self.arrays.iter().map(|(_, a)| a.len()).sum();
        let mut buf = Vec::with_capacity(20 + header.len() + total * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        for (_, a) in &self.arrays {
            for v in a.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&buf)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| corrupt(path, e.to_string()))?;
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt(path, "not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(corrupt(path, format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if hlen > body.len() {
            return Err(corrupt(path, "truncated header"));
        }
        let mut metadata: serde_json::Map<String, Value> = match serde_json::from_slice(&body[..hlen]) {
            Ok(Value::Object(m)) => m,
            Ok(_) => return Err(corrupt(path, "header is not an object")),
            Err(e) => return Err(corrupt(path, format!("bad header: {e}"))),
        };
        let infos: Vec<ArrayInfo> = metadata
            .remove("arrays")
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| corrupt(path, format!("bad array index: {e}")))?
            .unwrap_or_default();
        let mut data = &body[hlen..];
        let mut arrays = Vec::with_capacity(infos.len());
        for info in infos {
            let n = info
                .rows
                .checked_mul(info.cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= data.len()))
                .ok_or_else(|| corrupt(path, format!("array `{}` is truncated", info.name)))?;
            let values: Vec<f64> = data[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            data = &data[n * 8..];
            let a = Array2::from_shape_vec((info.rows, info.cols), values).expect("length checked");
            arrays.push((info.name, a));
        }
        if !data.is_empty() {
            return Err(corrupt(path, format!("{} trailing bytes", data.len())));
        }
        Ok(Self { metadata, arrays })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut meta = serde_json::Map::new();
        meta.insert("step".into(), Value::from(42));
        let mut c = Checkpoint::new(meta);
        c.push("a", Array2::from_shape_fn((2, 3), |(i, j)| i as f64 - 0.1 * j as f64));
        c.push("b", Array2::from_elem((1, 1), f64::MIN_POSITIVE));
        c
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        let c = sample();
        c.write(&p).unwrap();
        let back = Checkpoint::read(&p).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.metadata["step"], 42);
    }

    #[test]
    fn corruption_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        sample().write(&p).unwrap();
        let bytes = fs::read(&p).unwrap();
        for bad in [&bytes[..bytes.len() - 3], &bytes[..10], b"garbage garbage garbage".as_slice()] {
            fs::write(&p, bad).unwrap();
            assert!(matches!(Checkpoint::read(&p), Err(Error::Checkpoint { .. })));
        }
        let mut extra = bytes.clone();
        extra.push(0);
        fs::write(&p, &extra).unwrap();
        assert!(Checkpoint::read(&p).is_err());
        let mut wrong_version = bytes;
        wrong_version[8] = 9;
        fs::write(&p, &wrong_version).unwrap();
        assert!(Checkpoint::read(&p).is_err());
        assert!(Checkpoint::read(&dir.path().join("missing")).is_err());
    }
}
