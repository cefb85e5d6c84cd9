//! Versioned named-array container shared by oracle, generator, and
//! discriminator checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes   b"CATGANCK"
//! version   u32       currently 1
//! length    u32       byte length of the manifest
//! manifest  JSON      {"kind", "meta", "arrays": [{"name", "shape", "dtype", "offset"}]}
//! payload   bytes     array data, row-major; `offset` is relative to the payload start
//! ```
//!
//! `dtype` is `"f32"` or `"f64"`; both are stored little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"CATGANCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: [usize; 2],
    dtype: DType,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    kind: String,
    meta: BTreeMap<String, serde_json::Value>,
    arrays: Vec<ArrayEntry>,
}

/// In-memory form of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: BTreeMap<String, serde_json::Value>,
    pub arrays: Vec<(String, DType, Matrix)>,
}

impl Container {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            meta: BTreeMap::new(),
            arrays: Vec::new(),
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("metadata must serialize");
        self.meta.insert(key.to_string(), v);
    }

    pub fn meta<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Option<T> {
        self.meta
            .get(key)
            .and_then(|v| serde_json::from_value(v.clone()).ok())
    }

    pub fn push(&mut self, name: impl Into<String>, dtype: DType, value: Matrix) {
        self.arrays.push((name.into(), dtype, value));
    }

    /// Adds every array of `store` under `prefix`.
    pub fn push_store(&mut self, prefix: &str, dtype: DType, store: &ParamStore) {
        for (name, m) in store.iter() {
            self.push(format!("{prefix}{name}"), dtype, m.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.arrays
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, _, m)| m)
    }

    /// Collects all arrays under `prefix` into a store, prefix stripped.
    pub fn store(&self, prefix: &str) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, _, m) in &self.arrays {
            if let Some(rest) = name.strip_prefix(prefix) {
                store.insert(rest, m.clone());
            }
        }
        store
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.arrays.len());
        for (name, dtype, m) in &self.arrays {
            entries.push(ArrayEntry {
                name: name.clone(),
                shape: [m.nrows(), m.ncols()],
                dtype: *dtype,
                offset: payload.len(),
            });
            for v in m.iter() {
                match dtype {
                    DType::F32 => payload.extend_from_slice(&(*v as f32).to_le_bytes()),
                    DType::F64 => payload.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        let manifest = Manifest {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays: entries,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(body).map_err(|e| bad(&format!("manifest: {e}")))?;
        let payload = &bytes[16 + len..];
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        for entry in manifest.arrays {
            let [rows, cols] = entry.shape;
            let w = entry.dtype.width();
            let end = entry.offset + rows * cols * w;
            let raw = payload
                .get(entry.offset..end)
                .ok_or_else(|| bad(&format!("array `{}` out of bounds", entry.name)))?;
            let values: Vec<f64> = raw
                .chunks_exact(w)
                .map(|c| match entry.dtype {
                    DType::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
                    DType::F64 => f64::from_le_bytes(c.try_into().unwrap()),
                })
                .collect();
            let m = Matrix::from_shape_vec((rows, cols), values)
                .map_err(|e| bad(&e.to_string()))?;
            arrays.push((entry.name, entry.dtype, m));
        }
        Ok(Self {
            kind: manifest.kind,
            meta: manifest.meta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn expect_kind(&self, kind: &str, path: &Path) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("expected a `{kind}` checkpoint, found `{}`", self.kind),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_preserves_arrays_and_meta() {
        let mut c = Container::new("test");
        c.set_meta("round", 7usize);
        c.push("a", DType::F64, array![[1.0, 2.5], [-3.0, 1e-300]]);
        c.push("b", DType::F32, array![[0.5, 0.25, 0.125]]);
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.meta::<usize>("round"), Some(7));
    }

    #[test]
    fn rejects_garbage() {
        assert!(Container::from_bytes(b"not a checkpoint at all", Path::new("x")).is_err());
        let mut bytes = Container::new("t").to_bytes();
        bytes[8] = 9;
        assert!(Container::from_bytes(&bytes, Path::new("x")).is_err());
    }
}
