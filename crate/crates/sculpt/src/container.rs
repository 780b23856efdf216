//! Directory container for named numeric arrays.
//!
//! A container is a directory holding `manifest.json` plus one raw blob file
//! per array. Blobs are little-endian, row-major, either 32-bit floats
//! (`.f32`) or 32-bit unsigned ints (`.u32`). The manifest records the schema
//! version, array dtypes/shapes and arbitrary string metadata. Body models,
//! network checkpoints and embedding tables all reuse this scheme.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArrayEntry {
    pub file: String,
    pub dtype: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub arrays: BTreeMap<String, ArrayEntry>,
}

/// In-memory container: named f64 arrays (stored on disk as f32) and named
/// u32 arrays, plus string metadata.
#[derive(Debug, Clone, Default)]
pub struct Container {
    pub kind: String,
    pub metadata: BTreeMap<String, String>,
    f32_arrays: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
    u32_arrays: BTreeMap<String, (Vec<usize>, Vec<u32>)>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Container {
            kind: kind.to_string(),
            ..Default::default()
        }
    }

    pub fn put_f32(&mut self, name: &str, shape: &[usize], data: Vec<f64>) {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "array {name}: shape/data length disagree"
        );
        self.f32_arrays
            .insert(name.to_string(), (shape.to_vec(), data));
    }

    pub fn put_u32(&mut self, name: &str, shape: &[usize], data: Vec<u32>) {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.u32_arrays
            .insert(name.to_string(), (shape.to_vec(), data));
    }

    pub fn f32_names(&self) -> impl Iterator<Item = &str> {
        self.f32_arrays.keys().map(|s| s.as_str())
    }

    pub fn has(&self, name: &str) -> bool {
        self.f32_arrays.contains_key(name) || self.u32_arrays.contains_key(name)
    }

    pub fn get_f32(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.f32_arrays
            .get(name)
            .map(|(s, d)| (s.as_slice(), d.as_slice()))
            .ok_or_else(|| Error::ModelFormat(format!("missing f32 array `{name}`")))
    }

    pub fn get_u32(&self, name: &str) -> Result<(&[usize], &[u32])> {
        self.u32_arrays
            .get(name)
            .map(|(s, d)| (s.as_slice(), d.as_slice()))
            .ok_or_else(|| Error::ModelFormat(format!("missing u32 array `{name}`")))
    }

    /// Writes `manifest.json` and all blobs into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| io_at(dir, e))?;
        let mut arrays = BTreeMap::new();
        for (name, (shape, data)) in &self.f32_arrays {
            let file = format!("{}.f32", name.replace('/', "__"));
            let mut bytes = Vec::with_capacity(data.len() * 4);
            for &v in data {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
            fs::write(dir.join(&file), &bytes).map_err(|e| io_at(dir, e))?;
            arrays.insert(
                name.clone(),
                ArrayEntry {
                    file,
                    dtype: "f32".into(),
                    shape: shape.clone(),
                },
            );
        }
        for (name, (shape, data)) in &self.u32_arrays {
            let file = format!("{}.u32", name.replace('/', "__"));
            let mut bytes = Vec::with_capacity(data.len() * 4);
            for &v in data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            fs::write(dir.join(&file), &bytes).map_err(|e| io_at(dir, e))?;
            arrays.insert(
                name.clone(),
                ArrayEntry {
                    file,
                    dtype: "u32".into(),
                    shape: shape.clone(),
                },
            );
        }
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            kind: self.kind.clone(),
            metadata: self.metadata.clone(),
            arrays,
        };
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(dir.join("manifest.json"), json).map_err(|e| io_at(dir, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Container> {
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path).map_err(|e| io_at(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported schema version {} (expected {})",
                manifest.schema_version, SCHEMA_VERSION
            )));
        }
        let mut out = Container::new(&manifest.kind);
        out.metadata = manifest.metadata;
        for (name, entry) in &manifest.arrays {
            let path = dir.join(&entry.file);
            let bytes = fs::read(&path).map_err(|e| io_at(&path, e))?;
            let count: usize = entry.shape.iter().product();
            if bytes.len() != count * 4 {
                return Err(Error::ModelFormat(format!(
                    "array `{name}`: blob has {} bytes, shape {:?} needs {}",
                    bytes.len(),
                    entry.shape,
                    count * 4
                )));
            }
            match entry.dtype.as_str() {
                "f32" => {
                    let data: Vec<f64> = bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                        .collect();
                    out.f32_arrays.insert(name.clone(), (entry.shape.clone(), data));
                }
                "u32" => {
                    let data: Vec<u32> = bytes
                        .chunks_exact(4)
                        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect();
                    out.u32_arrays.insert(name.clone(), (entry.shape.clone(), data));
                }
                other => {
                    return Err(Error::ModelFormat(format!(
                        "array `{name}`: unknown dtype `{other}`"
                    )))
                }
            }
        }
        Ok(out)
    }

    /// FNV-1a hash over manifest-ordered array bytes; stable content id for
    /// frozen-checkpoint assertions.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, (shape, data)) in &self.f32_arrays {
            eat(name.as_bytes());
            for &s in shape {
                eat(&(s as u64).to_le_bytes());
            }
            for &v in data {
                eat(&(v as f32).to_le_bytes());
            }
        }
        for (name, (shape, data)) in &self.u32_arrays {
            eat(name.as_bytes());
            for &s in shape {
                eat(&(s as u64).to_le_bytes());
            }
            for &v in data {
                eat(&v.to_le_bytes());
            }
        }
        h
    }
}

fn io_at(path: &Path, source: std::io::Error) -> Error {
    Error::IoPath {
        path: PathBuf::from(path),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Container::new("test");
        c.metadata.insert("note".into(), "hello".into());
        c.put_f32("a", &[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        c.put_u32("b", &[4], vec![7, 8, 9, 10]);
        c.save(dir.path()).unwrap();

        let back = Container::load(dir.path()).unwrap();
        assert_eq!(back.kind, "test");
        assert_eq!(back.metadata["note"], "hello");
        let (shape, data) = back.get_f32("a").unwrap();
        assert_eq!(shape, &[2, 3]);
        assert_eq!(data, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (_, b) = back.get_u32("b").unwrap();
        assert_eq!(b, &[7, 8, 9, 10]);
        assert_eq!(c.content_hash(), back.content_hash());
    }

    #[test]
    fn truncated_blob_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Container::new("test");
        c.put_f32("a", &[4], vec![0.0; 4]);
        c.save(dir.path()).unwrap();
        std::fs::write(dir.path().join("a.f32"), [0u8; 7]).unwrap();
        match Container::load(dir.path()) {
            Err(Error::ModelFormat(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
