//! Dataset index files (JSON lines) and the dataset validator.
//!
//! A dataset is a directory with an `index.jsonl` whose records reference
//! per-sample files by relative path. Geometry datasets reference
//! displacement-map containers; texture datasets reference rendered PNGs
//! (with an `_alpha.png` foreground mask sidecar).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::{CLOTHING_TYPE_COUNT, TEXT_EMBED_DIM};
use crate::uv::DispMap;

pub const INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub dispmap: String,
    pub theta: Vec<f64>,
    #[serde(default)]
    pub root_orient: Vec<f64>,
    #[serde(default)]
    pub betas: Vec<f64>,
    pub c_g: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextureRecord {
    pub image: String,
    pub c_g: usize,
    pub c_t: Vec<f64>,
    pub theta: Vec<f64>,
    #[serde(default)]
    pub root_orient: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GeometryDataset {
    pub root: PathBuf,
    pub records: Vec<GeometryRecord>,
}

#[derive(Debug, Clone)]
pub struct TextureDataset {
    pub root: PathBuf,
    pub records: Vec<TextureRecord>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::IoPath {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(text.lines().map(|s| s.to_string()).collect())
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

impl GeometryDataset {
    pub fn save(&self) -> Result<()> {
        write_jsonl(&self.root.join(INDEX_FILE), &self.records)
    }

    pub fn load(root: &Path) -> Result<GeometryDataset> {
        let records = read_lines(&root.join(INDEX_FILE))?
            .iter()
            .map(|line| serde_json::from_str(line).map_err(Error::from))
            .collect::<Result<Vec<_>>>()?;
        Ok(GeometryDataset {
            root: root.to_path_buf(),
            records,
        })
    }

    pub fn load_dispmap(&self, record: &GeometryRecord) -> Result<DispMap> {
        DispMap::load_f32(&self.root.join(&record.dispmap))
    }
}

impl TextureDataset {
    pub fn save(&self) -> Result<()> {
        write_jsonl(&self.root.join(INDEX_FILE), &self.records)
    }

    pub fn load(root: &Path) -> Result<TextureDataset> {
        let records = read_lines(&root.join(INDEX_FILE))?
            .iter()
            .map(|line| serde_json::from_str(line).map_err(Error::from))
            .collect::<Result<Vec<_>>>()?;
        Ok(TextureDataset {
            root: root.to_path_buf(),
            records,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub kind: String,
    pub records: usize,
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Validates a dataset directory: schema, label arity, finite values and
/// referenced-file existence. The record kind is sniffed from the first
/// line.
pub fn validate_dataset(root: &Path) -> Result<ValidationReport> {
    let lines = read_lines(&root.join(INDEX_FILE))?;
    let mut problems = Vec::new();
    let kind = match lines.first() {
        None => {
            return Ok(ValidationReport {
                kind: "empty".into(),
                records: 0,
                problems,
            })
        }
        Some(first) => {
            if first.contains("\"dispmap\"") {
                "geometry"
            } else if first.contains("\"image\"") {
                "texture"
            } else {
                problems.push("unrecognized record schema".into());
                return Ok(ValidationReport {
                    kind: "unknown".into(),
                    records: lines.len(),
                    problems,
                });
            }
        }
    };

    for (i, line) in lines.iter().enumerate() {
        if kind == "geometry" {
            match serde_json::from_str::<GeometryRecord>(line) {
                Ok(r) => {
                    if r.c_g >= CLOTHING_TYPE_COUNT {
                        problems.push(format!("record {i}: c_g {} out of range", r.c_g));
                    }
                    if !r.theta.iter().all(|v| v.is_finite()) {
                        problems.push(format!("record {i}: non-finite theta"));
                    }
                    let path = root.join(&r.dispmap);
                    if !path.join("manifest.json").exists() {
                        problems.push(format!("record {i}: missing dispmap {}", r.dispmap));
                    } else if let Ok(map) = DispMap::load_f32(&path) {
                        if !map.data.iter().all(|v| v.is_finite()) {
                            problems.push(format!("record {i}: non-finite dispmap"));
                        }
                        if map.off_mask_violation() != 0.0 {
                            problems.push(format!("record {i}: nonzero off-mask texels"));
                        }
                    }
                }
                Err(e) => problems.push(format!("record {i}: {e}")),
            }
        } else {
            match serde_json::from_str::<TextureRecord>(line) {
                Ok(r) => {
                    if r.c_g >= CLOTHING_TYPE_COUNT {
                        problems.push(format!("record {i}: c_g {} out of range", r.c_g));
                    }
                    if r.c_t.len() != TEXT_EMBED_DIM {
                        problems.push(format!(
                            "record {i}: c_t has {} dims, expected {TEXT_EMBED_DIM}",
                            r.c_t.len()
                        ));
                    }
                    if !r.c_t.iter().chain(&r.theta).all(|v| v.is_finite()) {
                        problems.push(format!("record {i}: non-finite values"));
                    }
                    if !root.join(&r.image).exists() {
                        problems.push(format!("record {i}: missing image {}", r.image));
                    }
                }
                Err(e) => problems.push(format!("record {i}: {e}")),
            }
        }
    }
    Ok(ValidationReport {
        kind: kind.into(),
        records: lines.len(),
        problems,
    })
}
