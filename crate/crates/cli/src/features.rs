//! Feature files: a header line with the vector length, then one
//! `image_path<TAB>v1 v2 ...` line per image.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{self, HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(HarnessError::Config("feature vectors must have positive length".into()));
        }
        Ok(Self { dim, vectors: BTreeMap::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, image_path: &str, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(HarnessError::Config(format!(
                "feature vector for '{image_path}' has length {}, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if image_path.is_empty() || image_path.contains(['\t', '\n', '\r']) {
            return Err(HarnessError::Config(format!("unusable image reference {image_path:?}")));
        }
        self.vectors.insert(image_path.to_string(), vector);
        Ok(())
    }

    pub fn get(&self, image_path: &str) -> Result<&[f32]> {
        self.vectors
            .get(image_path)
            .map(Vec::as_slice)
            .ok_or_else(|| HarnessError::MissingFeature(image_path.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.dim);
        for (path, v) in &self.vectors {
            out.push_str(path);
            for (i, x) in v.iter().enumerate() {
                out.push(if i == 0 { '\t' } else { ' ' });
                // shortest representation that parses back to the same f32
                write!(out, "{x}").expect("writing to a string");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| HarnessError::Parse { path: path.to_path_buf(), line, message };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (i, header) = lines.next().ok_or_else(|| err(1, "missing header line".into()))?;
        let dim: usize = header
            .trim()
            .parse()
            .map_err(|_| err(i + 1, format!("header must be the vector length, got {header:?}")))?;
        let mut table = Self::new(dim).map_err(|e| err(i + 1, e.to_string()))?;
        for (i, line) in lines {
            let (name, values) = line
                .split_once('\t')
                .ok_or_else(|| err(i + 1, "expected an image path and a tab".into()))?;
            let v = values
                .split_whitespace()
                .map(|s| s.parse::<f32>().map_err(|_| err(i + 1, format!("bad value {s:?}"))))
                .collect::<Result<Vec<f32>>>()?;
            if v.len() != dim {
                return Err(err(i + 1, format!("expected {dim} values, found {}", v.len())));
            }
            if table.vectors.insert(name.to_string(), v).is_some() {
                return Err(err(i + 1, format!("duplicate image reference '{name}'")));
            }
        }
        Ok(table)
    }
}

pub fn write_feature_file(table: &FeatureTable, path: &Path) -> Result<()> {
    error::write(path, table.to_text().as_bytes())
}

pub fn load_feature_file(path: &Path) -> Result<FeatureTable> {
    FeatureTable::parse(&error::read_text(path)?, path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Feature table and the SHA-256 of the exact bytes it was parsed from.
pub fn load_feature_file_checked(path: &Path) -> Result<(FeatureTable, String)> {
    let bytes = error::read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let table = FeatureTable::parse(&text, path)?;
    Ok((table, sha256_hex(text.as_bytes())))
}
