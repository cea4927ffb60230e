//! Split directories: `split.jsonl` holds one image assignment per line and
//! `meta.json` the id indexes and where the image files live.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use triadrec_core::data::{Image, ImageAssignment, Origin, SplitAssignment};

use crate::error::{self, HarnessError, Result};
use crate::ppm::read_ppm;

pub const ENTRIES_FILE: &str = "split.jsonl";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub seed: u64,
    /// Root of the original images.
    pub data_dir: PathBuf,
    /// Root of the augmented copies, once materialized.
    #[serde(default)]
    pub augmented_dir: Option<PathBuf>,
    pub users: Vec<String>,
    pub restaurants: Vec<String>,
}

/// A split together with the directories its image paths are relative to.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDir {
    pub split: SplitAssignment,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub augmented_dir: Option<PathBuf>,
}

impl SplitDir {
    pub fn new(split: SplitAssignment, seed: u64, data_dir: &Path) -> Result<Self> {
        Ok(Self { split, seed, data_dir: absolute(data_dir)?, augmented_dir: None })
    }

    /// File holding the image of `entry`.
    pub fn image_file(&self, entry: &ImageAssignment) -> Result<PathBuf> {
        if entry.origin == Origin::Original {
            return Ok(self.data_dir.join(&entry.image_path));
        }
        match &self.augmented_dir {
            Some(dir) => Ok(dir.join(&entry.image_path)),
            None => Err(HarnessError::Config(format!(
                "augmented image '{}' but the split has no augmented directory",
                entry.image_path
            ))),
        }
    }

    /// Reads the image of `entry`, resized to `size`×`size` if needed.
    pub fn load_image(&self, entry: &ImageAssignment, size: usize) -> Result<Image> {
        let img = read_ppm(&self.image_file(entry)?)?;
        if img.height() == size && img.width() == size {
            Ok(img)
        } else {
            Ok(triadrec_core::data::resize_image(&img, size, size)?)
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = String::new();
        for e in &self.split.entries {
            text.push_str(&serde_json::to_string(e).expect("assignments serialize"));
            text.push('\n');
        }
        error::write(&dir.join(ENTRIES_FILE), text.as_bytes())?;
        let meta = SplitMeta {
            seed: self.seed,
            data_dir: self.data_dir.clone(),
            augmented_dir: self.augmented_dir.clone(),
            users: self.split.users.clone(),
            restaurants: self.split.restaurants.clone(),
        };
        let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
        error::write(&dir.join(META_FILE), json.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let meta: SplitMeta =
            serde_json::from_str(&error::read_text(&meta_path)?).map_err(|e| HarnessError::json(&meta_path, e))?;
        let path = dir.join(ENTRIES_FILE);
        let mut entries = Vec::new();
        for (i, line) in error::read_text(&path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ImageAssignment = serde_json::from_str(line).map_err(|e| HarnessError::Parse {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(e);
        }
        let split = SplitAssignment { entries, users: meta.users, restaurants: meta.restaurants };
        for e in &split.entries {
            if split.user_index(&e.user_id).is_none() || split.restaurant_index(&e.restaurant_id).is_none() {
                return Err(HarnessError::Config(format!(
                    "{}: entry '{}' refers to an id missing from the index",
                    path.display(),
                    e.image_path
                )));
            }
        }
        Ok(Self { split, seed: meta.seed, data_dir: meta.data_dir, augmented_dir: meta.augmented_dir })
    }
}

pub(crate) fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| HarnessError::io(path, e))
}
