//! Reviews, labels, partitions, images and the dataset procedures built on
//! them.

mod augment;
mod image;
mod projection;
mod split;
mod synth;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use augment::{augment_minority, augment_split, augmented_counts, augmented_path, minority_label};
pub use image::{apply_transform, resize_image, Image, Transform};
pub use projection::RandomProjection;
pub use split::{check_split_invariants, make_train_val, split_dataset, SplitViolation};
pub use synth::{generate_reviews, render_image, restaurant_qualities, SynthConfig};

/// One review with at least one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub review_id: String,
    pub user_id: String,
    pub restaurant_id: String,
    pub stars: u8,
    #[serde(rename = "images")]
    pub image_paths: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<i64>,
}

impl ReviewRecord {
    pub fn validate(&self) -> Result<()> {
        if self.review_id.is_empty() || self.user_id.is_empty() || self.restaurant_id.is_empty() {
            return Err(invalid!("review '{}': identifiers must be nonempty", self.review_id));
        }
        if !(1..=5).contains(&self.stars) {
            return Err(invalid!("review '{}': stars must be in 1..=5, got {}", self.review_id, self.stars));
        }
        if self.image_paths.is_empty() {
            return Err(invalid!("review '{}' has no images", self.review_id));
        }
        Ok(())
    }

    pub fn label(&self) -> Result<u8> {
        label_from_stars(self.stars)
    }
}

/// One to three stars is a dislike (0); four or five a like (1).
pub fn label_from_stars(stars: u8) -> Result<u8> {
    match stars {
        1..=3 => Ok(0),
        4 | 5 => Ok(1),
        _ => Err(invalid!("stars must be in 1..=5, got {stars}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "validation" | "val" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            other => Err(invalid!("unknown partition '{other}'")),
        }
    }
}

/// Where a training image came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Original,
    Rotated,
    Flipped,
    Rescaled,
    Translated,
}

/// Placement of one image instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAssignment {
    pub image_path: String,
    pub review_id: String,
    pub user_id: String,
    pub restaurant_id: String,
    pub label: u8,
    pub origin: Origin,
    pub partition: Partition,
}

/// The unit the recommender learns from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriadExample {
    pub user: usize,
    pub restaurant: usize,
    pub image_path: String,
    pub label: u8,
    pub origin: Origin,
}

/// Every image instance with its partition, plus the id-to-index maps used by
/// the embedding tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub entries: Vec<ImageAssignment>,
    pub users: Vec<String>,
    pub restaurants: Vec<String>,
}

impl SplitAssignment {
    /// Builds the sorted id indexes from the entries themselves.
    pub fn from_entries(entries: Vec<ImageAssignment>) -> Self {
        let mut users: Vec<String> = entries.iter().map(|e| e.user_id.clone()).collect();
        let mut restaurants: Vec<String> = entries.iter().map(|e| e.restaurant_id.clone()).collect();
        users.sort();
        users.dedup();
        restaurants.sort();
        restaurants.dedup();
        Self { entries, users, restaurants }
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.users.binary_search_by(|u| u.as_str().cmp(id)).ok()
    }

    pub fn restaurant_index(&self, id: &str) -> Option<usize> {
        self.restaurants.binary_search_by(|r| r.as_str().cmp(id)).ok()
    }

    pub fn partition(&self, p: Partition) -> impl Iterator<Item = &ImageAssignment> {
        self.entries.iter().filter(move |e| e.partition == p)
    }

    pub fn count(&self, p: Partition, label: u8) -> usize {
        self.partition(p).filter(|e| e.label == label).count()
    }

    pub fn triads(&self, p: Partition) -> Result<Vec<TriadExample>> {
        self.partition(p)
            .map(|e| {
                Ok(TriadExample {
                    user: self
                        .user_index(&e.user_id)
                        .ok_or_else(|| invalid!("unknown user '{}'", e.user_id))?,
                    restaurant: self
                        .restaurant_index(&e.restaurant_id)
                        .ok_or_else(|| invalid!("unknown restaurant '{}'", e.restaurant_id))?,
                    image_path: e.image_path.clone(),
                    label: e.label,
                    origin: e.origin,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_labels() {
        assert_eq!(label_from_stars(3), Ok(0));
        assert_eq!(label_from_stars(4), Ok(1));
        assert_eq!(label_from_stars(1), Ok(0));
        assert_eq!(label_from_stars(5), Ok(1));
        assert!(label_from_stars(0).is_err());
        assert!(label_from_stars(6).is_err());
    }
}
