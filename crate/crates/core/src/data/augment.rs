//! Minority-class over-sampling: every minority image of the train partition
//! gets four transformed copies next to its original.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{ImageAssignment, Origin, Partition, SplitAssignment, Transform};

/// Class counts after augmentation: the smaller class is multiplied by 5.
/// On a tie the negative class counts as the minority.
pub fn augmented_counts(positives: usize, negatives: usize) -> (usize, usize) {
    if minority_of(positives, negatives) == 1 {
        (positives * 5, negatives)
    } else {
        (positives, negatives * 5)
    }
}

fn minority_of(positives: usize, negatives: usize) -> u8 {
    u8::from(positives < negatives)
}

/// Label of the minority class among the original train images.
pub fn minority_label(split: &SplitAssignment) -> u8 {
    let originals = split
        .partition(Partition::Train)
        .filter(|e| e.origin == Origin::Original);
    let (mut pos, mut neg) = (0, 0);
    for e in originals {
        if e.label == 1 {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    minority_of(pos, neg)
}

/// Relative path of the augmented copy of `original` made by `t`.
pub fn augmented_path(original: &str, t: Transform) -> String {
    let stem = original.strip_suffix(".ppm").unwrap_or(original);
    format!("aug/{stem}__{}.ppm", t.name())
}

/// Train entries plus one copy per transform for every minority original.
/// Entries must all belong to the train partition.
pub fn augment_minority(train: &[ImageAssignment], minority: u8) -> Vec<ImageAssignment> {
    let mut out = Vec::with_capacity(train.len());
    for e in train {
        out.push(e.clone());
        if e.origin == Origin::Original && e.label == minority && e.partition == Partition::Train {
            for t in Transform::ALL {
                out.push(ImageAssignment {
                    image_path: augmented_path(&e.image_path, t),
                    origin: t.origin(),
                    ..e.clone()
                });
            }
        }
    }
    out
}

/// The split with augmented train copies inserted after their originals.
pub fn augment_split(split: &SplitAssignment) -> SplitAssignment {
    let minority = minority_label(split);
    let mut entries = Vec::with_capacity(split.entries.len());
    for e in &split.entries {
        if e.partition == Partition::Train {
            entries.extend(augment_minority(core::slice::from_ref(e), minority));
        } else {
            entries.push(e.clone());
        }
    }
    SplitAssignment {
        entries,
        users: split.users.clone(),
        restaurants: split.restaurants.clone(),
    }
}
