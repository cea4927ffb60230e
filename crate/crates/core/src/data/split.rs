//! User-aware hold-out splitting.
//!
//! For every user, in this order:
//!
//! 1. Reviews sharing a (user, restaurant) pair stay in train, so two opposite
//!    ratings of one place never straddle the split.
//! 2. The remaining reviews are grouped by label. A group of two or more sends
//!    one review (picked by a stream seeded from the global seed, the user id
//!    and the label) to the held-out side and the rest to train. A group of
//!    one is held out only if the user already has a review in train at that
//!    point; positive groups are settled before negative ones. A user with a
//!    single review therefore always lands in train.
//! 3. Held-out reviews whose restaurant has no train review go back to train.
//!    The train restaurant set is taken once, after step 2, so the result
//!    does not depend on review order.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::rng::{derive_seed_indexed, RngState};

use super::{ImageAssignment, Origin, Partition, ReviewRecord, SplitAssignment};

struct Unit<'a> {
    review_id: &'a str,
    user: &'a str,
    restaurant: &'a str,
    label: u8,
}

/// Returns, per unit, whether it is held out.
fn hold_out(units: &[Unit<'_>], seed: u64, tag: &str) -> Vec<bool> {
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, u) in units.iter().enumerate() {
        by_user.entry(u.user).or_default().push(i);
    }
    let mut held = vec![false; units.len()];
    for (user, mut idx) in by_user {
        idx.sort_by(|&a, &b| units[a].review_id.cmp(units[b].review_id));
        let mut per_restaurant: BTreeMap<&str, usize> = BTreeMap::new();
        for &i in &idx {
            *per_restaurant.entry(units[i].restaurant).or_default() += 1;
        }
        let mut train_count = 0usize;
        let mut groups: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for &i in &idx {
            if per_restaurant[units[i].restaurant] > 1 {
                train_count += 1;
            } else {
                // index 0 holds positives so they are settled first
                groups[usize::from(units[i].label == 0)].push(i);
            }
        }
        let mut singletons = Vec::new();
        for (g, members) in groups.iter().enumerate() {
            let label = if g == 0 { 1u64 } else { 0u64 };
            match members.len() {
                0 => {}
                1 => singletons.push(members[0]),
                n => {
                    let mut rng = RngState::new(derive_seed_indexed(
                        seed,
                        &format!("split:{tag}:{user}"),
                        &[label],
                    ));
                    held[members[rng.below(n)]] = true;
                    train_count += n - 1;
                }
            }
        }
        for i in singletons {
            if train_count > 0 {
                held[i] = true;
            } else {
                train_count += 1;
            }
        }
    }
    let train_restaurants: BTreeSet<&str> = units
        .iter()
        .zip(&held)
        .filter(|(_, &h)| !h)
        .map(|(u, _)| u.restaurant)
        .collect();
    for (u, h) in units.iter().zip(held.iter_mut()) {
        if *h && !train_restaurants.contains(u.restaurant) {
            *h = false;
        }
    }
    held
}

/// Train/test assignment of every image in `reviews`.
pub fn split_dataset(reviews: &[ReviewRecord], seed: u64) -> Result<SplitAssignment> {
    if reviews.is_empty() {
        return Err(invalid!("cannot split an empty review set"));
    }
    let mut seen = BTreeSet::new();
    let mut units = Vec::with_capacity(reviews.len());
    for r in reviews {
        r.validate()?;
        if !seen.insert(r.review_id.as_str()) {
            return Err(invalid!("duplicate review id '{}'", r.review_id));
        }
        units.push(Unit {
            review_id: &r.review_id,
            user: &r.user_id,
            restaurant: &r.restaurant_id,
            label: r.label()?,
        });
    }
    let held = hold_out(&units, seed, "test");
    let mut entries = Vec::new();
    for (r, &h) in reviews.iter().zip(&held) {
        let label = r.label()?;
        for path in &r.image_paths {
            entries.push(ImageAssignment {
                image_path: path.clone(),
                review_id: r.review_id.clone(),
                user_id: r.user_id.clone(),
                restaurant_id: r.restaurant_id.clone(),
                label,
                origin: Origin::Original,
                partition: if h { Partition::Test } else { Partition::Train },
            });
        }
    }
    Ok(SplitAssignment::from_entries(entries))
}

/// Re-splits the original train images of `split` into train and validation
/// with the same procedure. Test entries are untouched; the id indexes are
/// kept so embedding rows stay aligned.
pub fn make_train_val(split: &SplitAssignment, seed: u64) -> Result<SplitAssignment> {
    let mut order: Vec<&str> = Vec::new();
    let mut reviews: BTreeMap<&str, (&ImageAssignment, bool)> = BTreeMap::new();
    for e in split.partition(Partition::Train) {
        if e.origin != Origin::Original {
            return Err(invalid!("re-split expects a non-augmented train partition"));
        }
        if !reviews.contains_key(e.review_id.as_str()) {
            order.push(&e.review_id);
            reviews.insert(&e.review_id, (e, false));
        }
    }
    if order.is_empty() {
        return Err(invalid!("cannot split an empty train partition"));
    }
    let units: Vec<Unit<'_>> = order
        .iter()
        .map(|id| {
            let e = reviews[id].0;
            Unit {
                review_id: &e.review_id,
                user: &e.user_id,
                restaurant: &e.restaurant_id,
                label: e.label,
            }
        })
        .collect();
    let held = hold_out(&units, seed, "validation");
    for (id, h) in order.iter().zip(held) {
        reviews.get_mut(id).expect("review present").1 = h;
    }
    let entries = split
        .entries
        .iter()
        .map(|e| {
            let mut e = e.clone();
            if e.partition == Partition::Train && reviews[e.review_id.as_str()].1 {
                e.partition = Partition::Validation;
            }
            e
        })
        .collect();
    Ok(SplitAssignment {
        entries,
        users: split.users.clone(),
        restaurants: split.restaurants.clone(),
    })
}

/// A broken split property found by [`check_split_invariants`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitViolation {
    UserNotInTrain { partition: Partition, user: String },
    RestaurantNotInTrain { partition: Partition, restaurant: String },
    DuplicatePairOutsideTrain { user: String, restaurant: String },
    ImageMissing { review_id: String, image_path: String },
    ImageRepeated { review_id: String, image_path: String },
    UnknownImage { review_id: String, image_path: String },
}

/// Brute-force check of the split guarantees against the source reviews:
/// held-out users and restaurants also appear in train, every image of a
/// repeated (user, restaurant) pair is in train, and each original image
/// instance appears exactly once.
pub fn check_split_invariants(reviews: &[ReviewRecord], split: &SplitAssignment) -> Vec<SplitViolation> {
    let mut out = Vec::new();
    let originals: Vec<&ImageAssignment> =
        split.entries.iter().filter(|e| e.origin == Origin::Original).collect();

    let train_users: BTreeSet<&str> = originals
        .iter()
        .filter(|e| e.partition == Partition::Train)
        .map(|e| e.user_id.as_str())
        .collect();
    let train_restaurants: BTreeSet<&str> = originals
        .iter()
        .filter(|e| e.partition == Partition::Train)
        .map(|e| e.restaurant_id.as_str())
        .collect();
    let mut reported = BTreeSet::new();
    for e in &originals {
        if e.partition == Partition::Train {
            continue;
        }
        if !train_users.contains(e.user_id.as_str()) && reported.insert((0, e.partition, e.user_id.clone())) {
            out.push(SplitViolation::UserNotInTrain { partition: e.partition, user: e.user_id.clone() });
        }
        if !train_restaurants.contains(e.restaurant_id.as_str())
            && reported.insert((1, e.partition, e.restaurant_id.clone()))
        {
            out.push(SplitViolation::RestaurantNotInTrain {
                partition: e.partition,
                restaurant: e.restaurant_id.clone(),
            });
        }
    }

    let mut pair_reviews: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for r in reviews {
        *pair_reviews.entry((&r.user_id, &r.restaurant_id)).or_default() += 1;
    }
    let mut bad_pairs = BTreeSet::new();
    for e in &originals {
        let key = (e.user_id.as_str(), e.restaurant_id.as_str());
        if pair_reviews.get(&key).copied().unwrap_or(0) > 1 && e.partition != Partition::Train && bad_pairs.insert(key) {
            out.push(SplitViolation::DuplicatePairOutsideTrain {
                user: e.user_id.clone(),
                restaurant: e.restaurant_id.clone(),
            });
        }
    }

    let mut expected: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for r in reviews {
        for p in &r.image_paths {
            *expected.entry((&r.review_id, p)).or_default() += 1;
        }
    }
    let mut found: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for e in &originals {
        *found.entry((&e.review_id, &e.image_path)).or_default() += 1;
    }
    for (&(rid, path), &n) in &expected {
        let got = found.get(&(rid, path)).copied().unwrap_or(0);
        if got < n {
            out.push(SplitViolation::ImageMissing { review_id: rid.into(), image_path: path.into() });
        } else if got > n {
            out.push(SplitViolation::ImageRepeated { review_id: rid.into(), image_path: path.into() });
        }
    }
    for &(rid, path) in found.keys() {
        if !expected.contains_key(&(rid, path)) {
            out.push(SplitViolation::UnknownImage { review_id: rid.into(), image_path: path.into() });
        }
    }
    out
}
