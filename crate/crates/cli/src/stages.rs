//! The individual pipeline stages. Each reads and writes materialized
//! artifacts so it can be re-run on its own.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use triadrec_core::cae::{build_cae, train_cae, CaeConfig, CaeModel, TrainHistory};
use triadrec_core::data::{
    apply_transform, augment_split, augmented_path, generate_reviews, make_train_val, minority_label, render_image,
    split_dataset, Image, ImageAssignment, Origin, Partition, RandomProjection, ReviewRecord, SplitAssignment,
    SynthConfig, Transform,
};
use triadrec_core::metrics::MetricsReport;
use triadrec_core::recmodel::{
    build_recommender, evaluate_model, grid_search, train_recommender, GridResult, RecConfig, RecHistory, RecModel,
    TriadBatch,
};
use triadrec_core::{Clock, RngState};

use crate::error::{HarnessError, Result};
use crate::features::FeatureTable;
use crate::manifest::{load_manifest, write_manifest};
use crate::ppm::{read_ppm, write_ppm};
use crate::splitfile::SplitDir;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Seconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Clock for WallClock {
    fn elapsed_secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Writes `manifest.jsonl` and every image under `out`.
pub fn write_synthetic(config: &SynthConfig, out: &Path) -> Result<Vec<ReviewRecord>> {
    let reviews = generate_reviews(config)?;
    for r in &reviews {
        for (k, rel) in r.image_paths.iter().enumerate() {
            write_ppm(&render_image(config, r, k)?, &out.join(rel))?;
        }
    }
    write_manifest(&reviews, &out.join(MANIFEST_FILE))?;
    Ok(reviews)
}

/// Train/validation/test split of the reviews in `manifest`; image paths stay
/// relative to the manifest's directory.
pub fn split_manifest(manifest: &Path, seed: u64) -> Result<SplitDir> {
    let reviews = load_manifest(manifest)?;
    let split = make_train_val(&split_dataset(&reviews, seed)?, seed)?;
    let data_dir = manifest.parent().unwrap_or(Path::new("."));
    SplitDir::new(split, seed, data_dir)
}

/// Adds the minority-class copies to the train partition and writes their
/// images under `out`.
pub fn augment(split: &SplitDir, out: &Path) -> Result<SplitDir> {
    if split.split.entries.iter().any(|e| e.origin != Origin::Original) {
        return Err(HarnessError::Config("the split is already augmented".into()));
    }
    let minority = minority_label(&split.split);
    for e in split.split.partition(Partition::Train) {
        if e.label != minority {
            continue;
        }
        let img = read_ppm(&split.image_file(e)?)?;
        for t in Transform::ALL {
            write_ppm(&apply_transform(&img, t), &out.join(augmented_path(&e.image_path, t)))?;
        }
    }
    Ok(SplitDir {
        split: augment_split(&split.split),
        seed: split.seed,
        data_dir: split.data_dir.clone(),
        augmented_dir: Some(crate::splitfile::absolute(out)?),
    })
}

fn load_images<'a>(
    split: &SplitDir,
    entries: impl Iterator<Item = &'a ImageAssignment>,
    size: usize,
) -> Result<Vec<Image>> {
    entries.map(|e| split.load_image(e, size)).collect()
}

/// Trains the autoencoder on the original train images, early-stopping on
/// the validation originals.
pub fn train_cae_on_split(split: &SplitDir, config: &CaeConfig, clock: &dyn Clock) -> Result<(CaeModel, TrainHistory)> {
    config.validate()?;
    if config.input_height != config.input_width {
        return Err(HarnessError::Config("the pipeline uses square images".into()));
    }
    let size = config.input_height;
    let originals = |p: Partition| split.split.partition(p).filter(|e| e.origin == Origin::Original);
    let train = load_images(split, originals(Partition::Train), size)?;
    let val = load_images(split, originals(Partition::Validation), size)?;
    let model = build_cae(config, &mut RngState::new(config.seed).substream("cae-init"))?;
    Ok(train_cae(model, &train, &val, clock)?)
}

const EXTRACT_CHUNK: usize = 64;

/// CAE codes for every image of the split.
pub fn extract_cae_features(model: &CaeModel, split: &SplitDir) -> Result<FeatureTable> {
    let size = model.config.input_height;
    let mut table = FeatureTable::new(model.config.code_len())?;
    for chunk in split.split.entries.chunks(EXTRACT_CHUNK) {
        let images = load_images(split, chunk.iter(), size)?;
        let refs: Vec<&Image> = images.iter().collect();
        for (e, code) in chunk.iter().zip(model.encode_batch(&refs)?) {
            table.insert(&e.image_path, code)?;
        }
    }
    Ok(table)
}

/// Fixed random projection of the flattened `size`×`size` images.
pub fn extract_projection_features(split: &SplitDir, size: usize, dim: usize, seed: u64) -> Result<FeatureTable> {
    let projection = RandomProjection::new(3 * size * size, dim, seed)?;
    let mut table = FeatureTable::new(dim)?;
    for e in &split.split.entries {
        let img = split.load_image(e, size)?;
        table.insert(&e.image_path, projection.project(img.data())?)?;
    }
    Ok(table)
}

/// The triads of one partition with their image features.
pub fn triad_batch(split: &SplitAssignment, partition: Partition, features: &FeatureTable) -> Result<TriadBatch> {
    let triads = split.triads(partition)?;
    let mut users = Vec::with_capacity(triads.len());
    let mut restaurants = Vec::with_capacity(triads.len());
    let mut labels = Vec::with_capacity(triads.len());
    let mut values = Vec::with_capacity(triads.len() * features.dim());
    for t in &triads {
        users.push(t.user);
        restaurants.push(t.restaurant);
        labels.push(t.label);
        values.extend_from_slice(features.get(&t.image_path)?);
    }
    Ok(TriadBatch::new(users, restaurants, values, features.dim(), labels)?)
}

/// Every image of the split has a vector of the configured length.
pub fn check_features(split: &SplitAssignment, features: &FeatureTable, feature_dim: usize) -> Result<()> {
    if features.dim() != feature_dim {
        return Err(HarnessError::Config(format!(
            "feature vectors have length {}, the recommender expects {feature_dim}",
            features.dim()
        )));
    }
    for e in &split.entries {
        features.get(&e.image_path)?;
    }
    Ok(())
}

/// `config` with the id counts and feature width taken from the data.
pub fn fit_rec_config(config: &RecConfig, split: &SplitAssignment, features: &FeatureTable) -> RecConfig {
    RecConfig {
        n_users: split.users.len(),
        n_restaurants: split.restaurants.len(),
        image_feature_dim: features.dim(),
        ..config.clone()
    }
}

pub struct RecOutcome {
    pub model: RecModel<f32>,
    pub history: RecHistory,
    /// Metrics per nonempty partition.
    pub metrics: BTreeMap<String, MetricsReport>,
}

/// Trains on the (augmented) train partition, early-stopping on validation,
/// then evaluates every nonempty partition.
pub fn train_rec_on_split(
    split: &SplitAssignment,
    features: &FeatureTable,
    config: &RecConfig,
    clock: &dyn Clock,
) -> Result<RecOutcome> {
    check_features(split, features, config.image_feature_dim)?;
    let train = triad_batch(split, Partition::Train, features)?;
    let val = triad_batch(split, Partition::Validation, features)?;
    let model = build_recommender(config, &mut RngState::new(config.seed).substream("rec-init"))?;
    let (model, history) = train_recommender(model, &train, &val, clock)?;
    let metrics = evaluate_partitions(&model, split, features)?;
    Ok(RecOutcome { model, history, metrics })
}

pub fn evaluate_partition(
    model: &RecModel<f32>,
    split: &SplitAssignment,
    features: &FeatureTable,
    partition: Partition,
) -> Result<MetricsReport> {
    let batch = triad_batch(split, partition, features)?;
    if batch.is_empty() {
        return Err(HarnessError::Config(format!("the {} partition is empty", partition.name())));
    }
    Ok(evaluate_model(model, &batch)?)
}

pub fn evaluate_partitions(
    model: &RecModel<f32>,
    split: &SplitAssignment,
    features: &FeatureTable,
) -> Result<BTreeMap<String, MetricsReport>> {
    let mut out = BTreeMap::new();
    for p in [Partition::Train, Partition::Validation, Partition::Test] {
        if split.partition(p).next().is_some() {
            out.insert(p.name().to_string(), evaluate_partition(model, split, features, p)?);
        }
    }
    Ok(out)
}

pub fn grid_search_on_split(
    split: &SplitAssignment,
    features: &FeatureTable,
    base: &RecConfig,
    learning_rates: &[f64],
    embed_dims: &[usize],
    clock: &dyn Clock,
) -> Result<GridResult> {
    check_features(split, features, base.image_feature_dim)?;
    let train = triad_batch(split, Partition::Train, features)?;
    let val = triad_batch(split, Partition::Validation, features)?;
    Ok(grid_search(&train, &val, learning_rates, embed_dims, base, clock)?)
}
