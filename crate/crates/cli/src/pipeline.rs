//! End-to-end experiments: split, autoencoder, augmentation, features,
//! recommender, evaluation.
//!
//! Artifacts under the output directory:
//!
//! ```text
//! split/        train/validation/test assignment of the original images
//! augmented/    the same split plus the minority copies, and their images
//! cae/          cae.ckpt and history.json (feature source `cae` only)
//! features.tsv  one vector per image of the augmented split
//! rec/          rec.ckpt
//! report.json   RunReport, with report.txt next to it
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use triadrec_core::cae::{CaeConfig, TrainHistory};
use triadrec_core::data::Partition;
use triadrec_core::recmodel::RecConfig;
use triadrec_core::Clock;

use crate::checkpoint::{save_cae, save_recommender};
use crate::error::{self, HarnessError, Result, StageExt};
use crate::features::{load_feature_file, load_feature_file_checked, write_feature_file, FeatureTable};
use crate::report::{write_ablation_report, write_report, AblationColumn, AblationReport, RunReport};
use crate::splitfile::SplitDir;
use crate::stages::{self, WallClock, MANIFEST_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureSource {
    /// Codes of an autoencoder trained on the train originals.
    Cae,
    /// Precomputed vectors keyed by image path.
    FeatureFile { path: PathBuf },
    /// A fixed seeded Gaussian projection of the raw pixels.
    RandomProjection { dim: usize },
}

impl FeatureSource {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Cae => "cae",
            Self::FeatureFile { .. } => "feature-file",
            Self::RandomProjection { .. } => "random-projection",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Holds `manifest.jsonl` and the images it names.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Images are resized to `image_size`×`image_size` before any model.
    pub image_size: usize,
    pub cae: CaeConfig,
    /// `n_users` and `n_restaurants` are filled in from the split.
    pub rec: RecConfig,
    pub feature_source: FeatureSource,
    /// Drives the split, every model init, shuffling and dropout.
    pub seed: u64,
}

impl ExperimentConfig {
    /// 32×32 images, 16-wide embeddings, CAE codes.
    pub fn desk_scale(data_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>, seed: u64) -> Self {
        let image_size = 32;
        let cae = CaeConfig { input_height: image_size, input_width: image_size, seed, ..CaeConfig::default() };
        let rec = RecConfig { embed_dim: 16, image_feature_dim: cae.code_len(), seed, ..RecConfig::default() };
        Self {
            data_dir: data_dir.into(),
            out_dir: out_dir.into(),
            image_size,
            cae,
            rec,
            feature_source: FeatureSource::Cae,
            seed,
        }
    }

    /// The config actually used: image size and seed pushed into the
    /// sub-configs.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.cae.input_height = c.image_size;
        c.cae.input_width = c.image_size;
        c.cae.seed = c.seed;
        c.rec.seed = c.seed;
        c
    }

    /// Length of the vectors the feature source produces.
    pub fn source_dim(&self) -> Result<usize> {
        match &self.feature_source {
            FeatureSource::Cae => {
                let c = self.effective().cae;
                c.validate()?;
                Ok(c.code_len())
            }
            FeatureSource::RandomProjection { dim } => Ok(*dim),
            FeatureSource::FeatureFile { path } => Ok(load_feature_file(path)?.dim()),
        }
    }

    /// The source and the recommender agree on the feature length.
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 {
            return Err(HarnessError::Config("image size must be positive".into()));
        }
        let dim = self.source_dim()?;
        if dim != self.rec.image_feature_dim {
            return Err(HarnessError::Config(format!(
                "the {} source yields {dim}-long features but image_feature_dim is {}",
                self.feature_source.name(),
                self.rec.image_feature_dim
            )));
        }
        Ok(())
    }
}

/// Outputs of every stage before the recommender.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub split: SplitDir,
    pub features_path: PathBuf,
    pub cae_history: Option<TrainHistory>,
    pub wall_times: BTreeMap<String, f64>,
}

fn timed<T>(times: &mut BTreeMap<String, f64>, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let clock = WallClock::start();
    let out = f()?;
    times.insert(stage.to_string(), clock.elapsed_secs());
    Ok(out)
}

/// Runs everything up to and including feature extraction.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let config = config.effective();
    config.validate().stage("config")?;
    let out = &config.out_dir;
    let mut times = BTreeMap::new();

    let split = timed(&mut times, "split", || {
        let split = stages::split_manifest(&config.data_dir.join(MANIFEST_FILE), config.seed)?;
        split.write(&out.join("split"))?;
        Ok(split)
    })
    .stage("split")?;

    let cae = match config.feature_source {
        FeatureSource::Cae => Some(
            timed(&mut times, "train-cae", || {
                let (model, history) = stages::train_cae_on_split(&split, &config.cae, &WallClock::start())?;
                save_cae(&model, &out.join("cae/cae.ckpt"))?;
                let json = serde_json::to_string_pretty(&history).expect("history serializes");
                error::write(&out.join("cae/history.json"), json.as_bytes())?;
                Ok((model, history))
            })
            .stage("train-cae")?,
        ),
        _ => None,
    };

    let augmented = timed(&mut times, "augment", || {
        let dir = out.join("augmented");
        let augmented = stages::augment(&split, &dir)?;
        augmented.write(&dir)?;
        Ok(augmented)
    })
    .stage("augment")?;

    let features_path = timed(&mut times, "extract", || {
        let table = match &config.feature_source {
            FeatureSource::Cae => stages::extract_cae_features(&cae.as_ref().expect("trained above").0, &augmented)?,
            FeatureSource::RandomProjection { dim } => {
                stages::extract_projection_features(&augmented, config.image_size, *dim, config.seed)?
            }
            FeatureSource::FeatureFile { path } => {
                let table = load_feature_file(path)?;
                stages::check_features(&augmented.split, &table, config.rec.image_feature_dim)?;
                return Ok(path.clone());
            }
        };
        let path = out.join("features.tsv");
        write_feature_file(&table, &path)?;
        Ok(path)
    })
    .stage("extract")?;

    Ok(Prepared {
        config,
        split: augmented,
        features_path,
        cae_history: cae.map(|(_, h)| h),
        wall_times: times,
    })
}

fn load_features(prepared: &Prepared) -> Result<(FeatureTable, String)> {
    let (table, checksum) = load_feature_file_checked(&prepared.features_path)?;
    stages::check_features(&prepared.split.split, &table, prepared.config.rec.image_feature_dim)?;
    Ok((table, checksum))
}

/// Trains the recommender on prepared features, evaluates it and writes the
/// checkpoint and report.
pub fn finish_experiment(prepared: &Prepared) -> Result<RunReport> {
    let config = &prepared.config;
    let out = &config.out_dir;
    let mut times = prepared.wall_times.clone();
    let (features, checksum) = load_features(prepared).stage("train-rec")?;
    let rec_config = stages::fit_rec_config(&config.rec, &prepared.split.split, &features);
    let outcome = timed(&mut times, "train-rec", || {
        let outcome = stages::train_rec_on_split(&prepared.split.split, &features, &rec_config, &WallClock::start())?;
        save_recommender(&outcome.model, &out.join("rec/rec.ckpt"))?;
        Ok(outcome)
    })
    .stage("train-rec")?;
    let mut warnings = outcome.history.warnings.clone();
    if !outcome.metrics.contains_key(Partition::Test.name()) {
        warnings.push("the test partition is empty".into());
    }
    let report = RunReport {
        seed: config.seed,
        image_size: config.image_size,
        config: ExperimentConfig { rec: rec_config, ..config.clone() },
        feature_checksum: checksum,
        metrics: outcome.metrics,
        cae_history: prepared.cae_history.clone(),
        rec_history: outcome.history,
        wall_times: times,
        warnings,
    };
    write_report(&report, &out.join("report.json")).stage("report")?;
    Ok(report)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    finish_experiment(&prepare(config)?)
}

/// One recommender per block count on the same split, features and seed,
/// each checkpointed under `out_dir/ablation/`.
pub fn ablation_columns(
    split: &SplitDir,
    features_path: &Path,
    base: &RecConfig,
    block_counts: &[usize],
    out_dir: &Path,
) -> Result<Vec<AblationColumn>> {
    if block_counts.is_empty() {
        return Err(HarnessError::Config("no block counts given".into()));
    }
    let mut columns = Vec::with_capacity(block_counts.len());
    for &blocks in block_counts {
        // each variant reads the feature file itself, so its checksum shows
        // what it actually consumed
        let (features, checksum) = load_feature_file_checked(features_path)?;
        let rec = RecConfig { n_reduce_blocks: blocks, ..stages::fit_rec_config(base, &split.split, &features) };
        let outcome = stages::train_rec_on_split(&split.split, &features, &rec, &WallClock::start())?;
        save_recommender(&outcome.model, &out_dir.join(format!("ablation/{blocks}rb.ckpt")))?;
        let metrics = *outcome
            .metrics
            .get(Partition::Test.name())
            .ok_or_else(|| HarnessError::Config("the test partition is empty".into()))?;
        columns.push(AblationColumn { n_reduce_blocks: blocks, feature_checksum: checksum, metrics, history: outcome.history });
    }
    Ok(columns)
}

/// Ablation over prepared features; writes `ablation.json` and `ablation.txt`.
pub fn run_ablation_prepared(prepared: &Prepared, block_counts: &[usize]) -> Result<AblationReport> {
    let config = &prepared.config;
    let columns =
        ablation_columns(&prepared.split, &prepared.features_path, &config.rec, block_counts, &config.out_dir)
            .stage("ablation")?;
    let report = AblationReport {
        seed: config.seed,
        image_size: Some(config.image_size),
        rec: config.rec.clone(),
        experiment: Some(config.clone()),
        partition: Partition::Test.name().to_string(),
        columns,
    };
    write_ablation_report(&report, &config.out_dir.join("ablation.json")).stage("report")?;
    Ok(report)
}

pub fn run_ablation(config: &ExperimentConfig, block_counts: &[usize]) -> Result<AblationReport> {
    run_ablation_prepared(&prepare(config)?, block_counts)
}

/// Path of the report written by [`run_experiment`].
pub fn report_path(out_dir: &Path) -> PathBuf {
    out_dir.join("report.json")
}
