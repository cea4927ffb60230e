//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use triadrec_core::cae::CaeConfig;
use triadrec_core::data::{Partition, SynthConfig};
use triadrec_core::nn::LossKind;
use triadrec_core::recmodel::RecConfig;

use crate::checkpoint::{load_cae, load_recommender, save_cae, save_recommender};
use crate::error::{self, HarnessError, Result, StageExt};
use crate::features::{load_feature_file, load_feature_file_checked, write_feature_file};
use crate::pipeline::{ablation_columns, run_ablation, run_experiment, ExperimentConfig, FeatureSource};
use crate::report::{metric_table, write_ablation_report, AblationReport};
use crate::splitfile::SplitDir;
use crate::stages::{self, WallClock};

#[derive(Parser, Debug)]
#[command(name = "triadrec", version, about = "Triad recommender experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic manifest and its images
    Synth(SynthArgs),
    /// Split a manifest into train, validation and test
    Split(SplitArgs),
    /// Over-sample the minority class of the train partition
    Augment(AugmentArgs),
    /// Train the convolutional autoencoder
    TrainCae(TrainCaeArgs),
    /// Encode every image of a split with a trained autoencoder
    Extract(ExtractArgs),
    /// Train the recommender on a feature file
    TrainRec(TrainRecArgs),
    /// Evaluate a recommender checkpoint on one partition
    Evaluate(EvaluateArgs),
    /// Learning rate by embedding size grid on the validation B-score
    GridSearch(GridArgs),
    /// Compare reduce-block counts on identical data
    Ablation(AblationArgs),
    /// Full pipeline from a data directory
    Run(RunArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub users: usize,
    #[arg(long, default_value_t = 20)]
    pub restaurants: usize,
    /// Target positive:negative ratio
    #[arg(long, default_value_t = 6.0)]
    pub ratio: f64,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Visual signal strength in [0, 1]
    #[arg(long, default_value_t = 0.9)]
    pub signal: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 1)]
    pub min_reviews: usize,
    #[arg(long, default_value_t = 6)]
    pub max_reviews: usize,
    #[arg(long, default_value_t = 1)]
    pub min_images: usize,
    #[arg(long, default_value_t = 2)]
    pub max_images: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Loss {
    Bce,
    Mse,
}

#[derive(Args, Debug)]
pub struct TrainCaeArgs {
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 6)]
    pub patience: usize,
    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Images are resized to size×size
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, value_enum, default_value_t = Loss::Bce)]
    pub loss: Loss,
    /// Divides every hidden channel count
    #[arg(long, default_value_t = 1)]
    pub channel_divisor: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[arg(long)]
    pub cae: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Recommender training flags shared by several commands.
#[derive(Args, Debug, Clone)]
pub struct RecArgs {
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 12)]
    pub patience: usize,
    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl RecArgs {
    fn config(&self, embed_dim: usize, n_reduce_blocks: usize) -> RecConfig {
        RecConfig {
            embed_dim,
            n_reduce_blocks,
            dropout_p: self.dropout,
            learning_rate: self.lr,
            batch_size: self.batch,
            patience: self.patience,
            max_epochs: self.max_epochs,
            decision_threshold: self.threshold,
            seed: self.seed,
            ..RecConfig::default()
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainRecArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value_t = 512)]
    pub embed: usize,
    #[arg(long, default_value_t = 2)]
    pub reduce_blocks: usize,
    #[command(flatten)]
    pub rec: RecArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value = "test")]
    pub partition: String,
    /// Also write the metrics as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long = "lr", value_delimiter = ',', default_values_t = vec![0.001, 0.0001])]
    pub lrs: Vec<f64>,
    #[arg(long = "embed", value_delimiter = ',', default_values_t = vec![128, 256, 512])]
    pub embeds: Vec<usize>,
    #[arg(long, default_value_t = 6)]
    pub patience: usize,
    #[arg(long, default_value_t = 2)]
    pub reduce_blocks: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the grid as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblationArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long = "reduce-blocks", value_delimiter = ',', default_values_t = vec![1, 2])]
    pub block_counts: Vec<usize>,
    #[arg(long, default_value_t = 512)]
    pub embed: usize,
    #[command(flatten)]
    pub rec: RecArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Source {
    Cae,
    FeatureFile,
    RandomProjection,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Directory with manifest.jsonl and the images
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 16)]
    pub embed: usize,
    #[arg(long, default_value_t = 2)]
    pub reduce_blocks: usize,
    #[arg(long, value_enum, default_value_t = Source::Cae)]
    pub feature_source: Source,
    /// Vectors for --feature-source feature-file
    #[arg(long)]
    pub feature_file: Option<PathBuf>,
    /// Output length for --feature-source random-projection
    #[arg(long, default_value_t = 48)]
    pub projection_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub cae_batch: usize,
    #[arg(long, default_value_t = 6)]
    pub cae_patience: usize,
    #[arg(long, default_value_t = 100)]
    pub cae_max_epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub cae_lr: f64,
    #[arg(long, value_enum, default_value_t = Loss::Bce)]
    pub cae_loss: Loss,
    #[arg(long, default_value_t = 1)]
    pub channel_divisor: usize,
    /// Run the block-count ablation instead of a single experiment
    #[arg(long, value_delimiter = ',')]
    pub ablation: Option<Vec<usize>>,
    #[command(flatten)]
    pub rec: RecArgs,
}

fn loss_kind(l: Loss) -> LossKind {
    match l {
        Loss::Bce => LossKind::Bce,
        Loss::Mse => LossKind::Mse,
    }
}

impl RunArgs {
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let cae = CaeConfig {
            input_height: self.size,
            input_width: self.size,
            loss: loss_kind(self.cae_loss),
            batch_size: self.cae_batch,
            patience: self.cae_patience,
            max_epochs: self.cae_max_epochs,
            learning_rate: self.cae_lr,
            channel_divisor: self.channel_divisor,
            seed: self.rec.seed,
        };
        let feature_source = match self.feature_source {
            Source::Cae => FeatureSource::Cae,
            Source::RandomProjection => FeatureSource::RandomProjection { dim: self.projection_dim },
            Source::FeatureFile => FeatureSource::FeatureFile {
                path: self
                    .feature_file
                    .clone()
                    .ok_or_else(|| HarnessError::Config("--feature-file is required with this source".into()))?,
            },
        };
        let mut config = ExperimentConfig {
            data_dir: self.data.clone(),
            out_dir: self.out.clone(),
            image_size: self.size,
            cae,
            rec: self.rec.config(self.embed, self.reduce_blocks),
            feature_source,
            seed: self.rec.seed,
        };
        config.rec.image_feature_dim = match &config.feature_source {
            // the file is checked against itself here; vectors of another
            // length inside it fail when it is parsed
            FeatureSource::FeatureFile { path } => load_feature_file(path)?.dim(),
            _ => config.source_dim()?,
        };
        Ok(config)
    }
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    error::write(path, serde_json::to_string_pretty(value).expect("serializable").as_bytes())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_users: a.users,
        n_restaurants: a.restaurants,
        reviews_per_user: (a.min_reviews, a.max_reviews),
        images_per_review: (a.min_images, a.max_images),
        ratio: a.ratio,
        signal: a.signal,
        image_size: a.size,
        pixel_noise: a.noise,
        seed: a.seed,
    };
    let reviews = stages::write_synthetic(&config, &a.out)?;
    let pos = reviews.iter().filter(|r| r.stars >= 4).count();
    eprintln!(
        "wrote {} reviews ({pos} positive, {} negative) to {}",
        reviews.len(),
        reviews.len() - pos,
        a.out.display()
    );
    Ok(())
}

fn split(a: &SplitArgs) -> Result<()> {
    let split = stages::split_manifest(&a.manifest, a.seed)?;
    split.write(&a.out)?;
    for p in [Partition::Train, Partition::Validation, Partition::Test] {
        eprintln!(
            "{:<10} {} images ({} positive)",
            p.name(),
            split.split.partition(p).count(),
            split.split.count(p, 1)
        );
    }
    Ok(())
}

fn augment(a: &AugmentArgs) -> Result<()> {
    let split = SplitDir::read(&a.split)?;
    let augmented = stages::augment(&split, &a.out)?;
    augmented.write(&a.out)?;
    eprintln!(
        "train: {} positive, {} negative after augmentation",
        augmented.split.count(Partition::Train, 1),
        augmented.split.count(Partition::Train, 0)
    );
    Ok(())
}

fn train_cae(a: &TrainCaeArgs) -> Result<()> {
    let split = SplitDir::read(&a.split)?;
    let config = CaeConfig {
        input_height: a.size,
        input_width: a.size,
        loss: loss_kind(a.loss),
        batch_size: a.batch,
        patience: a.patience,
        max_epochs: a.max_epochs,
        learning_rate: a.lr,
        channel_divisor: a.channel_divisor,
        seed: a.seed,
    };
    let (model, history) = stages::train_cae_on_split(&split, &config, &WallClock::start())?;
    save_cae(&model, &a.out.join("cae.ckpt"))?;
    write_json(&history, &a.out.join("history.json"))?;
    eprintln!(
        "best {} {:.6} at epoch {} of {}",
        history.monitored,
        history.best_loss,
        history.best_epoch,
        history.epochs()
    );
    Ok(())
}

fn extract(a: &ExtractArgs) -> Result<()> {
    let model = load_cae(&a.cae)?;
    let split = SplitDir::read(&a.split)?;
    let table = stages::extract_cae_features(&model, &split)?;
    write_feature_file(&table, &a.out)?;
    eprintln!("{} vectors of length {}", table.len(), table.dim());
    Ok(())
}

fn train_rec(a: &TrainRecArgs) -> Result<()> {
    let split = SplitDir::read(&a.split)?;
    let features = load_feature_file(&a.features)?;
    let config = stages::fit_rec_config(&a.rec.config(a.embed, a.reduce_blocks), &split.split, &features);
    let outcome = stages::train_rec_on_split(&split.split, &features, &config, &WallClock::start())?;
    save_recommender(&outcome.model, &a.out.join("rec.ckpt"))?;
    write_json(&outcome.history, &a.out.join("history.json"))?;
    write_json(&outcome.metrics, &a.out.join("metrics.json"))?;
    let cols: Vec<_> = outcome.metrics.iter().map(|(k, v)| (k.as_str(), v)).collect();
    println!("best epoch {} of {}", outcome.history.best_epoch, outcome.history.epochs());
    print!("{}", metric_table(&cols));
    for w in &outcome.history.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let model = load_recommender(&a.model)?;
    let split = SplitDir::read(&a.split)?;
    let features = load_feature_file(&a.features)?;
    let partition = Partition::parse(&a.partition)?;
    stages::check_features(&split.split, &features, model.config.image_feature_dim)?;
    let metrics = stages::evaluate_partition(&model, &split.split, &features, partition)?;
    print!("{}", metric_table(&[(partition.name(), &metrics)]));
    if let Some(out) = &a.out {
        write_json(&metrics, out)?;
    }
    Ok(())
}

fn grid(a: &GridArgs) -> Result<()> {
    let split = SplitDir::read(&a.split)?;
    let features = load_feature_file(&a.features)?;
    let base = RecConfig {
        n_reduce_blocks: a.reduce_blocks,
        batch_size: a.batch,
        patience: a.patience,
        max_epochs: a.max_epochs,
        decision_threshold: a.threshold,
        seed: a.seed,
        ..RecConfig::default()
    };
    let base = stages::fit_rec_config(&base, &split.split, &features);
    let result = stages::grid_search_on_split(&split.split, &features, &base, &a.lrs, &a.embeds, &WallClock::start())?;
    println!("{:>10} {:>6} {:>10} {:>6}", "lr", "embed", "val B", "epoch");
    for r in &result.rows {
        println!("{:>10} {:>6} {:>10.4} {:>6}", r.learning_rate, r.embed_dim, r.val_b_score, r.best_epoch);
    }
    println!("best: lr {} embed {}", result.best_learning_rate, result.best_embed_dim);
    if let Some(out) = &a.out {
        write_json(&result, out)?;
    }
    Ok(())
}

fn ablation(a: &AblationArgs) -> Result<()> {
    let split = SplitDir::read(&a.split)?;
    let (features, _) = load_feature_file_checked(&a.features)?;
    let base = stages::fit_rec_config(&a.rec.config(a.embed, 2), &split.split, &features);
    let columns = ablation_columns(&split, &a.features, &base, &a.block_counts, &a.out)?;
    let report = AblationReport {
        seed: a.rec.seed,
        image_size: None,
        rec: base,
        experiment: None,
        partition: Partition::Test.name().to_string(),
        columns,
    };
    write_ablation_report(&report, &a.out.join("ablation.json"))?;
    print!("{}", report.table());
    Ok(())
}

fn run(a: &RunArgs) -> Result<()> {
    let config = a.experiment()?;
    match &a.ablation {
        Some(counts) => print!("{}", run_ablation(&config, counts)?.table()),
        None => print!("{}", run_experiment(&config)?.table()),
    }
    Ok(())
}

/// Runs one command; errors come back tagged with the command name.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a).stage("synth"),
        Command::Split(a) => split(a).stage("split"),
        Command::Augment(a) => augment(a).stage("augment"),
        Command::TrainCae(a) => train_cae(a).stage("train-cae"),
        Command::Extract(a) => extract(a).stage("extract"),
        Command::TrainRec(a) => train_rec(a).stage("train-rec"),
        Command::Evaluate(a) => evaluate(a).stage("evaluate"),
        Command::GridSearch(a) => grid(a).stage("grid-search"),
        Command::Ablation(a) => ablation(a).stage("ablation"),
        // pipeline errors already carry their stage
        Command::Run(a) => run(a),
    }
}
