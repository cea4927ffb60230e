//! The triad classifier: (user, restaurant, image features) to a like
//! probability.
//!
//! User and restaurant ids index embedding tables; the image feature vector
//! goes through a linear layer of the same width. The three vectors are
//! concatenated in that order, then pass through batch norm, a dense layer to
//! `2d`, the reduce blocks (dense halving, dropout, ReLU), one more halving
//! dense layer with ReLU, and a single sigmoid unit.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::metrics::{evaluate, EarlyStopState, Goal, MetricsReport};
use crate::nn::ops::{embedding_backward, embedding_lookup_batch};
use crate::nn::{
    batch_ranges, he_uniform_init, loss_eval, Adam, BatchNorm, Dense, Dropout, Layer, LayerMode, LossKind,
    Parameter, Sequential,
};
use crate::rng::RngState;
use crate::tensor::{Scalar, Tensor};
use crate::Clock;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecConfig {
    pub n_users: usize,
    pub n_restaurants: usize,
    pub embed_dim: usize,
    pub image_feature_dim: usize,
    pub n_reduce_blocks: usize,
    pub dropout_p: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub decision_threshold: f64,
    pub seed: u64,
}

impl Default for RecConfig {
    fn default() -> Self {
        Self {
            n_users: 1,
            n_restaurants: 1,
            embed_dim: 512,
            image_feature_dim: 2352,
            n_reduce_blocks: 2,
            dropout_p: 0.5,
            learning_rate: 0.001,
            batch_size: 32,
            patience: 12,
            max_epochs: 100,
            decision_threshold: 0.5,
            seed: 0,
        }
    }
}

impl RecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_restaurants == 0 || self.image_feature_dim == 0 {
            return Err(invalid!("user count, restaurant count and feature width must be positive"));
        }
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(4) {
            return Err(invalid!("embed_dim must be a positive multiple of 4, got {}", self.embed_dim));
        }
        if !(1..=2).contains(&self.n_reduce_blocks) {
            return Err(invalid!("n_reduce_blocks must be 1 or 2, got {}", self.n_reduce_blocks));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(invalid!("dropout must lie in [0, 1), got {}", self.dropout_p));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid!("learning rate must be positive"));
        }
        if self.batch_size < 2 {
            return Err(invalid!("batch size must be at least 2 for batch norm"));
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return Err(invalid!("patience and max_epochs must be positive"));
        }
        if !self.decision_threshold.is_finite() {
            return Err(invalid!("decision threshold must be finite"));
        }
        Ok(())
    }
}

/// Triads in struct-of-arrays form. Features are stored row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriadBatch {
    pub users: Vec<usize>,
    pub restaurants: Vec<usize>,
    pub features: Vec<f32>,
    pub feature_dim: usize,
    pub labels: Vec<u8>,
}

impl TriadBatch {
    pub fn new(
        users: Vec<usize>,
        restaurants: Vec<usize>,
        features: Vec<f32>,
        feature_dim: usize,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let n = labels.len();
        if users.len() != n || restaurants.len() != n || features.len() != n * feature_dim {
            return Err(shape_err!(
                "triad batch: {} users, {} restaurants, {} feature values of width {feature_dim}, {n} labels",
                users.len(),
                restaurants.len(),
                features.len()
            ));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(invalid!("labels must be 0 or 1"));
        }
        Ok(Self { users, restaurants, features, feature_dim, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// Rows `rows` in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut features = Vec::with_capacity(rows.len() * self.feature_dim);
        for &r in rows {
            features.extend_from_slice(self.feature(r));
        }
        Self {
            users: rows.iter().map(|&r| self.users[r]).collect(),
            restaurants: rows.iter().map(|&r| self.restaurants[r]).collect(),
            features,
            feature_dim: self.feature_dim,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecModel<T = f32> {
    pub config: RecConfig,
    pub user_table: Parameter<T>,
    pub restaurant_table: Parameter<T>,
    pub image_fc: Layer<T>,
    pub head: Sequential<T>,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

pub fn build_recommender<T: Scalar>(config: &RecConfig, rng: &mut RngState) -> Result<RecModel<T>> {
    config.validate()?;
    let d = config.embed_dim;
    let user_table = Parameter::new(he_uniform_init(&[config.n_users, d], d, rng)?);
    let restaurant_table = Parameter::new(he_uniform_init(&[config.n_restaurants, d], d, rng)?);
    let image_fc = Layer::Dense(Dense::new(config.image_feature_dim, d, rng)?);
    let mut head = Sequential::new();
    head.push("concat.bn", Layer::BatchNorm(BatchNorm::new(3 * d)));
    head.push("fc", Layer::Dense(Dense::new(3 * d, 2 * d, rng)?));
    let mut width = 2 * d;
    for b in 1..=config.n_reduce_blocks {
        head.push(format!("reduce{b}.fc"), Layer::Dense(Dense::new(width, width / 2, rng)?));
        head.push(format!("reduce{b}.dropout"), Layer::Dropout(Dropout::new(config.dropout_p)?));
        head.push(format!("reduce{b}.relu"), Layer::relu());
        width /= 2;
    }
    head.push("halve.fc", Layer::Dense(Dense::new(width, width / 2, rng)?));
    head.push("halve.relu", Layer::relu());
    head.push("out.fc", Layer::Dense(Dense::new(width / 2, 1, rng)?));
    head.push("out.sigmoid", Layer::sigmoid());
    Ok(RecModel { config: config.clone(), user_table, restaurant_table, image_fc, head, cache: None })
}

fn concat3<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, c: &Tensor<T>, n: usize, d: usize) -> Result<Tensor<T>> {
    let mut out = Vec::with_capacity(n * 3 * d);
    for i in 0..n {
        for t in [a, b, c] {
            out.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
    }
    Tensor::new(vec![n, 3 * d], out)
}

fn split3<T: Scalar>(g: &Tensor<T>, n: usize, d: usize) -> Result<[Tensor<T>; 3]> {
    let mut parts = [Vec::with_capacity(n * d), Vec::with_capacity(n * d), Vec::with_capacity(n * d)];
    for row in g.data().chunks(3 * d) {
        for (k, p) in parts.iter_mut().enumerate() {
            p.extend_from_slice(&row[k * d..(k + 1) * d]);
        }
    }
    let [a, b, c] = parts;
    Ok([Tensor::new(vec![n, d], a)?, Tensor::new(vec![n, d], b)?, Tensor::new(vec![n, d], c)?])
}

impl<T: Scalar> RecModel<T> {
    /// Input width of every dense layer in the head followed by the output
    /// width, e.g. `[3d, 2d, d, d/2, d/4, 1]` with two reduce blocks.
    pub fn layer_widths(&self) -> Vec<usize> {
        let dense: Vec<&Dense<T>> = self
            .head
            .layers()
            .iter()
            .filter_map(|(_, l)| match l {
                Layer::Dense(d) => Some(d),
                _ => None,
            })
            .collect();
        let mut w: Vec<usize> = dense.iter().map(|d| d.inputs()).collect();
        w.extend(dense.last().map(|d| d.outputs()));
        w
    }

    fn check(&self, batch: &TriadBatch) -> Result<()> {
        if batch.is_empty() {
            return Err(invalid!("empty triad batch"));
        }
        if batch.feature_dim != self.config.image_feature_dim {
            return Err(shape_err!(
                "image features have width {}, model expects {}",
                batch.feature_dim,
                self.config.image_feature_dim
            ));
        }
        if let Some(&u) = batch.users.iter().find(|&&u| u >= self.config.n_users) {
            return Err(invalid!("user index {u} out of range for {} users", self.config.n_users));
        }
        if let Some(&r) = batch.restaurants.iter().find(|&&r| r >= self.config.n_restaurants) {
            return Err(invalid!(
                "restaurant index {r} out of range for {} restaurants",
                self.config.n_restaurants
            ));
        }
        Ok(())
    }

    fn features(batch: &TriadBatch) -> Result<Tensor<T>> {
        Tensor::new(
            vec![batch.len(), batch.feature_dim],
            batch.features.iter().map(|&v| T::from_f64_lossy(f64::from(v))).collect(),
        )
    }

    /// Forward pass recording what [`RecModel::backward`] needs. Returns
    /// `batch x 1` probabilities.
    pub fn forward(&mut self, batch: &TriadBatch, mode: LayerMode, rng: &mut RngState) -> Result<Tensor<T>> {
        self.check(batch)?;
        let (n, d) = (batch.len(), self.config.embed_dim);
        let u = embedding_lookup_batch(&self.user_table.value, &batch.users)?;
        let r = embedding_lookup_batch(&self.restaurant_table.value, &batch.restaurants)?;
        let i = self.image_fc.forward(&Self::features(batch)?, mode, rng)?;
        let x = concat3(&u, &r, &i, n, d)?;
        let y = self.head.forward(&x, mode, rng)?;
        self.cache = Some((batch.users.clone(), batch.restaurants.clone()));
        Ok(y)
    }

    /// Accumulates gradients of every parameter from `d loss / d output`.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<()> {
        let (users, restaurants) =
            self.cache.take().ok_or_else(|| invalid!("recommender backward called without forward"))?;
        let (n, d) = (users.len(), self.config.embed_dim);
        let g = self.head.backward(grad)?;
        let [gu, gr, gi] = split3(&g, n, d)?;
        embedding_backward(&gu, &users, &mut self.user_table.grad)?;
        embedding_backward(&gr, &restaurants, &mut self.restaurant_table.grad)?;
        self.image_fc.backward(&gi)?;
        Ok(())
    }

    /// Inference-mode probabilities, one per triad. Mutates nothing.
    pub fn infer(&self, batch: &TriadBatch) -> Result<Vec<f64>> {
        self.check(batch)?;
        let (n, d) = (batch.len(), self.config.embed_dim);
        let u = embedding_lookup_batch(&self.user_table.value, &batch.users)?;
        let r = embedding_lookup_batch(&self.restaurant_table.value, &batch.restaurants)?;
        let i = self.image_fc.infer(&Self::features(batch)?)?;
        let y = self.head.infer(&concat3(&u, &r, &i, n, d)?)?;
        Ok(y.data().iter().map(|v| v.to_f64_lossy()).collect())
    }

    /// Probability and label (`1` iff probability >= threshold) of one triad.
    pub fn predict(&self, user: usize, restaurant: usize, image_feature: &[f32], threshold: f64) -> Result<(f64, u8)> {
        let batch = TriadBatch::new(vec![user], vec![restaurant], image_feature.to_vec(), image_feature.len(), vec![0])?;
        let p = self.infer(&batch)?[0];
        Ok((p, u8::from(p >= threshold)))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = vec![&mut self.user_table, &mut self.restaurant_table];
        out.extend(self.image_fc.params_mut());
        out.extend(self.head.params_mut());
        out
    }

    /// Persistent tensors under stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            (String::from("user_embedding"), &self.user_table.value),
            (String::from("restaurant_embedding"), &self.restaurant_table.value),
        ];
        for (n, t) in self.image_fc.tensors() {
            out.push((format!("image_fc.{n}"), t));
        }
        out.extend(self.head.named_tensors());
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![
            (String::from("user_embedding"), &mut self.user_table.value),
            (String::from("restaurant_embedding"), &mut self.restaurant_table.value),
        ];
        for (n, t) in self.image_fc.tensors_mut() {
            out.push((format!("image_fc.{n}"), t));
        }
        out.extend(self.head.named_tensors_mut());
        out
    }

    /// Same weights in another precision; caches and optimizer state dropped.
    pub fn cast<U: Scalar>(&self) -> RecModel<U> {
        RecModel {
            config: self.config.clone(),
            user_table: self.user_table.cast(),
            restaurant_table: self.restaurant_table.cast(),
            image_fc: self.image_fc.cast(),
            head: self.head.cast(),
            cache: None,
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
        self.image_fc.clear_cache();
        self.head.clear_cache();
    }
}

/// Free-function form of [`RecModel::forward`].
pub fn forward_batch<T: Scalar>(
    model: &mut RecModel<T>,
    batch: &TriadBatch,
    mode: LayerMode,
    rng: &mut RngState,
) -> Result<Tensor<T>> {
    model.forward(batch, mode, rng)
}

/// Inference-mode metrics on `batch` at the configured threshold.
pub fn evaluate_model<T: Scalar>(model: &RecModel<T>, batch: &TriadBatch) -> Result<MetricsReport> {
    let probs = predict_all(model, batch)?;
    evaluate(&probs, &batch.labels, model.config.decision_threshold)
}

/// Probabilities for a whole set, evaluated in chunks.
pub fn predict_all<T: Scalar>(model: &RecModel<T>, batch: &TriadBatch) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(batch.len());
    let rows: Vec<usize> = (0..batch.len()).collect();
    for chunk in rows.chunks(1024) {
        out.extend(model.infer(&batch.select(chunk))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecHistory {
    pub train_loss: Vec<f64>,
    /// The monitored validation score per epoch.
    pub val_b_score: Vec<f64>,
    pub wall_time: Vec<f64>,
    /// 1-based.
    pub best_epoch: usize,
    pub best_score: f64,
    pub warnings: Vec<String>,
}

impl RecHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }
}

/// Trains with binary cross-entropy and Adam, early-stopping on the validation
/// B-score, and restores the best epoch's weights.
pub fn train_recommender(
    mut model: RecModel<f32>,
    train: &TriadBatch,
    val: &TriadBatch,
    clock: &dyn Clock,
) -> Result<(RecModel<f32>, RecHistory)> {
    let config = model.config.clone();
    config.validate()?;
    if train.len() < 2 {
        return Err(invalid!("need at least 2 training triads, got {}", train.len()));
    }
    if val.is_empty() {
        return Err(invalid!("the validation set is empty"));
    }
    model.check(train)?;
    model.check(val)?;
    let adam = Adam::new(config.learning_rate)?;
    let root = RngState::new(config.seed).substream("rec-train");
    let mut stop: EarlyStopState<RecModel<f32>> = EarlyStopState::new(config.patience, Goal::Maximize)?;
    let mut history = RecHistory::default();
    let start = clock.elapsed_secs();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.max_epochs {
        let mut rng = root.substream_indexed("epoch", &[epoch as u64]);
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for range in batch_ranges(order.len(), config.batch_size) {
            let batch = train.select(&order[range.clone()]);
            let y = model.forward(&batch, LayerMode::Training, &mut rng)?;
            let target = Tensor::new(vec![batch.len(), 1], batch.labels.iter().map(|&l| f32::from(l)).collect())?;
            let (loss, grad) = loss_eval(&y, &target, LossKind::Bce)?;
            let loss = f64::from(loss);
            if !loss.is_finite() {
                return Err(invalid!("training loss became non-finite at epoch {epoch}"));
            }
            epoch_loss += loss * batch.len() as f64;
            for p in model.params_mut() {
                p.zero_grad();
            }
            model.backward(&grad)?;
            adam.step(&mut model.params_mut());
        }
        model.clear_cache();
        history.train_loss.push(epoch_loss / train.len() as f64);
        let report = evaluate_model(&model, val)?;
        let (score, vacuous) =
            report.monitored_b_score().ok_or_else(|| invalid!("validation B-score undefined"))?;
        if vacuous && history.warnings.is_empty() {
            history.warnings.push(String::from(
                "validation set holds a single class; monitoring the defined rate only",
            ));
        }
        history.val_b_score.push(score);
        history.wall_time.push(clock.elapsed_secs() - start);
        if !stop.update(score, epoch, || model.clone()) {
            break;
        }
    }
    match (stop.take_snapshot(), stop.best_epoch, stop.best_score) {
        (Some(best), Some(epoch), Some(score)) => {
            model = best;
            history.best_epoch = epoch;
            history.best_score = score;
        }
        _ => return Err(invalid!("no epoch produced a finite validation score")),
    }
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub learning_rate: f64,
    pub embed_dim: usize,
    pub val_b_score: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub best_learning_rate: f64,
    pub best_embed_dim: usize,
}

/// One training run per `(lr, embed_dim)` pair, all from the same seed. The
/// best pair maximizes the validation score; ties go to the smaller embedding
/// and then to the larger learning rate.
pub fn grid_search(
    train: &TriadBatch,
    val: &TriadBatch,
    lr_candidates: &[f64],
    embed_candidates: &[usize],
    config_base: &RecConfig,
    clock: &dyn Clock,
) -> Result<GridResult> {
    if lr_candidates.is_empty() || embed_candidates.is_empty() {
        return Err(invalid!("grid search needs at least one learning rate and one embedding size"));
    }
    let mut rows = Vec::new();
    for &lr in lr_candidates {
        for &embed in embed_candidates {
            let config = RecConfig { learning_rate: lr, embed_dim: embed, ..config_base.clone() };
            let model = build_recommender(&config, &mut RngState::new(config.seed).substream("rec-init"))?;
            let (_, h) = train_recommender(model, train, val, clock)?;
            rows.push(GridRow { learning_rate: lr, embed_dim: embed, val_b_score: h.best_score, best_epoch: h.best_epoch });
        }
    }
    let best = rows
        .iter()
        .max_by(|a, b| {
            a.val_b_score
                .total_cmp(&b.val_b_score)
                .then(b.embed_dim.cmp(&a.embed_dim))
                .then(a.learning_rate.total_cmp(&b.learning_rate))
        })
        .cloned()
        .ok_or_else(|| invalid!("empty grid"))?;
    Ok(GridResult { best_learning_rate: best.learning_rate, best_embed_dim: best.embed_dim, rows })
}
