//! Convolutional autoencoder used as the image feature extractor.
//!
//! Encoder: block(64), pool, block(32), pool, block(16), block(3), pool.
//! Decoder: block(16), up, block(32), up, block(64), up, conv(3), batch norm,
//! sigmoid. A block is a 3x3 "same" convolution, batch norm and ReLU.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{invalid, shape_err, Result};
use crate::metrics::{EarlyStopState, Goal};
use crate::nn::{batch_ranges, loss_eval, Adam, BatchNorm, Conv2d, Layer, LayerMode, LossKind, MaxPool2x2, Sequential, Upsample2x};
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::Clock;

/// Channels of the code, fixed by the architecture.
pub const CODE_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaeConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub loss: LossKind,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Divides the 64/32/16 hidden widths. 1 keeps the full architecture.
    #[serde(default = "one")]
    pub channel_divisor: usize,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl Default for CaeConfig {
    fn default() -> Self {
        Self {
            input_height: 32,
            input_width: 32,
            loss: LossKind::Bce,
            batch_size: 32,
            patience: 6,
            max_epochs: 100,
            learning_rate: 0.001,
            channel_divisor: 1,
            seed: 0,
        }
    }
}

impl CaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_height == 0 || self.input_width == 0 || !self.input_height.is_multiple_of(8) || !self.input_width.is_multiple_of(8) {
            return Err(invalid!(
                "input size {}x{} must be positive multiples of 8",
                self.input_height,
                self.input_width
            ));
        }
        if self.batch_size < 2 {
            return Err(invalid!("batch size must be at least 2 for batch norm"));
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return Err(invalid!("patience and max_epochs must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid!("learning rate must be positive"));
        }
        if self.channel_divisor == 0 || 16 % self.channel_divisor != 0 {
            return Err(invalid!("channel divisor must divide 16, got {}", self.channel_divisor));
        }
        Ok(())
    }

    /// Length of the flattened code: `3 * (H/8) * (W/8)`.
    pub fn code_len(&self) -> usize {
        CODE_CHANNELS * (self.input_height / 8) * (self.input_width / 8)
    }

    pub fn code_shape(&self) -> [usize; 3] {
        [CODE_CHANNELS, self.input_height / 8, self.input_width / 8]
    }
}

#[derive(Debug, Clone)]
pub struct CaeModel {
    pub config: CaeConfig,
    pub encoder: Sequential<f32>,
    pub decoder: Sequential<f32>,
}

fn block(seq: &mut Sequential<f32>, name: &str, cin: usize, cout: usize, rng: &mut RngState) -> Result<()> {
    seq.push(format!("{name}.conv"), Layer::Conv2d(Conv2d::new(cin, cout, rng)?));
    seq.push(format!("{name}.bn"), Layer::BatchNorm(BatchNorm::new(cout)));
    seq.push(format!("{name}.relu"), Layer::relu());
    Ok(())
}

pub fn build_cae(config: &CaeConfig, rng: &mut RngState) -> Result<CaeModel> {
    config.validate()?;
    let d = config.channel_divisor;
    let (c64, c32, c16) = (64 / d, 32 / d, 16 / d);
    let mut enc = Sequential::new();
    block(&mut enc, "enc1", 3, c64, rng)?;
    enc.push("enc1.pool", Layer::MaxPool(MaxPool2x2::default()));
    block(&mut enc, "enc2", c64, c32, rng)?;
    enc.push("enc2.pool", Layer::MaxPool(MaxPool2x2::default()));
    block(&mut enc, "enc3", c32, c16, rng)?;
    block(&mut enc, "enc4", c16, CODE_CHANNELS, rng)?;
    enc.push("enc4.pool", Layer::MaxPool(MaxPool2x2::default()));

    let mut dec = Sequential::new();
    block(&mut dec, "dec1", CODE_CHANNELS, c16, rng)?;
    dec.push("dec1.up", Layer::Upsample(Upsample2x));
    block(&mut dec, "dec2", c16, c32, rng)?;
    dec.push("dec2.up", Layer::Upsample(Upsample2x));
    block(&mut dec, "dec3", c32, c64, rng)?;
    dec.push("dec3.up", Layer::Upsample(Upsample2x));
    dec.push("out.conv", Layer::Conv2d(Conv2d::new(c64, 3, rng)?));
    dec.push("out.bn", Layer::BatchNorm(BatchNorm::new(3)));
    dec.push("out.sigmoid", Layer::sigmoid());
    Ok(CaeModel { config: config.clone(), encoder: enc, decoder: dec })
}

impl CaeModel {
    /// Layer kinds in order, encoder first.
    pub fn layer_kinds(&self) -> Vec<&'static str> {
        self.encoder
            .layers()
            .iter()
            .chain(self.decoder.layers())
            .map(|(_, l)| l.kind_name())
            .collect()
    }

    /// All persistent tensors, prefixed with `encoder.` or `decoder.`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out: Vec<(String, &Tensor<f32>)> = Vec::new();
        for (n, t) in self.encoder.named_tensors() {
            out.push((format!("encoder.{n}"), t));
        }
        for (n, t) in self.decoder.named_tensors() {
            out.push((format!("decoder.{n}"), t));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<f32>)> {
        let mut out: Vec<(String, &mut Tensor<f32>)> = Vec::new();
        for (n, t) in self.encoder.named_tensors_mut() {
            out.push((format!("encoder.{n}"), t));
        }
        for (n, t) in self.decoder.named_tensors_mut() {
            out.push((format!("decoder.{n}"), t));
        }
        out
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        if image.height() != self.config.input_height || image.width() != self.config.input_width {
            return Err(shape_err!(
                "image is {}x{}, model expects {}x{}",
                image.height(),
                image.width(),
                self.config.input_height,
                self.config.input_width
            ));
        }
        Ok(())
    }

    fn batch_tensor(&self, images: &[&Image]) -> Result<Tensor<f32>> {
        let (h, w) = (self.config.input_height, self.config.input_width);
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for img in images {
            self.check_image(img)?;
            data.extend_from_slice(img.to_chw().data());
        }
        Tensor::new(alloc::vec![images.len(), 3, h, w], data)
    }

    /// Flattened codes for several images at once, in inference mode.
    pub fn encode_batch(&self, images: &[&Image]) -> Result<Vec<Vec<f32>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.batch_tensor(images)?;
        let code = self.encoder.infer(&x)?;
        let len = self.config.code_len();
        Ok(code.data().chunks(len).map(<[f32]>::to_vec).collect())
    }

    fn reconstruct_batch(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.decoder.infer(&self.encoder.infer(x)?)
    }

    fn clear_cache(&mut self) {
        self.encoder.clear_cache();
        self.decoder.clear_cache();
    }
}

/// Flattened code in channel, row, column order.
pub fn encode_image(model: &CaeModel, image: &Image) -> Result<Vec<f32>> {
    Ok(model.encode_batch(&[image])?.remove(0))
}

pub fn reconstruct_image(model: &CaeModel, image: &Image) -> Result<Image> {
    let x = model.batch_tensor(&[image])?;
    let y = model.reconstruct_batch(&x)?;
    Image::from_chw(&y.slice_outer(0)?)
}

/// Mean per-pixel reconstruction loss in inference mode.
pub fn reconstruction_loss(model: &CaeModel, images: &[Image]) -> Result<f64> {
    if images.is_empty() {
        return Err(invalid!("no images to evaluate"));
    }
    let mut total = 0.0;
    for chunk in images.chunks(model.config.batch_size) {
        let refs: Vec<&Image> = chunk.iter().collect();
        let x = model.batch_tensor(&refs)?;
        let y = model.reconstruct_batch(&x)?;
        let (loss, _) = loss_eval(&y, &x, model.config.loss)?;
        total += f64::from(loss) * chunk.len() as f64;
    }
    Ok(total / images.len() as f64)
}

/// Per-epoch record of a training run. Epoch numbers start at 1.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    /// Empty when no validation set was given.
    pub val_loss: Vec<f64>,
    /// Seconds since the start of training, read at the end of each epoch.
    pub wall_time: Vec<f64>,
    pub best_epoch: usize,
    pub best_loss: f64,
    /// `"val_loss"` or `"train_loss"`.
    pub monitored: String,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }
}

/// Trains on `train`, early-stopping on the validation loss (or on the
/// training loss when `val` is empty), then restores the best weights.
pub fn train_cae(
    mut model: CaeModel,
    train: &[Image],
    val: &[Image],
    clock: &dyn Clock,
) -> Result<(CaeModel, TrainHistory)> {
    let config = model.config.clone();
    config.validate()?;
    if train.len() < 2 {
        return Err(invalid!("the CAE needs at least 2 training images, got {}", train.len()));
    }
    for img in train.iter().chain(val) {
        model.check_image(img)?;
    }
    let adam = Adam::new(config.learning_rate)?;
    let root = RngState::new(config.seed).substream("cae-train");
    let mut stop: EarlyStopState<(Sequential<f32>, Sequential<f32>)> =
        EarlyStopState::new(config.patience, Goal::Minimize)?;
    let mut history = TrainHistory {
        monitored: String::from(if val.is_empty() { "train_loss" } else { "val_loss" }),
        ..TrainHistory::default()
    };
    let start = clock.elapsed_secs();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.max_epochs {
        let mut rng = root.substream_indexed("epoch", &[epoch as u64]);
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for range in batch_ranges(order.len(), config.batch_size) {
            let refs: Vec<&Image> = order[range.clone()].iter().map(|&i| &train[i]).collect();
            let x = model.batch_tensor(&refs)?;
            let code = model.encoder.forward(&x, LayerMode::Training, &mut rng)?;
            let y = model.decoder.forward(&code, LayerMode::Training, &mut rng)?;
            let (loss, grad) = loss_eval(&y, &x, config.loss)?;
            let loss = f64::from(loss);
            if !loss.is_finite() {
                return Err(invalid!("CAE training loss became non-finite at epoch {epoch}"));
            }
            epoch_loss += loss * range.len() as f64;
            for p in model.encoder.params_mut().into_iter().chain(model.decoder.params_mut()) {
                p.zero_grad();
            }
            let g = model.decoder.backward(&grad)?;
            model.encoder.backward_params(&g)?;
            let mut params = model.encoder.params_mut();
            params.extend(model.decoder.params_mut());
            adam.step(&mut params);
        }
        model.clear_cache();
        let train_loss = epoch_loss / train.len() as f64;
        history.train_loss.push(train_loss);
        let monitored = if val.is_empty() {
            train_loss
        } else {
            let v = reconstruction_loss(&model, val)?;
            history.val_loss.push(v);
            v
        };
        history.wall_time.push(clock.elapsed_secs() - start);
        let go_on = stop.update(monitored, epoch, || (model.encoder.clone(), model.decoder.clone()));
        if !go_on {
            break;
        }
    }
    if let (Some((enc, dec)), Some(best), Some(score)) = (stop.take_snapshot(), stop.best_epoch, stop.best_score) {
        model.encoder = enc;
        model.decoder = dec;
        history.best_epoch = best;
        history.best_loss = score;
    } else {
        return Err(invalid!("CAE training never produced a finite monitored loss"));
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(h: usize, w: usize) -> CaeConfig {
        CaeConfig { input_height: h, input_width: w, ..CaeConfig::default() }
    }

    #[test]
    fn architecture_matches_table() {
        let m = build_cae(&cfg(32, 32), &mut RngState::new(1)).unwrap();
        let kinds = m.layer_kinds();
        let block = ["conv3x3", "batchnorm", "relu"];
        let mut expected: Vec<&str> = Vec::new();
        for part in [
            &block[..], &["maxpool2x2"], &block, &["maxpool2x2"], &block, &block, &["maxpool2x2"],
            &block, &["upsample2x"], &block, &["upsample2x"], &block, &["upsample2x"],
            &["conv3x3", "batchnorm", "sigmoid"],
        ] {
            expected.extend_from_slice(part);
        }
        assert_eq!(kinds, expected);
    }

    #[test]
    fn rejects_sizes_not_divisible_by_8() {
        assert!(build_cae(&cfg(30, 30), &mut RngState::new(0)).is_err());
        assert!(build_cae(&cfg(32, 36), &mut RngState::new(0)).is_err());
    }

    #[test]
    fn shapes_and_range() {
        let m = build_cae(&cfg(32, 32), &mut RngState::new(2)).unwrap();
        let img = Image::black(32, 32);
        assert_eq!(encode_image(&m, &img).unwrap().len(), 48);
        let r = reconstruct_image(&m, &img).unwrap();
        assert_eq!((r.height(), r.width()), (32, 32));
        assert!(r.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(encode_image(&m, &img).unwrap(), encode_image(&m, &img).unwrap());
        assert!(encode_image(&m, &Image::black(16, 16)).is_err());
    }

    #[test]
    fn trailing_singleton_batch_is_merged() {
        assert_eq!(batch_ranges(33, 32), alloc::vec![0..33]);
        assert_eq!(batch_ranges(34, 32), alloc::vec![0..32, 32..34]);
        assert_eq!(batch_ranges(64, 32), alloc::vec![0..32, 32..64]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn code_dimension_formula(h in 1usize..=28, w in 1usize..=28) {
            // Narrow hidden widths keep the encoder pass cheap at 224x224.
            let c = CaeConfig { channel_divisor: 16, ..cfg(8 * h, 8 * w) };
            let m = build_cae(&c, &mut RngState::new(3)).unwrap();
            let code = encode_image(&m, &Image::black(8 * h, 8 * w)).unwrap();
            prop_assert_eq!(code.len(), 3 * h * w);
            prop_assert_eq!(c.code_len(), code.len());
        }
    }
}
