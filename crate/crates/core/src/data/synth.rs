//! Seeded synthetic review data with controllable visual signal.
//!
//! Every restaurant has a latent quality and a striped base texture. A review
//! score is `signal * quality + sqrt(1 - signal^2) * noise`; scores are cut at
//! the empirical quantile that yields the requested positive:negative ratio,
//! then split further into star levels. An image blends the restaurant texture
//! with a brightness that rises with the stars:
//! `(1 - signal) * texture + signal * brightness(stars) + pixel noise`.
//! With `signal = 0` neither images nor identities carry label information.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::RngState;

use super::{Image, ReviewRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_restaurants: usize,
    /// Inclusive range of reviews written per user.
    pub reviews_per_user: (usize, usize),
    /// Inclusive range of images attached to each review.
    pub images_per_review: (usize, usize),
    /// Target positive:negative ratio.
    pub ratio: f64,
    /// How strongly labels show up in images, in `[0, 1]`.
    pub signal: f64,
    /// Side length of the square images.
    pub image_size: usize,
    /// Standard deviation of per-pixel noise.
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_restaurants: 20,
            reviews_per_user: (1, 6),
            images_per_review: (1, 2),
            ratio: 6.0,
            signal: 0.9,
            image_size: 32,
            pixel_noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0) || !self.ratio.is_finite() {
            return Err(invalid!("ratio must be positive, got {}", self.ratio));
        }
        if !(0.0..=1.0).contains(&self.signal) {
            return Err(invalid!("signal strength must be in [0, 1], got {}", self.signal));
        }
        if self.n_users == 0 || self.n_restaurants == 0 || self.image_size == 0 {
            return Err(invalid!("users, restaurants and image size must be positive"));
        }
        let (lo, hi) = self.reviews_per_user;
        let (ilo, ihi) = self.images_per_review;
        if lo == 0 || lo > hi || ilo == 0 || ilo > ihi {
            return Err(invalid!("review and image count ranges must be nonempty and start at 1 or more"));
        }
        if !(self.pixel_noise >= 0.0) {
            return Err(invalid!("pixel noise must be non-negative"));
        }
        Ok(())
    }
}

fn restaurant_id(i: usize) -> alloc::string::String {
    format!("R{i:03}")
}

/// Latent quality per restaurant, in index order.
pub fn restaurant_qualities(config: &SynthConfig) -> Vec<f64> {
    let root = RngState::new(config.seed);
    (0..config.n_restaurants)
        .map(|r| root.substream_indexed("quality", &[r as u64]).normal())
        .collect()
}

fn range(rng: &mut RngState, (lo, hi): (usize, usize)) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// The manifest of a synthetic dataset. Image files are produced separately
/// by [`render_image`].
pub fn generate_reviews(config: &SynthConfig) -> Result<Vec<ReviewRecord>> {
    config.validate()?;
    let root = RngState::new(config.seed);
    let quality = restaurant_qualities(config);
    let mut draft = Vec::new();
    let mut scores = Vec::new();
    let idio = libm::sqrt(1.0 - config.signal * config.signal);
    for u in 0..config.n_users {
        let mut rng = root.substream_indexed("user", &[u as u64]);
        let n_reviews = range(&mut rng, config.reviews_per_user);
        for _ in 0..n_reviews {
            let r = rng.below(config.n_restaurants);
            let n_images = range(&mut rng, config.images_per_review);
            let score = config.signal * quality[r] + idio * rng.normal();
            draft.push((u, r, n_images));
            scores.push(score);
        }
    }
    let n = scores.len();
    let n_pos = libm::round(n as f64 * config.ratio / (1.0 + config.ratio)) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let n_neg = n - n_pos;
    let mut stars = vec![0u8; n];
    for (rank, &i) in order.iter().enumerate() {
        stars[i] = if rank < n_neg {
            // terciles of the negatives map to 1, 2, 3 stars
            1 + (3 * rank / n_neg.max(1)) as u8
        } else {
            // lower half of the positives is 4 stars, upper half 5
            4 + (2 * (rank - n_neg) / n_pos.max(1)) as u8
        };
    }
    Ok(draft
        .into_iter()
        .zip(stars)
        .enumerate()
        .map(|(i, ((u, r, n_images), stars))| {
            let review_id = format!("r{i:05}");
            ReviewRecord {
                image_paths: (0..n_images).map(|k| format!("images/{review_id}_{k}.ppm")).collect(),
                review_id,
                user_id: format!("u{u:04}"),
                restaurant_id: restaurant_id(r),
                stars,
                timestamp: None,
            }
        })
        .collect())
}

struct Texture {
    base: [f64; 3],
    freq: f64,
    angle: f64,
    phase: f64,
}

fn texture(config: &SynthConfig, restaurant: usize) -> Texture {
    let mut rng = RngState::new(config.seed).substream_indexed("texture", &[restaurant as u64]);
    Texture {
        base: [rng.uniform_range(0.2, 0.8), rng.uniform_range(0.2, 0.8), rng.uniform_range(0.2, 0.8)],
        freq: rng.uniform_range(1.0, 4.0),
        angle: rng.uniform_range(0.0, core::f64::consts::PI),
        phase: rng.uniform_range(0.0, core::f64::consts::TAU),
    }
}

fn brightness(stars: u8) -> f64 {
    0.15 + 0.175 * f64::from(stars - 1)
}

/// Image `index` of `review`, deterministic per `(seed, review_id, index)`.
pub fn render_image(config: &SynthConfig, review: &ReviewRecord, index: usize) -> Result<Image> {
    review.validate()?;
    let restaurant = review
        .restaurant_id
        .strip_prefix('R')
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&r| r < config.n_restaurants)
        .ok_or_else(|| invalid!("'{}' is not a synthetic restaurant id", review.restaurant_id))?;
    let tex = texture(config, restaurant);
    let mut rng = RngState::new(config.seed).substream_indexed(&format!("image:{}", review.review_id), &[index as u64]);
    let n = config.image_size;
    let light = brightness(review.stars);
    let s = config.signal;
    let (sin, cos) = libm::sincos(tex.angle);
    let mut data = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let t = (x as f64 * cos + y as f64 * sin) / n as f64;
            let stripe = 0.25 * libm::sin(core::f64::consts::TAU * tex.freq * t + tex.phase);
            for c in 0..3 {
                let tv = (tex.base[c] + stripe).clamp(0.0, 1.0);
                let v = (1.0 - s) * tv + s * light + config.pixel_noise * rng.normal();
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Image::new(n, n, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn realized_ratio_near_target() {
        let cfg = SynthConfig { n_users: 200, ratio: 6.0, ..SynthConfig::default() };
        let reviews = generate_reviews(&cfg).unwrap();
        let pos = reviews.iter().filter(|r| r.stars >= 4).count() as f64;
        let neg = reviews.len() as f64 - pos;
        let realized = pos / neg;
        assert!((5.4..=6.6).contains(&realized), "{realized}");
    }

    #[test]
    fn infeasible_ratio_rejected() {
        for ratio in [0.0, -1.0, f64::NAN] {
            let cfg = SynthConfig { ratio, ..SynthConfig::default() };
            assert!(generate_reviews(&cfg).is_err());
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig { n_users: 20, image_size: 8, ..SynthConfig::default() };
        let a = generate_reviews(&cfg).unwrap();
        assert_eq!(a, generate_reviews(&cfg).unwrap());
        let ia = render_image(&cfg, &a[0], 0).unwrap();
        assert_eq!(ia, render_image(&cfg, &a[0], 0).unwrap());
        assert_ne!(ia, render_image(&cfg, &a[0], 1).unwrap());
    }

    #[test]
    fn stars_cover_all_levels() {
        let reviews = generate_reviews(&SynthConfig::default()).unwrap();
        for s in 1..=5 {
            assert!(reviews.iter().any(|r| r.stars == s), "no {s}-star review");
        }
    }
}
