//! In-memory RGB images, bilinear resizing and the four augmentation
//! transforms.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Interleaved RGB (`height x width x 3`) with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid!("image dimensions must be positive, got {height}x{width}"));
        }
        if data.len() != height * width * 3 {
            return Err(invalid!("{height}x{width} RGB image needs {} values, got {}", height * width * 3, data.len()));
        }
        Ok(Self { height, width, data })
    }

    pub fn black(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width * 3] }
    }

    /// Divides 8-bit samples by 255.
    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| f32::from(b) / 255.0).collect())
    }

    /// Rounds to the nearest 8-bit level after clamping to `[0, 1]`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| libm::roundf(v.clamp(0.0, 1.0) * 255.0) as u8)
            .collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    /// Planar `3 x H x W` tensor for the networks.
    pub fn to_chw(&self) -> Tensor<f32> {
        let hw = self.height * self.width;
        let mut out = vec![0.0f32; 3 * hw];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * hw + i] = px[c];
            }
        }
        Tensor::new(vec![3, self.height, self.width], out).expect("consistent shape")
    }

    /// Inverse of [`Image::to_chw`]; expects `3 x H x W`.
    pub fn from_chw(t: &Tensor<f32>) -> Result<Self> {
        let (h, w) = match *t.shape() {
            [3, h, w] => (h, w),
            _ => return Err(invalid!("expected a 3 x H x W tensor, got {:?}", t.shape())),
        };
        let hw = h * w;
        let mut data = vec![0.0f32; 3 * hw];
        for i in 0..hw {
            for c in 0..3 {
                data[i * 3 + c] = t.data()[c * hw + i];
            }
        }
        Self::new(h, w, data)
    }

    /// Bilinear sample at a continuous pixel position; neighbors outside the
    /// image contribute 0.
    fn sample_zero(&self, y: f32, x: f32, c: usize) -> f32 {
        let (y0, x0) = (libm::floorf(y), libm::floorf(x));
        let (fy, fx) = (y - y0, x - x0);
        let mut acc = 0.0;
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let (yy, xx) = (y0 as i64 + dy, x0 as i64 + dx);
                let w = wy * wx;
                if w == 0.0 || yy < 0 || xx < 0 || yy >= self.height as i64 || xx >= self.width as i64 {
                    continue;
                }
                acc += w * self.get(yy as usize, xx as usize, c);
            }
        }
        acc
    }

    /// Bilinear sample with coordinates clamped to the image.
    fn sample_clamped(&self, y: f32, x: f32, c: usize) -> f32 {
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let (y0, x0) = (libm::floorf(y) as usize, libm::floorf(x) as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (fy, fx) = (y - y0 as f32, x - x0 as f32);
        let top = self.get(y0, x0, c) * (1.0 - fx) + self.get(y0, x1, c) * fx;
        let bottom = self.get(y1, x0, c) * (1.0 - fx) + self.get(y1, x1, c) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut img = Self::black(height, width);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    img.set(y, x, c, f(y, x, c));
                }
            }
        }
        img
    }
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_image(image: &Image, height: usize, width: usize) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(invalid!("resize target must be positive, got {height}x{width}"));
    }
    if height == image.height && width == image.width {
        return Ok(image.clone());
    }
    let sy = image.height as f32 / height as f32;
    let sx = image.width as f32 / width as f32;
    Ok(Image::from_fn(height, width, |y, x, c| {
        let src_y = (y as f32 + 0.5) * sy - 0.5;
        let src_x = (x as f32 + 0.5) * sx - 0.5;
        image.sample_clamped(src_y, src_x, c)
    }))
}

/// The four minority-class augmentations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// Rotation by -30 degrees about the center: with y pointing down, the
    /// content turns 30 degrees clockwise on screen. Bilinear, black fill.
    RotateM30,
    /// Mirror across the vertical axis (x coordinates reversed).
    FlipX,
    /// Bilinear zoom-in by 1.25 about the center, cropped to the input size.
    Rescale125,
    /// Shift 5 px right and 5 px down, black fill.
    Translate55,
}

impl Transform {
    pub const ALL: [Transform; 4] = [
        Transform::RotateM30,
        Transform::FlipX,
        Transform::Rescale125,
        Transform::Translate55,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Transform::RotateM30 => "rotate_m30",
            Transform::FlipX => "flip_x",
            Transform::Rescale125 => "rescale_125",
            Transform::Translate55 => "translate_5_5",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| invalid!("unknown transform '{s}'"))
    }

    pub fn origin(self) -> super::Origin {
        match self {
            Transform::RotateM30 => super::Origin::Rotated,
            Transform::FlipX => super::Origin::Flipped,
            Transform::Rescale125 => super::Origin::Rescaled,
            Transform::Translate55 => super::Origin::Translated,
        }
    }
}

/// Applies `kind`; the output has the input's size.
pub fn apply_transform(image: &Image, kind: Transform) -> Image {
    let (h, w) = (image.height, image.width);
    let cy = (h as f32 - 1.0) / 2.0;
    let cx = (w as f32 - 1.0) / 2.0;
    match kind {
        Transform::RotateM30 => {
            let (sin, cos) = libm::sincosf(30f32.to_radians());
            Image::from_fn(h, w, |y, x, c| {
                let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                let src_x = cx + cos * dx + sin * dy;
                let src_y = cy - sin * dx + cos * dy;
                image.sample_zero(src_y, src_x, c)
            })
        }
        Transform::FlipX => Image::from_fn(h, w, |y, x, c| image.get(y, w - 1 - x, c)),
        Transform::Rescale125 => Image::from_fn(h, w, |y, x, c| {
            let src_y = cy + (y as f32 - cy) / 1.25;
            let src_x = cx + (x as f32 - cx) / 1.25;
            image.sample_clamped(src_y, src_x, c)
        }),
        Transform::Translate55 => Image::from_fn(h, w, |y, x, c| {
            if y >= 5 && x >= 5 {
                image.get(y - 5, x - 5, c)
            } else {
                0.0
            }
        }),
    }
}
