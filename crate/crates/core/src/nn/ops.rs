//! Stateless forward/backward kernels.
//!
//! Image tensors are `N x C x H x W`; a 3-d `C x H x W` input is treated as a
//! batch of one and produces a 3-d result. Dense tensors are `batch x features`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err, Result};
use crate::rng::RngState;
use crate::tensor::{s, Scalar, Tensor};

use super::LayerMode;

#[derive(Debug, Clone, Copy)]
struct Nchw {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    batched: bool,
}

impl Nchw {
    fn of(shape: &[usize]) -> Result<Self> {
        match *shape {
            [c, h, w] => Ok(Self { n: 1, c, h, w, batched: false }),
            [n, c, h, w] => Ok(Self { n, c, h, w, batched: true }),
            _ => Err(shape_err!("expected a CHW or NCHW tensor, got {shape:?}")),
        }
    }

    fn shape(&self, c: usize, h: usize, w: usize) -> Vec<usize> {
        if self.batched {
            vec![self.n, c, h, w]
        } else {
            vec![c, h, w]
        }
    }
}

// ---------------------------------------------------------------------------
// 3x3 convolution, stride 1, zero "same" padding, no bias.

/// Upper bound on im2col buffer elements; larger batches are processed in
/// chunks.
const COLS_BUDGET: usize = 1 << 18;

/// Writes the 3x3 patches of one `c x h x w` image into columns
/// `offset..offset + h*w` of a `(c*9) x row_len` matrix.
fn im2col<T: Scalar>(img: &[T], c: usize, h: usize, w: usize, cols: &mut [T], row_len: usize, offset: usize) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &img[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ch * 9 + ky * 3 + kx) * row_len + offset..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

fn conv_dims<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(Nchw, usize)> {
    let dims = Nchw::of(input.shape())?;
    match *weight.shape() {
        [out_c, in_c, 3, 3] if in_c == dims.c => Ok((dims, out_c)),
        [_, in_c, 3, 3] => Err(invalid!(
            "conv2d: input has {} channels, weights expect {in_c}",
            dims.c
        )),
        _ => Err(invalid!("conv2d: weights must be OutC x InC x 3 x 3, got {:?}", weight.shape())),
    }
}

/// Images per im2col chunk.
fn chunk_len(d: &Nchw) -> usize {
    (COLS_BUDGET / (d.c * 9 * d.h * d.w).max(1)).clamp(1, d.n.max(1))
}

/// Fills `cols` with the patches of images `start..start + nb` side by side.
fn im2col_chunk<T: Scalar>(x: &[T], d: &Nchw, start: usize, nb: usize, cols: &mut [T]) {
    let chw = d.c * d.h * d.w;
    let hw = d.h * d.w;
    for i in 0..nb {
        let img = &x[(start + i) * chw..(start + i + 1) * chw];
        im2col(img, d.c, d.h, d.w, cols, nb * hw, i * hw);
    }
}

fn conv_forward_raw<T: Scalar>(x: &[T], d: &Nchw, weight: &[T], out_c: usize) -> Vec<T> {
    let hw = d.h * d.w;
    let k = d.c * 9;
    let per = chunk_len(d);
    let mut cols = vec![T::zero(); k * hw * per];
    let mut tmp = vec![T::zero(); out_c * hw * per];
    let mut out = vec![T::zero(); d.n * out_c * hw];
    for start in (0..d.n).step_by(per) {
        let nb = per.min(d.n - start);
        let width = nb * hw;
        im2col_chunk(x, d, start, nb, &mut cols);
        T::gemm(out_c, k, width, T::one(), weight, (k, 1), &cols, (width, 1), T::zero(), &mut tmp, (width, 1));
        for o in 0..out_c {
            for i in 0..nb {
                out[((start + i) * out_c + o) * hw..][..hw].copy_from_slice(&tmp[o * width + i * hw..][..hw]);
            }
        }
    }
    out
}

/// Cross-correlation with a 3x3 kernel; output keeps the spatial size.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, out_c) = conv_dims(input, weight)?;
    let out = conv_forward_raw(input.data(), &d, weight.data(), out_c);
    Tensor::new(d.shape(out_c, d.h, d.w), out)
}

/// Gradient of the loss with respect to the weights.
pub fn conv2d_weight_grad<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, out_c) = conv_dims(input, weight)?;
    if grad_out.shape() != d.shape(out_c, d.h, d.w).as_slice() {
        return Err(shape_err!("conv2d backward: grad_out {:?}", grad_out.shape()));
    }
    let hw = d.h * d.w;
    let k = d.c * 9;
    let per = chunk_len(&d);
    let mut cols = vec![T::zero(); k * hw * per];
    let mut gmat = vec![T::zero(); out_c * hw * per];
    let mut grad_w = vec![T::zero(); out_c * k];
    let g = grad_out.data();
    for start in (0..d.n).step_by(per) {
        let nb = per.min(d.n - start);
        let width = nb * hw;
        im2col_chunk(input.data(), &d, start, nb, &mut cols);
        for o in 0..out_c {
            for i in 0..nb {
                gmat[o * width + i * hw..][..hw].copy_from_slice(&g[((start + i) * out_c + o) * hw..][..hw]);
            }
        }
        // dW += G * cols^T
        T::gemm(out_c, width, k, T::one(), &gmat, (width, 1), &cols, (1, width), T::one(), &mut grad_w, (k, 1));
    }
    Tensor::new(weight.shape().to_vec(), grad_w)
}

/// Returns `(grad_input, grad_weight)`. The input gradient is the "same"
/// convolution of `grad_out` with the spatially flipped, channel-transposed
/// kernel.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let grad_w = conv2d_weight_grad(input, weight, grad_out)?;
    let (d, out_c) = conv_dims(input, weight)?;
    let w = weight.data();
    let mut flipped = vec![T::zero(); w.len()];
    for o in 0..out_c {
        for c in 0..d.c {
            for t in 0..9 {
                flipped[(c * out_c + o) * 9 + t] = w[(o * d.c + c) * 9 + (8 - t)];
            }
        }
    }
    let gd = Nchw { c: out_c, ..d };
    let grad_in = conv_forward_raw(grad_out.data(), &gd, &flipped, d.c);
    Ok((Tensor::new(input.shape().to_vec(), grad_in)?, grad_w))
}

// ---------------------------------------------------------------------------
// Pooling and upsampling.

/// 2x2 max pooling. Also returns, per output element, the flat input index
/// of the maximum; ties go to the first window element in row-major order.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let d = Nchw::of(input.shape())?;
    if d.h % 2 != 0 || d.w % 2 != 0 {
        return Err(invalid!("maxpool2x2: spatial dims must be even, got {}x{}", d.h, d.w));
    }
    let (oh, ow) = (d.h / 2, d.w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(d.n * d.c * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..d.n * d.c {
        let base = plane * d.h * d.w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = base + 2 * y * d.w + 2 * xo;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * d.w + 2 * xo + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(d.shape(d.c, oh, ow), out)?, argmax))
}

pub fn maxpool2x2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(shape_err!("maxpool2x2 backward: {} grads for {} windows", grad_out.len(), argmax.len()));
    }
    let mut grad_in = Tensor::zeros(input_shape);
    let g = grad_in.data_mut();
    for (&idx, &v) in argmax.iter().zip(grad_out.data()) {
        g[idx] += v;
    }
    Ok(grad_in)
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2x<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let d = Nchw::of(input.shape())?;
    let (oh, ow) = (d.h * 2, d.w * 2);
    let x = input.data();
    let mut out = vec![T::zero(); d.n * d.c * oh * ow];
    for plane in 0..d.n * d.c {
        let src = &x[plane * d.h * d.w..][..d.h * d.w];
        let dst = &mut out[plane * oh * ow..][..oh * ow];
        for y in 0..oh {
            for xo in 0..ow {
                dst[y * ow + xo] = src[(y / 2) * d.w + xo / 2];
            }
        }
    }
    Tensor::new(d.shape(d.c, oh, ow), out)
}

/// Sums `grad_out` over each 2x2 block.
pub fn upsample2x_backward<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let d = Nchw::of(grad_out.shape())?;
    if d.h % 2 != 0 || d.w % 2 != 0 {
        return Err(shape_err!("upsample2x backward: odd grad shape {:?}", grad_out.shape()));
    }
    let (ih, iw) = (d.h / 2, d.w / 2);
    let g = grad_out.data();
    let mut out = vec![T::zero(); d.n * d.c * ih * iw];
    for plane in 0..d.n * d.c {
        let src = &g[plane * d.h * d.w..][..d.h * d.w];
        let dst = &mut out[plane * ih * iw..][..ih * iw];
        for y in 0..d.h {
            for x in 0..d.w {
                dst[(y / 2) * iw + x / 2] += src[y * d.w + x];
            }
        }
    }
    Tensor::new(d.shape(d.c, ih, iw), out)
}

// ---------------------------------------------------------------------------
// Batch normalization.

/// Normalization layout: `n` samples, `c` normalized features, `spatial`
/// positions per feature (1 for dense inputs).
#[derive(Debug, Clone, Copy)]
struct BnLayout {
    n: usize,
    c: usize,
    spatial: usize,
}

impl BnLayout {
    fn of(shape: &[usize]) -> Result<Self> {
        match *shape {
            [n, c] => Ok(Self { n, c, spatial: 1 }),
            [n, c, h, w] => Ok(Self { n, c, spatial: h * w }),
            _ => Err(shape_err!("batchnorm expects N x F or N x C x H x W, got {shape:?}")),
        }
    }

    fn count(&self) -> usize {
        self.n * self.spatial
    }

    /// Calls `f(feature, flat range)` for every contiguous run of one feature.
    fn for_each_plane<F: FnMut(usize, core::ops::Range<usize>)>(&self, mut f: F) {
        for i in 0..self.n {
            for ch in 0..self.c {
                let base = (i * self.c + ch) * self.spatial;
                f(ch, base..base + self.spatial);
            }
        }
    }
}

/// Values kept by a batch-norm forward pass for its backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    batch_statistics: bool,
}

/// Mean and biased variance of one training batch, per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

fn check_affine<T: Scalar>(layout: &BnLayout, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.len() != layout.c || beta.len() != layout.c {
        return Err(shape_err!(
            "batchnorm: {} features but gamma/beta have {}/{}",
            layout.c,
            gamma.len(),
            beta.len()
        ));
    }
    Ok(())
}

fn normalize<T: Scalar>(
    x: &Tensor<T>,
    layout: &BnLayout,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) -> (Tensor<T>, Tensor<T>) {
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    {
        let xd = x.data();
        let xh = xhat.data_mut();
        let yd = y.data_mut();
        layout.for_each_plane(|ch, r| {
            let (m, is, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for ((&xv, h), yv) in xd[r.clone()].iter().zip(&mut xh[r.clone()]).zip(&mut yd[r]) {
                let v = (xv - m) * is;
                *h = v;
                *yv = g * v + b;
            }
        });
    }
    (y, xhat)
}

/// Training-mode batch normalization with batch statistics.
pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, BatchNormCache<T>, BatchStats<T>)> {
    let layout = BnLayout::of(x.shape())?;
    check_affine(&layout, gamma, beta)?;
    if layout.n < 2 {
        return Err(invalid!("batchnorm: training mode needs a batch of at least 2"));
    }
    let m = s::<T>(layout.count() as f64);
    let xd = x.data();
    let mut mean = vec![T::zero(); layout.c];
    layout.for_each_plane(|ch, r| mean[ch] += xd[r].iter().copied().sum::<T>());
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![T::zero(); layout.c];
    layout.for_each_plane(|ch, r| {
        let mu = mean[ch];
        var[ch] += xd[r].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
    });
    var.iter_mut().for_each(|v| *v /= m);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (y, xhat) = normalize(x, &layout, &mean, &inv_std, gamma.data(), beta.data());
    Ok((
        y,
        BatchNormCache { xhat, inv_std, batch_statistics: true },
        BatchStats { mean, var },
    ))
}

/// Inference-mode batch normalization with running statistics.
pub fn batchnorm_infer<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let layout = BnLayout::of(x.shape())?;
    check_affine(&layout, gamma, beta)?;
    if running_mean.len() != layout.c || running_var.len() != layout.c {
        return Err(shape_err!("batchnorm: running stats do not match {} features", layout.c));
    }
    let inv_std: Vec<T> = running_var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (y, xhat) = normalize(x, &layout, running_mean.data(), &inv_std, gamma.data(), beta.data());
    Ok((y, BatchNormCache { xhat, inv_std, batch_statistics: false }))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BatchNormCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if grad_out.shape() != cache.xhat.shape() {
        return Err(shape_err!("batchnorm backward: grad {:?} vs input {:?}", grad_out.shape(), cache.xhat.shape()));
    }
    let layout = BnLayout::of(grad_out.shape())?;
    let g = grad_out.data();
    let xh = cache.xhat.data();
    let mut dgamma = vec![T::zero(); layout.c];
    let mut dbeta = vec![T::zero(); layout.c];
    layout.for_each_plane(|ch, r| {
        dbeta[ch] += g[r.clone()].iter().copied().sum::<T>();
        dgamma[ch] += g[r.clone()].iter().zip(&xh[r]).map(|(&a, &b)| a * b).sum::<T>();
    });
    let gm = gamma.data();
    let mut dx = Tensor::zeros(grad_out.shape());
    {
        let dxd = dx.data_mut();
        if cache.batch_statistics {
            let m = s::<T>(layout.count() as f64);
            layout.for_each_plane(|ch, r| {
                let scale = gm[ch] * cache.inv_std[ch] / m;
                let (db, dg) = (dbeta[ch], dgamma[ch]);
                for ((d, &gv), &h) in dxd[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xh[r]) {
                    *d = scale * (m * gv - db - h * dg);
                }
            });
        } else {
            layout.for_each_plane(|ch, r| {
                let scale = gm[ch] * cache.inv_std[ch];
                for (d, &gv) in dxd[r.clone()].iter_mut().zip(&g[r]) {
                    *d = scale * gv;
                }
            });
        }
    }
    Ok((
        dx,
        Tensor::new(gamma.shape().to_vec(), dgamma)?,
        Tensor::new(gamma.shape().to_vec(), dbeta)?,
    ))
}

// ---------------------------------------------------------------------------
// Fully connected.

fn dense_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match (x.shape(), w.shape()) {
        (&[batch, inp], &[w_in, out]) if inp == w_in && b.len() == out => Ok((batch, inp, out)),
        _ => Err(invalid!(
            "dense: input {:?}, weights {:?}, bias {:?} do not agree",
            x.shape(),
            w.shape(),
            b.shape()
        )),
    }
}

/// `x * w + b` for `x: batch x In`, `w: In x Out`, `b: Out`.
pub fn dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, inp, out) = dense_dims(x, w, b)?;
    let mut y = vec![T::zero(); batch * out];
    for row in y.chunks_mut(out) {
        row.copy_from_slice(b.data());
    }
    T::gemm(batch, inp, out, T::one(), x.data(), (inp, 1), w.data(), (out, 1), T::one(), &mut y, (out, 1));
    Tensor::new(vec![batch, out], y)
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (batch, inp, out) = dense_dims(x, w, b)?;
    if grad_out.shape() != [batch, out] {
        return Err(shape_err!("dense backward: grad {:?}", grad_out.shape()));
    }
    let g = grad_out.data();
    let mut dx = vec![T::zero(); batch * inp];
    T::gemm(batch, out, inp, T::one(), g, (out, 1), w.data(), (1, out), T::zero(), &mut dx, (inp, 1));
    let mut dw = vec![T::zero(); inp * out];
    T::gemm(inp, batch, out, T::one(), x.data(), (1, inp), g, (out, 1), T::zero(), &mut dw, (out, 1));
    let mut db = vec![T::zero(); out];
    for row in g.chunks(out) {
        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
    }
    Ok((
        Tensor::new(vec![batch, inp], dx)?,
        Tensor::new(vec![inp, out], dw)?,
        Tensor::new(vec![out], db)?,
    ))
}

// ---------------------------------------------------------------------------
// Activations.

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// The derivative at exactly 0 is taken as 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(shape_err!("relu backward: {:?} vs {:?}", x.shape(), grad_out.shape()));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    let one = T::one();
    let y = if v >= T::zero() {
        one / (one + (-v).exp())
    } else {
        let e = v.exp();
        e / (one + e)
    };
    // keep the result strictly inside (0, 1) even when it rounds
    y.max(T::min_positive_value()).min(one - T::epsilon() / s(2.0))
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Uses the forward output `y`: `dy/dx = y (1 - y)`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if y.shape() != grad_out.shape() {
        return Err(shape_err!("sigmoid backward: {:?} vs {:?}", y.shape(), grad_out.shape()));
    }
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| g * v * (T::one() - v))
        .collect();
    Tensor::new(y.shape().to_vec(), data)
}

// ---------------------------------------------------------------------------
// Dropout.

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise
/// `1 / (1 - p)`.
pub fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: &mut RngState) -> Result<Vec<T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(invalid!("dropout probability must lie in [0, 1), got {p}"));
    }
    if p == 0.0 {
        return Ok(vec![T::one(); len]);
    }
    let keep = s::<T>(1.0 / (1.0 - p));
    Ok((0..len)
        .map(|_| if rng.bernoulli(p) { T::zero() } else { keep })
        .collect())
}

/// Returns the output and the mask that was applied (`None` when the layer
/// acted as the identity).
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    p: f64,
    mode: LayerMode,
    rng: &mut RngState,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(invalid!("dropout probability must lie in [0, 1), got {p}"));
    }
    if mode == LayerMode::Inference || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let mask = dropout_mask(x.len(), p, rng)?;
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(grad_out: &Tensor<T>, mask: Option<&[T]>) -> Result<Tensor<T>> {
    match mask {
        None => Ok(grad_out.clone()),
        Some(m) if m.len() == grad_out.len() => {
            let data = grad_out.data().iter().zip(m).map(|(&g, &k)| g * k).collect();
            Tensor::new(grad_out.shape().to_vec(), data)
        }
        Some(m) => Err(shape_err!("dropout backward: mask {} vs grad {}", m.len(), grad_out.len())),
    }
}

// ---------------------------------------------------------------------------
// Embeddings.

fn table_dims<T: Scalar>(table: &Tensor<T>) -> Result<(usize, usize)> {
    match *table.shape() {
        [rows, dim] => Ok((rows, dim)),
        _ => Err(shape_err!("embedding table must be N x d, got {:?}", table.shape())),
    }
}

/// Row `index` of `table`.
pub fn embedding_lookup<T: Scalar>(table: &Tensor<T>, index: usize) -> Result<Tensor<T>> {
    let (rows, dim) = table_dims(table)?;
    if index >= rows {
        return Err(invalid!("embedding index {index} out of range for {rows} rows"));
    }
    Tensor::new(vec![dim], table.data()[index * dim..(index + 1) * dim].to_vec())
}

/// Rows `indices` of `table`, stacked into `batch x d`.
pub fn embedding_lookup_batch<T: Scalar>(table: &Tensor<T>, indices: &[usize]) -> Result<Tensor<T>> {
    let (rows, dim) = table_dims(table)?;
    let mut out = Vec::with_capacity(indices.len() * dim);
    for &i in indices {
        if i >= rows {
            return Err(invalid!("embedding index {i} out of range for {rows} rows"));
        }
        out.extend_from_slice(&table.data()[i * dim..(i + 1) * dim]);
    }
    Tensor::new(vec![indices.len(), dim], out)
}

/// Accumulates each row of `grad_out` into row `indices[i]` of `table_grad`.
pub fn embedding_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    indices: &[usize],
    table_grad: &mut Tensor<T>,
) -> Result<()> {
    let (rows, dim) = table_dims(table_grad)?;
    if grad_out.len() != indices.len() * dim {
        return Err(shape_err!("embedding backward: grad {:?} for {} indices", grad_out.shape(), indices.len()));
    }
    let tg = table_grad.data_mut();
    for (row, &i) in grad_out.data().chunks(dim).zip(indices) {
        if i >= rows {
            return Err(invalid!("embedding index {i} out of range for {rows} rows"));
        }
        tg[i * dim..(i + 1) * dim].iter_mut().zip(row).for_each(|(d, &v)| *d += v);
    }
    Ok(())
}
