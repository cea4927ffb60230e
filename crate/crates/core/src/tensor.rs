//! Dense row-major tensors.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{invalid, shape_err, Result};

/// Element type of a [`Tensor`].
///
/// Training runs in `f32`; `f64` exists for gradient checking.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    /// `c <- alpha * a * b + beta * c` for strided row/column layouts.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; the slices must cover
    /// every addressed element.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );

    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

fn span(rows: usize, cols: usize, (rs, cs): (usize, usize)) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// Below this many rows of `c` the packed kernels waste most of their tile.
const SMALL_M: usize = 4;

fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let xs = x.chunks_exact(8);
    let ys = y.chunks_exact(8);
    let tail: T = xs.remainder().iter().zip(ys.remainder()).map(|(&a, &b)| a * b).sum();
    for (xc, yc) in xs.zip(ys) {
        for l in 0..8 {
            acc[l] += xc[l] * yc[l];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

/// Handles a few-row product where `b` is row- or column-contiguous and the
/// rows of `a` and `c` are contiguous. Returns false for other layouts.
#[allow(clippy::too_many_arguments)]
fn thin_gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    (ars, acs): (usize, usize),
    b: &[T],
    (brs, bcs): (usize, usize),
    beta: T,
    c: &mut [T],
    (crs, ccs): (usize, usize),
) -> bool {
    if ccs != 1 {
        return false;
    }
    let scale = |row: &mut [T]| {
        if beta == T::zero() {
            row.fill(T::zero());
        } else if beta != T::one() {
            row.iter_mut().for_each(|v| *v *= beta);
        }
    };
    if bcs == 1 {
        // c[i, :] += alpha * a[i, p] * b[p, :], in column blocks that stay in cache
        const BLOCK: usize = 1024;
        for i in 0..m {
            scale(&mut c[i * crs..i * crs + n]);
        }
        for j0 in (0..n).step_by(BLOCK) {
            let j1 = (j0 + BLOCK).min(n);
            for p in 0..k {
                let brow = &b[p * brs + j0..p * brs + j1];
                for i in 0..m {
                    let w = alpha * a[i * ars + p * acs];
                    if w == T::zero() {
                        continue;
                    }
                    let crow = &mut c[i * crs + j0..i * crs + j1];
                    crow.iter_mut().zip(brow).for_each(|(cv, &bv)| *cv += w * bv);
                }
            }
        }
        true
    } else if brs == 1 && acs == 1 {
        // c[i, j] = dot(a[i, :], b[:, j]) with both operands contiguous
        for i in 0..m {
            let arow = &a[i * ars..i * ars + k];
            let crow = &mut c[i * crs..i * crs + n];
            scale(crow);
            for (j, cv) in crow.iter_mut().enumerate() {
                *cv += alpha * dot(arow, &b[j * bcs..j * bcs + k]);
            }
        }
        true
    } else {
        false
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
                c_strides: (usize, usize),
            ) {
                assert!(a.len() >= span(m, k, a_strides));
                assert!(b.len() >= span(k, n, b_strides));
                assert!(c.len() >= span(m, n, c_strides));
                if m == 0 || n == 0 {
                    return;
                }
                if m <= SMALL_M && thin_gemm(m, k, n, alpha, a, a_strides, b, b_strides, beta, c, c_strides) {
                    return;
                }
                // SAFETY: the asserts above bound every address the kernel
                // touches, and `c` is exclusively borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    );
                }
            }

            fn from_f64_lossy(v: f64) -> Self {
                v as $t
            }

            fn to_f64_lossy(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Shorthand for converting an `f64` literal.
#[inline]
pub(crate) fn s<T: Scalar>(v: f64) -> T {
    T::from_f64_lossy(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(invalid!("tensor dimensions must be positive, got {shape:?}"));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(shape_err!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() || shape.contains(&0) {
            return Err(shape_err!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::from_f64_lossy(x.to_f64_lossy())).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| invalid!("cannot stack zero tensors"))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(shape_err!("stack of {:?} and {:?}", first.shape, t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Self { shape, data })
    }

    /// The `index`-th slice along the leading axis.
    pub fn slice_outer(&self, index: usize) -> Result<Self> {
        let outer = self.shape[0];
        if index >= outer {
            return Err(invalid!("index {index} out of range for leading axis {outer}"));
        }
        let inner: usize = self.shape[1..].iter().product();
        let shape = if self.shape.len() == 1 {
            vec![1]
        } else {
            self.shape[1..].to_vec()
        };
        Ok(Self {
            shape,
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn thin_path_matches_packed_kernel() {
        let mut rng = crate::RngState::new(5);
        let (m, k, n) = (3, 37, 1500);
        let a: Vec<f64> = (0..m * k).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.normal()).collect();
        let c0: Vec<f64> = (0..m * n).map(|_| rng.normal()).collect();
        // b as k x n row-major, then as the transpose of an n x k matrix
        let bt: Vec<f64> = (0..n * k).map(|i| b[(i % k) * n + i / k]).collect();
        let mut expect = c0.clone();
        unsafe {
            matrixmultiply::dgemm(m, k, n, 0.5, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 2.0, expect.as_mut_ptr(), n as isize, 1);
        }
        for (bb, strides) in [(&b, (n, 1)), (&bt, (1, k))] {
            let mut c = c0.clone();
            f64::gemm(m, k, n, 0.5, &a, (k, 1), bb, strides, 2.0, &mut c, (n, 1));
            for (x, y) in c.iter().zip(&expect) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn gemm_matches_hand_product() {
        // [[1,2],[3,4]] * [[5],[6]] = [[17],[39]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0];
        let mut c = [0.0f64; 2];
        f64::gemm(2, 2, 1, 1.0, &a, (2, 1), &b, (1, 1), 0.0, &mut c, (1, 1));
        assert_eq!(c, [17.0, 39.0]);
        // transposed view of a
        f64::gemm(2, 2, 1, 1.0, &a, (1, 2), &b, (1, 1), 0.0, &mut c, (1, 1));
        assert_eq!(c, [23.0, 34.0]);
    }

    #[test]
    fn stack_and_slice_round_trip() {
        let a = Tensor::<f32>::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::new(vec![2], vec![3.0, 4.0]).unwrap();
        let st = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(st.shape(), &[2, 2]);
        assert_eq!(st.slice_outer(1).unwrap(), b);
    }
}
