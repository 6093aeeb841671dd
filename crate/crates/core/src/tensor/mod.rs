//! Dense row-major tensors and the fixed image filters used by the LoG layer.
//!
//! Data is stored in row-major (C) order: the last extent varies fastest.
//! A `C×H×W` feature map therefore stores channel `c`, row `y`, column `x`
//! at offset `(c * H + y) * W + x`. The serialized format in [`io`] uses the
//! same order.

mod filters;
mod finite_diff;
pub mod io;

pub use filters::{
    blur_adjoint, depthwise_gaussian_blur, downsample2, downsample2_adjoint, gaussian_kernel2d,
    upsample_adjoint, upsample_to, GaussianKernel,
};
pub(crate) use filters::{blur_decimate, blur_decimate_adjoint};
#[cfg(test)]
pub(crate) use filters::blur_unchecked;
pub use finite_diff::finite_diff_grad;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{ensure, Result};

/// On-disk element type codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    pub fn from_code(code: u32) -> Option<DType> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating-point element type. Implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const DTYPE: DType;

    fn of(v: f64) -> Self;

    fn f64(self) -> f64;
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T: Real = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        ensure!(!shape.is_empty(), Shape, "tensor rank must be at least 1");
        ensure!(shape.iter().all(|&e| e > 0), Shape, "extents must be positive, got {:?}", shape);
        let n: usize = shape.iter().product();
        ensure!(n == data.len(), Shape, "shape {:?} needs {} values, got {}", shape, n, data.len());
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(!shape.is_empty() && shape.iter().all(|&e| e > 0), "bad shape {:?}", shape);
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(&mut f).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    /// Rank-1 tensor over a vector.
    pub fn vector(data: Vec<T>) -> Self {
        assert!(!data.is_empty(), "empty vector tensor");
        Tensor { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// `(C, H, W)` of a rank-3 tensor.
    pub fn chw(&self) -> (usize, usize, usize) {
        assert_eq!(self.rank(), 3, "expected a C×H×W tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        ensure!(n == self.data.len(), Shape, "cannot reshape {:?} into {:?}", self.shape, shape);
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.f64())).collect() }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Tensor { shape: self.shape.clone(), data }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }

    pub fn norm2(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sub-tensor at `index` along the leading axis.
    pub fn slice_outer(&self, index: usize) -> Tensor<T> {
        assert!(self.rank() >= 2 && index < self.shape[0], "slice {} of {:?}", index, self.shape);
        let inner: usize = self.shape[1..].iter().product();
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        ensure!(!parts.is_empty(), Shape, "cannot stack zero tensors");
        let inner = parts[0].shape.clone();
        ensure!(parts.iter().all(|p| p.shape == inner), Shape, "stack requires equal shapes");
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&inner);
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Ok(Tensor { shape, data })
    }

    /// Concatenates along the leading axis (channels for `C×H×W`).
    pub fn concat_outer(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        ensure!(!parts.is_empty(), Shape, "cannot concatenate zero tensors");
        let tail = parts[0].shape[1..].to_vec();
        ensure!(
            parts.iter().all(|p| p.shape[1..] == tail[..]),
            Shape,
            "concatenation requires equal trailing extents"
        );
        let mut shape = vec![parts.iter().map(|p| p.shape[0]).sum()];
        shape.extend_from_slice(&tail);
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Ok(Tensor { shape, data })
    }

    /// Splits along the leading axis into pieces of the given extents.
    pub fn split_outer(&self, extents: &[usize]) -> Result<Vec<Tensor<T>>> {
        ensure!(
            extents.iter().sum::<usize>() == self.shape[0],
            Shape,
            "split {:?} does not cover leading extent {}",
            extents,
            self.shape[0]
        );
        let inner: usize = self.shape[1..].iter().product();
        let mut out = Vec::with_capacity(extents.len());
        let mut start = 0;
        for &e in extents {
            let mut shape = vec![e];
            shape.extend_from_slice(&self.shape[1..]);
            out.push(Tensor { shape, data: self.data[start * inner..(start + e) * inner].to_vec() });
            start += e;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(&[2, 0], vec![]).is_err());
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn row_major_layout() {
        let t = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        // (c, y, x) = (1, 2, 3)
        assert_eq!(t.data()[(1 * 3 + 2) * 4 + 3], 23.0);
        assert_eq!(t.slice_outer(1).data()[0], 12.0);
    }

    #[test]
    fn concat_then_split_restores_parts() {
        let a = Tensor::<f64>::from_fn(&[2, 2, 2], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[3, 2, 2], |i| -(i as f64));
        let c = Tensor::concat_outer(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[5, 2, 2]);
        let parts = c.split_outer(&[2, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
