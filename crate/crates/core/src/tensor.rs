//! Dense row-major tensors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{Debug, Display};
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating point element type. Training runs in `f32`, gradient checks in `f64`.
pub trait Real:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// N-dimensional array, last axis fastest.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    extents: Vec<usize>,
    values: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Tensor")
            .field("extents", &self.extents)
            .field("len", &self.values.len())
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(extents: &[usize], values: Vec<T>) -> Result<Self> {
        let n: usize = extents.iter().product();
        if n != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "extents {:?} hold {} values, got {}",
                extents,
                n,
                values.len()
            )));
        }
        Ok(Self { extents: extents.to_vec(), values })
    }

    pub fn zeros(extents: &[usize]) -> Self {
        Self::full(extents, T::zero())
    }

    pub fn full(extents: &[usize], v: T) -> Self {
        let n = extents.iter().product();
        Self { extents: extents.to_vec(), values: vec![v; n] }
    }

    pub fn scalar(v: T) -> Self {
        Self { extents: vec![1], values: vec![v] }
    }

    pub fn from_fn(extents: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = extents.iter().product();
        Self { extents: extents.to_vec(), values: (0..n).map(&mut f).collect() }
    }

    #[inline]
    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.extents.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Same values under new extents with equal element count.
    pub fn reshape(mut self, extents: &[usize]) -> Result<Self> {
        let n: usize = extents.iter().product();
        if n != self.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} to {:?}",
                self.extents, extents
            )));
        }
        self.extents = extents.to_vec();
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            extents: self.extents.clone(),
            values: self.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { extents: self.extents.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.extents.len());
        index
            .iter()
            .zip(&self.extents)
            .fold(0, |acc, (&i, &e)| {
                debug_assert!(i < e);
                acc * e + i
            })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.values[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], v: T) {
        let o = self.offset(index);
        self.values[o] = v;
    }
}

/// Batch, channel and spatial extents of a rank-4 `(C, D, H, W)` or rank-5
/// `(N, C, D, H, W)` tensor. Rank-4 inputs are treated as a batch of one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout5 {
    pub n: usize,
    pub c: usize,
    pub dims: [usize; 3],
    pub batched: bool,
}

impl Layout5 {
    pub fn of(extents: &[usize]) -> Result<Self> {
        match *extents {
            [c, d, h, w] => Ok(Self { n: 1, c, dims: [d, h, w], batched: false }),
            [n, c, d, h, w] => Ok(Self { n, c, dims: [d, h, w], batched: true }),
            _ => Err(Error::ShapeMismatch(format!(
                "expected (C,D,H,W) or (N,C,D,H,W), got {:?}",
                extents
            ))),
        }
    }

    #[inline]
    pub fn spatial(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Extents with a different channel count and spatial size, same batching.
    pub fn extents_with(&self, c: usize, dims: [usize; 3]) -> Vec<usize> {
        if self.batched {
            vec![self.n, c, dims[0], dims[1], dims[2]]
        } else {
            vec![c, dims[0], dims[1], dims[2]]
        }
    }
}

/// Rank-3 integer class volume `(L, W, S)`, values in `{0, 1, 2, 3}` once remapped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    extents: [usize; 3],
    values: Vec<u8>,
}

impl LabelVolume {
    pub fn new(extents: [usize; 3], values: Vec<u8>) -> Result<Self> {
        if extents.iter().product::<usize>() != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "label extents {:?} hold {} values, got {}",
                extents,
                extents.iter().product::<usize>(),
                values.len()
            )));
        }
        Ok(Self { extents, values })
    }

    pub fn zeros(extents: [usize; 3]) -> Self {
        Self { extents, values: vec![0; extents.iter().product()] }
    }

    #[inline]
    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    #[inline]
    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [u8] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> u8 {
        self.values[(i * self.extents[1] + j) * self.extents[2] + k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_row_major() {
        let t = Tensor::<f32>::from_fn(&[2, 3, 4], |i| i as f32);
        assert_eq!(t.get(&[1, 2, 3]), 23.0);
        assert_eq!(t.offset(&[0, 1, 0]), 4);
    }

    #[test]
    fn new_rejects_wrong_length() {
        assert!(matches!(Tensor::<f64>::new(&[2, 2], vec![0.0; 3]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn layout_treats_rank4_as_single_batch() {
        let l = Layout5::of(&[3, 4, 5, 6]).unwrap();
        assert_eq!((l.n, l.c, l.dims, l.batched), (1, 3, [4, 5, 6], false));
        assert_eq!(l.extents_with(1, [2, 2, 2]), vec![1, 2, 2, 2]);
        assert!(Layout5::of(&[3, 4]).is_err());
    }
}
