//! Dense tensor: a shape and a flat row-major element buffer.
//!
//! Rank conventions used across the crate:
//!   vectors `[n]`, matrices `[rows, cols]`, images `[C, H, W]`,
//!   videos `[C, T, H, W]`, conv kernels `[C_out, C_in, (kT,) kH, kW]`.
//! A rank-0 tensor (one element) is the scalar produced by reductions.

use crate::error::{shape_err, Result};
use crate::rng::Rng;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(shape_err(format!(
                "element count {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); numel_of(shape)] }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![v; numel_of(shape)] }
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn from_f64s(shape: &[usize], vals: &[f64]) -> Result<Self> {
        Tensor::new(shape, vals.iter().map(|&x| T::of(x)).collect())
    }

    /// I.i.d. N(0, std²) entries. Draws are made in f64 and cast, so a given
    /// seed produces the same underlying sequence at either precision.
    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let data = (0..numel_of(shape)).map(|_| T::of(rng.normal() * std)).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    /// Uniform in [lo, hi).
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let data = (0..numel_of(shape))
            .map(|_| T::of(lo + (hi - lo) * rng.uniform()))
            .collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// The single element of a rank-0/one-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1, "item() on tensor with shape {:?}", self.shape);
        self.data[0]
    }

    /// Slice index `i` off axis 1 of a rank-4 tensor: `[C,T,H,W]` → `[C,H,W]`.
    pub fn index_axis1(&self, i: usize) -> Result<Self> {
        if self.shape.len() != 4 || i >= self.shape[1] {
            return Err(shape_err(format!(
                "index_axis1({i}) needs rank 4 with axis-1 extent > {i}, got {:?}",
                self.shape
            )));
        }
        let (c, t, hw) = (self.shape[0], self.shape[1], self.shape[2] * self.shape[3]);
        let mut data = Vec::with_capacity(c * hw);
        for ch in 0..c {
            data.extend_from_slice(&self.data[(ch * t + i) * hw..(ch * t + i + 1) * hw]);
        }
        Tensor::new(&[c, self.shape[2], self.shape[3]], data)
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        if numel_of(shape) != self.data.len() {
            return Err(shape_err(format!(
                "cannot reshape {:?} ({} elements) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest |a - b| over elements; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Cast element-wise through f64.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.to_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn rank0_scalar_semantics() {
        let s = Tensor::<f64>::scalar(2.5);
        assert_eq!(s.rank(), 0);
        assert_eq!(s.numel(), 1, "empty shape product is one element");
        assert_eq!(s.item(), 2.5);
    }

    #[test]
    fn randn_same_seed_same_values_across_precisions() {
        let mut r1 = Rng::seed_from(5);
        let mut r2 = Rng::seed_from(5);
        let a: Tensor<f32> = Tensor::randn(&[4], 0.02, &mut r1);
        let b: Tensor<f64> = Tensor::randn(&[4], 0.02, &mut r2);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x.to_f64() - y).abs() < 1e-9);
        }
    }
}
