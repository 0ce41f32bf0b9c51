//! Dense tensor engine: storage, layer kernels with explicit backward
//! passes, SGD, and a finite-difference gradient checker.

mod activation;
mod conv;
mod dense;
mod dropout;
mod gradcheck;
pub(crate) mod kernels;
mod loss;
mod norm;
mod params;
mod pool;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

pub use activation::{relu, relu_backward};
pub use conv::{conv2d, conv2d_backward, conv2d_with, conv_output_extent, Conv2dGrads};
pub use dense::{dense, dense_backward, DenseGrads};
pub use dropout::{dropout, Dropout};
pub use gradcheck::{grad_check, relative_error};
pub use loss::{softmax, softmax_cross_entropy};
pub use norm::{
    batchnorm2d, batchnorm2d_backward, BatchNormCache, BatchNormGrads, BN_EPSILON, BN_MOMENTUM,
};
pub use params::ParameterSet;
pub use pool::{maxpool2d, maxpool2d_backward, maxpool2d_with_indices, pool_output_extent};

/// Floating point element type. `f32` is the working precision; `f64` is
/// used for gradient checking.
pub trait Element:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Train-time or inference-time behaviour for layers that differ
/// (batch normalization, dropout).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Row-major n-dimensional array with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("extents must be positive, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} values but data has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "extents must be positive: {shape:?}");
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n], grad: None }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "extents must be positive: {shape:?}");
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(f).collect(), grad: None }
    }

    pub fn scalar_vec(values: &[T]) -> Self {
        Tensor { shape: vec![values.len()], data: values.to_vec(), grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::Shape(format!(
                "gradient of length {} for tensor {:?}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Interprets the tensor as batch x channel x height x width.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [b, c, h, w] => Ok([b, c, h, w]),
            _ => Err(Error::Shape(format!("expected BCHW tensor, got {:?}", self.shape))),
        }
    }

    pub fn dims2(&self) -> Result<[usize; 2]> {
        match self.shape[..] {
            [r, c] => Ok([r, c]),
            _ => Err(Error::Shape(format!("expected a matrix, got {:?}", self.shape))),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect(), grad: None }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            grad: self.grad.as_ref().map(|g| g.iter().map(|v| U::from_f64(v.as_f64())).collect()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }
}
