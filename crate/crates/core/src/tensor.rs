//! Dense row-major real and complex tensors.
//!
//! Both tensor kinds are plain owned buffers with a shape. They are immutable
//! once handed to a [`Graph`](crate::autodiff::Graph) (values are stored
//! behind `Arc`), so sharing them read-only across threads is fine.

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive};
use rustfft::{Fft, FftNum, FftPlanner};

use crate::error::{Error, Result};

/// Floating-point element type. 64-bit is the default everywhere; 32-bit
/// exists for the training demo.
pub trait Scalar:
    FftNum
    + Float
    + FloatConst
    + FromPrimitive
    + std::iter::Sum
    + Default
    + fmt::Display
    + fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    /// Width tag written into checkpoints and configs.
    const NAME: &'static str;
    const BYTES: usize;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Cached unnormalized FFT plan of length `n`.
    fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<Self>>;

    #[inline]
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every scalar width")
    }

    #[inline]
    fn f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

thread_local! {
    static PLANNER_F64: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static PLANNER_F32: RefCell<FftPlanner<f32>> = RefCell::new(FftPlanner::new());
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(b)
    }

    fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<Self>> {
        PLANNER_F64.with(|p| {
            let mut p = p.borrow_mut();
            if inverse {
                p.plan_fft_inverse(n)
            } else {
                p.plan_fft_forward(n)
            }
        })
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 4];
        b.copy_from_slice(&bytes[..4]);
        f32::from_le_bytes(b)
    }

    fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<Self>> {
        PLANNER_F32.with(|p| {
            let mut p = p.borrow_mut();
            if inverse {
                p.plan_fft_inverse(n)
            } else {
                p.plan_fft_forward(n)
            }
        })
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::shape(format!("zero extent in shape {shape:?}")));
    }
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::shape(format!(
            "shape {shape:?} needs {expected} elements, got {len}"
        )));
    }
    Ok(())
}

macro_rules! tensor_common {
    ($name:ident, $elem:ty) => {
        impl<T: Scalar> $name<T> {
            pub fn new(shape: Vec<usize>, data: Vec<$elem>) -> Result<Self> {
                check_shape(&shape, data.len())?;
                Ok(Self { shape, data })
            }

            pub fn zeros(shape: &[usize]) -> Self {
                let n = shape.iter().product();
                Self {
                    shape: shape.to_vec(),
                    data: vec![<$elem>::default(); n],
                }
            }

            pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> $elem) -> Self {
                let n = shape.iter().product();
                Self {
                    shape: shape.to_vec(),
                    data: (0..n).map(&mut f).collect(),
                }
            }

            pub fn shape(&self) -> &[usize] {
                &self.shape
            }

            pub fn data(&self) -> &[$elem] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [$elem] {
                &mut self.data
            }

            pub fn into_data(self) -> Vec<$elem> {
                self.data
            }

            pub fn len(&self) -> usize {
                self.data.len()
            }

            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            pub fn ndim(&self) -> usize {
                self.shape.len()
            }

            pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
                check_shape(shape, self.data.len())?;
                self.shape = shape.to_vec();
                Ok(self)
            }

            /// Product of all extents except the last `k`.
            pub fn outer(&self, k: usize) -> usize {
                self.shape[..self.shape.len() - k].iter().product()
            }
        }
    };
}

/// Real tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

tensor_common!(Tensor, T);

impl<T: Scalar> Tensor<T> {
    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::c(v)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_complex(&self) -> CTensor<T> {
        CTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| Complex::new(v, T::zero())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn norm_sqr(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs().f64())
            .fold(0.0, f64::max)
    }

    /// Converts element width (used when loading f64 data into an f32 run).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::c(v.f64())).collect(),
        }
    }
}

/// Complex tensor, elements stored as `(re, im)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct CTensor<T> {
    shape: Vec<usize>,
    data: Vec<Complex<T>>,
}

tensor_common!(CTensor, Complex<T>);

impl<T: Scalar> CTensor<T> {
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn re(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.re).collect(),
        }
    }

    pub fn im(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.im).collect(),
        }
    }

    pub fn norm_sqr(&self) -> T {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).norm().f64())
            .fold(0.0, f64::max)
    }

    pub fn cast<U: Scalar>(&self) -> CTensor<U> {
        CTensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| Complex::new(U::c(v.re.f64()), U::c(v.im.f64())))
                .collect(),
        }
    }
}

/// A node value: either a real or a complex tensor.
#[derive(Clone, Debug, PartialEq)]
pub enum Value<T> {
    Real(Tensor<T>),
    Complex(CTensor<T>),
}

impl<T: Scalar> Value<T> {
    pub fn shape(&self) -> &[usize] {
        match self {
            Value::Real(t) => t.shape(),
            Value::Complex(t) => t.shape(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Value::Real(t) => t.is_finite(),
            Value::Complex(t) => t.is_finite(),
        }
    }

    pub fn as_real(&self) -> Result<&Tensor<T>> {
        match self {
            Value::Real(t) => Ok(t),
            Value::Complex(_) => Err(Error::shape("expected a real tensor, got complex")),
        }
    }

    pub fn as_complex(&self) -> Result<&CTensor<T>> {
        match self {
            Value::Complex(t) => Ok(t),
            Value::Real(_) => Err(Error::shape("expected a complex tensor, got real")),
        }
    }

    /// Zero value of the same kind and shape.
    pub fn zeros_like(&self) -> Self {
        match self {
            Value::Real(t) => Value::Real(Tensor::zeros(t.shape())),
            Value::Complex(t) => Value::Complex(CTensor::zeros(t.shape())),
        }
    }

    /// Real inner product on the R^2 view: `sum(a*b)` or `sum(Re(conj(a) b))`.
    pub fn inner(&self, other: &Self) -> Result<T> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "inner product of {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        match (self, other) {
            (Value::Real(a), Value::Real(b)) => {
                Ok(a.data().iter().zip(b.data()).map(|(x, y)| *x * *y).sum())
            }
            (Value::Complex(a), Value::Complex(b)) => Ok(a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| x.re * y.re + x.im * y.im)
                .sum()),
            _ => Err(Error::shape("inner product of real and complex values")),
        }
    }

    pub fn norm(&self) -> T {
        match self {
            Value::Real(t) => t.norm_sqr().sqrt(),
            Value::Complex(t) => t.norm_sqr().sqrt(),
        }
    }

    /// In-place `self += other`.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "accumulate {:?} into {:?}",
                other.shape(),
                self.shape()
            )));
        }
        match (self, other) {
            (Value::Real(a), Value::Real(b)) => {
                for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                    *x = *x + *y;
                }
            }
            (Value::Complex(a), Value::Complex(b)) => {
                for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                    *x = *x + *y;
                }
            }
            _ => return Err(Error::shape("accumulate across real/complex kinds")),
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T> From<Tensor<T>> for Value<T> {
    fn from(t: Tensor<T>) -> Self {
        Value::Real(t)
    }
}

impl<T> From<CTensor<T>> for Value<T> {
    fn from(t: CTensor<T>) -> Self {
        Value::Complex(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_count_must_match_extents() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn complex_inner_product_is_real_part_of_hermitian_product() {
        let a = CTensor::<f64>::new(vec![2], vec![Complex::new(1.0, 2.0), Complex::new(0.0, -1.0)])
            .unwrap();
        let b = CTensor::<f64>::new(vec![2], vec![Complex::new(3.0, 1.0), Complex::new(2.0, 5.0)])
            .unwrap();
        let ip = Value::Complex(a).inner(&Value::Complex(b)).unwrap();
        assert_eq!(ip, 1.0 * 3.0 + 2.0 * 1.0 + 0.0 * 2.0 + (-1.0) * 5.0);
    }

    #[test]
    fn scalar_byte_round_trip() {
        let mut buf = Vec::new();
        1.25f64.write_le(&mut buf);
        (-3.5f32).write_le(&mut buf);
        assert_eq!(f64::read_le(&buf[..8]), 1.25);
        assert_eq!(f32::read_le(&buf[8..]), -3.5);
    }
}
