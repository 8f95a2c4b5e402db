//! Dense row-major tensors, the scalar abstraction, and the seeded generator.
//!
//! Rank-4 tensors are laid out batch × channels × height × width. Training runs
//! in `f32`; gradient verification instantiates the same code with `f64`.

use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::error::{Error, Result};
use crate::gemm::{self, MatRef};

/// Floating-point element type of a tensor.
pub trait Real:
    Float + FromPrimitive + Default + Debug + Display + Send + Sync + Sum + AddAssign + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
    /// `self + a * b`. Fused when the target has FMA, so every kernel that
    /// accumulates through this helper rounds identically.
    fn madd(self, a: Self, b: Self) -> Self;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline(always)]
            fn lit(x: f64) -> Self {
                x as $t
            }
            #[inline(always)]
            fn as_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn madd(self, a: Self, b: Self) -> Self {
                #[cfg(target_feature = "fma")]
                {
                    a.mul_add(b, self)
                }
                #[cfg(not(target_feature = "fma"))]
                {
                    self + a * b
                }
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if !matches!(dims.len(), 1 | 2 | 4) {
            return Err(Error::shape(format!(
                "rank must be 1, 2 or 4, got {} ({dims:?})",
                dims.len()
            )));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(Error::shape(format!("dim {pos} is zero in {dims:?}")));
        }
        Ok(Shape(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// `(batch, channels, height, width)` for a rank-4 shape.
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match self.0[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!("expected rank-4 NCHW, got {self}"))),
        }
    }

    /// `(rows, cols)` for a rank-2 shape.
    pub fn matrix(&self) -> Result<(usize, usize)> {
        match self.0[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(format!("expected rank-2, got {self}"))),
        }
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Display::fmt(self, f)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview = &self.data[..self.data.len().min(8)];
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .field("grad", &self.grad.is_some())
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    /// Every element set to `fill`, no gradient buffer.
    pub fn new(dims: &[usize], fill: T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![fill; shape.numel()];
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::new(dims, T::zero())
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::shape(format!(
                "{} values do not fit shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    /// A zero tensor with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
            grad: None,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
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
            return Err(Error::shape(format!(
                "gradient of length {} for tensor {}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    /// Element at a multi-index; panics when out of range.
    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.rank(), "index rank");
        index
            .iter()
            .zip(self.shape.dims())
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {index:?} out of range for {}", self.shape);
                acc * d + i
            })
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        Self::from_vec(dims, self.data.clone())
    }

    pub fn into_reshaped(self, dims: &[usize]) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(other.dims())?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            grad: None,
        })
    }

    /// Sequential sum in storage order.
    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_shape(&self, dims: &[usize]) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::shape(format!(
                "expected shape {dims:?}, got {}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Elementwise precision conversion.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            grad: None,
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_shape(other.dims())?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

/// Seeded pseudorandom generator: xoshiro256** with its state expanded from
/// the 64-bit seed by SplitMix64. Output depends only on the seed.
#[derive(Clone, Debug)]
pub struct Rng(Xoshiro256StarStar);

impl Rng {
    pub const ALGORITHM: &'static str = "xoshiro256** (SplitMix64 seeding)";

    pub fn new(seed: u64) -> Self {
        Rng(Xoshiro256StarStar::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.random()
    }

    /// Uniform draw from `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.0);
    }
}

/// Kaiming-uniform initialisation for layers followed by a ReLU: values drawn
/// from `[-b, b]` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_init<T: Real>(dims: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    kaiming_init_gain(dims, fan_in, std::f64::consts::SQRT_2, rng)
}

/// Kaiming-uniform with an explicit gain: `b = gain * sqrt(3 / fan_in)`.
/// Gain `sqrt(2)` suits ReLU layers, gain 1 linear outputs.
pub fn kaiming_init_gain<T: Real>(
    dims: &[usize],
    fan_in: usize,
    gain: f64,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::invalid("kaiming_init: fan_in must be at least 1"));
    }
    let shape = Shape::new(dims)?;
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    let data = (0..shape.numel())
        .map(|_| T::lit(bound * (2.0 * rng.unit() - 1.0)))
        .collect();
    Ok(Tensor {
        shape,
        data,
        grad: None,
    })
}

/// Matrix product of `[m, k]` and `[k, n]`. Every output element is accumulated
/// over `k` in increasing order.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.shape().matrix()?;
    let (k2, n) = b.shape().matrix()?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner dims differ: {} x {}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![T::zero(); m * n];
    gemm::gemm(
        m,
        n,
        k,
        MatRef::row_major(a.data(), k),
        MatRef::row_major(b.data(), n),
        &mut out,
    );
    Tensor::from_vec(&[m, n], out)
}

/// Convenience for element counts used in tests and reports.
pub fn to_f64_vec<T: ToPrimitive + Copy>(values: &[T]) -> Vec<f64> {
    values.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
}
