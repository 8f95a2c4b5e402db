use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Keeps the forward input; the backward mask is `input > 0`.
#[derive(Clone, Debug)]
pub struct ReluCache<T> {
    input: Tensor<T>,
}

impl<T: Real> ReluCache<T> {
    /// Which inputs were strictly positive.
    pub fn active(&self) -> impl Iterator<Item = bool> + '_ {
        self.input.data().iter().map(|&v| v > T::zero())
    }

    pub fn input(&self) -> &Tensor<T> {
        &self.input
    }
}

pub fn relu<T: Real>(input: &Tensor<T>) -> (Tensor<T>, ReluCache<T>) {
    let out = input.map(|v| if v > T::zero() { v } else { T::zero() });
    (
        out,
        ReluCache {
            input: input.clone(),
        },
    )
}

pub fn relu_backward<T: Real>(cache: &ReluCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    cache
        .input
        .zip_map(grad_out, |x, g| if x > T::zero() { g } else { T::zero() })
}
