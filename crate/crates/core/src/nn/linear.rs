use crate::error::{Error, Result};
use crate::tensor::{matmul, Real, Tensor};

#[derive(Clone, Debug)]
pub struct LinearCache<T> {
    input: Tensor<T>,
    weight: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// `input [B, n_in] · weight [n_in, n_out] + bias [n_out]`.
pub fn linear_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, LinearCache<T>)> {
    let (_, n_in) = input.shape().matrix()?;
    let (w_in, n_out) = weight.shape().matrix()?;
    if n_in != w_in {
        return Err(Error::shape(format!(
            "linear: input width {n_in} but weight is {}",
            weight.shape()
        )));
    }
    bias.expect_shape(&[n_out])?;
    let mut out = matmul(input, weight)?;
    for row in out.data_mut().chunks_exact_mut(n_out) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    let cache = LinearCache {
        input: input.clone(),
        weight: weight.clone(),
    };
    Ok((out, cache))
}

pub fn linear_backward<T: Real>(
    cache: &LinearCache<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (batch, n_in) = cache.input.shape().matrix()?;
    let (_, n_out) = cache.weight.shape().matrix()?;
    grad_out.expect_shape(&[batch, n_out])?;
    let w_t = transpose(&cache.weight)?;
    let x_t = transpose(&cache.input)?;
    let grad_input = matmul(grad_out, &w_t)?;
    let grad_weight = matmul(&x_t, grad_out)?;
    let mut gb = vec![T::zero(); n_out];
    for row in grad_out.data().chunks_exact(n_out) {
        for (acc, &g) in gb.iter_mut().zip(row) {
            *acc += g;
        }
    }
    debug_assert_eq!(grad_input.dims(), &[batch, n_in]);
    Ok(LinearGrads {
        input: grad_input,
        weight: grad_weight,
        bias: Tensor::from_vec(&[n_out], gb)?,
    })
}

fn transpose<T: Real>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = m.shape().matrix()?;
    let d = m.data();
    let mut out = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            out.push(d[i * c + j]);
        }
    }
    Tensor::from_vec(&[c, r], out)
}
