//! 2x2 stride-2 max pooling.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Real, Tensor};

/// Flat input index of the winning element for every output element.
#[derive(Clone, Debug)]
pub struct PoolCache {
    input_dims: Vec<usize>,
    argmax: Vec<usize>,
}

impl PoolCache {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// Ties resolve to the first element in row-major window order.
pub fn maxpool2d_forward<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
    let (n, c, h, w) = input.shape().nchw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool2d needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Tensor::zeros(&[n, c, oh, ow])?;
    let mut argmax = vec![0usize; n * c * oh * ow];
    {
        let mut pairs: Vec<(&mut [T], &mut [usize])> = out
            .data_mut()
            .chunks_mut(oh * ow)
            .zip(argmax.chunks_mut(oh * ow))
            .collect();
        par::for_each_chunk_mut(&mut pairs, 1, |plane, slot| {
            let (o, a) = &mut slot[0];
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for idx in [
                        base + 2 * i * w + 2 * j + 1,
                        base + (2 * i + 1) * w + 2 * j,
                        base + (2 * i + 1) * w + 2 * j + 1,
                    ] {
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    o[i * ow + j] = x[best];
                    a[i * ow + j] = best;
                }
            }
        });
    }
    let cache = PoolCache {
        input_dims: input.dims().to_vec(),
        argmax,
    };
    Ok((out, cache))
}

/// Routes each upstream gradient to its window's argmax; everything else is zero.
pub fn maxpool2d_backward<T: Real>(cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::shape(format!(
            "maxpool2d_backward: grad of shape {} for {} pooled elements",
            grad_out.shape(),
            cache.argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(&cache.input_dims)?;
    let gi = grad.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gi[idx] += g;
    }
    Ok(grad)
}
