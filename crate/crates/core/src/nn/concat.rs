use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Channel split point recorded by [`concat_channels`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConcatCache {
    first: usize,
    second: usize,
}

/// Stacks `a [B, Ca, H, W]` and `b [B, Cb, H, W]` into `[B, Ca + Cb, H, W]`.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, ConcatCache)> {
    let (n, ca, h, w) = a.shape().nchw()?;
    let (nb, cb, hb, wb) = b.shape().nchw()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::shape(format!(
            "concat_channels: {} and {} differ outside the channel dim",
            a.shape(),
            b.shape()
        )));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * (ca + cb) * plane);
    for s in 0..n {
        data.extend_from_slice(&a.data()[s * ca * plane..(s + 1) * ca * plane]);
        data.extend_from_slice(&b.data()[s * cb * plane..(s + 1) * cb * plane]);
    }
    let out = Tensor::from_vec(&[n, ca + cb, h, w], data)?;
    Ok((out, ConcatCache { first: ca, second: cb }))
}

/// Splits an upstream gradient back into the two inputs' parts.
pub fn concat_backward<T: Real>(
    cache: &ConcatCache,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = grad_out.shape().nchw()?;
    if c != cache.first + cache.second {
        return Err(Error::shape(format!(
            "concat_backward: grad has {c} channels, expected {}",
            cache.first + cache.second
        )));
    }
    let plane = h * w;
    let (ca, cb) = (cache.first, cache.second);
    let mut ga = Vec::with_capacity(n * ca * plane);
    let mut gb = Vec::with_capacity(n * cb * plane);
    for sample in grad_out.data().chunks_exact(c * plane) {
        ga.extend_from_slice(&sample[..ca * plane]);
        gb.extend_from_slice(&sample[ca * plane..]);
    }
    Ok((
        Tensor::from_vec(&[n, ca, h, w], ga)?,
        Tensor::from_vec(&[n, cb, h, w], gb)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{kaiming_init, Rng};

    #[test]
    fn skip_merge_shape() {
        let a = Tensor::<f32>::zeros(&[1, 128, 16, 16]).unwrap();
        let (y, _) = concat_channels(&a, &a).unwrap();
        assert_eq!(y.dims(), &[1, 256, 16, 16]);
    }

    #[test]
    fn split_roundtrips_and_partitions_grad() {
        let mut rng = Rng::new(4);
        let a = kaiming_init::<f64>(&[2, 3, 4, 5], 1, &mut rng).unwrap();
        let b = kaiming_init::<f64>(&[2, 2, 4, 5], 1, &mut rng).unwrap();
        let (y, cache) = concat_channels(&a, &b).unwrap();
        assert_eq!(y.at(&[1, 3, 2, 1]), b.at(&[1, 0, 2, 1]));
        let (ra, rb) = concat_backward(&cache, &y).unwrap();
        assert_eq!(ra, a);
        assert_eq!(rb, b);
        let g = kaiming_init::<f64>(y.dims(), 1, &mut rng).unwrap();
        let (ga, gb) = concat_backward(&cache, &g).unwrap();
        assert!((ga.sum() + gb.sum() - g.sum()).abs() < 1e-12);
    }

    #[test]
    fn spatial_mismatch_errors() {
        let a = Tensor::<f32>::zeros(&[1, 2, 4, 4]).unwrap();
        let b = Tensor::<f32>::zeros(&[1, 2, 4, 2]).unwrap();
        assert!(matches!(concat_channels(&a, &b), Err(Error::Shape(_))));
    }
}
