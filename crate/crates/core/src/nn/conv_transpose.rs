//! 2x2 stride-2 transposed convolution. Each input pixel scatters a weighted
//! 2x2 block into a non-overlapping output window, so spatial dims double.

use crate::error::{Error, Result};
use crate::gemm::{self, MatRef};
use crate::nn::conv::{channel_sums, sum_in_order};
use crate::par;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct ConvTranspose2dCache<T> {
    input: Tensor<T>,
    weight: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2dGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// `input [N, Cin, H, W]`, `weight [Cin, Cout, 2, 2]`, `bias [Cout]` →
/// `[N, Cout, 2H, 2W]`.
pub fn convtranspose2d_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, ConvTranspose2dCache<T>)> {
    let (n, cin, h, w) = input.shape().nchw()?;
    let (wcin, cout, kh, kw) = weight.shape().nchw()?;
    if wcin != cin || kh != 2 || kw != 2 {
        return Err(Error::shape(format!(
            "convtranspose2d: input {} incompatible with weight {}",
            input.shape(),
            weight.shape()
        )));
    }
    bias.expect_shape(&[cout])?;
    let pixels = h * w;
    let x = input.data();
    let b = bias.data();
    // Rows of the weight matrix are input channels, columns (co, dy, dx).
    let wm = MatRef::row_major(weight.data(), cout * 4);
    let mut out = Tensor::zeros(&[n, cout, 2 * h, 2 * w])?;
    par::for_each_chunk_mut(out.data_mut(), cout * 4 * pixels, |s, o| {
        let xs = &x[s * cin * pixels..(s + 1) * cin * pixels];
        let mut blocks = vec![T::zero(); cout * 4 * pixels];
        gemm::gemm(
            cout * 4,
            pixels,
            cin,
            wm.t(),
            MatRef::row_major(xs, pixels),
            &mut blocks,
        );
        for co in 0..cout {
            let plane = &mut o[co * 4 * pixels..(co + 1) * 4 * pixels];
            for tap in 0..4 {
                let (dy, dx) = (tap / 2, tap % 2);
                let src = &blocks[(co * 4 + tap) * pixels..(co * 4 + tap + 1) * pixels];
                for i in 0..h {
                    for j in 0..w {
                        plane[(2 * i + dy) * 2 * w + 2 * j + dx] = src[i * w + j] + b[co];
                    }
                }
            }
        }
    });
    let cache = ConvTranspose2dCache {
        input: input.clone(),
        weight: weight.clone(),
    };
    Ok((out, cache))
}

pub fn convtranspose2d_backward<T: Real>(
    cache: &ConvTranspose2dCache<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvTranspose2dGrads<T>> {
    let (n, cin, h, w) = cache.input.shape().nchw()?;
    let (_, cout, _, _) = cache.weight.shape().nchw()?;
    grad_out.expect_shape(&[n, cout, 2 * h, 2 * w])?;
    let pixels = h * w;
    let x = cache.input.data();
    let g = grad_out.data();
    let wm = MatRef::row_major(cache.weight.data(), cout * 4);

    // Regroup each sample's grad into [(co, dy, dx), i * W + j].
    let gather = |s: usize| {
        let gs = &g[s * cout * 4 * pixels..(s + 1) * cout * 4 * pixels];
        let mut blocks = vec![T::zero(); cout * 4 * pixels];
        for co in 0..cout {
            let plane = &gs[co * 4 * pixels..(co + 1) * 4 * pixels];
            for tap in 0..4 {
                let (dy, dx) = (tap / 2, tap % 2);
                let dst = &mut blocks[(co * 4 + tap) * pixels..(co * 4 + tap + 1) * pixels];
                for i in 0..h {
                    for j in 0..w {
                        dst[i * w + j] = plane[(2 * i + dy) * 2 * w + 2 * j + dx];
                    }
                }
            }
        }
        blocks
    };

    let per_sample = par::map_range(n, |s| {
        let blocks = gather(s);
        let mut gx = vec![T::zero(); cin * pixels];
        gemm::gemm(
            cin,
            pixels,
            cout * 4,
            wm,
            MatRef::row_major(&blocks, pixels),
            &mut gx,
        );
        let xs = &x[s * cin * pixels..(s + 1) * cin * pixels];
        let mut gw = vec![T::zero(); cin * cout * 4];
        gemm::gemm(
            cin,
            cout * 4,
            pixels,
            MatRef::row_major(xs, pixels),
            MatRef::row_major(&blocks, pixels).t(),
            &mut gw,
        );
        (gx, gw)
    });
    let mut grad_input = Vec::with_capacity(n * cin * pixels);
    let mut weight_parts = Vec::with_capacity(n);
    for (gx, gw) in per_sample {
        grad_input.extend(gx);
        weight_parts.push(gw);
    }
    let gw = sum_in_order(weight_parts, cin * cout * 4);
    let gb = channel_sums(g, n, cout, 4 * pixels);
    Ok(ConvTranspose2dGrads {
        input: Tensor::from_vec(cache.input.dims(), grad_input)?,
        weight: Tensor::from_vec(cache.weight.dims(), gw)?,
        bias: Tensor::from_vec(&[cout], gb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{kaiming_init, Rng};

    #[test]
    fn single_pixel_scatters_the_kernel() {
        let x = Tensor::<f64>::new(&[1, 1, 1, 1], 1.0).unwrap();
        let wt = Tensor::from_vec(&[1, 1, 2, 2], vec![1.5, -2.0, 3.25, 4.0]).unwrap();
        let (y, _) = convtranspose2d_forward(&x, &wt, &Tensor::zeros(&[1]).unwrap()).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.5, -2.0, 3.25, 4.0]);
    }

    #[test]
    fn doubles_spatial_dims() {
        let x = Tensor::<f32>::zeros(&[1, 256, 8, 8]).unwrap();
        let wt = Tensor::zeros(&[256, 128, 2, 2]).unwrap();
        let (y, _) = convtranspose2d_forward(&x, &wt, &Tensor::zeros(&[128]).unwrap()).unwrap();
        assert_eq!(y.dims(), &[1, 128, 16, 16]);
        for (h, w) in [(1, 1), (3, 5), (7, 2)] {
            let x = Tensor::<f32>::zeros(&[2, 2, h, w]).unwrap();
            let wt = Tensor::zeros(&[2, 3, 2, 2]).unwrap();
            let (y, _) = convtranspose2d_forward(&x, &wt, &Tensor::zeros(&[3]).unwrap()).unwrap();
            assert_eq!(y.dims(), &[2, 3, 2 * h, 2 * w]);
        }
    }

    /// Stride-2 2x2 correlation from `cout` channels at 2H x 2W down to `cin`
    /// channels at H x W, indexed with the same weight layout.
    fn strided_conv(z: &[f64], wt: &Tensor<f64>, h: usize, w: usize) -> Vec<f64> {
        let (cin, cout, _, _) = wt.shape().nchw().unwrap();
        let mut y = vec![0.0; cin * h * w];
        for ci in 0..cin {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for co in 0..cout {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                acc += wt.at(&[ci, co, dy, dx])
                                    * z[(co * 2 * h + 2 * i + dy) * 2 * w + 2 * j + dx];
                            }
                        }
                    }
                    y[(ci * h + i) * w + j] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn forward_is_the_adjoint_of_strided_convolution() {
        let mut rng = Rng::new(12);
        let (cin, cout, h, w) = (3, 2, 3, 4);
        let wt = kaiming_init::<f64>(&[cin, cout, 2, 2], 1, &mut rng).unwrap();
        let g = kaiming_init::<f64>(&[1, cin, h, w], 1, &mut rng).unwrap();
        let (y, _) = convtranspose2d_forward(&g, &wt, &Tensor::zeros(&[cout]).unwrap()).unwrap();
        // d/dz <strided_conv(z), g> evaluated one basis vector at a time.
        let len = cout * 4 * h * w;
        for q in 0..len {
            let mut e = vec![0.0; len];
            e[q] = 1.0;
            let s = strided_conv(&e, &wt, h, w);
            let adj: f64 = s.iter().zip(g.data()).map(|(a, b)| a * b).sum();
            assert!((adj - y.data()[q]).abs() < 1e-12, "q={q}");
        }
    }

    #[test]
    fn zero_upstream_and_bias_sum() {
        let mut rng = Rng::new(13);
        let x = kaiming_init::<f64>(&[2, 3, 2, 3], 1, &mut rng).unwrap();
        let wt = kaiming_init::<f64>(&[3, 4, 2, 2], 1, &mut rng).unwrap();
        let (y, cache) =
            convtranspose2d_forward(&x, &wt, &Tensor::zeros(&[4]).unwrap()).unwrap();
        let zero = convtranspose2d_backward(&cache, &y.zeros_like()).unwrap();
        assert!(zero.input.data().iter().chain(zero.weight.data()).all(|&v| v == 0.0));
        assert!(zero.bias.data().iter().all(|&v| v == 0.0));

        let g = kaiming_init::<f64>(y.dims(), 1, &mut rng).unwrap();
        let grads = convtranspose2d_backward(&cache, &g).unwrap();
        let plane = 4 * 6;
        for c in 0..4 {
            let s: f64 = (0..2)
                .flat_map(|b| g.data()[(b * 4 + c) * plane..(b * 4 + c + 1) * plane].to_vec())
                .sum();
            assert!((grads.bias.data()[c] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f32>::zeros(&[1, 3, 2, 2]).unwrap();
        let wt = Tensor::zeros(&[2, 4, 2, 2]).unwrap();
        assert!(convtranspose2d_forward(&x, &wt, &Tensor::zeros(&[4]).unwrap()).is_err());
        let wt = Tensor::zeros(&[3, 4, 3, 3]).unwrap();
        assert!(convtranspose2d_forward(&x, &wt, &Tensor::zeros(&[4]).unwrap()).is_err());
        let wt = Tensor::zeros(&[3, 4, 2, 2]).unwrap();
        let (_, cache) = convtranspose2d_forward(&x, &wt, &Tensor::zeros(&[4]).unwrap()).unwrap();
        assert!(convtranspose2d_backward(&cache, &Tensor::zeros(&[1, 4, 2, 2]).unwrap()).is_err());
    }
}
