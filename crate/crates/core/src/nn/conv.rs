//! Same-padded stride-1 convolution (cross-correlation) with odd square kernels.
//!
//! The network uses 3x3 kernels everywhere except the final 1x1 mask
//! projection. Padding is `(k - 1) / 2` so the spatial size is preserved.

use crate::error::{Error, Result};
use crate::gemm::{self, MatRef, PanelSource};
use crate::par;
use crate::tensor::{Real, Tensor};

/// Everything `conv2d_backward` needs.
#[derive(Clone, Debug)]
pub struct Conv2dCache<T> {
    input: Tensor<T>,
    weight: Tensor<T>,
}

impl<T: Real> Conv2dCache<T> {
    pub fn input(&self) -> &Tensor<T> {
        &self.input
    }
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Column view of one `[C, H, W]` image for a `k x k` same-padded window.
/// Row `(c, ky, kx)`, column `y * W + x` holds `image[c, y + ky - pad, x + kx - pad]`,
/// or zero outside the image.
pub(crate) struct Im2col<'a, T> {
    image: &'a [T],
    height: usize,
    width: usize,
    k: usize,
}

impl<'a, T: Real> Im2col<'a, T> {
    pub(crate) fn new(image: &'a [T], height: usize, width: usize, k: usize) -> Self {
        Im2col {
            image,
            height,
            width,
            k,
        }
    }

    /// Writes columns `j0..j0 + dst.len()` of row `row` into `dst`.
    #[inline]
    fn row_segment(&self, row: usize, j0: usize, dst: &mut [T]) {
        let (h, w, k) = (self.height, self.width, self.k);
        let pad = (k - 1) / 2;
        let c = row / (k * k);
        let ky = (row / k) % k;
        let kx = row % k;
        let plane = &self.image[c * h * w..(c + 1) * h * w];
        let mut j = 0;
        while j < dst.len() {
            let pix = j0 + j;
            let (y, x) = (pix / w, pix % w);
            let run = (w - x).min(dst.len() - j);
            let out = &mut dst[j..j + run];
            let iy = (y + ky).wrapping_sub(pad);
            if iy >= h {
                out.fill(T::zero());
            } else {
                let src_row = &plane[iy * w..(iy + 1) * w];
                // Source column for out[t] is x + t + kx - pad.
                let shift = kx as isize - pad as isize;
                let lo = (-(x as isize + shift)).max(0) as usize;
                let hi = ((w as isize - x as isize - shift).max(0) as usize).min(run);
                if lo >= hi {
                    out.fill(T::zero());
                } else {
                    out[..lo].fill(T::zero());
                    let s0 = (x as isize + shift + lo as isize) as usize;
                    out[lo..hi].copy_from_slice(&src_row[s0..s0 + hi - lo]);
                    out[hi..].fill(T::zero());
                }
            }
            j += run;
        }
    }

    pub(crate) fn rows(&self, channels: usize) -> usize {
        channels * self.k * self.k
    }

    /// The full `[rows, H * W]` column matrix.
    pub(crate) fn materialize(&self, channels: usize) -> Vec<T> {
        let pixels = self.height * self.width;
        let mut out = vec![T::zero(); self.rows(channels) * pixels];
        for (row, dst) in out.chunks_exact_mut(pixels).enumerate() {
            self.row_segment(row, 0, dst);
        }
        out
    }
}

impl<T: Real> PanelSource<T> for Im2col<'_, T> {
    fn fill_panel(&self, k0: usize, kc: usize, j0: usize, nr: usize, dst: &mut [T]) {
        let width = gemm::PANEL_WIDTH;
        for p in 0..kc {
            let d = &mut dst[p * width..(p + 1) * width];
            self.row_segment(k0 + p, j0, &mut d[..nr]);
            d[nr..].fill(T::zero());
        }
    }
}

fn check_shapes<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, cin, h, w) = input.shape().nchw()?;
    let (cout, wcin, kh, kw) = weight.shape().nchw()?;
    if wcin != cin {
        return Err(Error::shape(format!(
            "conv2d: input has {cin} channels, weight expects {wcin}"
        )));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::shape(format!(
            "conv2d: kernel must be square and odd, got {kh}x{kw}"
        )));
    }
    bias.expect_shape(&[cout])?;
    Ok((n, cin, h, w, cout, kh))
}

pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, Conv2dCache<T>)> {
    let (n, cin, h, w, cout, k) = check_shapes(input, weight, bias)?;
    let pixels = h * w;
    let kdim = cin * k * k;
    let mut out = Tensor::zeros(&[n, cout, h, w])?;
    let x = input.data();
    let wm = MatRef::row_major(weight.data(), kdim);
    let b = bias.data();
    par::for_each_chunk_mut(out.data_mut(), cout * pixels, |s, y| {
        let image = &x[s * cin * pixels..(s + 1) * cin * pixels];
        gemm::gemm_with(cout, pixels, kdim, wm, &Im2col::new(image, h, w, k), y);
        for (row, &bc) in y.chunks_exact_mut(pixels).zip(b) {
            row.iter_mut().for_each(|v| *v += bc);
        }
    });
    let cache = Conv2dCache {
        input: input.clone(),
        weight: weight.clone(),
    };
    Ok((out, cache))
}

/// Per-channel sums of `grad` over batch and space; per-sample partial sums
/// are added in batch order.
pub(crate) fn channel_sums<T: Real>(grad: &[T], n: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut total = vec![T::zero(); channels];
    for s in 0..n {
        let sample = &grad[s * channels * plane..(s + 1) * channels * plane];
        for (t, ch) in total.iter_mut().zip(sample.chunks_exact(plane)) {
            *t += ch.iter().fold(T::zero(), |acc, &v| acc + v);
        }
    }
    total
}

/// Adds per-sample buffers elementwise, in sample order.
pub(crate) fn sum_in_order<T: Real>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut total = vec![T::zero(); len];
    for part in parts {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
}

pub fn conv2d_backward<T: Real>(
    cache: &Conv2dCache<T>,
    grad_out: &Tensor<T>,
) -> Result<Conv2dGrads<T>> {
    let input = &cache.input;
    let weight = &cache.weight;
    let (n, cin, h, w) = input.shape().nchw()?;
    let (cout, _, k, _) = weight.shape().nchw()?;
    grad_out.expect_shape(&[n, cout, h, w])?;
    let pixels = h * w;
    let kdim = cin * k * k;
    let x = input.data();
    let g = grad_out.data();

    // Input gradient is a same-padded correlation of grad_out with the
    // spatially flipped, channel-transposed kernel.
    let mut flipped = vec![T::zero(); cin * cout * k * k];
    let wd = weight.data();
    for co in 0..cout {
        for ci in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    let src = ((co * cin + ci) * k + ky) * k + kx;
                    let dst = ((ci * cout + co) * k + (k - 1 - ky)) * k + (k - 1 - kx);
                    flipped[dst] = wd[src];
                }
            }
        }
    }
    let fm = MatRef::row_major(&flipped, cout * k * k);
    let mut grad_input = Tensor::zeros(input.dims())?;
    par::for_each_chunk_mut(grad_input.data_mut(), cin * pixels, |s, gx| {
        let gs = &g[s * cout * pixels..(s + 1) * cout * pixels];
        gemm::gemm_with(cin, pixels, cout * k * k, fm, &Im2col::new(gs, h, w, k), gx);
    });

    // Weight gradient, transposed: [kdim, cout] = cols[kdim, P] * g^T[P, cout].
    let parts = par::map_range(n, |s| {
        let image = &x[s * cin * pixels..(s + 1) * cin * pixels];
        let cols = Im2col::new(image, h, w, k).materialize(cin);
        let gs = &g[s * cout * pixels..(s + 1) * cout * pixels];
        let mut gwt = vec![T::zero(); kdim * cout];
        gemm::gemm(
            kdim,
            cout,
            pixels,
            MatRef::row_major(&cols, pixels),
            MatRef::row_major(gs, pixels).t(),
            &mut gwt,
        );
        gwt
    });
    let gwt = sum_in_order(parts, kdim * cout);
    let mut gw = vec![T::zero(); cout * kdim];
    for r in 0..kdim {
        for co in 0..cout {
            gw[co * kdim + r] = gwt[r * cout + co];
        }
    }

    let gb = channel_sums(g, n, cout, pixels);
    Ok(Conv2dGrads {
        input: grad_input,
        weight: Tensor::from_vec(weight.dims(), gw)?,
        bias: Tensor::from_vec(&[cout], gb)?,
    })
}
