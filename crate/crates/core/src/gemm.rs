//! Packed matrix multiply, `C += A * B`.
//!
//! Operands are packed into register-tile panels and the micro-kernel keeps an
//! `MR x NR` accumulator tile. Each output element is accumulated over `k` in
//! strictly increasing order, starting from its current value in `C`, so the
//! result is bitwise identical to the textbook triple loop using
//! [`Real::madd`]. Work is split over row blocks of `C` only, which keeps the
//! summation order independent of the thread count.

use crate::par;
use crate::tensor::Real;

const MR: usize = 6;
const NR: usize = 16;
const KC: usize = 256;
const MC: usize = 96;
const NC: usize = 1024;

/// Read-only strided view of a matrix.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, T> {
    data: &'a [T],
    row_stride: usize,
    col_stride: usize,
}

impl<'a, T: Copy> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// The transpose of this view, without copying.
    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    #[inline(always)]
    fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.row_stride + j * self.col_stride]
    }
}

/// Anything that can write a `kc x NR` panel of the right-hand operand.
///
/// `fill_panel` must write `kc` rows of `NR` values into `dst` (row-major),
/// taking columns `j0..j0 + nr` of rows `k0..k0 + kc` and zero-padding the
/// remaining `NR - nr` columns.
pub trait PanelSource<T>: Sync {
    fn fill_panel(&self, k0: usize, kc: usize, j0: usize, nr: usize, dst: &mut [T]);
}

/// Panel width of the right-hand operand.
pub const PANEL_WIDTH: usize = NR;

impl<T: Real> PanelSource<T> for MatRef<'_, T> {
    fn fill_panel(&self, k0: usize, kc: usize, j0: usize, nr: usize, dst: &mut [T]) {
        if self.col_stride == 1 {
            for p in 0..kc {
                let row = (k0 + p) * self.row_stride + j0;
                let d = &mut dst[p * NR..p * NR + NR];
                d[..nr].copy_from_slice(&self.data[row..row + nr]);
                d[nr..].fill(T::zero());
            }
        } else {
            for p in 0..kc {
                let d = &mut dst[p * NR..p * NR + NR];
                for (j, v) in d.iter_mut().enumerate() {
                    *v = if j < nr { self.at(k0 + p, j0 + j) } else { T::zero() };
                }
            }
        }
    }
}

/// `c[m x n] += a[m x k] * b[k x n]`, with `c` row-major and contiguous.
pub fn gemm<T: Real>(m: usize, n: usize, k: usize, a: MatRef<T>, b: MatRef<T>, c: &mut [T]) {
    gemm_with(m, n, k, a, &b, c)
}

/// [`gemm`] with the right-hand operand supplied panel by panel.
pub fn gemm_with<T: Real, B: PanelSource<T>>(
    m: usize,
    n: usize,
    k: usize,
    a: MatRef<T>,
    b: &B,
    c: &mut [T],
) {
    assert_eq!(c.len(), m * n, "gemm output buffer");
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let mut bpack = vec![T::zero(); NC.min(n).div_ceil(NR) * KC.min(k) * NR];
    let mut j_base = 0;
    while j_base < n {
        let nc = NC.min(n - j_base);
        let n_panels = nc.div_ceil(NR);
        let mut k0 = 0;
        while k0 < k {
            let kc = KC.min(k - k0);
            let bpack = &mut bpack[..n_panels * kc * NR];
            pack_b(b, k0, kc, j_base, nc, bpack);
            let bpack = &*bpack;
            par::for_each_chunk_mut(c, MC * n, |block, c_rows| {
                let i0 = block * MC;
                let rows = c_rows.len() / n;
                let m_panels = rows.div_ceil(MR);
                let mut apack = vec![T::zero(); m_panels * kc * MR];
                pack_a(&a, i0, rows, k0, kc, &mut apack);
                for jp in 0..n_panels {
                    let bp = &bpack[jp * kc * NR..(jp + 1) * kc * NR];
                    let j0 = j_base + jp * NR;
                    let nr = NR.min(j_base + nc - j0);
                    for ip in 0..m_panels {
                        let ap = &apack[ip * kc * MR..(ip + 1) * kc * MR];
                        let r0 = ip * MR;
                        let mr = MR.min(rows - r0);
                        tile(kc, ap, bp, c_rows, n, r0, mr, j0, nr);
                    }
                }
            });
            k0 += kc;
        }
        j_base += nc;
    }
}

fn pack_b<T: Real, B: PanelSource<T>>(
    b: &B,
    k0: usize,
    kc: usize,
    j_base: usize,
    nc: usize,
    out: &mut [T],
) {
    for (jp, panel) in out.chunks_exact_mut(kc * NR).enumerate() {
        let j0 = j_base + jp * NR;
        let nr = NR.min(j_base + nc - j0);
        b.fill_panel(k0, kc, j0, nr, panel);
    }
}

fn pack_a<T: Real>(a: &MatRef<T>, i0: usize, rows: usize, k0: usize, kc: usize, out: &mut [T]) {
    for (ip, panel) in out.chunks_exact_mut(kc * MR).enumerate() {
        let r0 = ip * MR;
        let mr = MR.min(rows - r0);
        for p in 0..kc {
            let dst = &mut panel[p * MR..p * MR + MR];
            for (i, d) in dst.iter_mut().enumerate() {
                *d = if i < mr {
                    a.at(i0 + r0 + i, k0 + p)
                } else {
                    T::zero()
                };
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn tile<T: Real>(
    kc: usize,
    ap: &[T],
    bp: &[T],
    c: &mut [T],
    ldc: usize,
    r0: usize,
    mr: usize,
    j0: usize,
    nr: usize,
) {
    let mut acc = [[T::zero(); NR]; MR];
    for i in 0..mr {
        let row = (r0 + i) * ldc + j0;
        acc[i][..nr].copy_from_slice(&c[row..row + nr]);
    }
    micro_kernel(kc, ap, bp, &mut acc);
    for i in 0..mr {
        let row = (r0 + i) * ldc + j0;
        c[row..row + nr].copy_from_slice(&acc[i][..nr]);
    }
}

#[inline(always)]
fn micro_kernel<T: Real>(kc: usize, ap: &[T], bp: &[T], acc: &mut [[T; NR]; MR]) {
    let ap = &ap[..kc * MR];
    let bp = &bp[..kc * NR];
    for (a, b) in ap.chunks_exact(MR).zip(bp.chunks_exact(NR)) {
        let b: &[T; NR] = b.try_into().unwrap();
        for i in 0..MR {
            let ai = a[i];
            let row = &mut acc[i];
            for j in 0..NR {
                row[j] = row[j].madd(ai, b[j]);
            }
        }
    }
}
