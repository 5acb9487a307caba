//! Dense stride-1 "same" cross-correlation: a direct reference loop, an
//! im2col + matrix-multiply fast path, and the backward pass.

use crate::error::{ensure, Result};
use crate::ops::counter::OpCounter;
use crate::ops::gemm::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor4;

/// Upper bound on the element count of one im2col tile.
const TILE_BUDGET: usize = 1 << 22;

/// Only stride 1 with zero "same" padding of width `⌊k/2⌋` is supported, so
/// output spatial dims always equal input dims.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self::same()
    }
}

impl ConvSpec {
    pub fn same() -> Self {
        Self { stride: 1 }
    }

    pub(crate) fn check(&self) -> Result<()> {
        ensure!(
            self.stride == 1,
            InvalidArgument,
            "only stride 1 is supported, got {}",
            self.stride
        );
        Ok(())
    }
}

/// Gradients of a dense convolution.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub grad_x: Tensor4<T>,
    pub grad_w: Tensor4<T>,
    pub grad_bias: Vec<T>,
}

pub(crate) fn check_dense<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<()> {
    spec.check()?;
    let [c_out, c_in, kh, kw] = w.dims();
    ensure!(
        kh == kw && kh % 2 == 1,
        Shape,
        "kernel must be square with odd size, got {kh}x{kw}"
    );
    ensure!(
        c_in == x.c(),
        Shape,
        "kernel expects {c_in} input channels, input has {}",
        x.c()
    );
    if let Some(b) = bias {
        ensure!(
            b.len() == c_out,
            Shape,
            "bias length {} != {c_out}",
            b.len()
        );
    }
    Ok(())
}

/// Zero-pad a `h × w` plane by `r` on every side.
pub(crate) fn pad_plane<T: Real>(src: &[T], h: usize, w: usize, r: usize) -> Vec<T> {
    let pw = w + 2 * r;
    let mut out = vec![T::zero(); (h + 2 * r) * pw];
    for y in 0..h {
        out[(y + r) * pw + r..(y + r) * pw + r + w].copy_from_slice(&src[y * w..(y + 1) * w]);
    }
    out
}

fn fill_bias<T: Real>(out: &mut [T], bias: Option<&[T]>, plane: usize) {
    if let Some(b) = bias {
        for (o, chunk) in out.chunks_exact_mut(plane).enumerate() {
            chunk.fill(b[o]);
        }
    }
}

/// Reference cross-correlation by direct summation.
pub fn conv2d_ref<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor4<T>> {
    conv2d_ref_counted(x, w, bias, spec, None)
}

pub fn conv2d_ref_counted<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
    counter: Option<&OpCounter>,
) -> Result<Tensor4<T>> {
    check_dense(x, w, bias, spec)?;
    let [n, c_in, h, wd] = x.dims();
    let [c_out, _, k, _] = w.dims();
    let r = (k / 2) as isize;
    let mut y = Tensor4::zeros([n, c_out, h, wd]);
    let mut mults = 0u64;
    for b in 0..n {
        for o in 0..c_out {
            for i in 0..h {
                for j in 0..wd {
                    let mut acc = bias.map_or(T::zero(), |bv| bv[o]);
                    for c in 0..c_in {
                        for ky in 0..k {
                            let sy = i as isize + ky as isize - r;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let sx = j as isize + kx as isize - r;
                                if sx < 0 || sx >= wd as isize {
                                    continue;
                                }
                                acc += x.at(b, c, sy as usize, sx as usize) * w.at(o, c, ky, kx);
                                mults += 1;
                            }
                        }
                    }
                    let idx = y.index(b, o, i, j);
                    y.data_mut()[idx] = acc;
                }
            }
        }
    }
    OpCounter::record(counter, mults, mults);
    Ok(y)
}

fn tile_rows(k_rows: usize, h: usize, w: usize) -> usize {
    (TILE_BUDGET / (k_rows * w).max(1)).clamp(1, h)
}

/// Gather rows `r0..r1` of the zero-padded sample into an im2col matrix
/// `[c_in·k·k, (r1-r0)·w]`.
fn im2col_rows<T: Real>(
    padded: &[Vec<T>],
    k: usize,
    w: usize,
    r0: usize,
    r1: usize,
    col: &mut [T],
) {
    let pw = w + k - 1;
    let n = (r1 - r0) * w;
    for (c, plane) in padded.iter().enumerate() {
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((c * k + ky) * k + kx) * n..][..n];
                for y in r0..r1 {
                    let src = &plane[(y + ky) * pw + kx..][..w];
                    row[(y - r0) * w..(y - r0 + 1) * w].copy_from_slice(src);
                }
            }
        }
    }
}

/// im2col + matrix multiply. Same contract as [`conv2d_ref`].
pub fn conv2d_fast<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor4<T>> {
    conv2d_fast_counted(x, w, bias, spec, None)
}

pub fn conv2d_fast_counted<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
    counter: Option<&OpCounter>,
) -> Result<Tensor4<T>> {
    check_dense(x, w, bias, spec)?;
    let [n, c_in, h, wd] = x.dims();
    let [c_out, _, k, _] = w.dims();
    let kdim = c_in * k * k;
    let hw = h * wd;
    let tile = tile_rows(kdim, h, wd);
    let mut y = Tensor4::zeros([n, c_out, h, wd]);
    par::for_each_chunk(y.data_mut(), c_out * hw, |b, out| {
        fill_bias(out, bias, hw);
        let padded: Vec<Vec<T>> = (0..c_in)
            .map(|c| pad_plane(x.plane(b, c), h, wd, k / 2))
            .collect();
        let mut col = vec![T::zero(); kdim * tile * wd];
        let mut r0 = 0;
        while r0 < h {
            let r1 = (r0 + tile).min(h);
            let cols = (r1 - r0) * wd;
            im2col_rows(&padded, k, wd, r0, r1, &mut col);
            gemm_acc(
                c_out,
                kdim,
                cols,
                w.data(),
                kdim,
                &col,
                cols,
                &mut out[r0 * wd..],
                hw,
            );
            r0 = r1;
        }
    });
    let macs = (n * c_out * kdim * hw) as u64;
    OpCounter::record(counter, macs, macs);
    Ok(y)
}

/// Adjoint of the dense convolution. `grad_x` is accumulated through the
/// transposed im2col matrix, which is the same as correlating `grad_y` with
/// the spatially flipped, channel-transposed kernel.
pub fn conv2d_backward<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    spec: &ConvSpec,
    grad_y: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    check_dense(x, w, None, spec)?;
    let [n, c_in, h, wd] = x.dims();
    let [c_out, _, k, _] = w.dims();
    ensure!(
        grad_y.dims() == [n, c_out, h, wd],
        Shape,
        "grad_y dims {:?} != expected {:?}",
        grad_y.dims(),
        [n, c_out, h, wd]
    );
    let kdim = c_in * k * k;
    let hw = h * wd;
    let r = k / 2;
    let pw = wd + 2 * r;
    let tile = tile_rows(kdim, h, wd);

    let mut grad_x = Tensor4::zeros(x.dims());
    let partials = par::map_indices(n, |b| {
        let padded: Vec<Vec<T>> = (0..c_in)
            .map(|c| pad_plane(x.plane(b, c), h, wd, r))
            .collect();
        let gy = grad_y.sample(b);
        let mut gw = vec![T::zero(); c_out * kdim];
        let gb: Vec<T> = gy
            .chunks_exact(hw)
            .map(|p| p.iter().copied().sum())
            .collect();
        let mut gpad = vec![vec![T::zero(); (h + 2 * r) * pw]; c_in];
        let mut col = vec![T::zero(); kdim * tile * wd];
        let mut gcol = vec![T::zero(); kdim * tile * wd];
        let mut gy_tile = vec![T::zero(); c_out * tile * wd];
        let mut r0 = 0;
        while r0 < h {
            let r1 = (r0 + tile).min(h);
            let cols = (r1 - r0) * wd;
            im2col_rows(&padded, k, wd, r0, r1, &mut col);
            for o in 0..c_out {
                gy_tile[o * cols..(o + 1) * cols].copy_from_slice(&gy[o * hw + r0 * wd..][..cols]);
            }
            gemm_a_bt_acc(
                c_out,
                cols,
                kdim,
                &gy_tile[..c_out * cols],
                &col[..kdim * cols],
                &mut gw,
            );
            let gcol = &mut gcol[..kdim * cols];
            gcol.fill(T::zero());
            gemm_at_b_acc(kdim, c_out, cols, w.data(), &gy_tile[..c_out * cols], gcol);
            for (c, gp) in gpad.iter_mut().enumerate() {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = &gcol[((c * k + ky) * k + kx) * cols..][..cols];
                        for y in r0..r1 {
                            let dst = &mut gp[(y + ky) * pw + kx..][..wd];
                            for (d, &s) in dst.iter_mut().zip(&row[(y - r0) * wd..][..wd]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
            r0 = r1;
        }
        let gx: Vec<T> = gpad
            .iter()
            .flat_map(|gp| (0..h).flat_map(move |y| gp[(y + r) * pw + r..][..wd].iter().copied()))
            .collect();
        (gx, gw, gb)
    });

    let mut grad_w = vec![T::zero(); c_out * kdim];
    let mut grad_bias = vec![T::zero(); c_out];
    for (b, (gx, gw, gb)) in partials.into_iter().enumerate() {
        let len = c_in * hw;
        grad_x.data_mut()[b * len..(b + 1) * len].copy_from_slice(&gx);
        grad_w.iter_mut().zip(&gw).for_each(|(a, v)| *a += *v);
        grad_bias.iter_mut().zip(&gb).for_each(|(a, v)| *a += *v);
    }
    Ok(ConvGrads {
        grad_x,
        grad_w: Tensor4::new(w.dims(), grad_w)?,
        grad_bias,
    })
}
