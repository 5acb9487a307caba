//! Factor-2 bilinear upsampling on a half-pixel-centred grid with edge
//! clamping. Output pixel `2i + a` samples the input at `i - 1/4` or `i + 1/4`,
//! so the grid is symmetric about the image centre.
//!
//! Each output is `n + (3·((e₁ − n) + (e₂ − n)) + (d − n)) / 16` where `n` is the
//! nearest input pixel, `e₁`/`e₂` its vertical/horizontal neighbours toward the
//! sample point and `d` the diagonal one. A D4 transform only swaps `e₁` and
//! `e₂`, so the result commutes with it exactly, and constants are preserved.

use crate::error::{ensure, Result};
use crate::real::Real;
use crate::tensor::Tensor4;

#[inline]
fn neighbour(i: usize, step_up: bool, len: usize) -> usize {
    if step_up {
        (i + 1).min(len - 1)
    } else {
        i.saturating_sub(1)
    }
}

pub fn upsample2_linear<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = x.dims();
    let (oh, ow) = (2 * h, 2 * w);
    let three = T::of(3.0);
    let sixteenth = T::of(0.0625);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let i = oy / 2;
            let iv = neighbour(i, oy % 2 == 1, h);
            for ox in 0..ow {
                let j = ox / 2;
                let jh = neighbour(j, ox % 2 == 1, w);
                let near = src[i * w + j];
                let e1 = src[iv * w + j] - near;
                let e2 = src[i * w + jh] - near;
                let d = src[iv * w + jh] - near;
                out.push(near + (three * (e1 + e2) + d) * sixteenth);
            }
        }
    }
    Tensor4::new([n, c, oh, ow], out).expect("upsample dims are consistent")
}

/// Exact transpose of [`upsample2_linear`].
pub fn upsample2_linear_backward<T: Real>(grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, c, oh, ow] = grad_y.dims();
    ensure!(
        oh % 2 == 0 && ow % 2 == 0,
        Shape,
        "upsampled gradient must have even dims, got {oh}x{ow}"
    );
    let (h, w) = (oh / 2, ow / 2);
    let w_near = T::of(9.0 / 16.0);
    let w_edge = T::of(3.0 / 16.0);
    let w_diag = T::of(1.0 / 16.0);
    let mut gx = Tensor4::zeros([n, c, h, w]);
    for p in 0..n * c {
        let g = &grad_y.data()[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut gx.data_mut()[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let i = oy / 2;
            let iv = neighbour(i, oy % 2 == 1, h);
            for ox in 0..ow {
                let j = ox / 2;
                let jh = neighbour(j, ox % 2 == 1, w);
                let v = g[oy * ow + ox];
                dst[i * w + j] += w_near * v;
                dst[iv * w + j] += w_edge * v;
                dst[i * w + jh] += w_edge * v;
                dst[iv * w + jh] += w_diag * v;
            }
        }
    }
    Ok(gx)
}
