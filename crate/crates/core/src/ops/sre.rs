//! Band-pooled evaluation of a symmetric convolution.
//!
//! `y = Σ_j θ[·,·,j] · (x ⋆ 1_j)`: each input channel is first pooled over the
//! offsets of every band (additions only, shared by all output channels),
//! then one `[c_out, c_in·b]` matrix multiply mixes channels and bands.
//!
//! Pooling sums each symmetry orbit through the fixed tree described on
//! [`Orbit`], and the channel mix accumulates in the same order at every
//! pixel. On square inputs the layer therefore commutes with all eight D4
//! transforms bit for bit, not just up to rounding.

use crate::error::{ensure, Result};
use crate::kernel::{BandPartition, BandTheta, Orbit, SreConvParams};
use crate::ops::conv::{pad_plane, ConvSpec};
use crate::ops::counter::OpCounter;
use crate::ops::gemm::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc};
use crate::par;
use crate::real::Real;
use crate::tensor::Tensor4;

const TILE_BUDGET: usize = 1 << 22;

/// Gradients of a band-pooled convolution.
#[derive(Clone, Debug)]
pub struct SreGrads<T> {
    pub grad_x: Tensor4<T>,
    pub grad_theta: BandTheta<T>,
    pub grad_bias: Vec<T>,
}

fn check<T: Real>(
    x: &Tensor4<T>,
    params: &SreConvParams<T>,
    part: &BandPartition,
    spec: &ConvSpec,
) -> Result<()> {
    spec.check()?;
    params.check_partition(part)?;
    ensure!(
        params.c_in() == x.c(),
        Shape,
        "SRE layer expects {} input channels, input has {}",
        params.c_in(),
        x.c()
    );
    Ok(())
}

/// Pool one padded channel over every band for output rows `r0..r1`,
/// writing `[bands, (r1-r0)·w]` into `out`.
pub(crate) fn pool_bands<T: Real>(
    padded: &[T],
    part: &BandPartition,
    w: usize,
    r0: usize,
    r1: usize,
    out: &mut [T],
) {
    let r = part.radius() as i64;
    let pw = w + 2 * part.radius();
    let n = (r1 - r0) * w;
    let slice = |y: usize, (dy, dx): (i64, i64)| -> &[T] {
        let start = (y as i64 + r + dy) as usize * pw + (r + dx) as usize;
        &padded[start..start + w]
    };
    for (j, dst_band) in out.chunks_exact_mut(n).take(part.bands()).enumerate() {
        for (oi, orbit) in part.orbits(j).iter().enumerate() {
            let first = oi == 0;
            for y in r0..r1 {
                let dst = &mut dst_band[(y - r0) * w..(y - r0 + 1) * w];
                match orbit {
                    Orbit::Center => {
                        let s = slice(y, (0, 0));
                        if first {
                            dst.copy_from_slice(s);
                        } else {
                            dst.iter_mut().zip(s).for_each(|(d, &v)| *d += v);
                        }
                    }
                    Orbit::Quad([[a, b], [c, d]]) => {
                        let (sa, sb, sc, sd) =
                            (slice(y, *a), slice(y, *b), slice(y, *c), slice(y, *d));
                        for x in 0..w {
                            let v = (sa[x] + sb[x]) + (sc[x] + sd[x]);
                            if first {
                                dst[x] = v;
                            } else {
                                dst[x] += v;
                            }
                        }
                    }
                    Orbit::Oct([[[a0, a1], [a2, a3]], [[b0, b1], [b2, b3]]]) => {
                        let s = [
                            slice(y, *a0),
                            slice(y, *a1),
                            slice(y, *a2),
                            slice(y, *a3),
                            slice(y, *b0),
                            slice(y, *b1),
                            slice(y, *b2),
                            slice(y, *b3),
                        ];
                        for x in 0..w {
                            let v = ((s[0][x] + s[1][x]) + (s[2][x] + s[3][x]))
                                + ((s[4][x] + s[5][x]) + (s[6][x] + s[7][x]));
                            if first {
                                dst[x] = v;
                            } else {
                                dst[x] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn pooling_adds(part: &BandPartition, c_in: usize, pixels: usize) -> u64 {
    let k = part.k();
    ((k * k - part.bands()) * c_in * pixels) as u64
}

/// Band-pooled forward pass.
pub fn sre_conv_band_pooled<T: Real>(
    x: &Tensor4<T>,
    params: &SreConvParams<T>,
    part: &BandPartition,
    spec: &ConvSpec,
) -> Result<Tensor4<T>> {
    Ok(sre_forward(x, params, part, spec, false, None)?.0)
}

pub fn sre_conv_band_pooled_counted<T: Real>(
    x: &Tensor4<T>,
    params: &SreConvParams<T>,
    part: &BandPartition,
    spec: &ConvSpec,
    counter: &OpCounter,
) -> Result<Tensor4<T>> {
    Ok(sre_forward(x, params, part, spec, false, Some(counter))?.0)
}

/// Pooled input planes `[c_in·b, h·w]` per sample, kept for the backward pass.
pub type PooledCache<T> = Vec<Vec<T>>;

/// Forward pass; with `keep_pooled` the pooled planes are returned (whole
/// image in one tile) so the backward pass can skip re-pooling.
pub(crate) fn sre_forward<T: Real>(
    x: &Tensor4<T>,
    params: &SreConvParams<T>,
    part: &BandPartition,
    spec: &ConvSpec,
    keep_pooled: bool,
    counter: Option<&OpCounter>,
) -> Result<(Tensor4<T>, Option<PooledCache<T>>)> {
    check(x, params, part, spec)?;
    let [n, c_in, h, w] = x.dims();
    let c_out = params.c_out();
    let bands = part.bands();
    let kdim = c_in * bands;
    let hw = h * w;
    let tile = if keep_pooled {
        h
    } else {
        (TILE_BUDGET / (kdim * w)).clamp(1, h)
    };

    let mut y = Tensor4::zeros([n, c_out, h, w]);
    let pooled_out: Vec<Option<Vec<T>>> = par::map_chunks(y.data_mut(), c_out * hw, |b, out| {
        if let Some(bias) = &params.bias {
            for (o, chunk) in out.chunks_exact_mut(hw).enumerate() {
                chunk.fill(bias[o]);
            }
        }
        let padded: Vec<Vec<T>> = (0..c_in)
            .map(|c| pad_plane(x.plane(b, c), h, w, part.radius()))
            .collect();
        let mut pooled = vec![T::zero(); kdim * tile * w];
        let mut r0 = 0;
        while r0 < h {
            let r1 = (r0 + tile).min(h);
            let cols = (r1 - r0) * w;
            for (c, plane) in padded.iter().enumerate() {
                pool_bands(
                    plane,
                    part,
                    w,
                    r0,
                    r1,
                    &mut pooled[c * bands * cols..(c + 1) * bands * cols],
                );
            }
            gemm_acc(
                c_out,
                kdim,
                cols,
                &params.theta.data,
                kdim,
                &pooled,
                cols,
                &mut out[r0 * w..],
                hw,
            );
            r0 = r1;
        }
        keep_pooled.then_some(pooled)
    });
    OpCounter::record(
        counter,
        (n * c_out * kdim * hw) as u64,
        (n * c_out * kdim * hw) as u64 + pooling_adds(part, c_in, n * hw),
    );
    let cache = if keep_pooled {
        Some(pooled_out.into_iter().map(Option::unwrap).collect())
    } else {
        None
    };
    Ok((y, cache))
}

/// Backward pass of the band-pooled convolution.
pub fn sre_conv_backward<T: Real>(
    x: &Tensor4<T>,
    params: &SreConvParams<T>,
    part: &BandPartition,
    spec: &ConvSpec,
    grad_y: &Tensor4<T>,
) -> Result<SreGrads<T>> {
    let (_, pooled) = sre_forward(x, params, part, spec, true, None)?;
    sre_backward_cached(
        x.dims(),
        params,
        part,
        pooled.as_deref().unwrap_or_default(),
        grad_y,
    )
}

pub(crate) fn sre_backward_cached<T: Real>(
    x_dims: [usize; 4],
    params: &SreConvParams<T>,
    part: &BandPartition,
    pooled: &[Vec<T>],
    grad_y: &Tensor4<T>,
) -> Result<SreGrads<T>> {
    let [n, c_in, h, w] = x_dims;
    let c_out = params.c_out();
    ensure!(
        grad_y.dims() == [n, c_out, h, w],
        Shape,
        "grad_y dims {:?} != expected {:?}",
        grad_y.dims(),
        [n, c_out, h, w]
    );
    ensure!(
        pooled.len() == n,
        Shape,
        "pooled cache holds {} samples, batch is {n}",
        pooled.len()
    );
    let bands = part.bands();
    let kdim = c_in * bands;
    let hw = h * w;
    let rad = part.radius();
    let pw = w + 2 * rad;

    let partials = par::map_indices(n, |b| {
        let gy = grad_y.sample(b);
        let mut g_theta = vec![T::zero(); c_out * kdim];
        gemm_a_bt_acc(c_out, hw, kdim, gy, &pooled[b], &mut g_theta);
        let g_bias: Vec<T> = gy
            .chunks_exact(hw)
            .map(|p| p.iter().copied().sum())
            .collect();

        let mut g_pooled = vec![T::zero(); kdim * hw];
        gemm_at_b_acc(kdim, c_out, hw, &params.theta.data, gy, &mut g_pooled);

        let mut gx = vec![T::zero(); c_in * hw];
        let mut gpad = vec![T::zero(); (h + 2 * rad) * pw];
        for c in 0..c_in {
            gpad.fill(T::zero());
            for j in 0..bands {
                let gp = &g_pooled[(c * bands + j) * hw..][..hw];
                for &pos in part.members(j) {
                    let (ky, kx) = (pos / part.k(), pos % part.k());
                    for y in 0..h {
                        let dst = &mut gpad[(y + ky) * pw + kx..][..w];
                        dst.iter_mut()
                            .zip(&gp[y * w..(y + 1) * w])
                            .for_each(|(d, &s)| *d += s);
                    }
                }
            }
            for y in 0..h {
                gx[c * hw + y * w..c * hw + (y + 1) * w]
                    .copy_from_slice(&gpad[(y + rad) * pw + rad..][..w]);
            }
        }
        (gx, g_theta, g_bias)
    });

    let mut grad_x = Tensor4::zeros(x_dims);
    let mut grad_theta = BandTheta::zeros(c_out, c_in, bands);
    let mut grad_bias = vec![T::zero(); c_out];
    for (b, (gx, gt, gb)) in partials.into_iter().enumerate() {
        grad_x.data_mut()[b * c_in * hw..(b + 1) * c_in * hw].copy_from_slice(&gx);
        grad_theta
            .data
            .iter_mut()
            .zip(&gt)
            .for_each(|(a, v)| *a += *v);
        grad_bias.iter_mut().zip(&gb).for_each(|(a, v)| *a += *v);
    }
    Ok(SreGrads {
        grad_x,
        grad_theta,
        grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::build_band_partition;
    use crate::tensor::D4;

    fn lcg_tensor(dims: [usize; 4], seed: u64) -> Tensor4<f32> {
        let mut s = seed;
        Tensor4::from_fn(dims, |_, _, _, _| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 40) as f32 / (1u64 << 24) as f32) - 0.5
        })
    }

    #[test]
    fn centre_band_only_is_identity() {
        let part = build_band_partition(3).unwrap();
        let params = SreConvParams::new(
            BandTheta::new(1, 1, 3, vec![1.0f32, 0.0, 0.0]).unwrap(),
            None,
        )
        .unwrap();
        let x = lcg_tensor([2, 1, 6, 5], 3);
        assert_eq!(
            sre_conv_band_pooled(&x, &params, &part, &ConvSpec::same()).unwrap(),
            x
        );
    }

    #[test]
    fn exactly_equivariant_on_square_inputs() {
        let part = build_band_partition(7).unwrap();
        let theta = lcg_tensor([1, 1, 3 * 2, 5], 11).into_data();
        let params = SreConvParams::new(
            BandTheta::new(3, 2, 5, theta).unwrap(),
            Some(vec![0.1, -0.2, 0.3]),
        )
        .unwrap();
        let x = lcg_tensor([2, 2, 12, 12], 5);
        let spec = ConvSpec::same();
        let y = sre_conv_band_pooled(&x, &params, &part, &spec).unwrap();
        for g in D4::all() {
            let yg = sre_conv_band_pooled(&x.transform(g), &params, &part, &spec).unwrap();
            assert_eq!(yg, y.transform(g), "{g:?}");
        }
    }

    #[test]
    fn tiled_and_cached_paths_agree() {
        let part = build_band_partition(5).unwrap();
        let params = SreConvParams::new(
            BandTheta::new(2, 3, 4, lcg_tensor([1, 1, 1, 24], 2).into_data()).unwrap(),
            None,
        )
        .unwrap();
        let x = lcg_tensor([1, 3, 9, 7], 8);
        let spec = ConvSpec::same();
        let (a, _) = sre_forward(&x, &params, &part, &spec, true, None).unwrap();
        let (b, _) = sre_forward(&x, &params, &part, &spec, false, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_partition_rejected() {
        let part = build_band_partition(5).unwrap();
        let params = SreConvParams::new(BandTheta::<f32>::zeros(1, 1, 3), None).unwrap();
        let x = Tensor4::zeros([1, 1, 4, 4]);
        assert!(sre_conv_band_pooled(&x, &params, &part, &ConvSpec::same()).is_err());
        let params = SreConvParams::new(BandTheta::<f32>::zeros(1, 2, 4), None).unwrap();
        assert!(sre_conv_band_pooled(&x, &params, &part, &ConvSpec::same()).is_err());
    }
}
