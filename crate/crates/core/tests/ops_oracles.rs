mod common;

use common::{numeric_grad, rel_err, rng, uniform, uniform_vec, weighted_sum};
use proptest::prelude::*;
use rand::Rng;
use sre_unet::kernel::expand_theta;
use sre_unet::ops::*;
use sre_unet::{build_band_partition, BandTheta, SreConvParams, Tensor4, D4};

const FD_EPS: f64 = 1e-6;
const OP_TOL: f64 = 1e-4;

/// Brute-force correlation written independently of the library.
fn brute_conv(x: &Tensor4<f64>, w: &Tensor4<f64>, bias: &[f64]) -> Tensor4<f64> {
    let [n, ci, h, wd] = x.dims();
    let [co, _, k, _] = w.dims();
    let r = (k / 2) as isize;
    Tensor4::from_fn([n, co, h, wd], |b, o, y, xx| {
        let mut s = bias[o];
        for i in 0..ci {
            for dy in -r..=r {
                for dx in -r..=r {
                    let (sy, sx) = (y as isize + dy, xx as isize + dx);
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                        s += x.at(b, i, sy as usize, sx as usize)
                            * w.at(o, i, (dy + r) as usize, (dx + r) as usize);
                    }
                }
            }
        }
        s
    })
}

#[test]
fn reference_matches_brute_force() {
    let mut r = rng(1);
    let x: Tensor4<f64> = uniform(&mut r, [1, 2, 7, 7], -1.0, 1.0);
    let w: Tensor4<f64> = uniform(&mut r, [3, 2, 3, 3], -1.0, 1.0);
    let bias = uniform_vec(&mut r, 3, -1.0, 1.0);
    let want = brute_conv(&x, &w, &bias);
    let spec = ConvSpec::same();
    assert!(
        conv2d_ref(&x, &w, Some(&bias), &spec)
            .unwrap()
            .max_abs_diff(&want)
            < 1e-12
    );
    assert!(
        conv2d_fast(&x, &w, Some(&bias), &spec)
            .unwrap()
            .max_abs_diff(&want)
            < 1e-12
    );
}

fn rel_to_ref(y: &Tensor4<f32>, y_ref: &Tensor4<f32>) -> f64 {
    y.max_abs_diff(y_ref) / y_ref.max_abs().max(1e-30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fast_paths_match_reference(
        n in 1usize..3, ci in 1usize..5, co in 1usize..5,
        h in 1usize..14, w in 1usize..14,
        half in 0usize..5, seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let spec = ConvSpec::same();
        let x: Tensor4<f32> = uniform(&mut r, [n, ci, h, w], -1.0, 1.0);
        let bias: Vec<f32> = uniform_vec(&mut r, co, -0.5, 0.5);

        let k = 2 * half + 1;
        let dense: Tensor4<f32> = uniform(&mut r, [co, ci, k, k], -1.0, 1.0);
        let y_ref = conv2d_ref(&x, &dense, Some(&bias), &spec).unwrap();
        let y_fast = conv2d_fast(&x, &dense, Some(&bias), &spec).unwrap();
        prop_assert!(rel_to_ref(&y_fast, &y_ref) <= 1e-5);

        let k = (2 * half + 1).max(3);
        let part = build_band_partition(k).unwrap();
        let b = part.bands();
        let theta = BandTheta::new(co, ci, b, uniform_vec(&mut r, co * ci * b, -1.0, 1.0)).unwrap();
        let expanded = expand_theta(&theta, &part).unwrap();
        let params = SreConvParams::new(theta, Some(bias.clone())).unwrap();
        let y_ref = conv2d_ref(&x, &expanded, Some(&bias), &spec).unwrap();
        let y_band = sre_conv_band_pooled(&x, &params, &part, &spec).unwrap();
        prop_assert!(rel_to_ref(&y_band, &y_ref) <= 1e-5);
    }

    #[test]
    fn pooling_and_upsampling_commute_with_d4(half in 1usize..7, c in 1usize..3, seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = 2 * half;
        let x: Tensor4<f32> = uniform(&mut r, [2, c, s, s], -1.0, 1.0);
        for g in D4::all() {
            let xg = x.transform(g);
            prop_assert_eq!(maxpool2(&xg).unwrap().0, maxpool2(&x).unwrap().0.transform(g));
            prop_assert_eq!(upsample2_linear(&xg), upsample2_linear(&x).transform(g));
            prop_assert_eq!(relu(&xg), relu(&x).transform(g));
        }
    }

    #[test]
    fn sre_layer_commutes_with_d4(half in 1usize..5, s in 1usize..12, seed in any::<u64>()) {
        let mut r = rng(seed);
        let part = build_band_partition(2 * half + 1).unwrap();
        let (ci, co, b) = (3, 2, part.bands());
        let theta = BandTheta::new(co, ci, b, uniform_vec(&mut r, co * ci * b, -1.0, 1.0)).unwrap();
        let params = SreConvParams::new(theta, Some(uniform_vec(&mut r, co, -1.0, 1.0))).unwrap();
        let x: Tensor4<f32> = uniform(&mut r, [1, ci, s, s], -1.0, 1.0);
        let spec = ConvSpec::same();
        let y = sre_conv_band_pooled(&x, &params, &part, &spec).unwrap();
        for g in D4::all() {
            let yg = sre_conv_band_pooled(&x.transform(g), &params, &part, &spec).unwrap();
            prop_assert_eq!(yg, y.transform(g));
        }
    }

    #[test]
    fn upsample_adjoint(h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x: Tensor4<f64> = uniform(&mut r, [2, 2, h, w], -1.0, 1.0);
        let g: Tensor4<f64> = uniform(&mut r, [2, 2, 2 * h, 2 * w], -1.0, 1.0);
        let lhs = upsample2_linear(&x).dot(&g);
        let rhs = x.dot(&upsample2_linear_backward(&g).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }
}

#[test]
fn band_pooling_multiply_ratio() {
    let mut r = rng(3);
    let part = build_band_partition(9).unwrap();
    let (n, ci, co, s) = (1, 4, 5, 16);
    let x: Tensor4<f32> = uniform(&mut r, [n, ci, s, s], -1.0, 1.0);
    let theta = BandTheta::new(co, ci, 6, uniform_vec(&mut r, co * ci * 6, -1.0, 1.0)).unwrap();
    let dense = expand_theta(&theta, &part).unwrap();
    let params = SreConvParams::new(theta, None).unwrap();
    let spec = ConvSpec::same();

    let c_dense = OpCounter::new();
    conv2d_fast_counted(&x, &dense, None, &spec, Some(&c_dense)).unwrap();
    let c_band = OpCounter::new();
    sre_conv_band_pooled_counted(&x, &params, &part, &spec, &c_band).unwrap();
    let px = (n * s * s) as u64;
    assert_eq!(c_dense.mults(), (co * ci * 81) as u64 * px);
    assert_eq!(c_band.mults(), (co * ci * 6) as u64 * px);
    assert_eq!(c_band.mults() * 81, c_dense.mults() * 6);
}

#[test]
fn dense_kernel_breaks_rotation_commutation() {
    let mut r = rng(4);
    let x: Tensor4<f32> = uniform(&mut r, [1, 3, 16, 16], 0.0, 1.0);
    let w: Tensor4<f32> = uniform(&mut r, [4, 3, 3, 3], -1.0, 1.0);
    let spec = ConvSpec::same();
    let a = conv2d_fast(&x.rot90(1), &w, None, &spec).unwrap();
    let b = conv2d_fast(&x, &w, None, &spec).unwrap().rot90(1);
    assert!(a.max_abs_diff(&b) > 1e-2);
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut r = rng(5);
    let spec = ConvSpec::same();
    let x: Tensor4<f64> = uniform(&mut r, [2, 3, 5, 6], -1.0, 1.0);
    let w: Tensor4<f64> = uniform(&mut r, [2, 3, 3, 3], -1.0, 1.0);
    let bias: Vec<f64> = uniform_vec(&mut r, 2, -1.0, 1.0);
    let rw: Tensor4<f64> = uniform(&mut r, [2, 2, 5, 6], -1.0, 1.0);
    let g = conv2d_backward(&x, &w, &spec, &rw).unwrap();

    let loss = |x: &Tensor4<f64>, w: &Tensor4<f64>, b: &[f64]| {
        weighted_sum(&conv2d_ref(x, w, Some(b), &spec).unwrap(), &rw)
    };
    let nx = numeric_grad(x.data(), FD_EPS, |v| {
        loss(&Tensor4::new(x.dims(), v.to_vec()).unwrap(), &w, &bias)
    });
    let nw = numeric_grad(w.data(), FD_EPS, |v| {
        loss(&x, &Tensor4::new(w.dims(), v.to_vec()).unwrap(), &bias)
    });
    let nb = numeric_grad(&bias, FD_EPS, |v| loss(&x, &w, v));
    assert!(rel_err(g.grad_x.data(), &nx) <= OP_TOL);
    assert!(rel_err(g.grad_w.data(), &nw) <= OP_TOL);
    assert!(rel_err(&g.grad_bias, &nb) <= OP_TOL);
}

#[test]
fn sre_gradients_match_finite_differences() {
    let mut r = rng(6);
    let spec = ConvSpec::same();
    let part = build_band_partition(5).unwrap();
    let (ci, co, b) = (2, 3, part.bands());
    let x: Tensor4<f64> = uniform(&mut r, [2, ci, 6, 5], -1.0, 1.0);
    let theta = BandTheta::new(co, ci, b, uniform_vec(&mut r, co * ci * b, -1.0, 1.0)).unwrap();
    let bias: Vec<f64> = uniform_vec(&mut r, co, -1.0, 1.0);
    let params = SreConvParams::new(theta.clone(), Some(bias.clone())).unwrap();
    let rw: Tensor4<f64> = uniform(&mut r, [2, co, 6, 5], -1.0, 1.0);
    let g = sre_conv_backward(&x, &params, &part, &spec, &rw).unwrap();

    let loss = |x: &Tensor4<f64>, t: &[f64], bias: &[f64]| {
        let p = SreConvParams::new(
            BandTheta::new(co, ci, b, t.to_vec()).unwrap(),
            Some(bias.to_vec()),
        )
        .unwrap();
        weighted_sum(&sre_conv_band_pooled(x, &p, &part, &spec).unwrap(), &rw)
    };
    let nx = numeric_grad(x.data(), FD_EPS, |v| {
        loss(
            &Tensor4::new(x.dims(), v.to_vec()).unwrap(),
            &theta.data,
            &bias,
        )
    });
    let nt = numeric_grad(&theta.data, FD_EPS, |v| loss(&x, v, &bias));
    let nb = numeric_grad(&bias, FD_EPS, |v| loss(&x, &theta.data, v));
    assert!(rel_err(g.grad_x.data(), &nx) <= OP_TOL);
    assert!(rel_err(&g.grad_theta.data, &nt) <= OP_TOL);
    assert!(rel_err(&g.grad_bias, &nb) <= OP_TOL);
}

#[test]
fn pool_upsample_relu_gradients_match_finite_differences() {
    let mut r = rng(7);
    // distinct values so the argmax and the ReLU gate are stable under perturbation
    let mut vals: Vec<f64> = (0..2 * 2 * 6 * 4)
        .map(|i| i as f64 * 0.01 + 0.005)
        .collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, r.gen_range(0..=i));
    }
    let x = Tensor4::new([2, 2, 6, 4], vals.iter().map(|v| v - 0.48).collect()).unwrap();

    let rp: Tensor4<f64> = uniform(&mut r, [2, 2, 3, 2], -1.0, 1.0);
    let (_, rec) = maxpool2(&x).unwrap();
    let g = maxpool2_backward(&rec, &rp).unwrap();
    let n = numeric_grad(x.data(), FD_EPS, |v| {
        weighted_sum(
            &maxpool2(&Tensor4::new(x.dims(), v.to_vec()).unwrap())
                .unwrap()
                .0,
            &rp,
        )
    });
    assert!(rel_err(g.data(), &n) <= OP_TOL);

    let ru: Tensor4<f64> = uniform(&mut r, [2, 2, 12, 8], -1.0, 1.0);
    let g = upsample2_linear_backward(&ru).unwrap();
    let n = numeric_grad(x.data(), FD_EPS, |v| {
        weighted_sum(
            &upsample2_linear(&Tensor4::new(x.dims(), v.to_vec()).unwrap()),
            &ru,
        )
    });
    assert!(rel_err(g.data(), &n) <= OP_TOL);

    let rr: Tensor4<f64> = uniform(&mut r, x.dims(), -1.0, 1.0);
    let g = relu_backward(&x, &rr).unwrap();
    let n = numeric_grad(x.data(), FD_EPS, |v| {
        weighted_sum(&relu(&Tensor4::new(x.dims(), v.to_vec()).unwrap()), &rr)
    });
    assert!(rel_err(g.data(), &n) <= OP_TOL);
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut r = rng(8);
    let logits: Tensor4<f64> = uniform(&mut r, [2, 2, 4, 3], -3.0, 3.0);
    let labels: Vec<u8> = (0..2 * 4 * 3).map(|_| r.gen_range(0..2)).collect();
    let (_, g) = softmax_ce_loss(&logits, &labels).unwrap();
    let n = numeric_grad(logits.data(), FD_EPS, |v| {
        softmax_ce_loss(&Tensor4::new(logits.dims(), v.to_vec()).unwrap(), &labels)
            .unwrap()
            .0
    });
    assert!(rel_err(g.data(), &n) <= OP_TOL);
    assert!(softmax_ce_loss(&logits, &[2u8; 24]).is_err());
}

#[test]
fn worked_op_examples() {
    let x = Tensor4::new([1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
    let (y, rec) = maxpool2(&x).unwrap();
    assert_eq!(y.data(), &[4.0]);
    let g = maxpool2_backward(&rec, &Tensor4::filled([1, 1, 1, 1], 1.0)).unwrap();
    assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.0]);
    assert!(maxpool2(&Tensor4::<f32>::zeros([1, 1, 3, 4])).is_err());

    let c = Tensor4::filled([1, 2, 4, 4], 0.75f32);
    assert_eq!(maxpool2(&c).unwrap().0, Tensor4::filled([1, 2, 2, 2], 0.75));
    assert_eq!(upsample2_linear(&c), Tensor4::filled([1, 2, 8, 8], 0.75));

    let x: Tensor4<f32> = uniform(&mut rng(9), [1, 2, 5, 6], -1.0, 1.0);
    assert_eq!(x.rot90(4), x);
    assert_eq!(x.rot90(1).rot90(3), x);
    for axis in [sre_unet::FlipAxis::Horizontal, sre_unet::FlipAxis::Vertical] {
        assert_eq!(x.flip(axis).flip(axis), x);
    }

    let part = build_band_partition(3).unwrap();
    let params = SreConvParams::new(
        BandTheta::new(1, 1, 3, vec![1.0f32, 0.0, 0.0]).unwrap(),
        None,
    )
    .unwrap();
    let x1 = Tensor4::new([1, 1, 5, 6], x.data()[..30].to_vec()).unwrap();
    assert_eq!(
        sre_conv_band_pooled(&x1, &params, &part, &ConvSpec::same()).unwrap(),
        x1
    );
}

#[test]
fn conv_shape_errors() {
    let spec = ConvSpec::same();
    let x = Tensor4::<f32>::zeros([1, 2, 4, 4]);
    assert!(conv2d_fast(&x, &Tensor4::zeros([1, 3, 3, 3]), None, &spec).is_err());
    assert!(conv2d_ref(&x, &Tensor4::zeros([1, 2, 2, 2]), None, &spec).is_err());
    assert!(conv2d_fast(&x, &Tensor4::zeros([1, 2, 3, 3]), Some(&[0.0, 1.0]), &spec).is_err());
    let part = build_band_partition(3).unwrap();
    let params = SreConvParams::new(BandTheta::<f32>::zeros(1, 3, 3), None).unwrap();
    assert!(sre_conv_band_pooled(&x, &params, &part, &spec).is_err());
}
