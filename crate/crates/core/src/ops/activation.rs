use crate::error::{ensure, Result};
use crate::real::Real;
use crate::tensor::Tensor4;

pub fn relu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU given its input `x`.
pub fn relu_backward<T: Real>(x: &Tensor4<T>, grad_y: &Tensor4<T>) -> Result<Tensor4<T>> {
    ensure!(
        x.same_dims(grad_y),
        Shape,
        "relu gradient dims {:?} != input dims {:?}",
        grad_y.dims(),
        x.dims()
    );
    let data = x
        .data()
        .iter()
        .zip(grad_y.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::new(x.dims(), data)
}

/// Pixel-wise two-class softmax cross-entropy averaged over every pixel of
/// the batch. `labels` is `[N, H, W]` flattened with values in `{0, 1}`.
pub fn softmax_ce_loss<T: Real>(logits: &Tensor4<T>, labels: &[u8]) -> Result<(T, Tensor4<T>)> {
    let [n, c, h, w] = logits.dims();
    ensure!(c == 2, Shape, "expected 2 logit channels, got {c}");
    ensure!(
        labels.len() == n * h * w,
        Shape,
        "label count {} != {n}x{h}x{w}",
        labels.len()
    );
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(crate::Error::InvalidArgument(format!(
            "label value {bad} outside {{0, 1}}"
        )));
    }
    let hw = h * w;
    let count = (n * hw) as f64;
    let mut grad = Tensor4::zeros(logits.dims());
    let mut total = 0.0f64;
    for b in 0..n {
        for p in 0..hw {
            let z0 = logits.data()[(2 * b) * hw + p].as_f64();
            let z1 = logits.data()[(2 * b + 1) * hw + p].as_f64();
            let m = z0.max(z1);
            let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
            let lse = m + (e0 + e1).ln();
            let label = labels[b * hw + p];
            total += lse - if label == 1 { z1 } else { z0 };
            let p1 = e1 / (e0 + e1);
            let t1 = f64::from(label);
            let g = grad.data_mut();
            g[(2 * b) * hw + p] = T::of(((1.0 - p1) - (1.0 - t1)) / count);
            g[(2 * b + 1) * hw + p] = T::of((p1 - t1) / count);
        }
    }
    Ok((T::of(total / count), grad))
}

/// Softmax probability of class 1 for each pixel: `[N, H, W]` flattened.
pub fn foreground_probability<T: Real>(logits: &Tensor4<T>) -> Result<Vec<T>> {
    let [n, c, h, w] = logits.dims();
    ensure!(c == 2, Shape, "expected 2 logit channels, got {c}");
    let hw = h * w;
    let mut out = Vec::with_capacity(n * hw);
    for b in 0..n {
        let (z0, z1) = (logits.plane(b, 0), logits.plane(b, 1));
        out.extend(
            z0.iter()
                .zip(z1)
                .map(|(&a, &b)| T::one() / (T::one() + (a - b).exp())),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_logits_give_near_zero_loss() {
        let labels = [0u8, 1, 1, 0];
        let logits = Tensor4::new(
            [1, 2, 2, 2],
            vec![20.0f64, -20.0, -20.0, 20.0, -20.0, 20.0, 20.0, -20.0],
        )
        .unwrap();
        let (loss, _) = softmax_ce_loss(&logits, &labels).unwrap();
        assert!(loss < 1e-15, "{loss}");
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Tensor4::<f64>::filled([2, 2, 3, 3], 0.7);
        let labels = vec![1u8; 18];
        let (loss, grad) = softmax_ce_loss(&logits, &labels).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((grad.data()[9] + 0.5 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_labels() {
        let logits = Tensor4::<f32>::zeros([1, 2, 1, 2]);
        assert!(softmax_ce_loss(&logits, &[0, 2]).is_err());
        assert!(softmax_ce_loss(&logits, &[0]).is_err());
        assert!(softmax_ce_loss(&Tensor4::<f32>::zeros([1, 3, 1, 2]), &[0, 1]).is_err());
    }

    #[test]
    fn relu_gate() {
        let x = Tensor4::new([1, 1, 1, 3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor4::filled([1, 1, 1, 3], 5.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }
}
