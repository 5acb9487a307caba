use crate::error::{ensure, Result};
use crate::real::Real;
use crate::tensor::Tensor4;

/// Flat input index of the maximum of each 2×2 window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArgmaxRecord {
    input_dims: [usize; 4],
    indices: Vec<usize>,
}

impl ArgmaxRecord {
    pub fn input_dims(&self) -> [usize; 4] {
        self.input_dims
    }
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// 2×2 max pooling with stride 2. Ties go to the first element in row-major
/// window order.
pub fn maxpool2<T: Real>(x: &Tensor4<T>) -> Result<(Tensor4<T>, ArgmaxRecord)> {
    let [n, c, h, w] = x.dims();
    ensure!(
        h % 2 == 0 && w % 2 == 0,
        InvalidArgument,
        "max pooling needs even spatial dims, got {h}x{w}"
    );
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(n * c * oh * ow);
    let mut indices = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let top = base + 2 * i * w + 2 * j;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if data[cand] > data[best] {
                        best = cand;
                    }
                }
                y.push(data[best]);
                indices.push(best);
            }
        }
    }
    Ok((
        Tensor4::new([n, c, oh, ow], y)?,
        ArgmaxRecord {
            input_dims: x.dims(),
            indices,
        },
    ))
}

pub fn maxpool2_backward<T: Real>(
    record: &ArgmaxRecord,
    grad_y: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    ensure!(
        grad_y.data().len() == record.indices.len(),
        Shape,
        "grad_y has {} elements, pooling produced {}",
        grad_y.data().len(),
        record.indices.len()
    );
    let mut gx = Tensor4::zeros(record.input_dims);
    let out = gx.data_mut();
    for (&idx, &g) in record.indices.iter().zip(grad_y.data()) {
        out[idx] += g;
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window() {
        let x = Tensor4::new([1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (y, rec) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let gx = maxpool2_backward(&rec, &Tensor4::filled([1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(gx.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn constant_input_and_tie_break() {
        let x = Tensor4::<f32>::filled([2, 3, 4, 6], 0.25);
        let (y, rec) = maxpool2(&x).unwrap();
        assert_eq!(y.dims(), [2, 3, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 0.25));
        // first element of the window wins ties
        assert_eq!(rec.indices()[0], 0);
        assert_eq!(rec.indices()[1], 2);
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(maxpool2(&Tensor4::<f32>::zeros([1, 1, 3, 4])).is_err());
        assert!(maxpool2(&Tensor4::<f32>::zeros([1, 1, 4, 5])).is_err());
    }
}
