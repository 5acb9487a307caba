//! Small row-major matrix kernels. Every output element is accumulated in a
//! fixed order over the inner dimension, independent of its position, which
//! keeps results reproducible and position-independent.

use crate::real::Real;

const COL_BLOCK: usize = 256;

#[inline]
fn axpy<T: Real>(c: &mut [T], a: T, b: &[T]) {
    for (cv, &bv) in c.iter_mut().zip(b) {
        *cv += a * bv;
    }
}

/// Four simultaneous axpys sharing one read of `b`.
#[inline]
fn axpy4<T: Real>(c: [&mut [T]; 4], a: [T; 4], b: &[T]) {
    let [c0, c1, c2, c3] = c;
    let n = b.len();
    let (c0, c1, c2, c3) = (&mut c0[..n], &mut c1[..n], &mut c2[..n], &mut c3[..n]);
    for j in 0..n {
        let bv = b[j];
        c0[j] += a[0] * bv;
        c1[j] += a[1] * bv;
        c2[j] += a[2] * bv;
        c3[j] += a[3] * bv;
    }
}

fn four_rows<T>(c: &mut [T], ld: usize, i: usize, j0: usize, j1: usize) -> [&mut [T]; 4] {
    let (r0, rest) = c[i * ld..].split_at_mut(ld);
    let (r1, rest) = rest.split_at_mut(ld);
    let (r2, r3) = rest.split_at_mut(ld);
    [
        &mut r0[j0..j1],
        &mut r1[j0..j1],
        &mut r2[j0..j1],
        &mut r3[j0..j1],
    ]
}

/// `c[m × n] += a[m × k] · b[k × n]` with explicit leading dimensions.
#[allow(clippy::too_many_arguments)]
pub fn gemm_acc<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    c: &mut [T],
    ldc: usize,
) {
    let mut j0 = 0;
    while j0 < n {
        let j1 = (j0 + COL_BLOCK).min(n);
        let mut i = 0;
        while i + 4 <= m {
            for p in 0..k {
                let av = [
                    a[i * lda + p],
                    a[(i + 1) * lda + p],
                    a[(i + 2) * lda + p],
                    a[(i + 3) * lda + p],
                ];
                if av.iter().all(|&v| v == T::zero()) {
                    continue;
                }
                let rows = four_rows(c, ldc, i, j0, j1);
                axpy4(rows, av, &b[p * ldb + j0..p * ldb + j1]);
            }
            i += 4;
        }
        for i in i..m {
            for p in 0..k {
                let av = a[i * lda + p];
                if av != T::zero() {
                    axpy(
                        &mut c[i * ldc + j0..i * ldc + j1],
                        av,
                        &b[p * ldb + j0..p * ldb + j1],
                    );
                }
            }
        }
        j0 = j1;
    }
}

/// `c[m × n] += aᵀ · b` where `a` is stored `[k × m]` and `b` is `[k × n]`.
pub fn gemm_at_b_acc<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    let mut j0 = 0;
    while j0 < n {
        let j1 = (j0 + COL_BLOCK).min(n);
        for i in 0..m {
            let crow = &mut c[i * n + j0..i * n + j1];
            for p in 0..k {
                let av = a[p * m + i];
                if av != T::zero() {
                    axpy(crow, av, &b[p * n + j0..p * n + j1]);
                }
            }
        }
        j0 = j1;
    }
}

/// `c[m × n] += a · bᵀ` where `a` is `[m × k]` and `b` is `[n × k]` (row dot products).
pub fn gemm_a_bt_acc<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    let mut i = 0;
    while i + 4 <= m {
        let rows = [
            &a[i * k..(i + 1) * k],
            &a[(i + 1) * k..(i + 2) * k],
            &a[(i + 2) * k..(i + 3) * k],
            &a[(i + 3) * k..(i + 4) * k],
        ];
        for j in 0..n {
            let d = dot4(rows, &b[j * k..(j + 1) * k]);
            for (r, v) in d.into_iter().enumerate() {
                c[(i + r) * n + j] += v;
            }
        }
        i += 4;
    }
    for i in i..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Four dot products against a shared right operand, each with four
/// accumulators.
#[inline]
fn dot4<T: Real>(a: [&[T]; 4], b: &[T]) -> [T; 4] {
    let k = b.len();
    let mut acc = [[T::zero(); 4]; 4];
    let chunks = k / 4;
    for q in 0..chunks {
        let base = q * 4;
        for l in 0..4 {
            let bv = b[base + l];
            for r in 0..4 {
                acc[r][l] += a[r][base + l] * bv;
            }
        }
    }
    let mut out = [T::zero(); 4];
    for r in 0..4 {
        let mut tail = T::zero();
        for p in chunks * 4..k {
            tail += a[r][p] * b[p];
        }
        out[r] = (acc[r][0] + acc[r][1]) + (acc[r][2] + acc[r][3]) + tail;
    }
    out
}

/// Dot product with eight independent accumulators so the loop vectorises.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for (ca, cb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = a[r * cols + c];
            }
        }
        t
    }

    #[test]
    fn all_three_layouts_agree_with_naive() {
        let (m, k, n) = (7, 19, 700);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let b: Vec<f64> = (0..k * n)
            .map(|i| ((i * 104729) % 17) as f64 - 8.0)
            .collect();
        let want = naive(m, k, n, &a, &b);

        let mut c = vec![0.0; m * n];
        gemm_acc(m, k, n, &a, k, &b, n, &mut c, n);
        assert_eq!(c, want);

        let mut c = vec![0.0; m * n];
        gemm_at_b_acc(m, k, n, &transpose(m, k, &a), &b, &mut c);
        assert_eq!(c, want);

        let mut c = vec![0.0; m * n];
        gemm_a_bt_acc(m, k, n, &a, &transpose(k, n, &b), &mut c);
        assert_eq!(c, want);
    }
}
