//! Seeded He-uniform initialisation.
//!
//! Dense kernels draw from `U(±√(6 / (c_in·k²)))`. Band coefficients draw
//! from the same distribution, so every expanded kernel entry has the dense
//! variance, and are then shifted by a common offset so the expanded kernel
//! sums to zero. A tied kernel with a nonzero sum acts mostly as a local
//! mean filter; on smooth non-negative inputs its sign is then the same at
//! every pixel and whole channels start out dead or exploding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::kernel::BandPartition;
use crate::real::Real;
use crate::rng::stream;

pub(crate) const INIT_DOMAIN: u64 = 0x1417;

pub(crate) fn dense_kernel<T: Real>(
    seed: u64,
    param_index: usize,
    c_out: usize,
    c_in: usize,
    k: usize,
) -> Vec<T> {
    let mut rng: ChaCha8Rng = stream(seed, INIT_DOMAIN, param_index as u64);
    let bound = (6.0 / (c_in * k * k) as f64).sqrt();
    (0..c_out * c_in * k * k)
        .map(|_| T::of(rng.gen_range(-bound..bound)))
        .collect()
}

pub(crate) fn band_theta<T: Real>(
    seed: u64,
    param_index: usize,
    c_out: usize,
    c_in: usize,
    part: &BandPartition,
) -> Vec<T> {
    let mut rng: ChaCha8Rng = stream(seed, INIT_DOMAIN, param_index as u64);
    let k2 = (part.k() * part.k()) as f64;
    let bound = (6.0 / (c_in as f64 * k2)).sqrt();
    let sizes = part.band_sizes();
    let mut out = Vec::with_capacity(c_out * c_in * part.bands());
    let mut row = vec![0.0f64; part.bands()];
    for _ in 0..c_out * c_in {
        row.iter_mut()
            .for_each(|t| *t = rng.gen_range(-bound..bound));
        let dc = row
            .iter()
            .zip(sizes)
            .map(|(t, &n)| t * n as f64)
            .sum::<f64>()
            / k2;
        out.extend(row.iter().map(|t| T::of(t - dc)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::build_band_partition;

    #[test]
    fn band_kernels_sum_to_zero() {
        let part = build_band_partition(9).unwrap();
        let theta: Vec<f64> = band_theta(3, 1, 4, 5, &part);
        assert_eq!(theta, band_theta::<f64>(3, 1, 4, 5, &part));
        for row in theta.chunks(part.bands()) {
            let sum: f64 = row
                .iter()
                .zip(part.band_sizes())
                .map(|(t, &n)| t * n as f64)
                .sum();
            assert!(sum.abs() < 1e-12, "{sum}");
            assert!(row.iter().any(|&t| t != 0.0));
        }
    }
}
