//! Symmetric band parameterisation of square convolution kernels.
//!
//! A `k × k` kernel is split into `⌊k/2⌋ + 2` radial bands. Every position in
//! a band shares one trainable coefficient, so the expanded kernel is fixed by
//! all eight symmetries of the square.
//!
//! Band rule for an offset `p` from the centre, with `r = ⌊k/2⌋`:
//! `band(p) = round(|p|)` when `|p| <= r`, otherwise the outer corner band
//! `r + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::real::Real;
use crate::tensor::Tensor4;

/// A symmetry orbit of kernel offsets, stored in the fixed summation tree
/// used by the band-pooled convolution. Offsets are `(dy, dx)`.
///
/// Antipodal offsets are paired; pairs that a quarter turn swaps live in
/// different halves. Summing `((a + b) + (c + d))` level by level then gives
/// the same floating-point result for every D4 image of the input, because
/// each group element only permutes operands of commutative additions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Orbit {
    Center,
    /// Four offsets on the axes or the diagonals: `(p0 + p1) + (q0 + q1)`.
    Quad([[(i64, i64); 2]; 2]),
    /// Eight generic offsets: `((A0 + A1) + (A2 + A3)) + ((B0 + B1) + (B2 + B3))`
    /// where `A` has `|dy| < |dx|` and `B` the transposed half.
    Oct([[[(i64, i64); 2]; 2]; 2]),
}

impl Orbit {
    fn from_representative(a: i64, b: i64) -> Self {
        debug_assert!(0 <= a && a <= b);
        if b == 0 {
            Orbit::Center
        } else if a == 0 {
            Orbit::Quad([[(0, b), (0, -b)], [(b, 0), (-b, 0)]])
        } else if a == b {
            Orbit::Quad([[(b, b), (-b, -b)], [(b, -b), (-b, b)]])
        } else {
            Orbit::Oct([
                [[(a, b), (-a, -b)], [(a, -b), (-a, b)]],
                [[(b, a), (-b, -a)], [(b, -a), (-b, a)]],
            ])
        }
    }

    pub fn offsets(&self) -> Vec<(i64, i64)> {
        match self {
            Orbit::Center => vec![(0, 0)],
            Orbit::Quad(p) => p.iter().flatten().copied().collect(),
            Orbit::Oct(p) => p.iter().flatten().flatten().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Orbit::Center => 1,
            Orbit::Quad(_) => 4,
            Orbit::Oct(_) => 8,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// D4-invariant assignment of the `k × k` kernel positions to radial bands.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BandPartition {
    k: usize,
    bands: usize,
    band_of: Vec<usize>,
    band_sizes: Vec<usize>,
    members: Vec<Vec<usize>>,
    orbits: Vec<Vec<Orbit>>,
}

/// Band index for offset `(dy, dx)` of a kernel with radius `r`.
fn band_for_offset(dy: i64, dx: i64, r: i64) -> usize {
    let sq = dy * dy + dx * dx;
    if sq > r * r {
        return (r + 1) as usize;
    }
    // round(sqrt(sq)): the smallest m with sqrt(sq) < m + 1/2, i.e. 4 sq < (2m+1)^2.
    // sqrt of an integer is never exactly a half-integer, so ties cannot occur.
    let mut m = 0i64;
    while 4 * sq >= (2 * m + 1) * (2 * m + 1) {
        m += 1;
    }
    m as usize
}

/// Build the band partition for an odd kernel size `k >= 3`.
pub fn build_band_partition(k: usize) -> Result<BandPartition> {
    ensure!(
        k >= 3 && k % 2 == 1,
        InvalidArgument,
        "kernel size must be odd and >= 3, got {k}"
    );
    let r = (k / 2) as i64;
    let bands = k / 2 + 2;
    let mut band_of = vec![0; k * k];
    let mut members = vec![Vec::new(); bands];
    for y in 0..k {
        for x in 0..k {
            let band = band_for_offset(y as i64 - r, x as i64 - r, r);
            band_of[y * k + x] = band;
            members[band].push(y * k + x);
        }
    }
    let band_sizes: Vec<usize> = members.iter().map(Vec::len).collect();

    let mut orbits = vec![Vec::new(); bands];
    for b in 0..=r {
        for a in 0..=b {
            orbits[band_for_offset(a, b, r)].push(Orbit::from_representative(a, b));
        }
    }

    let part = BandPartition {
        k,
        bands,
        band_of,
        band_sizes,
        members,
        orbits,
    };
    debug_assert!(part.band_sizes.iter().all(|&s| s > 0));
    Ok(part)
}

impl BandPartition {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn radius(&self) -> usize {
        self.k / 2
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Band of every kernel position, row-major `k × k`.
    pub fn band_grid(&self) -> &[usize] {
        &self.band_of
    }

    pub fn band_of(&self, y: usize, x: usize) -> usize {
        self.band_of[y * self.k + x]
    }

    pub fn band_sizes(&self) -> &[usize] {
        &self.band_sizes
    }

    /// Flattened kernel positions belonging to `band`.
    pub fn members(&self, band: usize) -> &[usize] {
        &self.members[band]
    }

    /// Symmetry orbits making up `band`, in summation order.
    pub fn orbits(&self, band: usize) -> &[Orbit] {
        &self.orbits[band]
    }

    /// Dense binary `[b, k²]` index matrix, row `j` marking the positions of band `j`.
    pub fn index_matrix(&self) -> Vec<Vec<u8>> {
        (0..self.bands)
            .map(|j| self.band_of.iter().map(|&b| u8::from(b == j)).collect())
            .collect()
    }

    /// Text rendering of the band grid, one row per line.
    pub fn render(&self) -> String {
        let width = (self.bands - 1).to_string().len();
        let mut out = String::new();
        for y in 0..self.k {
            let row: Vec<String> = (0..self.k)
                .map(|x| format!("{:>width$}", self.band_of(y, x)))
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Trainable band coefficients, shape `[c_out, c_in, bands]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandTheta<T> {
    pub c_out: usize,
    pub c_in: usize,
    pub bands: usize,
    pub data: Vec<T>,
}

impl<T: Real> BandTheta<T> {
    pub fn new(c_out: usize, c_in: usize, bands: usize, data: Vec<T>) -> Result<Self> {
        ensure!(
            data.len() == c_out * c_in * bands,
            Shape,
            "theta length {} != {c_out}x{c_in}x{bands}",
            data.len()
        );
        Ok(Self {
            c_out,
            c_in,
            bands,
            data,
        })
    }

    pub fn zeros(c_out: usize, c_in: usize, bands: usize) -> Self {
        Self {
            c_out,
            c_in,
            bands,
            data: vec![T::zero(); c_out * c_in * bands],
        }
    }

    #[inline]
    pub fn get(&self, o: usize, i: usize, j: usize) -> T {
        self.data[(o * self.c_in + i) * self.bands + j]
    }
}

/// Coefficients of one symmetric convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SreConvParams<T> {
    pub theta: BandTheta<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Real> SreConvParams<T> {
    pub fn new(theta: BandTheta<T>, bias: Option<Vec<T>>) -> Result<Self> {
        if let Some(b) = &bias {
            ensure!(
                b.len() == theta.c_out,
                Shape,
                "bias length {} != c_out {}",
                b.len(),
                theta.c_out
            );
        }
        ensure!(
            theta
                .data
                .iter()
                .chain(bias.iter().flatten())
                .all(|v| v.is_finite()),
            InvalidArgument,
            "non-finite SRE coefficient"
        );
        Ok(Self { theta, bias })
    }

    pub fn c_out(&self) -> usize {
        self.theta.c_out
    }

    pub fn c_in(&self) -> usize {
        self.theta.c_in
    }

    pub fn check_partition(&self, part: &BandPartition) -> Result<()> {
        ensure!(
            self.theta.bands == part.bands(),
            InvalidArgument,
            "theta has {} bands but the k={} partition has {}",
            self.theta.bands,
            part.k(),
            part.bands()
        );
        Ok(())
    }
}

/// Expand band coefficients into a dense `[c_out, c_in, k, k]` kernel.
pub fn expand_kernel<T: Real>(
    params: &SreConvParams<T>,
    part: &BandPartition,
) -> Result<Tensor4<T>> {
    expand_theta(&params.theta, part)
}

pub fn expand_theta<T: Real>(theta: &BandTheta<T>, part: &BandPartition) -> Result<Tensor4<T>> {
    ensure!(
        theta.bands == part.bands(),
        InvalidArgument,
        "theta has {} bands but the k={} partition has {}",
        theta.bands,
        part.k(),
        part.bands()
    );
    let kk = part.k() * part.k();
    let mut data = Vec::with_capacity(theta.c_out * theta.c_in * kk);
    for pair in theta.data.chunks_exact(theta.bands) {
        data.extend(part.band_grid().iter().map(|&b| pair[b]));
    }
    Tensor4::new([theta.c_out, theta.c_in, part.k(), part.k()], data)
}

/// Adjoint of [`expand_kernel`]: sum the kernel gradient over each band.
pub fn expansion_backward<T: Real>(
    grad_kernel: &Tensor4<T>,
    part: &BandPartition,
) -> Result<BandTheta<T>> {
    let [c_out, c_in, kh, kw] = grad_kernel.dims();
    ensure!(
        kh == part.k() && kw == part.k(),
        InvalidArgument,
        "gradient kernel is {kh}x{kw}, partition expects {0}x{0}",
        part.k()
    );
    let mut out = BandTheta::zeros(c_out, c_in, part.bands());
    for (pair, g) in out
        .data
        .chunks_exact_mut(part.bands())
        .zip(grad_kernel.data().chunks_exact(kh * kw))
    {
        for (&b, &v) in part.band_grid().iter().zip(g) {
            pair[b] += v;
        }
    }
    Ok(out)
}
