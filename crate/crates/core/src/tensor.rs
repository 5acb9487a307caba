//! Dense `[N, C, H, W]` feature maps and the lossless dihedral (D4) spatial
//! transforms used throughout for augmentation and equivariance checks.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::real::Real;

/// Dense 4-d array, row-major in `(N, C, H, W)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn new(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        ensure!(
            dims.iter().all(|&d| d >= 1),
            Shape,
            "all tensor dims must be >= 1, got {dims:?}"
        );
        ensure!(
            data.len() == dims.iter().product::<usize>(),
            Shape,
            "data length {} does not match dims {dims:?}",
            data.len()
        );
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::filled(dims, T::zero())
    }

    pub fn filled(dims: [usize; 4], value: T) -> Self {
        assert!(dims.iter().all(|&d| d >= 1), "zero-sized tensor {dims:?}");
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut t = Self::zeros(dims);
        let [n, c, h, w] = dims;
        let mut idx = 0;
        for a in 0..n {
            for b in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        t.data[idx] = f(a, b, y, x);
                        idx += 1;
                    }
                }
            }
        }
        t
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }
    pub fn n(&self) -> usize {
        self.dims[0]
    }
    pub fn c(&self) -> usize {
        self.dims[1]
    }
    pub fn h(&self) -> usize {
        self.dims[2]
    }
    pub fn w(&self) -> usize {
        self.dims[3]
    }
    pub fn plane_len(&self) -> usize {
        self.dims[2] * self.dims[3]
    }
    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.plane_len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let start = self.index(n, c, 0, 0);
        &self.data[start..start + self.plane_len()]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let start = self.index(n, c, 0, 0);
        let len = self.plane_len();
        &mut self.data[start..start + len]
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.dims == other.dims
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.as_f64().abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on mismatched dims");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a.as_f64() - b.as_f64()).abs()))
    }

    /// Concatenate along channels: `[N, Ca, H, W] ++ [N, Cb, H, W]`.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        ensure!(
            a.n() == b.n() && a.h() == b.h() && a.w() == b.w(),
            Shape,
            "cannot concat {:?} with {:?}",
            a.dims,
            b.dims
        );
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        for n in 0..a.n() {
            data.extend_from_slice(a.sample(n));
            data.extend_from_slice(b.sample(n));
        }
        Tensor4::new([a.n(), a.c() + b.c(), a.h(), a.w()], data)
    }

    /// Inverse of [`Tensor4::concat_channels`]: split the first `ca` channels off.
    pub fn split_channels(&self, ca: usize) -> Result<(Self, Self)> {
        ensure!(
            ca >= 1 && ca < self.c(),
            Shape,
            "cannot split {} channels into {ca} + rest",
            self.c()
        );
        let plane = self.plane_len();
        let cb = self.c() - ca;
        let mut a = Vec::with_capacity(self.n() * ca * plane);
        let mut b = Vec::with_capacity(self.n() * cb * plane);
        for n in 0..self.n() {
            let s = self.sample(n);
            a.extend_from_slice(&s[..ca * plane]);
            b.extend_from_slice(&s[ca * plane..]);
        }
        Ok((
            Tensor4::new([self.n(), ca, self.h(), self.w()], a)?,
            Tensor4::new([self.n(), cb, self.h(), self.w()], b)?,
        ))
    }

    /// Stack single-sample tensors along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        ensure!(!items.is_empty(), Shape, "cannot stack zero tensors");
        let [_, c, h, w] = items[0].dims;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        for t in items {
            ensure!(
                t.dims[1..] == [c, h, w],
                Shape,
                "stack dims mismatch: {:?} vs {:?}",
                t.dims,
                items[0].dims
            );
            data.extend_from_slice(&t.data);
        }
        let n = data.len() / (c * h * w);
        Tensor4::new([n, c, h, w], data)
    }

    /// Apply a D4 element to the two spatial axes of every plane.
    pub fn transform(&self, g: D4) -> Self {
        let [n, c, h, w] = self.dims;
        let (oh, ow) = g.output_dims(h, w);
        let mut data = Vec::with_capacity(self.data.len());
        for a in 0..n {
            for b in 0..c {
                data.extend(transform_plane(self.plane(a, b), h, w, g).0);
            }
        }
        Self {
            dims: [n, c, oh, ow],
            data,
        }
    }

    /// Counter-clockwise rotation by `quarter_turns` × 90°.
    pub fn rot90(&self, quarter_turns: i32) -> Self {
        self.transform(D4::rotation(quarter_turns))
    }

    pub fn flip(&self, axis: FlipAxis) -> Self {
        let g = match axis {
            FlipAxis::Horizontal => D4::new(0, true),
            // vertical flip = horizontal flip followed by a half turn
            FlipAxis::Vertical => D4::new(2, true),
        };
        self.transform(g)
    }
}

/// Mirror axis for [`Tensor4::flip`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlipAxis {
    /// Reverse column order (mirror left/right).
    Horizontal,
    /// Reverse row order (mirror top/bottom).
    Vertical,
}

/// An element of the dihedral group of the square: an optional horizontal
/// mirror followed by `quarter_turns` counter-clockwise rotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct D4 {
    quarter_turns: u8,
    flip: bool,
}

impl D4 {
    pub const IDENTITY: D4 = D4 {
        quarter_turns: 0,
        flip: false,
    };

    pub fn new(quarter_turns: i32, flip: bool) -> Self {
        Self {
            quarter_turns: quarter_turns.rem_euclid(4) as u8,
            flip,
        }
    }

    pub fn rotation(quarter_turns: i32) -> Self {
        Self::new(quarter_turns, false)
    }

    /// All eight elements in a fixed order; `from_index(i) == all()[i]`.
    pub fn all() -> [D4; 8] {
        std::array::from_fn(Self::from_index)
    }

    pub fn from_index(i: usize) -> Self {
        Self::new((i % 4) as i32, i >= 4)
    }

    pub fn index(self) -> usize {
        self.quarter_turns as usize + if self.flip { 4 } else { 0 }
    }

    pub fn quarter_turns(self) -> u8 {
        self.quarter_turns
    }

    pub fn is_flip(self) -> bool {
        self.flip
    }

    pub fn inverse(self) -> Self {
        if self.flip {
            // every mirror composition is an involution
            self
        } else {
            Self::rotation(4 - self.quarter_turns as i32)
        }
    }

    pub fn output_dims(self, h: usize, w: usize) -> (usize, usize) {
        if self.quarter_turns.is_multiple_of(2) {
            (h, w)
        } else {
            (w, h)
        }
    }

    /// Source `(row, col)` in an `h × w` input for output position `(i, j)`.
    #[inline]
    pub fn source_of(self, i: usize, j: usize, h: usize, w: usize) -> (usize, usize) {
        let (r, c) = match self.quarter_turns {
            0 => (i, j),
            1 => (j, w - 1 - i),
            2 => (h - 1 - i, w - 1 - j),
            _ => (h - 1 - j, i),
        };
        if self.flip {
            (r, w - 1 - c)
        } else {
            (r, c)
        }
    }

    /// Action on a kernel offset `(dy, dx)` measured from the centre, matching
    /// how the transform moves image content.
    pub fn apply_offset(self, dy: i64, dx: i64) -> (i64, i64) {
        let (mut y, mut x) = (dy, if self.flip { -dx } else { dx });
        for _ in 0..self.quarter_turns {
            // counter-clockwise quarter turn in (row, col) coordinates
            let (ny, nx) = (-x, y);
            y = ny;
            x = nx;
        }
        (y, x)
    }
}

/// Apply `g` to one `h × w` row-major plane. Returns the new plane and dims.
pub fn transform_plane<T: Copy>(src: &[T], h: usize, w: usize, g: D4) -> (Vec<T>, usize, usize) {
    assert_eq!(src.len(), h * w, "plane length does not match {h}x{w}");
    let (oh, ow) = g.output_dims(h, w);
    let mut out = Vec::with_capacity(src.len());
    for i in 0..oh {
        for j in 0..ow {
            let (r, c) = g.source_of(i, j, h, w);
            out.push(src[r * w + c]);
        }
    }
    (out, oh, ow)
}
