//! Arbitrary-angle nearest-neighbour rotation and the rotated test set.

use serde::{Deserialize, Serialize};

use crate::data::{Mask, Sample};
use crate::tensor::Tensor4;

/// Test angles in degrees: the original plus ±1°…±5°.
pub const DEFAULT_TEST_ANGLES: [i32; 11] = [-5, -4, -3, -2, -1, 0, 1, 2, 3, 4, 5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
}

fn sin_cos_degrees(degrees: f64) -> (f64, f64) {
    let r = degrees.rem_euclid(360.0);
    if r % 90.0 == 0.0 {
        match (r / 90.0) as i32 {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        degrees.to_radians().sin_cos()
    }
}

/// Rotate an `h × w` plane counter-clockwise by `degrees` about its exact
/// centre with nearest-neighbour sampling. Source positions outside the frame
/// take `fill`.
pub fn rotate_plane<T: Copy>(src: &[T], h: usize, w: usize, degrees: f64, fill: T) -> Vec<T> {
    assert_eq!(src.len(), h * w);
    let (s, c) = sin_cos_degrees(degrees);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        let oy = i as f64 - cy;
        for j in 0..w {
            let ox = j as f64 - cx;
            // inverse map: rotate the output offset clockwise
            let sy = (cy + oy * c + ox * s).round();
            let sx = (cx - oy * s + ox * c).round();
            if sy >= 0.0 && sx >= 0.0 && (sy as usize) < h && (sx as usize) < w {
                out.push(src[sy as usize * w + sx as usize]);
            } else {
                out.push(fill);
            }
        }
    }
    out
}

/// Things that can be rotated by an arbitrary angle.
pub trait Rotate: Sized {
    fn rotated(&self, degrees: f64) -> Self;
}

impl Rotate for Mask {
    fn rotated(&self, degrees: f64) -> Self {
        Mask {
            h: self.h,
            w: self.w,
            data: rotate_plane(&self.data, self.h, self.w, degrees, 0),
        }
    }
}

impl Rotate for Tensor4<f32> {
    fn rotated(&self, degrees: f64) -> Self {
        let [n, c, h, w] = self.dims();
        let mut data = Vec::with_capacity(self.data().len());
        for b in 0..n {
            for ch in 0..c {
                data.extend(rotate_plane(self.plane(b, ch), h, w, degrees, 0.0));
            }
        }
        Tensor4::new([n, c, h, w], data).expect("rotation preserves dims")
    }
}

/// Rotate an image or mask; output has the input's shape.
pub fn rotate_arbitrary<R: Rotate>(x: &R, degrees: f64, method: Interpolation) -> R {
    match method {
        Interpolation::Nearest => x.rotated(degrees),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RotatedSample {
    pub base_id: String,
    pub angle: i32,
    pub method: Interpolation,
    pub sample: Sample,
}

/// Every base sample at every angle, base-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RotatedTestSet {
    pub angles: Vec<i32>,
    pub entries: Vec<RotatedSample>,
}

impl RotatedTestSet {
    pub fn base_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for e in &self.entries {
            if !ids.contains(&e.base_id) {
                ids.push(e.base_id.clone());
            }
        }
        ids
    }
}

pub fn make_rotated_testset(samples: &[Sample]) -> RotatedTestSet {
    make_rotated_testset_with_angles(samples, &DEFAULT_TEST_ANGLES)
}

/// Labels and fields of view are rotated with the same transform as the image.
/// The 0° copy is the untouched original.
pub fn make_rotated_testset_with_angles(samples: &[Sample], angles: &[i32]) -> RotatedTestSet {
    let mut entries = Vec::with_capacity(samples.len() * angles.len());
    for s in samples {
        for &angle in angles {
            let sample = if angle == 0 {
                s.clone()
            } else {
                let d = f64::from(angle);
                Sample {
                    id: format!("{}@{angle}", s.id),
                    image: rotate_arbitrary(&s.image, d, Interpolation::Nearest),
                    label: rotate_arbitrary(&s.label, d, Interpolation::Nearest),
                    fov: s
                        .fov
                        .as_ref()
                        .map(|f| rotate_arbitrary(f, d, Interpolation::Nearest)),
                    split: s.split,
                }
            };
            entries.push(RotatedSample {
                base_id: s.id.clone(),
                angle,
                method: Interpolation::Nearest,
                sample,
            });
        }
    }
    RotatedTestSet {
        angles: angles.to_vec(),
        entries,
    }
}
