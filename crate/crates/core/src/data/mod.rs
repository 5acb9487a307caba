//! Dataset ingestion, patch sampling, augmentation, rotated test sets and a
//! synthetic vessel generator.

mod augment;
mod io;
mod manifest;
mod rotate;
mod synth;

pub use augment::{apply_d4, augment_d4, sample_patch};
pub use io::{read_label, read_rgb, write_gray_map, write_label, write_rgb};
pub use manifest::{load_dataset, load_manifest, DatasetManifest, Layout, ManifestEntry};
pub use rotate::{
    make_rotated_testset, make_rotated_testset_with_angles, rotate_arbitrary, rotate_plane,
    Interpolation, RotatedSample, RotatedTestSet, DEFAULT_TEST_ANGLES,
};
pub use synth::{gen_synthetic_vessels, gen_synthetic_with, write_dataset, SynthParams};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::{transform_plane, Tensor4, D4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Binary `h × w` mask with values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        ensure!(
            data.len() == h * w,
            Shape,
            "mask length {} != {h}x{w}",
            data.len()
        );
        ensure!(
            data.iter().all(|&v| v <= 1),
            InvalidArgument,
            "mask values must be 0 or 1"
        );
        Ok(Self { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    pub fn ones(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![1; h * w],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn transform(&self, g: D4) -> Self {
        let (data, h, w) = transform_plane(&self.data, self.h, self.w, g);
        Self { h, w, data }
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in top..top + h {
            data.extend_from_slice(&self.data[y * self.w + left..y * self.w + left + w]);
        }
        Self { h, w, data }
    }
}

/// One image with its vessel label. `image` is `[1, 3, H, W]` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor4<f32>,
    pub label: Mask,
    pub fov: Option<Mask>,
    pub split: Split,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        image: Tensor4<f32>,
        label: Mask,
        fov: Option<Mask>,
        split: Split,
    ) -> Result<Self> {
        let id = id.into();
        ensure!(
            image.n() == 1 && image.c() == 3,
            Shape,
            "sample {id}: image must be [1, 3, H, W], got {:?}",
            image.dims()
        );
        ensure!(
            (label.h, label.w) == (image.h(), image.w()),
            Shape,
            "sample {id}: label {}x{} does not match image {}x{}",
            label.h,
            label.w,
            image.h(),
            image.w()
        );
        if let Some(f) = &fov {
            ensure!(
                (f.h, f.w) == (image.h(), image.w()),
                Shape,
                "sample {id}: fov mask {}x{} does not match image",
                f.h,
                f.w
            );
        }
        Ok(Self {
            id,
            image,
            label,
            fov,
            split,
        })
    }

    pub fn height(&self) -> usize {
        self.image.h()
    }

    pub fn width(&self) -> usize {
        self.image.w()
    }
}

/// An ordered collection of samples with split membership.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<Sample> {
        self.samples
            .iter()
            .filter(|s| s.split == split)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
