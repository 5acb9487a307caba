use rand::Rng;

use crate::data::Sample;
use crate::error::{ensure, Result};
use crate::tensor::{Tensor4, D4};

/// Crop a `patch × patch` window at a uniformly random position fully inside the image.
pub fn sample_patch<R: Rng + ?Sized>(sample: &Sample, patch: usize, rng: &mut R) -> Result<Sample> {
    let (h, w) = (sample.height(), sample.width());
    ensure!(
        patch >= 1 && patch <= h && patch <= w,
        InvalidArgument,
        "patch {patch} does not fit inside {} ({h}x{w})",
        sample.id
    );
    let top = rng.gen_range(0..=h - patch);
    let left = rng.gen_range(0..=w - patch);
    let mut data = Vec::with_capacity(3 * patch * patch);
    for c in 0..3 {
        let plane = sample.image.plane(0, c);
        for y in top..top + patch {
            data.extend_from_slice(&plane[y * w + left..y * w + left + patch]);
        }
    }
    Ok(Sample {
        id: sample.id.clone(),
        image: Tensor4::new([1, 3, patch, patch], data)?,
        label: sample.label.crop(top, left, patch, patch),
        fov: sample.fov.as_ref().map(|f| f.crop(top, left, patch, patch)),
        split: sample.split,
    })
}

/// Apply one group element jointly to image, label and field of view.
pub fn apply_d4(sample: &Sample, g: D4) -> Sample {
    Sample {
        id: sample.id.clone(),
        image: sample.image.transform(g),
        label: sample.label.transform(g),
        fov: sample.fov.as_ref().map(|f| f.transform(g)),
        split: sample.split,
    }
}

/// Apply a uniformly drawn element of D4.
pub fn augment_d4<R: Rng + ?Sized>(sample: &Sample, rng: &mut R) -> Sample {
    apply_d4(sample, D4::from_index(rng.gen_range(0..8)))
}
