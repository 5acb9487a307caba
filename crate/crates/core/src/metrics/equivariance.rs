use crate::data::rotate_plane;
use crate::error::{ensure, Result};

/// Pixelwise comparison of a prediction on an original image with the
/// prediction on its rotated copy, rotated back.
#[derive(Clone, Debug, PartialEq)]
pub struct EquivarianceError {
    pub h: usize,
    pub w: usize,
    /// `orig - back_rotated`; zero outside the valid region.
    pub diff: Vec<f32>,
    /// 1 where the pixel survives the round trip through the rotated frame.
    pub valid: Vec<u8>,
    pub mse: f64,
}

/// Pixels that map inside the frame when rotated by `degrees` and back.
pub fn round_trip_region(h: usize, w: usize, degrees: f64) -> Vec<u8> {
    let ones = vec![1u8; h * w];
    let fwd = rotate_plane(&ones, h, w, degrees, 0);
    rotate_plane(&fwd, h, w, -degrees, 0)
}

pub fn equivariance_error(
    pred_orig: &[f32],
    pred_rot: &[f32],
    h: usize,
    w: usize,
    degrees: f64,
) -> Result<EquivarianceError> {
    ensure!(
        pred_orig.len() == h * w && pred_rot.len() == h * w,
        Shape,
        "expected two {h}x{w} maps, got {} and {} values",
        pred_orig.len(),
        pred_rot.len()
    );
    let back = rotate_plane(pred_rot, h, w, -degrees, 0.0);
    let valid = round_trip_region(h, w, degrees);
    let mut diff = vec![0.0f32; h * w];
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for i in 0..h * w {
        if valid[i] != 0 {
            let d = pred_orig[i] - back[i];
            diff[i] = d;
            sum += f64::from(d) * f64::from(d);
            count += 1;
        }
    }
    let mse = if count == 0 { 0.0 } else { sum / count as f64 };
    Ok(EquivarianceError {
        h,
        w,
        diff,
        valid,
        mse,
    })
}
