//! Procedural vessel phantoms: a dark background with a smooth intensity
//! gradient, bright random-walk tubes of width 1–4 px and mild noise. The
//! walks of each image share a random global heading, so the set as a whole
//! has no preferred orientation.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::io::{write_label, write_rgb};
use crate::data::manifest::{DatasetManifest, ManifestEntry};
use crate::data::{Mask, Sample, Split};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::Tensor4;

const SYNTH_DOMAIN: u64 = 0x5157;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub vessels: (usize, usize),
    pub width: (f64, f64),
    pub contrast: (f64, f64),
    pub noise_sigma: f64,
    /// Accepted foreground fraction; images outside are redrawn.
    pub density: (f64, f64),
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            vessels: (3, 6),
            width: (1.0, 4.0),
            contrast: (0.35, 0.6),
            noise_sigma: 0.03,
            density: (0.02, 0.20),
        }
    }
}

struct Canvas {
    size: usize,
    /// distance to the nearest tube centre line, in units of that tube's radius
    norm_dist: Vec<f64>,
    /// contrast of the tube that owns `norm_dist`
    contrast: Vec<f64>,
}

impl Canvas {
    fn stamp(&mut self, py: f64, px: f64, radius: f64, contrast: f64) {
        let reach = (radius * 1.6).ceil() as i64 + 1;
        let (cy, cx) = (py.round() as i64, px.round() as i64);
        let n = self.size as i64;
        for y in (cy - reach).max(0)..=(cy + reach).min(n - 1) {
            for x in (cx - reach).max(0)..=(cx + reach).min(n - 1) {
                let d = ((y as f64 - py).powi(2) + (x as f64 - px).powi(2)).sqrt() / radius;
                let i = (y * n + x) as usize;
                if d < self.norm_dist[i] {
                    self.norm_dist[i] = d;
                    self.contrast[i] = contrast;
                }
            }
        }
    }
}

fn draw_walk(canvas: &mut Canvas, rng: &mut ChaCha8Rng, heading: f64, p: &SynthParams) {
    let size = canvas.size as f64;
    let radius = rng.gen_range(p.width.0..=p.width.1) / 2.0;
    let contrast = rng.gen_range(p.contrast.0..=p.contrast.1);
    let (sy, sx) = (
        rng.gen_range(0.2..0.8) * size,
        rng.gen_range(0.2..0.8) * size,
    );
    let half_len = rng.gen_range(0.3..0.7) * size;
    let turn = Normal::new(0.0, 0.06).expect("valid sigma");
    for dir in [0.0, std::f64::consts::PI] {
        let base = heading + dir;
        let (mut y, mut x, mut h) = (sy, sx, base);
        let mut walked = 0.0;
        while walked < half_len {
            canvas.stamp(y, x, radius, contrast);
            h += turn.sample(rng) - 0.02 * (h - base);
            y += 0.5 * h.sin();
            x += 0.5 * h.cos();
            walked += 0.5;
            if y < -2.0 || x < -2.0 || y > size + 1.0 || x > size + 1.0 {
                break;
            }
        }
    }
}

fn one_image(rng: &mut ChaCha8Rng, size: usize, p: &SynthParams) -> (Tensor4<f32>, Mask) {
    let n = size * size;
    let global = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut canvas = Canvas {
        size,
        norm_dist: vec![f64::INFINITY; n],
        contrast: vec![0.0; n],
    };
    let count = rng.gen_range(p.vessels.0..=p.vessels.1);
    for i in 0..count {
        // alternate tubes roughly along and across the global heading
        let heading = global
            + if i % 2 == 0 {
                0.0
            } else {
                std::f64::consts::FRAC_PI_2
            }
            + rng.gen_range(-0.5..0.5);
        draw_walk(&mut canvas, rng, heading, p);
    }

    let grad_dir = rng.gen_range(0.0..std::f64::consts::TAU);
    let (gs, gc) = grad_dir.sin_cos();
    let noise = Normal::new(0.0, p.noise_sigma).expect("valid sigma");
    let mut label = vec![0u8; n];
    let mut data = vec![0.0f32; 3 * n];
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            let (fy, fx) = (y as f64 / size as f64 - 0.5, x as f64 / size as f64 - 0.5);
            let bg = 0.12 + 0.08 * (fx * gc + fy * gs);
            let d = canvas.norm_dist[i];
            let v = if d.is_finite() {
                canvas.contrast[i] * (-0.7 * d * d).exp()
            } else {
                0.0
            };
            label[i] = u8::from(d <= 1.0);
            for (c, (wb, wv)) in [(1.3, 0.8), (1.0, 1.0), (0.6, 0.7)].into_iter().enumerate() {
                let val = wb * bg + wv * v + noise.sample(rng);
                data[c * n + i] = val.clamp(0.0, 1.0) as f32;
            }
        }
    }
    (
        Tensor4::new([1, 3, size, size], data).expect("dims match"),
        Mask::new(size, size, label).expect("binary label"),
    )
}

/// Generate `count` phantoms of `size × size`. The first half (rounded up)
/// is marked for training, the rest for testing.
pub fn gen_synthetic_vessels(seed: u64, count: usize, size: usize) -> Result<Vec<Sample>> {
    gen_synthetic_with(seed, count, size, &SynthParams::default())
}

pub fn gen_synthetic_with(
    seed: u64,
    count: usize,
    size: usize,
    p: &SynthParams,
) -> Result<Vec<Sample>> {
    if size < 8 {
        return Err(Error::InvalidArgument(format!(
            "synthetic image size {size} is too small"
        )));
    }
    let half = count.div_ceil(2);
    (0..count)
        .map(|i| {
            let mut rng = stream(seed, SYNTH_DOMAIN, i as u64);
            let (image, label) = loop {
                let (image, label) = one_image(&mut rng, size, p);
                let frac = label.count() as f64 / (size * size) as f64;
                if frac >= p.density.0 && frac <= p.density.1 {
                    break (image, label);
                }
            };
            let split = if i < half { Split::Train } else { Split::Test };
            Sample::new(format!("syn_{i:04}"), image, label, None, split)
        })
        .collect()
}

/// Write samples in the flat layout with a `manifest.json`.
pub fn write_dataset(samples: &[Sample], root: &Path) -> Result<DatasetManifest> {
    for dir in ["images", "labels"] {
        std::fs::create_dir_all(root.join(dir)).map_err(|e| Error::io(root.join(dir), e))?;
    }
    let mut manifest = DatasetManifest::default();
    for s in samples {
        let image = Path::new("images").join(format!("{}.png", s.id));
        let label = Path::new("labels").join(format!("{}.png", s.id));
        write_rgb(&root.join(&image), &s.image)?;
        write_label(&root.join(&label), &s.label)?;
        manifest.samples.push(ManifestEntry {
            id: s.id.clone(),
            image,
            label,
            fov: None,
            split: s.split,
        });
    }
    manifest.save(&root.join("manifest.json"))?;
    Ok(manifest)
}
