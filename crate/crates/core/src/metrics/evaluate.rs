use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{rotate_plane, write_gray_map, Mask, RotatedTestSet, Sample};
use crate::error::{Error, Result};
use crate::metrics::{
    auc, confusion, equivariance_error, metrics_from_confusion, round_trip_region,
};
use crate::net::Network;
use crate::ops::foreground_probability;
use crate::par;
use crate::tensor::Tensor4;

/// Produces a foreground probability map `[H * W]` for a `[1, C, H, W]` image.
pub trait Predictor: Sync {
    fn predict(&self, image: &Tensor4<f32>) -> Result<Vec<f32>>;
}

impl<F> Predictor for F
where
    F: Fn(&Tensor4<f32>) -> Result<Vec<f32>> + Sync,
{
    fn predict(&self, image: &Tensor4<f32>) -> Result<Vec<f32>> {
        self(image)
    }
}

impl Predictor for Network<f32> {
    fn predict(&self, image: &Tensor4<f32>) -> Result<Vec<f32>> {
        let m = self.config().size_multiple();
        let (h, w) = (image.h(), image.w());
        let (padded, top, left) = pad_to_multiple(image, m);
        let logits = self.infer(&padded)?;
        let prob = foreground_probability(&logits)?;
        let pw = padded.w();
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            let row = (y + top) * pw + left;
            out.extend_from_slice(&prob[row..row + w]);
        }
        Ok(out)
    }
}

/// Zero-pad height and width up to a multiple of `m`, splitting the padding
/// evenly with any odd pixel at the bottom/right. Returns the padded tensor
/// and the top/left offsets.
pub fn pad_to_multiple(x: &Tensor4<f32>, m: usize) -> (Tensor4<f32>, usize, usize) {
    let [n, c, h, w] = x.dims();
    let ph = h.div_ceil(m) * m;
    let pw = w.div_ceil(m) * m;
    if (ph, pw) == (h, w) {
        return (x.clone(), 0, 0);
    }
    let (top, left) = ((ph - h) / 2, (pw - w) / 2);
    let mut out = Tensor4::zeros([n, c, ph, pw]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h {
                let d = (y + top) * pw + left;
                dst[d..d + w].copy_from_slice(&src[y * w..y * w + w]);
            }
        }
    }
    (out, top, left)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Score the prediction on each rotated copy against the rotated label.
    #[default]
    RotateLabels,
    /// Rotate the prediction back and score it against the original label
    /// inside the region that survives the round trip.
    RotateBack,
}

impl std::str::FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotate-labels" | "rotate_labels" => Ok(LabelMode::RotateLabels),
            "rotate-back" | "rotate_back" => Ok(LabelMode::RotateBack),
            other => Err(Error::InvalidArgument(format!(
                "unknown label mode {other:?} (expected rotate-labels or rotate-back)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub threshold: f32,
    pub label_mode: LabelMode,
    pub use_fov: bool,
    pub keep_diff_maps: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: 0.5,
            label_mode: LabelMode::RotateLabels,
            use_fov: false,
            keep_diff_maps: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RowMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub iou: f64,
    pub dice: f64,
    pub auc: f64,
    pub equivariance_mse: f64,
}

impl RowMetrics {
    pub const COLUMNS: [&'static str; 7] = [
        "accuracy",
        "sensitivity",
        "specificity",
        "iou",
        "dice",
        "auc",
        "equivariance_mse",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.accuracy,
            self.sensitivity,
            self.specificity,
            self.iou,
            self.dice,
            self.auc,
            self.equivariance_mse,
        ]
    }

    fn from_values(v: [f64; 7]) -> Self {
        RowMetrics {
            accuracy: v[0],
            sensitivity: v[1],
            specificity: v[2],
            iou: v[3],
            dice: v[4],
            auc: v[5],
            equivariance_mse: v[6],
        }
    }

    /// Arithmetic mean in iteration order; `None` for an empty input.
    pub fn mean<'a>(rows: impl IntoIterator<Item = &'a RowMetrics>) -> Option<RowMetrics> {
        let mut acc = [0.0f64; 7];
        let mut n = 0usize;
        for r in rows {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
            n += 1;
        }
        (n > 0).then(|| RowMetrics::from_values(acc.map(|a| a / n as f64)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub sample_id: String,
    pub angle: i32,
    #[serde(flatten)]
    pub metrics: RowMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleSummary {
    pub angle: i32,
    #[serde(flatten)]
    pub metrics: RowMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub label_mode: LabelMode,
    pub threshold: f32,
    pub use_fov: bool,
    pub samples: usize,
    pub angles: Vec<i32>,
    /// Mean over the unrotated copies.
    pub original: RowMetrics,
    /// Mean over every nonzero angle.
    pub rotated: Option<RowMetrics>,
    /// Mean over every copy including the original.
    pub all_angles: RowMetrics,
    pub per_angle: Vec<AngleSummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffMap {
    pub sample_id: String,
    pub angle: i32,
    pub h: usize,
    pub w: usize,
    pub diff: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: EvalSummary,
    pub diff_maps: Vec<DiffMap>,
}

struct Group<'a> {
    base_id: &'a str,
    by_angle: BTreeMap<i32, &'a Sample>,
}

fn group_entries(set: &RotatedTestSet) -> Result<Vec<Group<'_>>> {
    if !set.angles.contains(&0) {
        return Err(Error::Protocol("the angle list must include 0".into()));
    }
    let mut groups: Vec<Group> = Vec::new();
    for e in &set.entries {
        if !set.angles.contains(&e.angle) {
            return Err(Error::Protocol(format!(
                "{} has angle {} outside the declared list {:?}",
                e.sample.id, e.angle, set.angles
            )));
        }
        let idx = match groups.iter().position(|g| g.base_id == e.base_id) {
            Some(i) => i,
            None => {
                groups.push(Group {
                    base_id: &e.base_id,
                    by_angle: BTreeMap::new(),
                });
                groups.len() - 1
            }
        };
        if groups[idx].by_angle.insert(e.angle, &e.sample).is_some() {
            return Err(Error::Protocol(format!(
                "{} has more than one copy at {}°",
                e.base_id, e.angle
            )));
        }
    }
    for g in &groups {
        let missing: Vec<i32> = set
            .angles
            .iter()
            .copied()
            .filter(|a| !g.by_angle.contains_key(a))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Protocol(format!(
                "{} is missing rotated copies at {missing:?}°",
                g.base_id
            )));
        }
    }
    if groups.is_empty() {
        return Err(Error::Protocol("empty test set".into()));
    }
    Ok(groups)
}

fn and_masks(a: Option<Vec<u8>>, b: Option<&Mask>) -> Option<Vec<u8>> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a.iter().zip(&b.data).map(|(&x, &y)| x & y).collect()),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b.data.clone()),
        (None, None) => None,
    }
}

fn score(prob: &[f32], label: &[u8], region: Option<&[u8]>, threshold: f32) -> Result<RowMetrics> {
    let pred: Vec<u8> = prob.iter().map(|&p| u8::from(p >= threshold)).collect();
    let seg = metrics_from_confusion(&confusion(&pred, label, region)?);
    let a = match region {
        Some(r) => {
            let (s, l): (Vec<f32>, Vec<u8>) = prob
                .iter()
                .zip(label)
                .zip(r)
                .filter(|(_, &m)| m != 0)
                .map(|((&p, &l), _)| (p, l))
                .unzip();
            auc(&s, &l)?
        }
        None => auc(prob, label)?,
    };
    Ok(RowMetrics {
        accuracy: seg.accuracy,
        sensitivity: seg.sensitivity,
        specificity: seg.specificity,
        iou: seg.iou,
        dice: seg.dice,
        auc: a,
        equivariance_mse: 0.0,
    })
}

type GroupResult = Result<Vec<(EvalRow, Option<DiffMap>)>>;

fn eval_group(predictor: &dyn Predictor, g: &Group, opts: &EvalOptions) -> GroupResult {
    let orig = g.by_angle[&0];
    let (h, w) = (orig.height(), orig.width());
    let pred0 = predictor.predict(&orig.image)?;
    let mut out = Vec::with_capacity(g.by_angle.len());
    for (&angle, sample) in &g.by_angle {
        if (sample.height(), sample.width()) != (h, w) {
            return Err(Error::Protocol(format!(
                "{} is {}x{}, original is {h}x{w}",
                sample.id,
                sample.height(),
                sample.width()
            )));
        }
        let pred = if angle == 0 {
            pred0.clone()
        } else {
            predictor.predict(&sample.image)?
        };
        let deg = f64::from(angle);
        let mut metrics = match opts.label_mode {
            LabelMode::RotateLabels => {
                let fov = if opts.use_fov {
                    sample.fov.as_ref()
                } else {
                    None
                };
                let region = and_masks(None, fov);
                score(&pred, &sample.label.data, region.as_deref(), opts.threshold)?
            }
            LabelMode::RotateBack => {
                let back = rotate_plane(&pred, h, w, -deg, 0.0);
                let fov = if opts.use_fov {
                    orig.fov.as_ref()
                } else {
                    None
                };
                let trip = (angle != 0).then(|| round_trip_region(h, w, deg));
                let region = and_masks(trip, fov);
                score(&back, &orig.label.data, region.as_deref(), opts.threshold)?
            }
        };
        let eq = equivariance_error(&pred0, &pred, h, w, deg)?;
        metrics.equivariance_mse = eq.mse;
        let diff = opts.keep_diff_maps.then(|| DiffMap {
            sample_id: g.base_id.to_string(),
            angle,
            h,
            w,
            diff: eq.diff,
        });
        out.push((
            EvalRow {
                sample_id: g.base_id.to_string(),
                angle,
                metrics,
            },
            diff,
        ));
    }
    Ok(out)
}

/// Evaluate a predictor on every copy of a rotated test set. Rows come out
/// grouped by base sample in test-set order, angles ascending.
pub fn evaluate(
    predictor: &dyn Predictor,
    set: &RotatedTestSet,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if !(opts.threshold > 0.0 && opts.threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold {} must lie in (0, 1)",
            opts.threshold
        )));
    }
    let groups = group_entries(set)?;
    let results = par::map_indices(groups.len(), |i| eval_group(predictor, &groups[i], opts));
    let mut rows = Vec::new();
    let mut diff_maps = Vec::new();
    for r in results {
        for (row, diff) in r? {
            rows.push(row);
            diff_maps.extend(diff);
        }
    }
    let mut angles = set.angles.clone();
    angles.sort_unstable();
    angles.dedup();
    let per_angle = angles
        .iter()
        .map(|&a| AngleSummary {
            angle: a,
            metrics: RowMetrics::mean(rows.iter().filter(|r| r.angle == a).map(|r| &r.metrics))
                .expect("every group has every angle"),
        })
        .collect();
    let summary = EvalSummary {
        label_mode: opts.label_mode,
        threshold: opts.threshold,
        use_fov: opts.use_fov,
        samples: groups.len(),
        original: RowMetrics::mean(rows.iter().filter(|r| r.angle == 0).map(|r| &r.metrics))
            .expect("angle 0 present"),
        rotated: RowMetrics::mean(rows.iter().filter(|r| r.angle != 0).map(|r| &r.metrics)),
        all_angles: RowMetrics::mean(rows.iter().map(|r| &r.metrics)).expect("rows present"),
        per_angle,
        angles,
    };
    Ok(EvalReport {
        rows,
        summary,
        diff_maps,
    })
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample_id,angle");
        for c in RowMetrics::COLUMNS {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for r in &self.rows {
            write!(s, "{},{}", r.sample_id, r.angle).unwrap();
            for v in r.metrics.values() {
                write!(s, ",{v:.8}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.summary)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// Absolute difference maps as PGM files, scaled to the largest
    /// difference across all maps.
    pub fn write_diff_maps(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let peak = self
            .diff_maps
            .iter()
            .flat_map(|d| d.diff.iter())
            .fold(0.0f32, |m, v| m.max(v.abs()));
        let mut paths = Vec::new();
        for d in &self.diff_maps {
            let path = dir.join(format!("{}_{}.pgm", d.sample_id, d.angle));
            let abs: Vec<f32> = d.diff.iter().map(|v| v.abs()).collect();
            write_gray_map(&path, &abs, d.h, d.w, 0.0, peak.max(1e-6))?;
            paths.push(path);
        }
        Ok(paths)
    }
}
