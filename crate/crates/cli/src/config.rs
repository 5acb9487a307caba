use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sre_unet::data::{Layout, DEFAULT_TEST_ANGLES};
use sre_unet::metrics::LabelMode;
use sre_unet::optim::{TrainConfig, LONG_RUN_EPOCHS};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset root; when absent a synthetic set is generated in memory.
    pub root: Option<PathBuf>,
    pub layout: Layout,
    pub synthetic_seed: u64,
    pub synthetic_count: usize,
    pub synthetic_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: None,
            layout: Layout::Flat,
            synthetic_seed: 0,
            synthetic_count: 40,
            synthetic_size: 96,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub threshold: f32,
    pub label_mode: LabelMode,
    pub use_fov: bool,
    pub angles: Vec<i32>,
    pub diff_maps: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.5,
            label_mode: LabelMode::RotateLabels,
            use_fov: false,
            angles: DEFAULT_TEST_ANGLES.to_vec(),
            diff_maps: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivConfig {
    pub random_inputs: usize,
    pub real_inputs: usize,
    pub size: usize,
    pub tolerance: f64,
    /// Smallest max-abs difference that counts as an observed violation.
    pub violation_threshold: f64,
}

impl Default for EquivConfig {
    fn default() -> Self {
        EquivConfig {
            random_inputs: 20,
            real_inputs: 4,
            size: 96,
            tolerance: 1e-4,
            violation_threshold: 1e-2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchShape {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub size: usize,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub shapes: Vec<BenchShape>,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let shapes = [3, 5, 7, 9]
            .into_iter()
            .map(|k| BenchShape {
                n: 2,
                c_in: 16,
                c_out: 16,
                size: 48,
                k,
            })
            .collect();
        BenchConfig { shapes, repeats: 3 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub equiv: EquivConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    /// The full-length training protocol.
    pub fn long_run(mut self) -> Self {
        self.train.epochs = LONG_RUN_EPOCHS;
        self.train.batch_size = 32;
        self.train.patch_size = 96;
        self.train.optimizer.lr0 = 5e-4;
        self
    }
}

fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    for part in key.split('.') {
        cur = cur
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| CliError::Usage(format!("unknown config key '{key}'")))?;
    }
    *cur = value;
    Ok(())
}

/// Parse `key=value`; the value is read as JSON when it parses, else as a string.
fn parse_override(s: &str) -> Result<(&str, Value), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got '{s}'")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim(), value))
}

/// Defaults, then the config file, then `--long-run`, then `--set`
/// overrides in order, then `--seed`.
pub fn resolve(
    file: Option<&Path>,
    long_run: bool,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<RunConfig, CliError> {
    let mut cfg = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if long_run {
        cfg = cfg.long_run();
    }
    if !overrides.is_empty() {
        let mut v = serde_json::to_value(&cfg).expect("config serialises");
        for o in overrides {
            let (k, val) = parse_override(o)?;
            set_dotted(&mut v, k, val)?;
        }
        cfg = serde_json::from_value(v)
            .map_err(|e| CliError::Usage(format!("invalid override: {e}")))?;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}
