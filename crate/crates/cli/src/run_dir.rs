//! Run directories are built under a hidden sibling and renamed into place
//! on success, so a failed command never leaves a partial directory behind.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;

use crate::error::CliError;

pub struct RunDir {
    target: PathBuf,
    staging: PathBuf,
    record: serde_json::Value,
    committed: bool,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

impl RunDir {
    /// Refuses to reuse an existing path. `run.json` is written before any work.
    pub fn create(
        target: &Path,
        command: &str,
        config: &impl Serialize,
        seed: u64,
    ) -> Result<Self, CliError> {
        if target.exists() {
            return Err(CliError::Usage(format!(
                "output directory {} already exists",
                target.display()
            )));
        }
        let name = target
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| CliError::Usage(format!("bad output path {}", target.display())))?;
        let parent = target
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            std::fs::remove_dir_all(&staging).map_err(|e| io_err(&staging, e))?;
        }
        std::fs::create_dir(&staging).map_err(|e| io_err(&staging, e))?;
        let record = json!({
            "command": command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "version": env!("CARGO_PKG_VERSION"),
            "parallel": sre_unet::par::is_parallel(),
            "seed": seed,
            "config": serde_json::to_value(config)?,
            "started_unix": unix_now(),
            "finished_unix": null,
            "status": "running",
        });
        let dir = RunDir {
            target: target.to_path_buf(),
            staging,
            record,
            committed: false,
        };
        dir.write_record()?;
        Ok(dir)
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.staging.join(name)
    }

    /// Attach a summary value to `run.json` under `key`.
    pub fn note(&mut self, key: &str, value: serde_json::Value) {
        self.record[key] = value;
    }

    fn write_record(&self) -> Result<(), CliError> {
        let path = self.staging.join("run.json");
        let text = serde_json::to_string_pretty(&self.record)? + "\n";
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))
    }

    pub fn commit(mut self, status: &str) -> Result<PathBuf, CliError> {
        self.record["finished_unix"] = json!(unix_now());
        self.record["status"] = json!(status);
        self.write_record()?;
        std::fs::rename(&self.staging, &self.target).map_err(|e| io_err(&self.target, e))?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.staging);
        }
    }
}
