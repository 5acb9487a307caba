use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment_d4, sample_patch, Sample};
use crate::error::{ensure, Error, Result};
use crate::net::{build_unet, Network, UNetConfig};
use crate::ops::softmax_ce_loss;
use crate::optim::{
    adamw_step, cosine_lr, load_checkpoint, save_checkpoint, AdamWConfig, AdamWState, Checkpoint,
};
use crate::tensor::Tensor4;
use crate::{par, rng};

/// Epoch count of the full training protocol.
pub const LONG_RUN_EPOCHS: usize = 6000;

const PATCH_DOMAIN: u64 = 0x7A7C;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub net: UNetConfig,
    pub seed: u64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub optimizer: AdamWConfig,
    pub augment: bool,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            net: UNetConfig::default(),
            seed: 0,
            epochs: 50,
            steps_per_epoch: 1,
            batch_size: 32,
            patch_size: 96,
            optimizer: AdamWConfig::default(),
            augment: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.optimizer.validate()?;
        ensure!(self.epochs > 0, Config, "epochs must be positive");
        ensure!(
            self.steps_per_epoch > 0,
            Config,
            "steps_per_epoch must be positive"
        );
        ensure!(self.batch_size > 0, Config, "batch_size must be positive");
        let m = self.net.size_multiple();
        ensure!(
            self.patch_size > 0 && self.patch_size.is_multiple_of(m),
            Config,
            "patch_size {} must be a positive multiple of {m}",
            self.patch_size
        );
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.steps_per_epoch) as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

pub const LOG_HEADER: &str = "epoch,step,loss,lr,seconds";

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.8},{:.8e},{:.3}",
            self.epoch, self.step, self.loss, self.lr, self.seconds
        )
    }
}

/// Training state: network, optimizer and the per-step loss history.
pub struct Trainer {
    cfg: TrainConfig,
    net: Network<f32>,
    state: AdamWState,
    epoch: usize,
    log: Vec<LogRow>,
    started: Instant,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let net = build_unet::<f32>(&cfg.net, cfg.seed)?;
        let state = AdamWState::new(cfg.optimizer, net.params());
        Ok(Trainer {
            cfg,
            net,
            state,
            epoch: 0,
            log: Vec::new(),
            started: Instant::now(),
        })
    }

    /// Continue from a checkpoint written by [`Trainer::checkpoint`]. The
    /// checkpoint's network config and seed must match `cfg`.
    pub fn resume(cfg: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        ensure!(
            ckpt.config == cfg.net && ckpt.seed == cfg.seed,
            Config,
            "checkpoint was trained with a different network config or seed"
        );
        let state = ckpt
            .optimizer
            .clone()
            .ok_or_else(|| Error::Config("checkpoint carries no optimizer state".into()))?;
        ensure!(
            ckpt.epoch <= cfg.epochs,
            Config,
            "checkpoint is at epoch {}, beyond the configured {}",
            ckpt.epoch,
            cfg.epochs
        );
        Ok(Trainer {
            net: ckpt.to_network()?,
            cfg,
            state,
            epoch: ckpt.epoch,
            log: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn into_network(self) -> Network<f32> {
        self.net
    }

    pub fn optimizer(&self) -> &AdamWState {
        &self.state
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn log(&self) -> &[LogRow] {
        &self.log
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::from_network(&self.net, Some(&self.state), self.epoch);
        c.train = Some(self.cfg.clone());
        c
    }

    /// Patch `b` of global step `step`: training images are visited
    /// round-robin; location and D4 element come from a per-patch stream.
    fn batch(&self, data: &[Sample], step: u64) -> Result<(Tensor4<f32>, Vec<u8>)> {
        let bs = self.cfg.batch_size;
        let patches = par::map_indices(bs, |b| {
            let id = step * bs as u64 + b as u64;
            let src = &data[(id % data.len() as u64) as usize];
            let mut r = rng::stream(self.cfg.seed, PATCH_DOMAIN, id);
            let p = sample_patch(src, self.cfg.patch_size, &mut r)?;
            Ok::<_, Error>(if self.cfg.augment {
                augment_d4(&p, &mut r)
            } else {
                let _: u8 = r.gen();
                p
            })
        });
        let mut images = Vec::with_capacity(bs);
        let mut labels = Vec::with_capacity(bs * self.cfg.patch_size * self.cfg.patch_size);
        for p in patches {
            let p = p?;
            labels.extend_from_slice(&p.label.data);
            images.push(p.image);
        }
        Ok((Tensor4::stack(&images)?, labels))
    }

    /// Run one epoch and return the rows it logged.
    pub fn run_epoch(&mut self, data: &[Sample]) -> Result<&[LogRow]> {
        ensure!(!data.is_empty(), Config, "training set is empty");
        ensure!(
            !self.is_done(),
            Config,
            "all {} epochs are already done",
            self.cfg.epochs
        );
        let first = self.log.len();
        let total = self.cfg.total_steps();
        for _ in 0..self.cfg.steps_per_epoch {
            let step = self.state.step;
            let lr = cosine_lr(step, total, self.cfg.optimizer.lr0);
            let (x, labels) = self.batch(data, step)?;
            let logits = self.net.forward(&x)?;
            let (loss, grad) = softmax_ce_loss(&logits, &labels)?;
            let grads = self.net.backward(&grad)?;
            adamw_step(self.net.params_mut(), &grads, &mut self.state, lr)?;
            ensure!(
                loss.is_finite(),
                InvalidArgument,
                "loss became non-finite at step {step}"
            );
            self.log.push(LogRow {
                epoch: self.epoch + 1,
                step: step + 1,
                loss: f64::from(loss),
                lr,
                seconds: self.started.elapsed().as_secs_f64(),
            });
        }
        self.epoch += 1;
        Ok(&self.log[first..])
    }

    /// Mean loss of each completed epoch in the in-memory log.
    pub fn epoch_losses(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for r in &self.log {
            match out.last_mut() {
                Some((e, s, n)) if *e == r.epoch => {
                    *s += r.loss;
                    *n += 1;
                }
                _ => out.push((r.epoch, r.loss, 1)),
            }
        }
        out.into_iter().map(|(e, s, n)| (e, s / n as f64)).collect()
    }
}

fn check_patch_fits(cfg: &TrainConfig, data: &[Sample]) -> Result<()> {
    ensure!(!data.is_empty(), Config, "training set is empty");
    for s in data {
        ensure!(
            s.height() >= cfg.patch_size && s.width() >= cfg.patch_size,
            Config,
            "{} ({}x{}) is smaller than patch_size {}",
            s.id,
            s.height(),
            s.width(),
            cfg.patch_size
        );
    }
    Ok(())
}

/// Where [`train`] writes its log and checkpoints.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub dir: PathBuf,
}

impl TrainOutput {
    pub fn log_path(&self) -> PathBuf {
        self.dir.join("train_log.csv")
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("model.json")
    }

    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.dir
            .join("checkpoints")
            .join(format!("epoch_{epoch:05}.json"))
    }
}

fn append_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(LOG_HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Train to completion, optionally resuming from `resume` (a checkpoint
/// manifest path). With an output, the log is appended after every epoch and
/// checkpoints are written on the configured cadence plus at the end.
pub fn train(
    cfg: TrainConfig,
    data: &[Sample],
    output: Option<&TrainOutput>,
    resume: Option<&Path>,
) -> Result<Trainer> {
    cfg.validate()?;
    check_patch_fits(&cfg, data)?;
    let mut trainer = match resume {
        Some(p) => Trainer::resume(cfg, &load_checkpoint(p)?)?,
        None => Trainer::new(cfg)?,
    };
    if let Some(out) = output {
        std::fs::create_dir_all(&out.dir).map_err(|e| Error::io(&out.dir, e))?;
    }
    while !trainer.is_done() {
        let rows = trainer.run_epoch(data)?.to_vec();
        if let Some(out) = output {
            append_log(&out.log_path(), &rows)?;
            let every = trainer.cfg.checkpoint_every;
            if every > 0 && trainer.epoch % every == 0 && !trainer.is_done() {
                save_checkpoint(&trainer.checkpoint(), &out.epoch_checkpoint(trainer.epoch))?;
            }
        }
    }
    if let Some(out) = output {
        save_checkpoint(&trainer.checkpoint(), &out.final_checkpoint())?;
    }
    Ok(trainer)
}
