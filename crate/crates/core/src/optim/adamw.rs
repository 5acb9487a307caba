use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::net::{Gradients, Param};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr0: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.lr0 > 0.0 && self.lr0.is_finite(),
            Config,
            "lr0 must be positive, got {}",
            self.lr0
        );
        ensure!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            Config,
            "betas must lie in [0, 1), got ({}, {})",
            self.beta1,
            self.beta2
        );
        ensure!(self.eps > 0.0, Config, "eps must be positive");
        ensure!(
            self.weight_decay >= 0.0,
            Config,
            "weight_decay must be non-negative"
        );
        Ok(())
    }
}

/// Moments mirror the parameter registry tensor by tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState {
    pub hyper: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamWState {
    pub fn new(hyper: AdamWConfig, params: &[Param<f32>]) -> Self {
        AdamWState {
            hyper,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// One AdamW update at learning rate `lr`, with weight decay decoupled from
/// the gradient: `p ← p − lr·(m̂/(√v̂ + ε) + λ·p)`.
pub fn adamw_step(
    params: &mut [Param<f32>],
    grads: &Gradients<f32>,
    state: &mut AdamWState,
    lr: f64,
) -> Result<()> {
    ensure!(
        params.len() == grads.grads.len() && params.len() == state.m.len(),
        Shape,
        "{} parameters, {} gradients, {} moment tensors",
        params.len(),
        grads.grads.len(),
        state.m.len()
    );
    for (i, p) in params.iter().enumerate() {
        ensure!(
            grads.grads[i].len() == p.len()
                && state.m[i].len() == p.len()
                && state.v[i].len() == p.len(),
            Shape,
            "gradient or moment size mismatch for {}",
            p.name
        );
    }
    let h = state.hyper;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data.iter_mut().enumerate() {
            let g = f64::from(grads.grads[i][j]);
            let mj = h.beta1 * f64::from(m[j]) + (1.0 - h.beta1) * g;
            let vj = h.beta2 * f64::from(v[j]) + (1.0 - h.beta2) * g * g;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let update = (mj / bc1) / ((vj / bc2).sqrt() + h.eps) + h.weight_decay * f64::from(*w);
            *w = (f64::from(*w) - lr * update) as f32;
        }
    }
    Ok(())
}

/// Cosine annealing from `lr0` at step 0 to 0 at `total_steps`.
pub fn cosine_lr(step: u64, total_steps: u64, lr0: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}
