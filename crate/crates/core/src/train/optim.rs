use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::net::Gradients;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub peak_lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub total_iters: usize,
    pub batch_rows: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            peak_lr: 3e-3,
            warmup_ratio: 0.04,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_iters: 10_000,
            batch_rows: 4096,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.peak_lr > 0.0
            && self.warmup_ratio > 0.0
            && self.warmup_ratio < 1.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.batch_rows > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("optimizer settings out of range".into()))
        }
    }

    pub fn warmup_iters(&self) -> usize {
        (self.warmup_ratio * self.total_iters as f64).round() as usize
    }
}

/// Divisor of the peak rate at iteration 0.
const WARMUP_START_DIV: f64 = 25.0;

/// Linear warmup from `peak/25` to `peak`, then cosine decay to 0 at the last iteration.
pub fn one_cycle_lr(iter: usize, cfg: &OptimizerConfig) -> f64 {
    let w = cfg.warmup_iters();
    let last = cfg.total_iters.saturating_sub(1);
    let start = cfg.peak_lr / WARMUP_START_DIV;
    if iter < w {
        start + (cfg.peak_lr - start) * iter as f64 / w as f64
    } else if last <= w {
        cfg.peak_lr
    } else {
        let p = ((iter - w) as f64 / (last - w) as f64).min(1.0);
        cfg.peak_lr * (1.0 + (PI * p).cos()) / 2.0
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl AdamW {
    pub fn new(params: &[Matrix]) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &Gradients, lr: f64, cfg: &OptimizerConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        let decay = 1.0 - lr * cfg.weight_decay;
        for ((p, g), (m, v)) in params.iter_mut().zip(&grads.grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let it = p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice().iter_mut()));
            for ((w, &gi), (mi, vi)) in it {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + cfg.eps);
                *w = *w * decay - lr * update;
            }
        }
    }
}
