//! Supervision, schedules, optimizer and the training loop.
//!
//! The coarse output `y0` is supervised with a Geman-McClure kernel on the
//! depth-adjusted reprojection error; the final output `y` keeps the plain
//! reprojection error under a tanh kernel. Predictions outside the valid
//! frustum are pulled toward a pseudo target at fixed depth. A consistency
//! term (or ground-truth coordinate supervision) fades out over the first
//! half of training.

mod loss;
mod optim;
mod run;

pub use loss::{
    batch_loss, depth_adjusted_error, lambda_weight, robust_dynamic, tau, BatchLoss, LossConfig, LossRow, RobustKernel,
    RowDiagnostics,
};
pub use optim::{one_cycle_lr, AdamW, OptimizerConfig};
pub use run::{assemble_inputs, metrics_csv, summarize, train_loop, MetricsRow, TrainConfig, INLIER_PX};

use crate::config::KvFile;
use crate::error::Result;

impl TrainConfig {
    /// Reads `loss.*`, `validity.*`, `optim.*` and `train.*` keys over defaults.
    pub fn from_kv(kv: &mut KvFile) -> Result<Self> {
        let mut c = TrainConfig::default();
        let l = &mut c.loss;
        kv.read("loss.tau_min", &mut l.tau_min)?;
        kv.read("loss.tau_max_coarse", &mut l.tau_max_coarse)?;
        kv.read("loss.tau_max_final", &mut l.tau_max_final)?;
        kv.read("loss.sigma2", &mut l.sigma2)?;
        kv.read("loss.sigma3", &mut l.sigma3)?;
        kv.read("loss.depth_supervision", &mut l.depth_supervision)?;
        kv.read("loss.detach_depth", &mut l.detach_depth)?;
        kv.read("loss.consistency_into_coarse", &mut l.consistency_into_coarse)?;
        kv.read("validity.d_min", &mut l.validity.d_min)?;
        kv.read("validity.d_max", &mut l.validity.d_max)?;
        kv.read("validity.e_max", &mut l.validity.e_max)?;
        kv.read("validity.d_target", &mut l.validity.d_target)?;
        let o = &mut c.optim;
        kv.read("optim.peak_lr", &mut o.peak_lr)?;
        kv.read("optim.warmup_ratio", &mut o.warmup_ratio)?;
        kv.read("optim.weight_decay", &mut o.weight_decay)?;
        kv.read("optim.beta1", &mut o.beta1)?;
        kv.read("optim.beta2", &mut o.beta2)?;
        kv.read("optim.eps", &mut o.eps)?;
        kv.read("optim.total_iters", &mut o.total_iters)?;
        kv.read("optim.batch_rows", &mut o.batch_rows)?;
        kv.read("train.log_every", &mut c.log_every)?;
        if let Some(s) = kv.get::<usize>("train.stop_at")? {
            c.stop_at = Some(s);
        }
        kv.read("train.seed", &mut c.seed)?;
        c.loss.validate()?;
        c.optim.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let l = &self.loss;
        let o = &self.optim;
        let mut v: Vec<(&str, String)> = vec![
            ("loss.tau_min", l.tau_min.to_string()),
            ("loss.tau_max_coarse", l.tau_max_coarse.to_string()),
            ("loss.tau_max_final", l.tau_max_final.to_string()),
            ("loss.sigma2", l.sigma2.to_string()),
            ("loss.sigma3", l.sigma3.to_string()),
            ("loss.depth_supervision", l.depth_supervision.to_string()),
            ("loss.detach_depth", l.detach_depth.to_string()),
            ("loss.consistency_into_coarse", l.consistency_into_coarse.to_string()),
            ("validity.d_min", l.validity.d_min.to_string()),
            ("validity.d_max", l.validity.d_max.to_string()),
            ("validity.e_max", l.validity.e_max.to_string()),
            ("validity.d_target", l.validity.d_target.to_string()),
            ("optim.peak_lr", o.peak_lr.to_string()),
            ("optim.warmup_ratio", o.warmup_ratio.to_string()),
            ("optim.weight_decay", o.weight_decay.to_string()),
            ("optim.beta1", o.beta1.to_string()),
            ("optim.beta2", o.beta2.to_string()),
            ("optim.eps", o.eps.to_string()),
            ("optim.total_iters", o.total_iters.to_string()),
            ("optim.batch_rows", o.batch_rows.to_string()),
            ("train.log_every", self.log_every.to_string()),
            ("train.seed", self.seed.to_string()),
        ];
        if let Some(s) = self.stop_at {
            v.push(("train.stop_at", s.to_string()));
        }
        v.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}
