use std::collections::HashMap;
use std::fmt::Write as _;

use log::{debug, warn};
use rand::Rng;

use crate::embed::{GlobalAugmenter, GlobalEncodingTable};
use crate::error::{Error, Result};
use crate::features::FeatureBuffer;
use crate::geom::CameraView;
use crate::linalg::Matrix;
use crate::net::ScrModel;

use super::loss::{batch_loss, LossConfig, LossRow, RowDiagnostics};
use super::optim::{one_cycle_lr, AdamW, OptimizerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub optim: OptimizerConfig,
    /// Metrics are recorded every `log_every` iterations and at the end.
    pub log_every: usize,
    /// Stops after this many iterations while keeping the schedules of `total_iters`.
    pub stop_at: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            optim: OptimizerConfig::default(),
            log_every: 100,
            stop_at: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
    pub median_e2: f64,
    pub inlier_ratio: f64,
    pub median_depth: f64,
}

/// Reprojection threshold for the logged inlier ratio, in pixels.
pub const INLIER_PX: f64 = 10.0;

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn summarize(iter: usize, lr: f64, loss: f64, rows: &[RowDiagnostics]) -> MetricsRow {
    let inliers = rows.iter().filter(|r| r.e2 < INLIER_PX).count();
    MetricsRow {
        iter,
        lr,
        loss,
        median_e2: median(rows.iter().map(|r| r.e2).collect()),
        inlier_ratio: inliers as f64 / rows.len().max(1) as f64,
        median_depth: median(rows.iter().map(|r| r.depth).collect()),
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("iter,lr,loss,median_e2,inlier_ratio,median_depth\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.iter, r.lr, r.loss, r.median_e2, r.inlier_ratio, r.median_depth);
    }
    out
}

/// Builds `[local ‖ augmented global]` input rows for the given buffer rows.
pub fn assemble_inputs(
    buffer: &FeatureBuffer,
    rows: &[usize],
    genc: &GlobalEncodingTable,
    augmenter: &dyn GlobalAugmenter,
    rng: &mut dyn rand::RngCore,
) -> Result<Matrix> {
    let ld = buffer.dim();
    let gd = genc.dim();
    let mut x = Matrix::zeros(rows.len(), ld + gd);
    for (r, &i) in rows.iter().enumerate() {
        let out = x.row_mut(r);
        for (o, v) in out[..ld].iter_mut().zip(buffer.encoding(i)) {
            *o = f64::from(*v);
        }
        let id = buffer.image_id(i);
        if !augmenter.augment(id, genc, rng, &mut out[ld..]) {
            return Err(Error::InvalidConfig(format!("image {id} has no global encoding")));
        }
    }
    Ok(x)
}

/// Trains `model` in place. On a non-finite activation the model is left at
/// its last finite weights and the error is returned.
pub fn train_loop(
    model: &mut ScrModel,
    buffer: &FeatureBuffer,
    views: &[CameraView],
    genc: &GlobalEncodingTable,
    augmenter: &dyn GlobalAugmenter,
    cfg: &TrainConfig,
) -> Result<Vec<MetricsRow>> {
    cfg.loss.validate()?;
    cfg.optim.validate()?;
    let mc = model.config();
    if buffer.dim() != mc.local_dim || genc.dim() != mc.global_dim {
        return Err(Error::DimensionMismatch {
            expected: mc.input_dim(),
            got: buffer.dim() + genc.dim(),
        });
    }
    let total = cfg.optim.total_iters;
    let run_to = cfg.stop_at.map_or(total, |s| s.min(total));
    if run_to == 0 {
        return Ok(Vec::new());
    }
    if buffer.is_empty() {
        return Err(Error::InvalidConfig("empty feature buffer".into()));
    }
    let by_id: HashMap<u32, &CameraView> = views.iter().map(|v| (v.id, v)).collect();
    if let Some(missing) = buffer.image_ids().into_iter().find(|id| !by_id.contains_key(id)) {
        return Err(Error::InvalidConfig(format!("buffer references unknown image {missing}")));
    }

    let mut rng = crate::rng::tagged_stream(cfg.seed, "train", 0);
    let mut opt = AdamW::new(model.params());
    let mut metrics = Vec::new();
    let b = cfg.optim.batch_rows;
    let mut idx = vec![0usize; b];
    for iter in 0..run_to {
        let t = iter as f64 / total as f64;
        let lr = one_cycle_lr(iter, &cfg.optim);
        idx.iter_mut().for_each(|i| *i = rng.gen_range(0..buffer.len()));
        let x = assemble_inputs(buffer, &idx, genc, augmenter, &mut rng)?;
        let fwd = model.forward(&x)?;
        let rows: Vec<LossRow> = idx
            .iter()
            .map(|&i| {
                let v = by_id[&buffer.image_id(i)];
                LossRow {
                    keypoint: buffer.keypoint(i),
                    pose: &v.pose,
                    intrinsics: &v.intrinsics,
                    gt_depth: buffer.gt_depth(i).map(f64::from),
                }
            })
            .collect();
        let bl = batch_loss(fwd.y0(), fwd.y(), &rows, t, &cfg.loss);
        if !bl.loss.is_finite() {
            return Err(Error::NonFiniteActivation(format!("loss at iteration {iter}")));
        }
        let grads = model.backward(&fwd, &bl.dy0, &bl.dy);
        let backup = model.params().to_vec();
        opt.step(model.params_mut(), &grads, lr, &cfg.optim);
        if !model.params().iter().all(Matrix::is_finite) {
            model.params_mut().clone_from_slice(&backup);
            warn!("non-finite weights after iteration {iter}; reverted");
            return Err(Error::NonFiniteActivation(format!("weights after iteration {iter}")));
        }
        if iter % cfg.log_every.max(1) == 0 || iter + 1 == run_to {
            let m = summarize(iter, lr, bl.loss, &bl.rows);
            debug!("iter {iter} loss {:.4} median e2 {:.2}", m.loss, m.median_e2);
            metrics.push(m);
        }
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{augmenter, prepare, PipelineConfig};
    use crate::synth::{gen_scene, SceneSpec};

    struct Fixture {
        views: Vec<CameraView>,
        genc: GlobalEncodingTable,
        buffer: FeatureBuffer,
        model: ScrModel,
        cfg: PipelineConfig,
        graph: crate::covis::CovisGraph,
    }

    fn fixture(iters: usize) -> Fixture {
        let spec = SceneSpec { n_points: 150, n_train_cameras: 6, n_query_cameras: 1, descriptor_dim: 32, latent_dim: 8, ..Default::default() };
        let ds = gen_scene(&spec).unwrap();
        let mut cfg = PipelineConfig::default().with_seed(2);
        cfg.pca_dim = 16;
        cfg.skipgram.dim = 8;
        cfg.width = 64;
        cfg.train.optim.total_iters = iters;
        cfg.train.optim.batch_rows = 32;
        cfg.train.log_every = 5;
        let (graph, genc, buffer, model) = prepare(&ds.train_views, &ds.train_features, &cfg).unwrap();
        Fixture { views: ds.train_views, genc, buffer, model, cfg, graph }
    }

    fn run(f: &Fixture, cfg: &TrainConfig) -> (ScrModel, Result<Vec<MetricsRow>>) {
        let mut m = f.model.clone();
        let aug = augmenter(&f.cfg, &f.graph);
        let r = train_loop(&mut m, &f.buffer, &f.views, &f.genc, aug.as_ref(), cfg);
        (m, r)
    }

    #[test]
    fn zero_iterations_leave_the_model_untouched() {
        let f = fixture(0);
        let (m, r) = run(&f, &f.cfg.train);
        assert!(r.unwrap().is_empty());
        assert_eq!(m.params(), f.model.params());
    }

    #[test]
    fn seeded_runs_repeat_and_stop_early_on_schedule() {
        let f = fixture(20);
        let (a, ra) = run(&f, &f.cfg.train);
        let (b, _) = run(&f, &f.cfg.train);
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), f.model.params());
        let ra = ra.unwrap();
        assert_eq!(ra.iter().map(|m| m.iter).collect::<Vec<_>>(), vec![0, 5, 10, 15, 19]);

        let early = TrainConfig { stop_at: Some(8), ..f.cfg.train.clone() };
        let rows = run(&f, &early).1.unwrap();
        let last = rows.last().unwrap();
        assert_eq!(last.iter, 7);
        // The schedule still spans all 20 iterations.
        assert_eq!(last.lr, one_cycle_lr(7, &f.cfg.train.optim));
        assert_eq!(rows.iter().map(|m| m.loss).collect::<Vec<_>>(), ra.iter().take(2).map(|m| m.loss).chain([rows[2].loss]).collect::<Vec<_>>());
    }

    #[test]
    fn divergence_stops_with_finite_weights() {
        let f = fixture(10);
        let mut cfg = f.cfg.train.clone();
        cfg.optim.peak_lr = 1e300;
        let (m, r) = run(&f, &cfg);
        assert!(matches!(r, Err(Error::NonFiniteActivation(_))));
        assert!(m.params().iter().all(Matrix::is_finite));
    }
}
