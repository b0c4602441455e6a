//! Finite-difference check of the full training loss through the network.

use std::time::{Duration, Instant};

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use scrforge::geom::{CameraIntrinsics, Keypoint, Pose};
use scrforge::linalg::Matrix;
use scrforge::net::{Forward, ScrModel, ScrModelConfig};
use scrforge::train::{batch_loss, LossConfig, LossRow};

pub struct Problem {
    pub model: ScrModel,
    pub input: Matrix,
    pub poses: Vec<Pose>,
    pub keypoints: Vec<Keypoint>,
    pub gt_depths: Vec<Option<f64>>,
    pub intrinsics: CameraIntrinsics,
    pub t: f64,
    pub cfg: LossConfig,
}

pub struct Report {
    pub params: usize,
    pub max_rel_err: f64,
    pub worst: String,
    pub refined: usize,
    pub elapsed: Duration,
    pub valid_coarse: usize,
    pub valid_final: usize,
}

impl Problem {
    /// w = 64 network with every head randomized and rows arranged so that
    /// valid and invalid branches of both outputs are exercised.
    pub fn new(seed: u64, rows: usize, depth_supervision: bool) -> Self {
        let mut rng = scrforge::rng::stream(seed, 77);
        let cfg = ScrModelConfig {
            width: 64,
            ..Default::default()
        };
        let centers = Matrix::from_fn(cfg.n_clusters, 3, |_, _| rng.gen_range(-2.0..2.0));
        let mut model = ScrModel::new(cfg.clone(), centers, &mut rng).unwrap();
        for (name, p) in model.param_names().to_vec().iter().zip(model.params_mut()) {
            let s = if name.starts_with("logits") || name.starts_with("offset") { 0.01 } else { 0.02 };
            p.as_mut_slice().iter_mut().for_each(|v| *v += rng.gen_range(-s..s));
        }
        let input = Matrix::from_fn(rows, cfg.input_dim(), |_, _| rng.gen_range(-1.0..1.0));
        let fwd = model.forward(&input).unwrap();
        let intrinsics = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let mut poses = Vec::new();
        let mut keypoints = Vec::new();
        let mut gt_depths = Vec::new();
        for r in 0..rows {
            let y0 = Vector3::new(fwd.y0().get(r, 0), fwd.y0().get(r, 1), fwd.y0().get(r, 2));
            let rot = UnitQuaternion::from_euler_angles(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
            // Row kinds: 0 valid, 1 behind the camera, 2 valid but far off the keypoint.
            let kind = r % 3;
            let depth = if kind == 1 { -4.0 } else { rng.gen_range(2.0..6.0) };
            let cam = Vector3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), depth);
            let t = cam - rot * y0;
            let pose = Pose::new(rot, t);
            let off = if kind == 2 { 60.0 } else { 6.0 };
            keypoints.push(Keypoint::new(320.0 + rng.gen_range(-off..off), 240.0 + rng.gen_range(-off..off)));
            poses.push(pose);
            gt_depths.push(if r % 2 == 0 { Some(rng.gen_range(3.0..8.0)) } else { None });
        }
        let cfg = LossConfig {
            detach_depth: false,
            depth_supervision,
            ..Default::default()
        };
        Self {
            model,
            input,
            poses,
            keypoints,
            gt_depths,
            intrinsics,
            t: 0.1,
            cfg,
        }
    }

    fn rows(&self) -> Vec<LossRow<'_>> {
        (0..self.poses.len())
            .map(|i| LossRow {
                keypoint: self.keypoints[i],
                pose: &self.poses[i],
                intrinsics: &self.intrinsics,
                gt_depth: self.gt_depths[i],
            })
            .collect()
    }

    pub fn loss(&self, model: &ScrModel) -> f64 {
        let f = model.forward(&self.input).unwrap();
        self.loss_of(&f)
    }

    fn loss_of(&self, f: &Forward) -> f64 {
        batch_loss(f.y0(), f.y(), &self.rows(), self.t, &self.cfg).loss
    }

    /// Central differences with step `h`. Entries that miss the tolerance are
    /// re-estimated with Richardson extrapolation at `h` and `10h` (truncation
    /// and round-off) and with steps down to `h/100` for kinks (ReLU or branch
    /// switches) inside the stencil; the best estimate counts.
    pub fn check(&self, h: f64) -> Report {
        let start = Instant::now();
        let f = self.model.forward(&self.input).unwrap();
        let bl = batch_loss(f.y0(), f.y(), &self.rows(), self.t, &self.cfg);
        let grads = self.model.backward(&f, &bl.dy0, &bl.dy);
        let mut m = self.model.clone();
        let mut work = f.clone();
        let mut max_rel = 0.0f64;
        let mut worst = String::new();
        let mut refined = 0;
        let names = m.param_names().to_vec();
        for p in 0..names.len() {
            for k in 0..m.params()[p].as_slice().len() {
                let a = grads.grads[p].as_slice()[k];
                let base = m.params()[p].as_slice()[k];
                // Only nodes downstream of parameter `p` are re-evaluated.
                let mut fd = |step: f64, m: &mut ScrModel| {
                    m.params_mut()[p].as_mut_slice()[k] = base + step;
                    m.replay(&mut work, p);
                    let lp = self.loss_of(&work);
                    m.params_mut()[p].as_mut_slice()[k] = base - step;
                    m.replay(&mut work, p);
                    let lm = self.loss_of(&work);
                    m.params_mut()[p].as_mut_slice()[k] = base;
                    (lp - lm) / (2.0 * step)
                };
                let rel = |n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
                let d1 = fd(h, &mut m);
                let mut err = rel(d1);
                if err > 1e-4 {
                    refined += 1;
                    // Richardson extrapolation cancels the O(h²) truncation term.
                    let d2 = fd(h / 2.0, &mut m);
                    err = err.min(rel(d2)).min(rel((4.0 * d2 - d1) / 3.0));
                    // Tiny gradients drown in round-off at small steps.
                    let (w1, w2) = (fd(10.0 * h, &mut m), fd(5.0 * h, &mut m));
                    err = err.min(rel(w1)).min(rel((4.0 * w2 - w1) / 3.0));
                    // A kink inside the stencil: smaller steps move it outside.
                    for div in [10.0, 100.0] {
                        err = err.min(rel(fd(h / div, &mut m)));
                    }
                }
                if err > max_rel {
                    max_rel = err;
                    worst = format!("{}[{k}]", names[p]);
                }
            }
            // Dependents of `p` still hold perturbed values; later parameters
            // are used no earlier, so one restore per matrix suffices.
            m.replay(&mut work, p);
        }
        Report {
            params: m.param_count(),
            max_rel_err: max_rel,
            worst,
            refined,
            elapsed: start.elapsed(),
            valid_coarse: bl.rows.iter().filter(|r| r.valid_coarse).count(),
            valid_final: bl.rows.iter().filter(|r| r.valid_final).count(),
        }
    }
}
