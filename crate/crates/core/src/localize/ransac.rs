use nalgebra::{Matrix6, Rotation3, Vector2, Vector3, Vector6};
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Keypoint, Pose};

use super::p3p::p3p;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub max_reproj_px: f64,
    pub max_iters: usize,
    pub confidence: f64,
    pub min_inliers: usize,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_reproj_px: 10.0,
            max_iters: 10_000,
            confidence: 0.999,
            min_inliers: 4,
            rng_seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_reproj_px > 0.0) || self.max_iters == 0 || !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidConfig(format!("ransac: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Correspondence {
    pub keypoint: Keypoint,
    pub world: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct RansacOutput {
    pub pose: Pose,
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

impl RansacOutput {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Reprojection error, or `None` at or behind the camera plane.
fn residual(k: &CameraIntrinsics, pose: &Pose, c: &Correspondence) -> Option<Vector2<f64>> {
    let p = pose.transform(&c.world);
    if p.z <= 1e-9 {
        return None;
    }
    Some(Vector2::new(k.fx * p.x / p.z + k.cx - c.keypoint.x, k.fy * p.y / p.z + k.cy - c.keypoint.y))
}

fn is_inlier(k: &CameraIntrinsics, pose: &Pose, c: &Correspondence, thresh: f64) -> bool {
    residual(k, pose, c).is_some_and(|r| r.norm() < thresh)
}

fn score(k: &CameraIntrinsics, pose: &Pose, corr: &[Correspondence], thresh: f64, mask: &mut [bool]) -> usize {
    let mut n = 0;
    for (m, c) in mask.iter_mut().zip(corr) {
        *m = is_inlier(k, pose, c, thresh);
        n += usize::from(*m);
    }
    n
}

/// Iterations needed so that an all-inlier triple is drawn with the given
/// confidence, for inlier ratio `w`.
fn required_iterations(w: f64, confidence: f64, cap: usize) -> usize {
    let good = w.powi(3);
    if good >= 1.0 {
        return 1;
    }
    if good <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - good).ln();
    if n.is_finite() {
        (n.ceil().max(1.0) as usize).min(cap)
    } else {
        cap
    }
}

/// Pose maximizing the inlier count under the reprojection gate, refined by
/// Gauss-Newton on the inliers.
pub fn ransac_pnp(corr: &[Correspondence], k: &CameraIntrinsics, cfg: &RansacConfig) -> Result<RansacOutput> {
    cfg.validate()?;
    let n = corr.len();
    if n < 4 {
        return Err(Error::TooFewPoints { needed: 4, got: n });
    }
    let bearings: Vec<Vector3<f64>> = corr.iter().map(|c| k.ray(c.keypoint.x, c.keypoint.y).normalize()).collect();
    let mut rng = crate::rng::tagged_stream(cfg.rng_seed, "ransac", 0);
    let mut best: Option<(Pose, usize)> = None;
    let mut mask = vec![false; n];
    let mut needed = cfg.max_iters;
    let mut iterations = 0;
    while iterations < needed {
        iterations += 1;
        let s = sample(&mut rng, n, 4);
        let (i0, i1, i2, i3) = (s.index(0), s.index(1), s.index(2), s.index(3));
        let Ok(cands) = p3p(&[bearings[i0], bearings[i1], bearings[i2]], &[corr[i0].world, corr[i1].world, corr[i2].world])
        else {
            continue;
        };
        for pose in cands {
            if !is_inlier(k, &pose, &corr[i3], cfg.max_reproj_px) {
                continue;
            }
            let count = score(k, &pose, corr, cfg.max_reproj_px, &mut mask);
            if best.as_ref().map_or(true, |(_, b)| count > *b) {
                best = Some((pose, count));
                needed = required_iterations(count as f64 / n as f64, cfg.confidence, cfg.max_iters);
            }
        }
    }
    let Some((pose, count)) = best.filter(|(_, c)| *c >= cfg.min_inliers) else {
        return Err(Error::NoModelFound);
    };
    score(k, &pose, corr, cfg.max_reproj_px, &mut mask);
    let inliers: Vec<Correspondence> = corr.iter().zip(&mask).filter(|(_, &m)| m).map(|(c, _)| *c).collect();
    let refined = refine_pose(&pose, &inliers, k, 20);
    let mut refined_mask = vec![false; n];
    let refined_count = score(k, &refined, corr, cfg.max_reproj_px, &mut refined_mask);
    if refined_count >= count {
        Ok(RansacOutput { pose: refined, inliers: refined_mask, iterations })
    } else {
        Ok(RansacOutput { pose, inliers: mask, iterations })
    }
}

fn cost(pose: &Pose, corr: &[Correspondence], k: &CameraIntrinsics) -> f64 {
    corr.iter()
        .map(|c| residual(k, pose, c).map_or(f64::INFINITY, |r| r.norm_squared()))
        .sum()
}

/// Gauss-Newton on the summed squared reprojection error with the update
/// `p ← (exp(ω)·R, exp(ω)·t + v)`. Steps that do not lower the cost are
/// rejected and end the iteration.
pub fn refine_pose(pose: &Pose, corr: &[Correspondence], k: &CameraIntrinsics, max_iters: usize) -> Pose {
    let mut cur = *pose;
    let mut cur_cost = cost(&cur, corr, k);
    if !cur_cost.is_finite() || corr.len() < 3 {
        return cur;
    }
    for _ in 0..max_iters {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for c in corr {
            let p = cur.transform(&c.world);
            let r = residual(k, &cur, c).expect("finite cost implies positive depth");
            let iz = 1.0 / p.z;
            let du = Vector3::new(k.fx * iz, 0.0, -k.fx * p.x * iz * iz);
            let dv = Vector3::new(0.0, k.fy * iz, -k.fy * p.y * iz * iz);
            // dp/dω = -[p]ₓ, dp/dv = I
            let ju = Vector6::new(
                p.y * du.z - p.z * du.y,
                p.z * du.x - p.x * du.z,
                p.x * du.y - p.y * du.x,
                du.x,
                du.y,
                du.z,
            );
            let jv = Vector6::new(
                p.y * dv.z - p.z * dv.y,
                p.z * dv.x - p.x * dv.z,
                p.x * dv.y - p.y * dv.x,
                dv.x,
                dv.y,
                dv.z,
            );
            jtj += ju * ju.transpose() + jv * jv.transpose();
            jtr += ju * r.x + jv * r.y;
        }
        let Some(delta) = jtj.cholesky().map(|ch| ch.solve(&-jtr)) else {
            break;
        };
        let rot = Rotation3::new(Vector3::new(delta[0], delta[1], delta[2]));
        let r_new = rot.matrix() * cur.rotation_matrix();
        let t_new = rot * cur.translation + Vector3::new(delta[3], delta[4], delta[5]);
        let next = Pose::from_matrix(&r_new, t_new);
        let next_cost = cost(&next, corr, k);
        if !(next_cost < cur_cost) {
            break;
        }
        let converged = cur_cost - next_cost <= 1e-12 * cur_cost.max(1e-300);
        cur = next;
        cur_cost = next_cost;
        if converged {
            break;
        }
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::pose_error;
    use nalgebra::UnitQuaternion;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        Pose::new(
            UnitQuaternion::from_euler_angles(rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0)),
            Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
        )
    }

    /// Visible world points with their exact projections.
    fn scene(pose: &Pose, n: usize, rng: &mut impl Rng) -> Vec<Correspondence> {
        let k = intrinsics();
        let inv = pose.inverse();
        (0..n)
            .map(|_| {
                let x = rng.gen_range(10.0..630.0);
                let y = rng.gen_range(10.0..470.0);
                let d = rng.gen_range(2.0..8.0);
                let cam = k.ray(x, y) * d / k.ray(x, y).z;
                Correspondence { keypoint: Keypoint::new(x, y), world: inv.transform(&cam) }
            })
            .collect()
    }

    #[test]
    fn noiseless_inliers_recover_the_pose() {
        let mut rng = crate::rng::stream(3, 0);
        for trial in 0..20 {
            let gt = random_pose(&mut rng);
            let corr = scene(&gt, 100, &mut rng);
            let out = ransac_pnp(&corr, &intrinsics(), &RansacConfig { rng_seed: trial, ..Default::default() }).unwrap();
            let (dt, dr) = pose_error(&out.pose, &gt);
            assert!(dt < 1e-4 && dr < 1e-3, "trial {trial}: {dt} m {dr} deg");
            assert_eq!(out.inlier_count(), 100);
        }
    }

    #[test]
    fn contaminated_set_recovers_pose_and_inliers() {
        let k = intrinsics();
        let mut rng = crate::rng::stream(4, 0);
        let noise = Normal::new(0.0, 1.0).unwrap();
        for trial in 0..20 {
            let gt = random_pose(&mut rng);
            let mut corr = scene(&gt, 100, &mut rng);
            for c in corr.iter_mut().take(70) {
                c.keypoint.x += noise.sample(&mut rng);
                c.keypoint.y += noise.sample(&mut rng);
            }
            for c in corr.iter_mut().skip(70) {
                c.keypoint = Keypoint::new(rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0));
            }
            let out = ransac_pnp(&corr, &k, &RansacConfig { rng_seed: trial, ..Default::default() }).unwrap();
            let (dt, dr) = pose_error(&out.pose, &gt);
            assert!(dt < 0.02 && dr < 0.2, "trial {trial}: {dt} m {dr} deg");
            let tp = out.inliers[..70].iter().filter(|&&b| b).count();
            assert!(tp >= 65, "trial {trial}: {tp} true positives");
        }
    }

    #[test]
    fn collapsed_coordinates_find_no_model() {
        let mut rng = crate::rng::stream(5, 0);
        let corr: Vec<Correspondence> = (0..30)
            .map(|_| Correspondence {
                keypoint: Keypoint::new(rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0)),
                world: Vector3::new(0.5, -1.0, 3.0),
            })
            .collect();
        assert!(matches!(ransac_pnp(&corr, &intrinsics(), &RansacConfig::default()), Err(Error::NoModelFound)));
    }

    #[test]
    fn mirrored_scene_finds_no_model_above_chance_support() {
        let mut rng = crate::rng::stream(5, 0);
        let gt = random_pose(&mut rng);
        let inv = gt.inverse();
        // Every point mirrored through the camera center sits behind the true
        // camera; only a half-turn about an image axis explains a thin strip.
        let corr: Vec<Correspondence> = scene(&gt, 40, &mut rng)
            .into_iter()
            .map(|c| Correspondence { keypoint: c.keypoint, world: inv.transform(&-gt.transform(&c.world)) })
            .collect();
        assert!(corr.iter().all(|c| gt.transform(&c.world).z < 0.0));
        let cfg = RansacConfig { min_inliers: 20, ..Default::default() };
        assert!(matches!(ransac_pnp(&corr, &intrinsics(), &cfg), Err(Error::NoModelFound)));
    }

    #[test]
    fn too_few_points_and_determinism() {
        let mut rng = crate::rng::stream(6, 0);
        let gt = random_pose(&mut rng);
        let corr = scene(&gt, 40, &mut rng);
        assert!(matches!(
            ransac_pnp(&corr[..3], &intrinsics(), &RansacConfig::default()),
            Err(Error::TooFewPoints { .. })
        ));
        let cfg = RansacConfig { rng_seed: 9, ..Default::default() };
        let a = ransac_pnp(&corr, &intrinsics(), &cfg).unwrap();
        let b = ransac_pnp(&corr, &intrinsics(), &cfg).unwrap();
        assert_eq!(a.pose, b.pose);
        assert_eq!(a.inliers, b.inliers);
    }

    #[test]
    fn refinement_reduces_cost_from_a_perturbed_start() {
        let mut rng = crate::rng::stream(7, 0);
        let gt = random_pose(&mut rng);
        let corr = scene(&gt, 50, &mut rng);
        let start = Pose::new(
            UnitQuaternion::from_scaled_axis(Vector3::new(0.01, -0.02, 0.01)) * gt.rotation,
            gt.translation + Vector3::new(0.02, 0.01, -0.03),
        );
        let out = refine_pose(&start, &corr, &intrinsics(), 20);
        let (dt, dr) = pose_error(&out, &gt);
        assert!(dt < 1e-8 && dr < 1e-6, "{dt} {dr}");
    }

    #[test]
    fn iteration_bound() {
        assert_eq!(required_iterations(1.0, 0.999, 10_000), 1);
        assert_eq!(required_iterations(0.0, 0.999, 10_000), 10_000);
        // 0.5³ = 0.125: ln(0.001)/ln(0.875) = 51.7
        assert_eq!(required_iterations(0.5, 0.999, 10_000), 52);
    }
}
