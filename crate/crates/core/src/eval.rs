//! Accuracy tables, map size accounting and ranking metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geom::{pose_error, CameraView};
use crate::localize::LocalizationResult;

/// Joint (translation m, rotation deg) thresholds.
pub type Threshold = (f64, f64);

pub const OUTDOOR: [Threshold; 3] = [(0.25, 2.0), (0.5, 5.0), (5.0, 10.0)];
pub const INDOOR: [Threshold; 3] = [(0.1, 1.0), (0.25, 2.0), (1.0, 5.0)];

pub fn preset(name: &str) -> Result<Vec<Threshold>> {
    match name {
        "outdoor" => Ok(OUTDOOR.to_vec()),
        "indoor" => Ok(INDOOR.to_vec()),
        _ => Err(Error::InvalidConfig(format!("unknown threshold preset {name}"))),
    }
}

/// Pose errors of every ground-truth query, `None` for failed localizations.
pub fn query_errors(results: &[LocalizationResult], gt: &[CameraView]) -> Result<Vec<(u32, Option<(f64, f64)>)>> {
    let by_id: BTreeMap<u32, &LocalizationResult> = results.iter().map(|r| (r.query_id, r)).collect();
    if let Some(r) = results.iter().find(|r| !gt.iter().any(|v| v.id == r.query_id)) {
        return Err(Error::MissingQuery(r.query_id));
    }
    gt.iter()
        .map(|v| {
            let r = by_id.get(&v.id).ok_or(Error::MissingQuery(v.id))?;
            Ok((v.id, r.success.then(|| pose_error(&r.pose, &v.pose))))
        })
        .collect()
}

/// Percentage of queries within each threshold, translation and rotation jointly.
pub fn accuracy(results: &[LocalizationResult], gt: &[CameraView], thresholds: &[Threshold]) -> Result<Vec<f64>> {
    let errors = query_errors(results, gt)?;
    let n = errors.len().max(1) as f64;
    Ok(thresholds
        .iter()
        .map(|&(t, r)| {
            let hit = errors.iter().filter(|(_, e)| e.is_some_and(|(dt, dr)| dt <= t && dr <= r)).count();
            100.0 * hit as f64 / n
        })
        .collect())
}

/// Bytes of everything a deployed map carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MapSize {
    pub checkpoint: usize,
    pub encodings: usize,
    pub pq: usize,
}

impl MapSize {
    pub fn total(&self) -> usize {
        self.checkpoint + self.encodings + self.pq
    }
}

pub fn format_table(thresholds: &[Threshold], pct: &[f64], size: Option<MapSize>) -> String {
    let mut out = String::new();
    for (&(t, r), p) in thresholds.iter().zip(pct) {
        let _ = writeln!(out, "({t} m, {r} deg)\t{p:.1}%");
    }
    if let Some(s) = size {
        let _ = writeln!(
            out,
            "map size\t{:.2} MB (checkpoint {} B, encodings {} B, pq {} B)",
            s.total() as f64 / 1e6,
            s.checkpoint,
            s.encodings,
            s.pq
        );
    }
    out
}

/// Probability that a random positive scores above a random negative, ties
/// counting half.
pub fn roc_auc(positives: &[f64], negatives: &[f64]) -> f64 {
    if positives.is_empty() || negatives.is_empty() {
        return f64::NAN;
    }
    let mut all: Vec<(f64, bool)> = positives.iter().map(|&s| (s, true)).chain(negatives.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Mann-Whitney U with midranks over tied groups.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{CameraIntrinsics, Pose};
    use nalgebra::{UnitQuaternion, Vector3};

    fn view(id: u32) -> CameraView {
        CameraView {
            id,
            pose: Pose::new(UnitQuaternion::from_euler_angles(0.1 * f64::from(id), 0.2, 0.0), Vector3::new(f64::from(id), 0.0, 1.0)),
            intrinsics: CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap(),
        }
    }

    fn result(v: &CameraView, pose: Pose, success: bool) -> LocalizationResult {
        LocalizationResult { query_id: v.id, pose, inliers: 10, hypothesis_rank: 0, correspondences_used: 10, success }
    }

    #[test]
    fn perfect_and_failed() {
        let gt: Vec<CameraView> = (0..5).map(view).collect();
        let ok: Vec<_> = gt.iter().map(|v| result(v, v.pose, true)).collect();
        assert_eq!(accuracy(&ok, &gt, &OUTDOOR).unwrap(), vec![100.0; 3]);
        let bad: Vec<_> = gt.iter().map(|v| result(v, v.pose, false)).collect();
        assert_eq!(accuracy(&bad, &gt, &OUTDOOR).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn hand_built_fixture_straddling_the_fine_threshold() {
        let gt: Vec<CameraView> = (0..4).map(view).collect();
        // Errors in the camera frame are applied as pose perturbations:
        // translation offsets move the center exactly by that amount.
        let shifted = |v: &CameraView, dt: f64, deg: f64| {
            let r = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), deg.to_radians()) * v.pose.rotation;
            let c = v.pose.center() + Vector3::new(0.0, dt, 0.0);
            Pose::new(r, -(r * c))
        };
        let res = vec![
            result(&gt[0], shifted(&gt[0], 0.24, 1.9), true), // inside all
            result(&gt[1], shifted(&gt[1], 0.26, 1.0), true), // fails fine on translation
            result(&gt[2], shifted(&gt[2], 0.10, 2.1), true), // fails fine on rotation
            result(&gt[3], shifted(&gt[3], 1.20, 4.0), true), // only outdoor coarse
        ];
        for (r, v) in res.iter().zip(&gt) {
            let (dt, _) = pose_error(&r.pose, &v.pose);
            assert!(dt > 0.05);
        }
        assert_eq!(accuracy(&res, &gt, &OUTDOOR).unwrap(), vec![25.0, 75.0, 100.0]);
        assert_eq!(accuracy(&res, &gt, &INDOOR).unwrap(), vec![0.0, 25.0, 75.0]);
    }

    #[test]
    fn missing_query_is_an_error() {
        let gt: Vec<CameraView> = (0..3).map(view).collect();
        let res: Vec<_> = gt[..2].iter().map(|v| result(v, v.pose, true)).collect();
        assert!(matches!(accuracy(&res, &gt, &OUTDOOR), Err(Error::MissingQuery(2))));
        let extra = vec![result(&view(9), view(9).pose, true)];
        assert!(matches!(accuracy(&extra, &gt[..0], &OUTDOOR), Err(Error::MissingQuery(9))));
    }

    #[test]
    fn auc_values() {
        assert_eq!(roc_auc(&[3.0, 4.0], &[1.0, 2.0]), 1.0);
        assert_eq!(roc_auc(&[1.0, 2.0], &[3.0, 4.0]), 0.0);
        assert_eq!(roc_auc(&[1.0], &[1.0]), 0.5);
        // One of four pairs inverted.
        assert_eq!(roc_auc(&[2.0, 4.0], &[1.0, 3.0]), 0.75);
    }

    #[test]
    fn table_mentions_size() {
        let t = format_table(&OUTDOOR, &[1.0, 2.0, 3.0], Some(MapSize { checkpoint: 1_000_000, encodings: 500_000, pq: 500_000 }));
        assert!(t.contains("2.00 MB"));
        assert_eq!(t.lines().count(), 4);
    }
}
