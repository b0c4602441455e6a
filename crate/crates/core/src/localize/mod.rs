//! Query-time pose estimation.
//!
//! Each of the `k` training images retrieved for a query contributes its
//! global encoding as one hypothesis. Every hypothesis gets its own forward
//! pass and its own seeded RANSAC run, and the winner is the one with the
//! most inliers, ties going to the better-ranked neighbor.

mod p3p;
mod ransac;

use std::fmt::Write as _;

use rayon::prelude::*;

pub use p3p::p3p;
pub use ransac::{ransac_pnp, refine_pose, Correspondence, RansacConfig, RansacOutput};

use crate::embed::GlobalEncodingTable;
use crate::error::{Error, Result};
use crate::features::PqCodebook;
use crate::geom::{CameraIntrinsics, Keypoint, Pose};
use crate::linalg::Matrix;
use crate::net::ScrModel;

/// Everything known about one query image at localization time.
#[derive(Debug, Clone)]
pub struct Query {
    pub id: u32,
    pub intrinsics: CameraIntrinsics,
    pub keypoints: Vec<Keypoint>,
    /// One row per keypoint, raw descriptors (PCA is applied by the model).
    pub descriptors: Matrix,
    pub retrieval: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationResult {
    pub query_id: u32,
    pub pose: Pose,
    pub inliers: usize,
    pub hypothesis_rank: usize,
    pub correspondences_used: usize,
    pub success: bool,
}

impl LocalizationResult {
    pub fn failure(query_id: u32, correspondences_used: usize) -> Self {
        Self {
            query_id,
            pose: Pose::identity(),
            inliers: 0,
            hypothesis_rank: 0,
            correspondences_used,
            success: false,
        }
    }
}

/// Local encodings of a query as the network expects them.
pub fn query_local_encodings(query: &Query, model: &ScrModel) -> Result<Matrix> {
    if query.descriptors.rows() != query.keypoints.len() {
        return Err(Error::DimensionMismatch {
            expected: query.keypoints.len(),
            got: query.descriptors.rows(),
        });
    }
    let local = match &model.pca {
        Some(pca) => pca.apply_batch(&query.descriptors)?,
        None => query.descriptors.clone(),
    };
    if local.cols() != model.config().local_dim {
        return Err(Error::DimensionMismatch { expected: model.config().local_dim, got: local.cols() });
    }
    Ok(local)
}

/// RANSAC seed for one hypothesis; depends only on the query and the rank,
/// never on evaluation order.
fn hypothesis_seed(seed: u64, query_id: u32, rank: usize) -> u64 {
    let mut z = seed ^ (u64::from(query_id) << 32) ^ rank as u64;
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Scene coordinates for every keypoint under one global encoding.
pub fn predict_coordinates(model: &ScrModel, local: &Matrix, global: &[f32]) -> Result<Matrix> {
    let ld = local.cols();
    if global.len() != model.config().global_dim {
        return Err(Error::DimensionMismatch { expected: model.config().global_dim, got: global.len() });
    }
    let mut x = Matrix::zeros(local.rows(), ld + global.len());
    for r in 0..local.rows() {
        let row = x.row_mut(r);
        row[..ld].copy_from_slice(local.row(r));
        for (o, g) in row[ld..].iter_mut().zip(global) {
            *o = f64::from(*g);
        }
    }
    Ok(model.forward(&x)?.y().clone())
}

/// One hypothesis: forward pass under `global`, then RANSAC.
pub fn localize_hypothesis(
    query: &Query,
    local: &Matrix,
    model: &ScrModel,
    global: &[f32],
    rank: usize,
    cfg: &RansacConfig,
) -> Result<LocalizationResult> {
    let y = predict_coordinates(model, local, global)?;
    let corr: Vec<Correspondence> = query
        .keypoints
        .iter()
        .enumerate()
        .map(|(i, kp)| {
            let r = y.row(i);
            Correspondence { keypoint: *kp, world: nalgebra::Vector3::new(r[0], r[1], r[2]) }
        })
        .collect();
    let hcfg = RansacConfig { rng_seed: hypothesis_seed(cfg.rng_seed, query.id, rank), ..*cfg };
    let out = ransac_pnp(&corr, &query.intrinsics, &hcfg)?;
    Ok(LocalizationResult {
        query_id: query.id,
        pose: out.pose,
        inliers: out.inlier_count(),
        hypothesis_rank: rank,
        correspondences_used: corr.len(),
        success: true,
    })
}

/// Picks the most inliers; equal counts go to the lower rank.
fn select(results: impl IntoIterator<Item = LocalizationResult>) -> Option<LocalizationResult> {
    results.into_iter().fold(None, |best: Option<LocalizationResult>, r| match best {
        Some(b) if b.inliers > r.inliers || (b.inliers == r.inliers && b.hypothesis_rank < r.hypothesis_rank) => Some(b),
        _ => Some(r),
    })
}

/// Multi-hypothesis localization of one query.
pub fn localize_query(
    query: &Query,
    model: &ScrModel,
    pq: &PqCodebook,
    genc: &GlobalEncodingTable,
    k: usize,
    cfg: &RansacConfig,
) -> Result<LocalizationResult> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    cfg.validate()?;
    let local = query_local_encodings(query, model)?;
    let neighbors = pq.knn(&query.retrieval, k)?;
    let outcomes: Vec<Result<LocalizationResult>> = neighbors
        .par_iter()
        .enumerate()
        .map(|(rank, &(id, _))| {
            let global = genc
                .get(id)
                .ok_or_else(|| Error::InvalidConfig(format!("retrieved image {id} has no global encoding")))?;
            localize_hypothesis(query, &local, model, global, rank, cfg)
        })
        .collect();
    let mut ok = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o {
            Ok(r) => ok.push(r),
            Err(Error::NoModelFound | Error::TooFewPoints { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    select(ok).ok_or(Error::AllHypothesesFailed)
}

pub const RESULTS_HEADER: &str = "query_id,qw,qx,qy,qz,tx,ty,tz,inliers,hypothesis_rank,success";

pub fn write_results(results: &[LocalizationResult]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in results {
        let q = r.pose.rotation.quaternion();
        let t = r.pose.translation;
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{}",
            r.query_id,
            q.w,
            q.i,
            q.j,
            q.k,
            t.x,
            t.y,
            t.z,
            r.inliers,
            r.hypothesis_rank,
            u8::from(r.success)
        );
    }
    out
}

/// Parses a results CSV. `correspondences_used` is not stored and reads as
/// the inlier count.
pub fn parse_results(text: &str) -> Result<Vec<LocalizationResult>> {
    let err = |line: usize, msg: &str| Error::format("results", format!("line {}: {msg}", line + 1));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == RESULTS_HEADER => {}
        _ => return Err(err(0, "missing header")),
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 11 {
            return Err(err(n, "expected 11 fields"));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| err(n, "bad number"));
        let int = |i: usize| f[i].parse::<usize>().map_err(|_| err(n, "bad integer"));
        let query_id = f[0].parse::<u32>().map_err(|_| err(n, "bad query id"))?;
        let pose = Pose::from_wxyz(num(1)?, num(2)?, num(3)?, num(4)?, nalgebra::Vector3::new(num(5)?, num(6)?, num(7)?))
            .map_err(|_| err(n, "bad quaternion"))?;
        let inliers = int(8)?;
        let success = match f[10] {
            "1" => true,
            "0" => false,
            _ => return Err(err(n, "success must be 0 or 1")),
        };
        out.push(LocalizationResult {
            query_id,
            pose,
            inliers,
            hypothesis_rank: int(9)?,
            correspondences_used: inliers,
            success,
        });
    }
    Ok(out)
}
