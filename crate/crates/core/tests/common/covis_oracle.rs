//! Monte-Carlo reference for frustum overlap, written directly from the
//! definition with its own sampler.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use scrforge::geom::CameraView;

/// Weighted fraction of `i`'s frustum samples that `j` sees.
pub fn directed(i: &CameraView, j: &CameraView, d_v: f64, samples: usize, seed: u64) -> f64 {
    let ki = &i.intrinsics;
    let kinv = Matrix3::new(ki.fx, 0.0, ki.cx, 0.0, ki.fy, ki.cy, 0.0, 0.0, 1.0).try_inverse().unwrap();
    let rit = i.pose.rotation_matrix().transpose();
    let ci = -(rit * i.pose.translation);
    let rj = j.pose.rotation_matrix();
    let cj = -(rj.transpose() * j.pose.translation);
    let kj = &j.intrinsics;
    // Chunks keep the reference parallel and still deterministic.
    let chunks = 64usize;
    let per = samples.div_ceil(chunks);
    let total: f64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut acc = 0.0;
            for _ in 0..per {
                let u = rng.gen::<f64>() * f64::from(ki.width);
                let v = rng.gen::<f64>() * f64::from(ki.height);
                let d = d_v * (1.0 - rng.gen::<f64>());
                let ray = kinv * Vector3::new(u, v, 1.0);
                let x = ci + rit * (ray * d);
                let xc = rj * (x - cj);
                if xc.z <= 0.0 || xc.z > d_v {
                    continue;
                }
                let (pu, pv) = (kj.fx * xc.x / xc.z + kj.cx, kj.fy * xc.y / xc.z + kj.cy);
                if pu < 0.0 || pv < 0.0 || pu >= f64::from(kj.width) || pv >= f64::from(kj.height) {
                    continue;
                }
                acc += ((x - ci).normalize().dot(&(x - cj).normalize())).max(0.0);
            }
            acc
        })
        .sum();
    total / (per * chunks) as f64
}

pub fn undirected(i: &CameraView, j: &CameraView, d_v: f64, samples: usize, seed: u64) -> f64 {
    let a = directed(i, j, d_v, samples, seed);
    let b = directed(j, i, d_v, samples, seed.wrapping_add(1));
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}
