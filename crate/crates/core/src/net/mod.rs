//! Scene coordinate network.
//!
//! A residual MLP trunk maps `[local ‖ global]` encodings to a feature; a
//! softmax mixture over fixed cluster centers plus an offset gives the coarse
//! coordinate `y0`. The refinement module adds a projected positional
//! encoding of `y0` to the trunk feature, runs more residual blocks, and
//! predicts `y = y0 + offset`.

mod checkpoint;
mod model;
mod posenc;
mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint, checkpoint_from_bytes, checkpoint_to_bytes};
pub use model::{Forward, ScrModel, ScrModelConfig};
pub use posenc::{periods, posenc, posenc_backward_into, POSENC_PER_AXIS};
pub use tape::{Gradients, NodeId, Tape};

use nalgebra::Vector3;
use rand::Rng;

use crate::cluster::kmeans;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// `256·⌈√(n/1000)⌉`.
pub fn width_for(n_train_images: usize) -> usize {
    let mut k = 1usize;
    while k * k * 1000 < n_train_images {
        k += 1;
    }
    256 * k
}

/// k-means++ then at most 100 Lloyd iterations over camera centers.
pub fn kmeans_centers(camera_centers: &[Vector3<f64>], c: usize, rng: &mut impl Rng) -> Result<Matrix> {
    if c == 0 || camera_centers.len() < c {
        return Err(Error::TooFewPoints {
            needed: c.max(1),
            got: camera_centers.len(),
        });
    }
    let flat: Vec<f64> = camera_centers.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
    let km = kmeans(&flat, 3, c, 100, rng);
    Ok(Matrix::from_vec(c, 3, km.centers))
}
