//! Scene coordinate regression for visual localization.
//!
//! The pipeline learns a map from per-keypoint encodings to 3D scene
//! coordinates and localizes query images with P3P inside RANSAC:
//!
//! - [`geom`]: pinhole projection, validity and pose-error metrics
//! - [`covis`]: covisibility graph from frustum overlap
//! - [`embed`]: Node2Vec global encodings and covisibility augmentation
//! - [`features`]: local-encoding PCA, training buffer, product quantization
//! - [`net`]: coarse-to-fine coordinate network with a reverse-mode tape
//! - [`train`]: losses, schedules, AdamW and the training loop
//! - [`localize`]: multi-hypothesis pose estimation
//! - [`synth`]: synthetic scenes with ground truth
//! - [`eval`]: accuracy tables and map-size accounting
//! - [`pipeline`]: map building and batch localization

pub mod cluster;
pub mod config;
pub mod covis;
pub mod embed;
pub mod error;
pub mod eval;
pub mod features;
pub mod geom;
pub mod linalg;
pub mod localize;
pub mod net;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
