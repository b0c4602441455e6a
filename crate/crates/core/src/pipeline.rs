//! End-to-end map building and query localization over in-memory data.

use log::info;
use nalgebra::Vector3;

use crate::config::KvFile;
use crate::covis::{build_covis_graph, CovisGraph, OverlapConfig};
use crate::embed::{learn_global_encodings, CovisAugmenter, GaussianAugmenter, GlobalAugmenter, GlobalEncodingTable, SkipGramConfig, WalkConfig};
use crate::error::{Error, Result};
use crate::features::{buffer_fill, pca_fit_sampled, FeatureBuffer, FeatureTable, PqCodebook};
use crate::geom::CameraView;
use crate::localize::{localize_query, LocalizationResult, Query, RansacConfig};
use crate::net::{kmeans_centers, width_for, ScrModel, ScrModelConfig};
use crate::train::{train_loop, MetricsRow, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    Covis,
    Gaussian,
    None,
}

impl std::str::FromStr for AugmentMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "covis" => Ok(Self::Covis),
            "gaussian" => Ok(Self::Gaussian),
            "none" => Ok(Self::None),
            _ => Err(Error::InvalidConfig(format!("unknown augmentation {s}"))),
        }
    }
}

impl AugmentMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Covis => "covis",
            Self::Gaussian => "gaussian",
            Self::None => "none",
        }
    }
}

/// Own encoding, unchanged.
struct Identity;

impl GlobalAugmenter for Identity {
    fn augment(&self, id: u32, table: &GlobalEncodingTable, _rng: &mut dyn rand::RngCore, out: &mut [f64]) -> bool {
        let Some(v) = table.get(id) else {
            return false;
        };
        for (o, x) in out.iter_mut().zip(v) {
            *o = f64::from(*x);
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub overlap: OverlapConfig,
    pub walk: WalkConfig,
    pub skipgram: SkipGramConfig,
    pub augment: AugmentMode,
    pub keep_prob: f64,
    pub gaussian_sigma: f64,
    pub pca_dim: usize,
    pub pca_max_samples: usize,
    pub buffer_rows: usize,
    /// Zero picks the width from the number of training images.
    pub width: usize,
    /// Upper bound; the count is clipped to the number of training cameras.
    pub n_clusters: usize,
    pub model: ScrModelConfig,
    pub train: TrainConfig,
    pub pq_m: usize,
    pub pq_k: usize,
    pub pq_iters: usize,
    pub ransac: RansacConfig,
    pub k: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            overlap: OverlapConfig::default(),
            walk: WalkConfig::default(),
            skipgram: SkipGramConfig::default(),
            augment: AugmentMode::Covis,
            keep_prob: 0.5,
            gaussian_sigma: 0.1,
            pca_dim: 128,
            pca_max_samples: 1_000_000,
            buffer_rows: 2_000_000,
            width: 0,
            n_clusters: 50,
            model: ScrModelConfig::default(),
            train: TrainConfig::default(),
            pq_m: 8,
            pq_k: 256,
            pq_iters: 25,
            ransac: RansacConfig::default(),
            k: 10,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Reads every pipeline key over the defaults; the caller checks for
    /// leftovers with [`KvFile::finish`]. `seed` reseeds every stage and
    /// per-stage seed keys override it.
    pub fn from_kv(kv: &mut KvFile) -> Result<Self> {
        let mut c = Self::default();
        if let Some(seed) = kv.get::<u64>("seed")? {
            c = c.with_seed(seed);
        }
        let o = &mut c.overlap;
        kv.read("overlap.d_v", &mut o.d_v)?;
        kv.read("overlap.n_samples", &mut o.n_samples)?;
        kv.read("overlap.threshold", &mut o.threshold)?;
        kv.read("overlap.seed", &mut o.rng_seed)?;
        if let Some(g) = kv.get::<f64>("overlap.max_center_distance")? {
            o.max_center_distance = Some(g);
        }
        let w = &mut c.walk;
        kv.read("walk.p", &mut w.p)?;
        kv.read("walk.q", &mut w.q)?;
        kv.read("walk.len", &mut w.walk_len)?;
        kv.read("walk.per_node", &mut w.walks_per_node)?;
        kv.read("walk.seed", &mut w.rng_seed)?;
        let s = &mut c.skipgram;
        kv.read("skipgram.dim", &mut s.dim)?;
        kv.read("skipgram.window", &mut s.window)?;
        kv.read("skipgram.negatives", &mut s.negatives)?;
        kv.read("skipgram.epochs", &mut s.epochs)?;
        kv.read("skipgram.lr", &mut s.learning_rate)?;
        kv.read("skipgram.seed", &mut s.rng_seed)?;
        kv.read("augment.mode", &mut c.augment)?;
        kv.read("augment.keep_prob", &mut c.keep_prob)?;
        kv.read("augment.sigma", &mut c.gaussian_sigma)?;
        kv.read("pca.dim", &mut c.pca_dim)?;
        kv.read("pca.max_samples", &mut c.pca_max_samples)?;
        kv.read("buffer.rows", &mut c.buffer_rows)?;
        kv.read("model.width", &mut c.width)?;
        kv.read("model.n_clusters", &mut c.n_clusters)?;
        let m = &mut c.model;
        kv.read("model.n_blocks", &mut m.n_blocks)?;
        kv.read("model.n_refine_blocks", &mut m.n_refine_blocks)?;
        kv.read("model.expansion", &mut m.expansion)?;
        kv.read("model.n_periods", &mut m.n_periods)?;
        kv.read("model.refinement", &mut m.refinement)?;
        let (train_seed, explicit) = (c.train.seed, kv.contains("train.seed"));
        c.train = TrainConfig::from_kv(kv)?;
        if !explicit {
            c.train.seed = train_seed;
        }
        kv.read("pq.m", &mut c.pq_m)?;
        kv.read("pq.k", &mut c.pq_k)?;
        kv.read("pq.iters", &mut c.pq_iters)?;
        let r = &mut c.ransac;
        kv.read("ransac.max_reproj_px", &mut r.max_reproj_px)?;
        kv.read("ransac.max_iters", &mut r.max_iters)?;
        kv.read("ransac.confidence", &mut r.confidence)?;
        kv.read("ransac.min_inliers", &mut r.min_inliers)?;
        kv.read("ransac.seed", &mut r.rng_seed)?;
        kv.read("localize.k", &mut c.k)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.overlap.validate()?;
        self.walk.validate()?;
        self.skipgram.validate()?;
        self.train.loss.validate()?;
        self.train.optim.validate()?;
        self.ransac.validate()?;
        if !(0.0..=1.0).contains(&self.keep_prob) || self.pca_dim == 0 || self.buffer_rows == 0 || self.k == 0 || self.n_clusters == 0 {
            return Err(Error::InvalidConfig("pipeline: keep_prob, pca.dim, buffer.rows, localize.k or model.n_clusters out of range".into()));
        }
        if self.width % 64 != 0 {
            return Err(Error::InvalidConfig(format!("model.width {} is not a multiple of 64", self.width)));
        }
        Ok(())
    }

    /// Reseeds every stage from one seed, keeping the stages independent.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.overlap.rng_seed = seed;
        self.walk.rng_seed = seed;
        self.skipgram.rng_seed = seed;
        self.train.seed = seed;
        self.ransac.rng_seed = seed;
        self
    }
}

/// Everything needed at query time plus training diagnostics.
#[derive(Debug, Clone)]
pub struct TrainedMap {
    pub model: ScrModel,
    pub genc: GlobalEncodingTable,
    pub pq: PqCodebook,
    pub graph: CovisGraph,
    pub buffer: FeatureBuffer,
    pub metrics: Vec<MetricsRow>,
}

/// Stages before training: graph, encodings, PCA, buffer and a fresh model.
pub fn prepare(
    views: &[CameraView],
    features: &FeatureTable,
    cfg: &PipelineConfig,
) -> Result<(CovisGraph, GlobalEncodingTable, FeatureBuffer, ScrModel)> {
    cfg.validate()?;
    let graph = build_covis_graph(views, &cfg.overlap)?;
    info!("covisibility graph: {} nodes, {} edges", graph.len(), graph.edge_count());
    let genc = learn_global_encodings(&graph, &cfg.walk, &cfg.skipgram)?;
    let (buffer, model) = prepare_model(views, features, &genc, cfg)?;
    Ok((graph, genc, buffer, model))
}

/// PCA, buffer and a fresh model for precomputed global encodings.
pub fn prepare_model(
    views: &[CameraView],
    features: &FeatureTable,
    genc: &GlobalEncodingTable,
    cfg: &PipelineConfig,
) -> Result<(FeatureBuffer, ScrModel)> {
    cfg.validate()?;
    if let Some(v) = views.iter().find(|v| genc.get(v.id).is_none()) {
        return Err(Error::InvalidConfig(format!("no global encoding for training image {}", v.id)));
    }
    let mut rng = crate::rng::tagged_stream(cfg.seed, "pipeline", 0);
    let pca = pca_fit_sampled(&features.encodings_matrix(), cfg.pca_dim, cfg.pca_max_samples, &mut rng)?;
    info!("pca: {} -> {} dims, explained variance {:.4}", pca.input_dim(), pca.output_dim(), pca.explained_variance_ratio);
    let buffer = buffer_fill(features, &pca, cfg.buffer_rows, &mut rng)?;
    let centers: Vec<Vector3<f64>> = views.iter().map(|v| v.pose.center()).collect();
    let n_clusters = cfg.n_clusters.min(centers.len());
    let model_cfg = ScrModelConfig {
        width: if cfg.width == 0 { width_for(views.len()) } else { cfg.width },
        n_clusters,
        local_dim: cfg.pca_dim,
        global_dim: genc.dim(),
        ..cfg.model
    };
    let mut model = ScrModel::new(model_cfg, kmeans_centers(&centers, n_clusters, &mut rng)?, &mut rng)?;
    model.pca = Some(pca);
    Ok((buffer, model))
}

pub fn augmenter<'g>(cfg: &PipelineConfig, graph: &'g CovisGraph) -> Box<dyn GlobalAugmenter + 'g> {
    match cfg.augment {
        AugmentMode::Covis => Box::new(CovisAugmenter { graph, keep_prob: cfg.keep_prob }),
        AugmentMode::Gaussian => Box::new(GaussianAugmenter { sigma: cfg.gaussian_sigma }),
        AugmentMode::None => Box::new(Identity),
    }
}

pub fn train_retrieval_index(retrieval: &GlobalEncodingTable, cfg: &PipelineConfig) -> Result<PqCodebook> {
    let mut rng = crate::rng::tagged_stream(cfg.seed, "pq", 0);
    PqCodebook::train(retrieval, cfg.pq_m, cfg.pq_k.min(256), cfg.pq_iters, &mut rng)
}

/// Full map construction from training views, raw features and retrieval
/// features.
pub fn build_map(
    views: &[CameraView],
    features: &FeatureTable,
    retrieval: &GlobalEncodingTable,
    cfg: &PipelineConfig,
) -> Result<TrainedMap> {
    let (graph, genc, buffer, mut model) = prepare(views, features, cfg)?;
    let aug = augmenter(cfg, &graph);
    let metrics = train_loop(&mut model, &buffer, views, &genc, aug.as_ref(), &cfg.train)?;
    drop(aug);
    let pq = train_retrieval_index(retrieval, cfg)?;
    Ok(TrainedMap { model, genc, pq, graph, buffer, metrics })
}

/// Localizes every query; a query whose hypotheses all fail yields a
/// failure row rather than an error.
pub fn localize_all(map: &TrainedMap, queries: &[Query], k: usize, ransac: &RansacConfig) -> Result<Vec<LocalizationResult>> {
    localize_queries(&map.model, &map.pq, &map.genc, queries, k, ransac)
}

/// [`localize_all`] from the stored parts of a map.
pub fn localize_queries(
    model: &ScrModel,
    pq: &PqCodebook,
    genc: &GlobalEncodingTable,
    queries: &[Query],
    k: usize,
    ransac: &RansacConfig,
) -> Result<Vec<LocalizationResult>> {
    queries
        .iter()
        .map(|q| match localize_query(q, model, pq, genc, k, ransac) {
            Ok(r) => Ok(r),
            Err(Error::AllHypothesesFailed) => Ok(LocalizationResult::failure(q.id, q.keypoints.len())),
            Err(e) => Err(e),
        })
        .collect()
}
