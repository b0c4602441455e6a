use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use log::info;
use scrforge::covis::{build_covis_graph, CovisGraph};
use scrforge::embed::{learn_global_encodings, GlobalEncodingTable};
use scrforge::eval::{accuracy, format_table, MapSize};
use scrforge::features::PqCodebook;
use scrforge::geom::load_poses;
use scrforge::linalg::Matrix;
use scrforge::localize::{parse_results, predict_coordinates, write_results};
use scrforge::net::{checkpoint_to_bytes, load_checkpoint, save_checkpoint};
use scrforge::pipeline::{augmenter, localize_queries, prepare_model, train_retrieval_index};
use scrforge::synth::{gen_scene, load_dataset, save_dataset, SynthDataset};
use scrforge::train::{metrics_csv, train_loop};

use crate::config::RunConfig;
use crate::ply::write_ply;

fn parent_dir(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn dataset(cfg: &RunConfig) -> Result<SynthDataset> {
    load_dataset(&cfg.dataset).with_context(|| format!("loading dataset {}", cfg.dataset.display()))
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let ds = gen_scene(&cfg.scene)?;
    save_dataset(&cfg.dataset, &ds)?;
    info!(
        "wrote {}: {} points, {} training / {} query images, {} / {} keypoints",
        cfg.dataset.display(),
        ds.points.len(),
        ds.train_views.len(),
        ds.query_views.len(),
        ds.train_features.len(),
        ds.query_features.len()
    );
    Ok(())
}

pub fn graph(cfg: &RunConfig) -> Result<()> {
    let ds = dataset(cfg)?;
    let g = build_covis_graph(&ds.train_views, &cfg.pipeline.overlap)?;
    parent_dir(&cfg.graph)?;
    g.save(&cfg.graph)?;
    info!("wrote {}: {} nodes, {} edges", cfg.graph.display(), g.len(), g.edge_count());
    Ok(())
}

pub fn embed(cfg: &RunConfig) -> Result<()> {
    let g = CovisGraph::load(&cfg.graph)?;
    let genc = learn_global_encodings(&g, &cfg.pipeline.walk, &cfg.pipeline.skipgram)?;
    parent_dir(&cfg.encodings)?;
    genc.save(&cfg.encodings)?;
    info!("wrote {}: {} encodings of dimension {}", cfg.encodings.display(), genc.len(), genc.dim());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let ds = dataset(cfg)?;
    let graph = CovisGraph::load(&cfg.graph)?;
    let genc = GlobalEncodingTable::load(&cfg.encodings)?;
    let p = &cfg.pipeline;
    let (buffer, mut model) = prepare_model(&ds.train_views, &ds.train_features, &genc, p)?;
    info!("training w={} on {} buffered rows for {} iterations", model.config().width, buffer.len(), p.train.optim.total_iters);
    let aug = augmenter(p, &graph);
    let metrics = train_loop(&mut model, &buffer, &ds.train_views, &genc, aug.as_ref(), &p.train)?;
    let pq = train_retrieval_index(&ds.train_retrieval, p)?;
    for path in [&cfg.checkpoint, &cfg.metrics, &cfg.pq] {
        parent_dir(path)?;
    }
    save_checkpoint(&model, &cfg.checkpoint)?;
    fs::write(&cfg.metrics, metrics_csv(&metrics))?;
    pq.save(&cfg.pq)?;
    if let Some(last) = metrics.last() {
        info!("final median reprojection error {:.2} px, inlier ratio {:.3}", last.median_e2, last.inlier_ratio);
    }
    info!("wrote {}, {} and {}", cfg.checkpoint.display(), cfg.metrics.display(), cfg.pq.display());
    Ok(())
}

pub fn localize(cfg: &RunConfig) -> Result<()> {
    let ds = dataset(cfg)?;
    let model = load_checkpoint(&cfg.checkpoint)?;
    let genc = GlobalEncodingTable::load(&cfg.encodings)?;
    let pq = PqCodebook::load(&cfg.pq)?;
    let p = &cfg.pipeline;
    let results = localize_queries(&model, &pq, &genc, &ds.queries(), p.k, &p.ransac)?;
    parent_dir(&cfg.results)?;
    fs::write(&cfg.results, write_results(&results))?;
    let ok = results.iter().filter(|r| r.success).count();
    info!("wrote {}: {ok} of {} queries produced a pose", cfg.results.display(), results.len());
    Ok(())
}

/// Map size from whichever of the stored map files exist.
fn map_size(cfg: &RunConfig) -> Result<Option<MapSize>> {
    if !(cfg.checkpoint.exists() && cfg.encodings.exists() && cfg.pq.exists()) {
        return Ok(None);
    }
    Ok(Some(MapSize {
        checkpoint: checkpoint_to_bytes(&load_checkpoint(&cfg.checkpoint)?).len(),
        encodings: GlobalEncodingTable::load(&cfg.encodings)?.size_bytes(),
        pq: PqCodebook::load(&cfg.pq)?.size_bytes(),
    }))
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let results = parse_results(&fs::read_to_string(&cfg.results)?)?;
    let gt = load_poses(&cfg.gt)?;
    let pct = accuracy(&results, &gt, &cfg.thresholds)?;
    let table = format_table(&cfg.thresholds, &pct, map_size(cfg)?);
    print!("{table}");
    let path = cfg.out.join("eval.txt");
    parent_dir(&path)?;
    fs::write(&path, table)?;
    Ok(())
}

pub fn export(cfg: &RunConfig) -> Result<()> {
    let ds = dataset(cfg)?;
    let model = load_checkpoint(&cfg.checkpoint)?;
    let genc = GlobalEncodingTable::load(&cfg.encodings)?;
    let table = &ds.train_features;
    let mut points = Vec::with_capacity(table.len());
    for (img, rows) in table.rows_by_image() {
        let raw = Matrix::from_fn(rows.len(), table.dim(), |r, c| f64::from(table.encoding(rows[r])[c]));
        let local = match &model.pca {
            Some(pca) => pca.apply_batch(&raw)?,
            None => raw,
        };
        let global = genc.get(img).with_context(|| format!("no global encoding for image {img}"))?;
        let y = predict_coordinates(&model, &local, global)?;
        for r in 0..y.rows() {
            let p = y.row(r);
            points.push(([p[0] as f32, p[1] as f32, p[2] as f32], img));
        }
    }
    parent_dir(&cfg.pointcloud)?;
    let mut w = BufWriter::new(File::create(&cfg.pointcloud)?);
    write_ply(&mut w, &points)?;
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    info!("wrote {}: {} points", cfg.pointcloud.display(), points.len());
    Ok(())
}
