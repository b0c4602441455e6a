//! One function per acceptance criterion. Each returns whether it held and
//! a one-line summary of the measured numbers.

use std::time::{Duration, Instant};

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use scrforge::covis::{build_covis_graph, CovisGraph, OverlapConfig};
use scrforge::embed::{learn_global_encodings, GlobalEncodingTable, SkipGramConfig, WalkConfig};
use scrforge::eval::{accuracy, roc_auc};
use scrforge::features::{exact_knn, FeatureTable, PqCodebook};
use scrforge::geom::{load_poses, pose_error, project, save_poses, unproject, CameraIntrinsics, Keypoint, Pose};
use scrforge::linalg::Matrix;
use scrforge::localize::{predict_coordinates, ransac_pnp, Correspondence, RansacConfig};
use scrforge::net::{load_checkpoint, save_checkpoint};
use scrforge::pipeline::{augmenter, build_map, localize_all, prepare, PipelineConfig};
use scrforge::synth::{covis_oracle, clustered_graph, gen_scene, Layout, SceneSpec};
use scrforge::train::{depth_adjusted_error, lambda_weight, tau, train_loop, RobustKernel};

use super::covis_oracle as mc;
use super::gradcheck::Problem;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Within the joint (0.25 m, 2 deg) threshold.
const FINE: (f64, f64) = (0.25, 2.0);

/// Pipeline settings shared by the training experiments: a w = 64 network,
/// 512-row batches.
fn small_pipeline(seed: u64, iters: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::default().with_seed(seed);
    cfg.width = 64;
    cfg.train.optim.total_iters = iters;
    cfg.train.optim.batch_rows = 512;
    cfg.train.log_every = (iters / 8).max(1);
    cfg
}

pub fn gradient_integrity() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    // Consistency term and ground-truth depth supervision are alternative
    // branches; both are checked.
    for depth_supervision in [false, true] {
        let p = Problem::new(1, 8, depth_supervision);
        let rows = p.keypoints.len();
        let r = p.check(1e-4);
        let branches = r.valid_coarse > 0 && r.valid_coarse < rows && r.valid_final > 0 && r.valid_final < rows;
        pass &= r.max_rel_err < 1e-4 && r.elapsed < Duration::from_secs(60) && branches;
        parts.push(format!(
            "{}: {} params, max rel err {:.2e} at {}, valid coarse/final {}/{} of {rows}, {:.1} s",
            if depth_supervision { "depth supervision" } else { "consistency" },
            r.params,
            r.max_rel_err,
            r.worst,
            r.valid_coarse,
            r.valid_final,
            secs(r.elapsed)
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

pub fn schedule_exactness() -> Outcome {
    let checks = [
        ("tau(0)", tau(0.0, 1.0, 50.0), 51.0),
        ("tau(1)", tau(1.0, 1.0, 50.0), 1.0),
        ("lambda(0)", lambda_weight(0.0), 1.0),
        ("lambda(0.25)", lambda_weight(0.25), 0.5),
        ("lambda(0.5+)", lambda_weight(0.5 + 1e-12), 0.0),
        ("rho_gm(2/3)", RobustKernel::GemanMcClure.rho(2.0 / 3.0), 0.5),
    ];
    let worst = checks.iter().map(|(_, got, want)| (got - want).abs()).fold(0.0, f64::max);
    let listed: Vec<String> = checks.iter().map(|(n, got, _)| format!("{n}={got}")).collect();
    Outcome::new(worst <= 1e-12, format!("{}; max deviation {worst:.1e}", listed.join(" ")))
}

pub fn depth_adjustment_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut bound, mut midpoint, mut monotone) = (0usize, 0usize, 0usize);
    let mut worst_mid = 0.0f64;
    let n = 100_000;
    for _ in 0..n {
        let e2 = rng.gen_range(0.0..500.0);
        let s2 = rng.gen_range(0.1..10.0);
        let s3 = rng.gen_range(0.0..20.0);
        let d = rng.gen_range(1e-3..100.0);
        let dd = d + rng.gen_range(0.0..50.0);
        let e3 = depth_adjusted_error(e2, d, s2, s3).unwrap();
        let scale = e2 / s2;
        if e3 > scale * (1.0 + 1e-15) {
            bound += 1;
        }
        if depth_adjusted_error(e2, dd, s2, s3).unwrap() < e3 {
            monotone += 1;
        }
        if s3 > 0.0 {
            let at_k = depth_adjusted_error(e2, s3 / s2, s2, s3).unwrap();
            let err = (at_k - scale / 2f64.sqrt()).abs() / scale.max(1.0);
            worst_mid = worst_mid.max(err);
            if err > 1e-12 {
                midpoint += 1;
            }
        }
    }
    Outcome::new(
        bound + midpoint + monotone == 0,
        format!(
            "{n} tuples: bound violations {bound}, midpoint violations {midpoint} (worst {worst_mid:.1e}), monotonicity violations {monotone}"
        ),
    )
}

pub fn covisibility_oracle() -> Outcome {
    let start = Instant::now();
    let spec = SceneSpec {
        layout: Layout::Ring,
        n_points: 3000,
        n_train_cameras: 12,
        n_query_cameras: 1,
        descriptor_dim: 32,
        latent_dim: 8,
        camera_radius: 3.0,
        ..Default::default()
    };
    let ds = gen_scene(&spec).unwrap();
    // The far side of the ring wall is about 9 m away.
    let cfg = OverlapConfig { d_v: 10.0, n_samples: 20_000, threshold: 0.2, ..Default::default() };
    let g = build_covis_graph(&ds.train_views, &cfg).unwrap();
    let views = &ds.train_views;
    let mut worst_edge = 0.0f64;
    let mut worst_absent = 0.0f64;
    for a in 0..views.len() {
        for b in a + 1..views.len() {
            let o = mc::undirected(&views[a], &views[b], cfg.d_v, 1_000_000, 1000 + (a * 12 + b) as u64);
            match g.weight(views[a].id, views[b].id) {
                Some(w) => worst_edge = worst_edge.max((w - o).abs()),
                None => worst_absent = worst_absent.max(o),
            }
        }
    }
    let predicted: Vec<(u32, u32)> = g.edges().iter().map(|e| (e.0.min(e.1), e.0.max(e.1))).collect();
    let truth = covis_oracle(&ds, 10);
    let tp = predicted.iter().filter(|p| truth.contains(p)).count() as f64;
    let precision = tp / predicted.len().max(1) as f64;
    let recall = tp / truth.len().max(1) as f64;
    let elapsed = start.elapsed();
    let pass = worst_edge <= 0.02
        && worst_absent < cfg.threshold + 0.02
        && precision >= 0.8
        && recall >= 0.8
        && elapsed < Duration::from_secs(120);
    Outcome::new(
        pass,
        format!(
            "{} edges, max |w - mc| {worst_edge:.4}, max mc weight of dropped pairs {worst_absent:.3}, precision {precision:.2} recall {recall:.2} vs {} shared-point pairs, {:.1} s",
            predicted.len(),
            truth.len(),
            secs(elapsed)
        ),
    )
}

fn distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(x - y).powi(2)).sum::<f64>().sqrt()
}

/// AUC of negated embedding distance as a predictor of graph edges.
pub fn edge_auc(g: &CovisGraph, t: &GlobalEncodingTable) -> f64 {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    let ids = g.nodes();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            let s = -distance(t.get(a).unwrap(), t.get(b).unwrap());
            if g.weight(a, b).is_some() {
                pos.push(s);
            } else {
                neg.push(s);
            }
        }
    }
    roc_auc(&pos, &neg)
}

pub fn embedding_separation() -> Outcome {
    let aucs: Vec<f64> = (0..3u64)
        .map(|seed| {
            let g = clustered_graph(3, 100, 0.1, 0.01, seed).unwrap();
            let walk = WalkConfig { rng_seed: seed, ..Default::default() };
            let sg = SkipGramConfig { rng_seed: seed, ..Default::default() };
            edge_auc(&g, &learn_global_encodings(&g, &walk, &sg).unwrap())
        })
        .collect();
    let m = median(aucs.clone());
    Outcome::new(m >= 0.9, format!("AUC per seed {:.3}/{:.3}/{:.3}, median {m:.3}", aucs[0], aucs[1], aucs[2]))
}

fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]))
}

/// Correspondences for a random camera: `n` points at depths 2 to 8 m with
/// Gaussian pixel noise, the first `outliers` of them replaced by unrelated
/// world points.
pub fn pnp_problem(rng: &mut impl Rng, n: usize, outliers: usize, noise_px: f64) -> (Pose, CameraIntrinsics, Vec<Correspondence>) {
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
    let pose = Pose::new(random_rotation(rng), Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)));
    let noise = Normal::new(0.0, noise_px).unwrap();
    let sample_world = |rng: &mut _| {
        let kp = Keypoint::new(Rng::gen_range(rng, 0.0..640.0), Rng::gen_range(rng, 0.0..480.0));
        (kp, unproject(&kp, &k, &pose, Rng::gen_range(rng, 2.0..8.0)).unwrap())
    };
    let corr = (0..n)
        .map(|i| {
            let (kp, world) = sample_world(rng);
            if i < outliers {
                let (_, other) = sample_world(rng);
                Correspondence { keypoint: kp, world: other }
            } else {
                let (px, _) = project(&k, &pose, &world).unwrap();
                let keypoint = Keypoint::new(px.x + noise.sample(rng), px.y + noise.sample(rng));
                Correspondence { keypoint, world }
            }
        })
        .collect();
    (pose, k, corr)
}

pub fn ransac_robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ok = 0;
    let mut times = Vec::new();
    for trial in 0..100u64 {
        let (gt, k, corr) = pnp_problem(&mut rng, 100, 30, 1.0);
        let cfg = RansacConfig { max_iters: 10_000, rng_seed: trial, ..Default::default() };
        let start = Instant::now();
        let out = ransac_pnp(&corr, &k, &cfg);
        times.push(secs(start.elapsed()) * 1e3);
        if let Ok(out) = out {
            let (dt, dr) = pose_error(&out.pose, &gt);
            if dt <= 0.02 && dr <= 0.2 {
                ok += 1;
            }
        }
    }
    let worst = times.iter().copied().fold(0.0, f64::max);
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    Outcome::new(ok >= 95 && worst < 50.0, format!("{ok}/100 within (0.02 m, 0.2 deg), mean {mean:.2} ms, max {worst:.2} ms per query"))
}

pub fn end_to_end_single_room() -> Outcome {
    let start = Instant::now();
    let ds = gen_scene(&SceneSpec::default()).unwrap();
    let cfg = small_pipeline(0, 10_000);
    let map = build_map(&ds.train_views, &ds.train_features, &ds.train_retrieval, &cfg).unwrap();
    let trained = start.elapsed();
    let res = localize_all(&map, &ds.queries(), cfg.k, &cfg.ransac).unwrap();
    let pct = accuracy(&res, &ds.query_views, &[FINE]).unwrap()[0];
    let elapsed = start.elapsed();
    let last = map.metrics.last().unwrap();
    Outcome::new(
        pct >= 90.0 && elapsed < Duration::from_secs(1800),
        format!(
            "{pct:.0}% of {} queries within (0.25 m, 2 deg); final training median e2 {:.2} px; training {:.0} s, total {:.0} s",
            res.len(),
            last.median_e2,
            secs(trained),
            secs(elapsed)
        ),
    )
}

pub fn multi_hypothesis() -> Outcome {
    let spec = SceneSpec {
        layout: Layout::DuplicatedRooms,
        n_train_cameras: 40,
        n_query_cameras: 100,
        ambiguity: 1.0,
        ..Default::default()
    };
    let ds = gen_scene(&spec).unwrap();
    let cfg = small_pipeline(0, 8000);
    let map = build_map(&ds.train_views, &ds.train_features, &ds.train_retrieval, &cfg).unwrap();
    let queries = ds.queries();
    let rates: Vec<f64> = [1usize, 2, 5, 10, 20]
        .iter()
        .map(|&k| {
            let res = localize_all(&map, &queries, k, &cfg.ransac).unwrap();
            accuracy(&res, &ds.query_views, &[FINE]).unwrap()[0]
        })
        .collect();
    let gain = rates[3] - rates[0];
    let monotone = rates.windows(2).all(|w| w[1] >= w[0]);
    Outcome::new(
        gain >= 30.0 && monotone,
        format!(
            "success at k=1/2/5/10/20: {:.0}/{:.0}/{:.0}/{:.0}/{:.0}%, k=10 minus k=1 {gain:+.0} points, non-decreasing {monotone}",
            rates[0], rates[1], rates[2], rates[3], rates[4]
        ),
    )
}

/// |median depth of final predictions − median GT depth| over the training
/// buffer, each row predicted under its own image's encoding.
fn depth_gap(spec: &SceneSpec, seed: u64, sigma3: f64) -> f64 {
    let ds = gen_scene(spec).unwrap();
    let mut cfg = small_pipeline(seed, 1500);
    cfg.train.loss.sigma3 = sigma3;
    let (graph, genc, buffer, mut model) = prepare(&ds.train_views, &ds.train_features, &cfg).unwrap();
    let aug = augmenter(&cfg, &graph);
    train_loop(&mut model, &buffer, &ds.train_views, &genc, aug.as_ref(), &cfg.train).unwrap();
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for (img, rows) in buffer.rows_by_image() {
        let view = ds.train_views.iter().find(|v| v.id == img).unwrap();
        let local = Matrix::from_fn(rows.len(), buffer.dim(), |r, c| f64::from(buffer.encoding(rows[r])[c]));
        let y = predict_coordinates(&model, &local, genc.get(img).unwrap()).unwrap();
        for (r, &i) in rows.iter().enumerate() {
            let p = y.row(r);
            pred.push(view.pose.transform(&Vector3::new(p[0], p[1], p[2])).z);
            truth.push(f64::from(buffer.gt_depth(i).unwrap()));
        }
    }
    (median(pred) - median(truth)).abs()
}

pub fn depth_debiasing() -> Outcome {
    // A wide room seen from close by spreads depths from about 2.4 to 8.9 m.
    let spec = SceneSpec { room_half_extent: 4.0, camera_radius: 5.0, ..Default::default() };
    let adjusted: Vec<f64> = (0..3).map(|s| depth_gap(&spec, s, 3.0)).collect();
    let original: Vec<f64> = (0..3).map(|s| depth_gap(&spec, s, 0.0)).collect();
    let (ma, mo) = (median(adjusted.clone()), median(original.clone()));
    Outcome::new(
        ma < mo,
        format!(
            "median depth gap adjusted {:.3}/{:.3}/{:.3} m (median {ma:.3}) vs original {:.3}/{:.3}/{:.3} m (median {mo:.3})",
            adjusted[0], adjusted[1], adjusted[2], original[0], original[1], original[2]
        ),
    )
}

fn quarter_e2(seed: u64, refinement: bool) -> (usize, f64) {
    let ds = gen_scene(&SceneSpec::default()).unwrap();
    let mut cfg = small_pipeline(seed, 4000);
    cfg.model.refinement = refinement;
    cfg.train.stop_at = Some(1000);
    let (graph, genc, buffer, mut model) = prepare(&ds.train_views, &ds.train_features, &cfg).unwrap();
    let aug = augmenter(&cfg, &graph);
    let metrics = train_loop(&mut model, &buffer, &ds.train_views, &genc, aug.as_ref(), &cfg.train).unwrap();
    let last = metrics.last().unwrap();
    (last.iter, last.median_e2)
}

pub fn refinement_ablation() -> Outcome {
    let with: Vec<(usize, f64)> = (0..3).map(|s| quarter_e2(s, true)).collect();
    let without: Vec<(usize, f64)> = (0..3).map(|s| quarter_e2(s, false)).collect();
    // Metrics rows carry the 0-based index of the last completed iteration.
    let at = with.iter().chain(&without).map(|r| r.0).collect::<Vec<_>>();
    let mw = median(with.iter().map(|r| r.1).collect());
    let mo = median(without.iter().map(|r| r.1).collect());
    Outcome::new(
        mw < mo && at.iter().all(|&i| i + 1 == 1000),
        format!(
            "median training e2 after {} of 4000 iterations: with refinement {:.2}/{:.2}/{:.2} px (median {mw:.2}), without {:.2}/{:.2}/{:.2} px (median {mo:.2})",
            at[0] + 1, with[0].1, with[1].1, with[2].1, without[0].1, without[1].1, without[2].1
        ),
    )
}

/// Save, reload, save again; both files must match.
fn reload_is_exact<T>(dir: &std::path::Path, name: &str, value: &T, save: impl Fn(&T, &std::path::Path), load: impl Fn(&std::path::Path) -> T) -> bool {
    let (a, b) = (dir.join(format!("{name}.a")), dir.join(format!("{name}.b")));
    save(value, &a);
    save(&load(&a), &b);
    std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap()
}

fn pq_recall(table: &GlobalEncodingTable, queries: &[Vec<f32>], m: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cb = PqCodebook::train(table, m, 256, 25, &mut rng).unwrap();
    let mut hits = 0;
    for q in queries {
        let exact: Vec<u32> = exact_knn(table, q, 10).iter().map(|x| x.0).collect();
        hits += cb.knn(q, 10).unwrap().iter().filter(|x| exact.contains(&x.0)).count();
    }
    hits as f64 / (10 * queries.len()) as f64
}

pub fn format_round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_scene(&SceneSpec { n_points: 200, n_train_cameras: 8, n_query_cameras: 4, descriptor_dim: 64, latent_dim: 16, ..Default::default() }).unwrap();
    let mut cfg = small_pipeline(0, 20);
    cfg.pca_dim = 32;
    let (graph, genc, _, model) = prepare(&ds.train_views, &ds.train_features, &cfg).unwrap();
    let d = dir.path();
    let checks = [
        ("checkpoint", reload_is_exact(d, "ckpt", &model, |m, p| save_checkpoint(m, p).unwrap(), |p| load_checkpoint(p).unwrap())),
        ("features", reload_is_exact(d, "feat", &ds.train_features, |t, p| t.save(p).unwrap(), |p| FeatureTable::load(p).unwrap())),
        ("graph", reload_is_exact(d, "graph", &graph, |g, p| g.save(p).unwrap(), |p| CovisGraph::load(p).unwrap())),
        ("encodings", reload_is_exact(d, "genc", &genc, |t, p| t.save(p).unwrap(), |p| GlobalEncodingTable::load(p).unwrap())),
        ("poses", reload_is_exact(d, "poses", &ds.train_views, |v, p| save_poses(p, v).unwrap(), |p| load_poses(p).unwrap())),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut gauss = || -> Vec<f32> { (0..256).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let rows: Vec<(u32, Vec<f32>)> = (0..10_000u32).map(|i| (i, gauss())).collect();
    let table = GlobalEncodingTable::new(256, rows).unwrap();
    let queries: Vec<Vec<f32>> = (0..100).map(|_| gauss()).collect();
    // Eight-byte codes cannot rank i.i.d. Gaussian vectors, whose pairwise
    // distances concentrate; 128 subspaces of two dimensions can.
    let coarse = pq_recall(&table, &queries, 8);
    let fine = pq_recall(&table, &queries, 128);
    Outcome::new(
        failed.is_empty() && fine >= 0.8,
        format!(
            "byte-exact reloads: {}; pq recall@10 on 10k Gaussian 256-d vectors {fine:.3} with 128 subspaces ({coarse:.3} with 8)",
            if failed.is_empty() { "all five".to_string() } else { format!("FAILED {failed:?}") }
        ),
    )
}
