//! Synthetic scenes with ground truth.
//!
//! Points live in one or two rooms, cameras move on smooth closed
//! trajectories, and every observation records which point it came from.
//! Descriptors are low-rank base vectors plus noise; in the duplicated-rooms
//! layout a chosen fraction of room B copies room A's base vectors while its
//! geometry stays independent, which is what makes local matching ambiguous
//! and retrieval-driven hypotheses necessary.

mod io;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::KvFile;
use crate::covis::CovisGraph;
use crate::embed::GlobalEncodingTable;
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::geom::{project, CameraIntrinsics, CameraView, Pose};
use crate::linalg::Matrix;
use crate::localize::Query;

pub use io::{load_dataset, parse_gt, save_dataset, write_gt, GroundTruth};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Inward-looking loop around one cluttered volume.
    SingleRoom,
    /// Inward-looking loop inside a cylindrical wall of points.
    Ring,
    /// Two copies of the single room far apart.
    DuplicatedRooms,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::SingleRoom => "single-room",
            Layout::Ring => "ring",
            Layout::DuplicatedRooms => "duplicated-rooms",
        }
    }

    pub fn rooms(self) -> usize {
        match self {
            Layout::DuplicatedRooms => 2,
            _ => 1,
        }
    }
}

impl std::str::FromStr for Layout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-room" => Ok(Layout::SingleRoom),
            "ring" => Ok(Layout::Ring),
            "duplicated-rooms" => Ok(Layout::DuplicatedRooms),
            _ => Err(Error::InvalidSpec(format!("unknown layout {s}"))),
        }
    }
}

/// Distance between room origins; far beyond any frustum depth.
pub const ROOM_SPACING: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub layout: Layout,
    /// Points per room.
    pub n_points: usize,
    /// Cameras over all rooms.
    pub n_train_cameras: usize,
    pub n_query_cameras: usize,
    pub descriptor_dim: usize,
    /// Rank of the base descriptors before mixing into `descriptor_dim`.
    pub latent_dim: usize,
    pub sigma_f: f64,
    pub ambiguity: f64,
    pub illumination_shift: f64,
    pub sigma_px: f64,
    pub retrieval_dim: usize,
    pub retrieval_noise: f64,
    /// Weight of the per-room component of the retrieval signature.
    pub room_signature: f64,
    /// Chance that a visible point becomes a keypoint.
    pub detect_prob: f64,
    /// Horizontal half-size of the point volume (room layouts), meters.
    pub room_half_extent: f64,
    /// Radius of the camera loop, meters.
    pub camera_radius: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            layout: Layout::SingleRoom,
            n_points: 500,
            n_train_cameras: 20,
            n_query_cameras: 50,
            descriptor_dim: 512,
            latent_dim: 64,
            sigma_f: 0.02,
            ambiguity: 0.0,
            illumination_shift: 0.0,
            sigma_px: 0.5,
            retrieval_dim: 256,
            retrieval_noise: 0.02,
            room_signature: 0.03,
            detect_prob: 0.6,
            room_half_extent: 2.0,
            camera_radius: 5.5,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.n_points == 0 || self.n_train_cameras == 0 || self.n_query_cameras == 0 {
            return bad("counts must be at least 1");
        }
        if self.n_train_cameras < self.layout.rooms() || self.n_query_cameras < self.layout.rooms() {
            return bad("every room needs a train and a query camera");
        }
        if !(0.0..=1.0).contains(&self.ambiguity) {
            return bad("ambiguity must lie in [0, 1]");
        }
        if self.descriptor_dim == 0 || self.latent_dim == 0 || self.latent_dim > self.descriptor_dim {
            return bad("latent_dim must lie in [1, descriptor_dim]");
        }
        if self.retrieval_dim == 0 {
            return bad("retrieval_dim must be positive");
        }
        for (name, v) in [
            ("sigma_f", self.sigma_f),
            ("sigma_px", self.sigma_px),
            ("illumination_shift", self.illumination_shift),
            ("retrieval_noise", self.retrieval_noise),
            ("room_signature", self.room_signature),
            ("room_half_extent", self.room_half_extent),
            ("camera_radius", self.camera_radius),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be finite and nonnegative"));
            }
        }
        if !(self.camera_radius > 0.0) {
            return bad("camera_radius must be positive");
        }
        if !(self.detect_prob > 0.0 && self.detect_prob <= 1.0) {
            return bad("detect_prob must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn from_kv(kv: &mut KvFile) -> Result<Self> {
        let mut s = Self::default();
        if let Some(l) = kv.get::<String>("layout")? {
            s.layout = l.parse()?;
        }
        kv.read("n_points", &mut s.n_points)?;
        kv.read("n_train_cameras", &mut s.n_train_cameras)?;
        kv.read("n_query_cameras", &mut s.n_query_cameras)?;
        kv.read("descriptor_dim", &mut s.descriptor_dim)?;
        kv.read("latent_dim", &mut s.latent_dim)?;
        kv.read("sigma_f", &mut s.sigma_f)?;
        kv.read("ambiguity", &mut s.ambiguity)?;
        kv.read("illumination_shift", &mut s.illumination_shift)?;
        kv.read("sigma_px", &mut s.sigma_px)?;
        kv.read("retrieval_dim", &mut s.retrieval_dim)?;
        kv.read("retrieval_noise", &mut s.retrieval_noise)?;
        kv.read("room_signature", &mut s.room_signature)?;
        kv.read("detect_prob", &mut s.detect_prob)?;
        kv.read("room_half_extent", &mut s.room_half_extent)?;
        kv.read("camera_radius", &mut s.camera_radius)?;
        kv.read("seed", &mut s.seed)?;
        s.validate().map_err(|e| Error::InvalidSpec(e.to_string()))?;
        Ok(s)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("layout".into(), self.layout.name().into()),
            ("n_points".into(), self.n_points.to_string()),
            ("n_train_cameras".into(), self.n_train_cameras.to_string()),
            ("n_query_cameras".into(), self.n_query_cameras.to_string()),
            ("descriptor_dim".into(), self.descriptor_dim.to_string()),
            ("latent_dim".into(), self.latent_dim.to_string()),
            ("sigma_f".into(), self.sigma_f.to_string()),
            ("ambiguity".into(), self.ambiguity.to_string()),
            ("illumination_shift".into(), self.illumination_shift.to_string()),
            ("sigma_px".into(), self.sigma_px.to_string()),
            ("retrieval_dim".into(), self.retrieval_dim.to_string()),
            ("retrieval_noise".into(), self.retrieval_noise.to_string()),
            ("room_signature".into(), self.room_signature.to_string()),
            ("detect_prob".into(), self.detect_prob.to_string()),
            ("room_half_extent".into(), self.room_half_extent.to_string()),
            ("camera_radius".into(), self.camera_radius.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

/// One generated scene. Train and query ids are disjoint; query ids follow
/// the train ids.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub spec: SceneSpec,
    pub points: Vec<Vector3<f64>>,
    /// Room of every point.
    pub point_room: Vec<u32>,
    pub train_views: Vec<CameraView>,
    pub query_views: Vec<CameraView>,
    /// Raw descriptors with GT depth.
    pub train_features: FeatureTable,
    pub query_features: FeatureTable,
    /// Point id of every feature row.
    pub train_point_ids: Vec<u32>,
    pub query_point_ids: Vec<u32>,
    pub train_retrieval: GlobalEncodingTable,
    pub query_retrieval: GlobalEncodingTable,
}

pub fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).expect("valid intrinsics")
}

fn room_origin(room: usize) -> Vector3<f64> {
    Vector3::new(room as f64 * ROOM_SPACING, 0.0, 0.0)
}

/// Camera pose on the loop at phase `u ∈ [0, 1)`, in room coordinates.
/// z is up; the camera looks at a target that drifts slowly around the center.
fn trajectory_pose(spec: &SceneSpec, u: f64) -> Pose {
    let th = std::f64::consts::TAU * u;
    let radius = spec.camera_radius;
    let target_h = if spec.layout == Layout::Ring { 1.5 } else { 1.2 };
    let eye = Vector3::new(radius * th.cos(), radius * th.sin(), 1.6 + 0.3 * (3.0 * th).sin());
    let target = Vector3::new(0.4 * (2.0 * th).cos(), 0.4 * (2.0 * th).sin(), target_h);
    look_at_z_up(eye, target)
}

fn look_at_z_up(eye: Vector3<f64>, target: Vector3<f64>) -> Pose {
    Pose::look_at(eye, target, Vector3::z())
}

fn sample_point(spec: &SceneSpec, rng: &mut impl Rng) -> Vector3<f64> {
    let h = spec.room_half_extent;
    match spec.layout {
        Layout::Ring => {
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            // The wall sits at twice the camera loop radius.
            let r = 2.0 * spec.camera_radius + rng.gen_range(-0.2..0.2);
            Vector3::new(r * a.cos(), r * a.sin(), rng.gen_range(0.0..3.0))
        }
        _ => Vector3::new(rng.gen_range(-h..=h), rng.gen_range(-h..=h), rng.gen_range(0.0..2.5)),
    }
}

fn normal_vec(n: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| { let z: f64 = StandardNormal.sample(rng); scale * z }).collect::<Vec<f64>>()
}

/// Retrieval signature input: camera center in room units and viewing direction.
fn pose_signature(pose: &Pose, room: usize) -> [f64; 6] {
    let c = (pose.center() - room_origin(room)) / 5.0;
    let f = pose.rotation_matrix().row(2).transpose();
    [c.x, c.y, c.z, f.x, f.y, f.z]
}

pub fn gen_scene(spec: &SceneSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let rooms = spec.layout.rooms();
    let k = intrinsics();
    let mut rng = crate::rng::tagged_stream(spec.seed, "synth", 0);

    // Geometry: points in room coordinates shifted to each room origin.
    let mut points = Vec::with_capacity(rooms * spec.n_points);
    let mut point_room = Vec::with_capacity(rooms * spec.n_points);
    for room in 0..rooms {
        for _ in 0..spec.n_points {
            points.push(sample_point(spec, &mut rng) + room_origin(room));
            point_room.push(room as u32);
        }
    }

    // Base descriptors: latent codes mixed by a fixed D×L matrix.
    let (d, l) = (spec.descriptor_dim, spec.latent_dim);
    let mix = Matrix::from_vec(d, l, normal_vec(d * l, 1.0 / (d as f64).sqrt(), &mut rng));
    let mut latents: Vec<Vec<f64>> = (0..points.len()).map(|_| normal_vec(l, 1.0, &mut rng)).collect();
    if rooms == 2 {
        for i in 0..spec.n_points {
            if rng.gen::<f64>() < spec.ambiguity {
                latents[spec.n_points + i] = latents[i].clone();
            }
        }
    }
    let bases: Vec<Vec<f64>> = latents
        .iter()
        .map(|z| (0..d).map(|r| mix.row(r).iter().zip(z).map(|(m, z)| m * z).sum::<f64>()).collect())
        .collect();
    let shift_dir = {
        let v = normal_vec(d, 1.0, &mut rng);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };

    // Retrieval: a shared linear map of the pose signature plus a room code.
    let r_dim = spec.retrieval_dim;
    let r_map = Matrix::from_vec(r_dim, 6, normal_vec(r_dim * 6, 1.0 / (r_dim as f64).sqrt(), &mut rng));
    let room_codes: Vec<Vec<f64>> = (0..rooms).map(|_| normal_vec(r_dim, 1.0 / (r_dim as f64).sqrt(), &mut rng)).collect();

    let split = |n: usize, room: usize| n / rooms + usize::from(room < n % rooms);
    let mut train_views = Vec::new();
    let mut query_views = Vec::new();
    let mut view_room = Vec::new();
    let mut next_id = 0u32;
    for (views, n, query) in [(&mut train_views, spec.n_train_cameras, false), (&mut query_views, spec.n_query_cameras, true)] {
        for room in 0..rooms {
            let m = split(n, room);
            for i in 0..m {
                // Queries sit between training phases, with a small jitter.
                let u = if query {
                    (i as f64 + 0.5 + rng.gen_range(-0.2..0.2)) / m as f64
                } else {
                    i as f64 / m as f64
                };
                let local = trajectory_pose(spec, u);
                let center = local.center() + room_origin(room);
                let pose = Pose::new(local.rotation, -(local.rotation * center));
                views.push(CameraView { id: next_id, pose, intrinsics: k });
                view_room.push(room);
                next_id += 1;
            }
        }
    }

    let n_train = train_views.len();
    let observe = |views: &[CameraView], rooms_of: &[usize], query: bool, rng: &mut crate::rng::Rng| -> Result<(FeatureTable, Vec<u32>, Vec<(u32, Vec<f32>)>)> {
        let mut table = FeatureTable::new(d);
        let mut ids = Vec::new();
        let mut retrieval = Vec::new();
        let sigma = if query { spec.sigma_f * (1.0 + spec.illumination_shift) } else { spec.sigma_f };
        let shift = if query { spec.illumination_shift } else { 0.0 };
        let mut enc = vec![0f32; d];
        for (v, &room) in views.iter().zip(rooms_of) {
            for (pid, y) in points.iter().enumerate() {
                if point_room[pid] as usize != room {
                    continue;
                }
                let Ok((px, depth)) = project(&k, &v.pose, y) else { continue };
                if depth < 0.1 || !k.contains(&px) || rng.gen::<f64>() >= spec.detect_prob {
                    continue;
                }
                let nx = px.x + spec.sigma_px * rng.sample::<f64, _>(StandardNormal);
                let ny = px.y + spec.sigma_px * rng.sample::<f64, _>(StandardNormal);
                if !k.contains(&nalgebra::Vector2::new(nx, ny)) {
                    continue;
                }
                for (j, e) in enc.iter_mut().enumerate() {
                    let noise: f64 = rng.sample(StandardNormal);
                    *e = (bases[pid][j] + shift * shift_dir[j] + sigma * noise) as f32;
                }
                table.push(v.id, [nx as f32, ny as f32], &enc, Some(depth as f32))?;
                ids.push(pid as u32);
            }
            let sig = pose_signature(&v.pose, room);
            let feat: Vec<f32> = (0..r_dim)
                .map(|r| {
                    let lin: f64 = r_map.row(r).iter().zip(&sig).map(|(a, b)| a * b).sum();
                    let noise: f64 = rng.sample(StandardNormal);
                    (lin + spec.room_signature * room_codes[room][r] + spec.retrieval_noise * noise) as f32
                })
                .collect();
            retrieval.push((v.id, feat));
        }
        Ok((table, ids, retrieval))
    };
    let (train_features, train_point_ids, train_r) = observe(&train_views, &view_room[..n_train], false, &mut rng)?;
    let (query_features, query_point_ids, query_r) = observe(&query_views, &view_room[n_train..], true, &mut rng)?;

    Ok(SynthDataset {
        spec: spec.clone(),
        points,
        point_room,
        train_views,
        query_views,
        train_features,
        query_features,
        train_point_ids,
        query_point_ids,
        train_retrieval: GlobalEncodingTable::new(r_dim, train_r)?,
        query_retrieval: GlobalEncodingTable::new(r_dim, query_r)?,
    })
}

impl SynthDataset {
    /// Room of a train or query image.
    pub fn room_of_view(&self, id: u32) -> u32 {
        let v = self
            .train_views
            .iter()
            .chain(&self.query_views)
            .find(|v| v.id == id)
            .expect("known view");
        (v.pose.center().x / ROOM_SPACING).round() as u32
    }

    pub fn query_view(&self, id: u32) -> Option<&CameraView> {
        self.query_views.iter().find(|v| v.id == id)
    }

    /// Queries in the form the localizer consumes.
    pub fn queries(&self) -> Vec<Query> {
        let by_image = self.query_features.rows_by_image();
        self.query_views
            .iter()
            .map(|v| {
                let rows = by_image.get(&v.id).cloned().unwrap_or_default();
                let d = self.query_features.dim();
                let mut desc = Matrix::zeros(rows.len(), d);
                for (r, &i) in rows.iter().enumerate() {
                    for (o, x) in desc.row_mut(r).iter_mut().zip(self.query_features.encoding(i)) {
                        *o = f64::from(*x);
                    }
                }
                Query {
                    id: v.id,
                    intrinsics: v.intrinsics,
                    keypoints: rows.iter().map(|&i| self.query_features.keypoint(i)).collect(),
                    descriptors: desc,
                    retrieval: self.query_retrieval.get(v.id).expect("query retrieval feature").to_vec(),
                }
            })
            .collect()
    }
}

/// Training image pairs `(i, j)`, `i < j`, sharing at least `min_shared`
/// observed points.
pub fn covis_oracle(ds: &SynthDataset, min_shared: usize) -> BTreeSet<(u32, u32)> {
    let mut seen: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for (i, &pid) in ds.train_point_ids.iter().enumerate() {
        seen.entry(ds.train_features.image_id(i)).or_default().insert(pid);
    }
    let ids: Vec<u32> = ds.train_views.iter().map(|v| v.id).collect();
    let mut pairs = BTreeSet::new();
    let empty = BTreeSet::new();
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[a + 1..] {
            let (si, sj) = (seen.get(&i).unwrap_or(&empty), seen.get(&j).unwrap_or(&empty));
            if si.intersection(sj).count() >= min_shared {
                pairs.insert((i.min(j), i.max(j)));
            }
        }
    }
    pairs
}

/// Planted-partition graph: `clusters` groups of `per_cluster` nodes, with
/// each intra-cluster pair linked with probability `p_in` and each
/// cross-cluster pair with `p_out`. Weights are uniform in [0.2, 1].
pub fn clustered_graph(clusters: usize, per_cluster: usize, p_in: f64, p_out: f64, seed: u64) -> Result<CovisGraph> {
    let n = clusters * per_cluster;
    let mut rng = crate::rng::tagged_stream(seed, "clustered-graph", 0);
    let mut g = CovisGraph::new((0..n as u32).collect(), 0.2, 8.0);
    for a in 0..n {
        for b in a + 1..n {
            let p = if a / per_cluster == b / per_cluster { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                g.add_edge(a as u32, b as u32, rng.gen_range(0.2..=1.0))?;
            }
        }
    }
    Ok(g)
}
