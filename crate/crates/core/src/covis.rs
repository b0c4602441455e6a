//! Pose-only covisibility from weighted frustum overlap.
//!
//! For each image, pixels are sampled uniformly and lifted to random depths
//! in `(0, d_v]`. The directed overlap `O(i→j)` is the fraction of those
//! samples that image `j` sees within its own `(0, d_v]` frustum, each
//! weighted by the cosine between the two viewing rays. An undirected edge
//! is kept when the harmonic mean of both directions reaches the threshold.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{CameraView, Keypoint};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapConfig {
    /// Maximum frustum depth in meters.
    pub d_v: f64,
    pub n_samples: usize,
    pub threshold: f64,
    pub rng_seed: u64,
    /// Skip pairs whose camera centers are farther apart than this.
    pub max_center_distance: Option<f64>,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        Self {
            d_v: 8.0,
            n_samples: 512,
            threshold: 0.2,
            rng_seed: 0,
            max_center_distance: None,
        }
    }
}

impl OverlapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_v > 0.0 && self.n_samples >= 1 && self.threshold > 0.0 && self.threshold < 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad overlap config {self:?}")))
        }
    }
}

/// Weighted undirected graph over training image ids.
#[derive(Debug, Clone, PartialEq)]
pub struct CovisGraph {
    nodes: Vec<u32>,
    adjacency: Vec<Vec<(usize, f64)>>,
    pub threshold: f64,
    pub d_v: f64,
}

impl CovisGraph {
    /// Graph without edges over the given ids (sorted and deduplicated).
    pub fn new(mut nodes: Vec<u32>, threshold: f64, d_v: f64) -> Self {
        nodes.sort_unstable();
        nodes.dedup();
        let adjacency = vec![Vec::new(); nodes.len()];
        Self {
            nodes,
            adjacency,
            threshold,
            d_v,
        }
    }

    /// Adds or overwrites the undirected edge `a–b`.
    pub fn add_edge(&mut self, a: u32, b: u32, weight: f64) -> Result<()> {
        let (ia, ib) = match (self.index_of(a), self.index_of(b)) {
            (Some(ia), Some(ib)) if ia != ib => (ia, ib),
            _ => return Err(Error::InvalidConfig(format!("bad edge {a}-{b}"))),
        };
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(Error::InvalidConfig(format!("edge weight {weight} outside (0,1]")));
        }
        for (from, to) in [(ia, ib), (ib, ia)] {
            let list = &mut self.adjacency[from];
            match list.binary_search_by_key(&to, |e| e.0) {
                Ok(pos) => list[pos].1 = weight,
                Err(pos) => list.insert(pos, (to, weight)),
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[u32] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.nodes.binary_search(&id).ok()
    }

    /// Neighbors of the node at `index`, as `(index, weight)` sorted by id.
    pub fn neighbors_of_index(&self, index: usize) -> &[(usize, f64)] {
        &self.adjacency[index]
    }

    /// Neighbor ids and weights of `id`, sorted by id.
    pub fn neighbors(&self, id: u32) -> Vec<(u32, f64)> {
        self.index_of(id)
            .map(|i| self.adjacency[i].iter().map(|&(j, w)| (self.nodes[j], w)).collect())
            .unwrap_or_default()
    }

    pub fn weight(&self, a: u32, b: u32) -> Option<f64> {
        let (ia, ib) = (self.index_of(a)?, self.index_of(b)?);
        self.adjacency[ia]
            .binary_search_by_key(&ib, |e| e.0)
            .ok()
            .map(|p| self.adjacency[ia][p].1)
    }

    /// Edges as `(i, j, weight)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(u32, u32, f64)> {
        let mut out = Vec::new();
        for (ia, list) in self.adjacency.iter().enumerate() {
            for &(ib, w) in list {
                if ia < ib {
                    out.push((self.nodes[ia], self.nodes[ib], w));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn isolated_nodes(&self) -> Vec<u32> {
        self.nodes
            .iter()
            .zip(&self.adjacency)
            .filter(|(_, a)| a.is_empty())
            .map(|(&n, _)| n)
            .collect()
    }

    /// Text form: `covis v1 <threshold> <d_v>`, a `nodes` line, then
    /// `i j weight` lines with `i < j` and six decimals.
    pub fn to_text(&self) -> String {
        let mut out = format!("covis v1 {} {}\nnodes", self.threshold, self.d_v);
        for n in &self.nodes {
            write!(out, " {n}").expect("write to string");
        }
        out.push('\n');
        for (i, j, w) in self.edges() {
            writeln!(out, "{i} {j} {w:.6}").expect("write to string");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::format("covis graph", m);
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        if header.len() != 4 || header[0] != "covis" || header[1] != "v1" {
            return Err(bad("bad header"));
        }
        let threshold: f64 = header[2].parse().map_err(|_| bad("bad threshold"))?;
        let d_v: f64 = header[3].parse().map_err(|_| bad("bad d_v"))?;
        let node_line = lines.next().ok_or_else(|| bad("missing nodes line"))?;
        let mut it = node_line.split_whitespace();
        if it.next() != Some("nodes") {
            return Err(bad("missing nodes line"));
        }
        let nodes = it.map(|s| s.parse::<u32>().map_err(|_| bad("bad node id"))).collect::<Result<Vec<_>>>()?;
        let mut g = CovisGraph::new(nodes, threshold, d_v);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad("edge line needs 3 fields"));
            }
            let i: u32 = f[0].parse().map_err(|_| bad("bad edge id"))?;
            let j: u32 = f[1].parse().map_err(|_| bad("bad edge id"))?;
            let w: f64 = f[2].parse().map_err(|_| bad("bad weight"))?;
            if i >= j {
                return Err(bad("edges must satisfy i < j"));
            }
            g.add_edge(i, j, w).map_err(|e| bad(&e.to_string()))?;
        }
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Sampling key derived from the view's geometry rather than its id, so the
/// samples do not depend on how images are labelled.
fn view_key(v: &CameraView) -> u64 {
    let q = v.pose.rotation.quaternion();
    let t = &v.pose.translation;
    let k = &v.intrinsics;
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for x in [q.w, q.i, q.j, q.k, t.x, t.y, t.z, k.fx, k.fy, k.cx, k.cy] {
        h = (h ^ x.to_bits()).wrapping_mul(0x0100_0000_01b3).rotate_left(29);
    }
    h ^ (u64::from(k.width) << 32 | u64::from(k.height))
}

/// World-space samples of view `i`'s frustum.
fn frustum_samples(view: &CameraView, cfg: &OverlapConfig) -> Vec<Vector3<f64>> {
    let mut rng = rng::tagged_stream(cfg.rng_seed, "covis", view_key(view));
    let k = &view.intrinsics;
    let (w, h) = (f64::from(k.width), f64::from(k.height));
    (0..cfg.n_samples)
        .map(|_| {
            let px = Keypoint::new(rng.gen::<f64>() * w, rng.gen::<f64>() * h);
            let depth = cfg.d_v * (1.0 - rng.gen::<f64>());
            crate::geom::unproject(&px, k, &view.pose, depth).expect("depth in (0, d_v]")
        })
        .collect()
}

fn overlap_from_samples(i: &CameraView, j: &CameraView, samples: &[Vector3<f64>], d_v: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let ci = i.pose.center();
    let cj = j.pose.center();
    let kj = &j.intrinsics;
    let mut acc = 0.0;
    for y in samples {
        let c = j.pose.transform(y);
        if c.z <= 0.0 || c.z > d_v {
            continue;
        }
        let px = nalgebra::Vector2::new(kj.fx * c.x / c.z + kj.cx, kj.fy * c.y / c.z + kj.cy);
        if !kj.contains(&px) {
            continue;
        }
        let (ri, rj) = (y - ci, y - cj);
        let denom = ri.norm() * rj.norm();
        if denom > 0.0 {
            acc += (ri.dot(&rj) / denom).clamp(0.0, 1.0);
        }
    }
    acc / samples.len() as f64
}

pub fn frustum_overlap_directed(i: &CameraView, j: &CameraView, cfg: &OverlapConfig) -> f64 {
    overlap_from_samples(i, j, &frustum_samples(i, cfg), cfg.d_v)
}

pub fn build_covis_graph(views: &[CameraView], cfg: &OverlapConfig) -> Result<CovisGraph> {
    cfg.validate()?;
    if views.len() < 2 {
        return Err(Error::InvalidConfig("covisibility needs at least two views".into()));
    }
    let mut ids: Vec<u32> = views.iter().map(|v| v.id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != views.len() {
        return Err(Error::InvalidConfig("duplicate image ids".into()));
    }
    let samples: Vec<Vec<Vector3<f64>>> = views.par_iter().map(|v| frustum_samples(v, cfg)).collect();
    let pairs: Vec<(usize, usize)> = (0..views.len())
        .flat_map(|a| (a + 1..views.len()).map(move |b| (a, b)))
        .collect();
    let weights: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (va, vb) = (&views[a], &views[b]);
            if let Some(gate) = cfg.max_center_distance {
                if (va.pose.center() - vb.pose.center()).norm() > gate {
                    return 0.0;
                }
            }
            let ab = overlap_from_samples(va, vb, &samples[a], cfg.d_v);
            let ba = overlap_from_samples(vb, va, &samples[b], cfg.d_v);
            harmonic_mean(ab, ba)
        })
        .collect();
    let mut graph = CovisGraph::new(ids, cfg.threshold, cfg.d_v);
    for (&(a, b), &w) in pairs.iter().zip(&weights) {
        if w >= cfg.threshold {
            graph.add_edge(views[a].id, views[b].id, w.min(1.0))?;
        }
    }
    let isolated = graph.isolated_nodes();
    if !isolated.is_empty() {
        log::warn!("degenerate covisibility graph: {} isolated node(s) {:?}", isolated.len(), isolated);
    }
    Ok(graph)
}
