//! Dataset directory layout:
//!
//! ```text
//! scene.txt           generating spec (key = value)
//! train_poses.txt     query_poses.txt
//! train.feat          query.feat        raw descriptors
//! train.retr          query.retr        retrieval features (genc format)
//! gt.txt              points and the point id of every feature row
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::config::{render, KvFile};
use crate::embed::GlobalEncodingTable;
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::geom::{load_poses, save_poses};

use super::{SceneSpec, SynthDataset};

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub points: Vec<Vector3<f64>>,
    pub point_room: Vec<u32>,
    /// `(image id, point id, depth)` per train feature row.
    pub train: Vec<(u32, u32, f32)>,
    pub query: Vec<(u32, u32, f32)>,
}

/// Text form: `gt v1 <points> <train rows> <query rows>`, then one
/// `x y z room` line per point, then `image point depth` per feature row,
/// train rows first.
pub fn write_gt(gt: &GroundTruth) -> String {
    let mut out = format!("gt v1 {} {} {}\n", gt.points.len(), gt.train.len(), gt.query.len());
    for (p, r) in gt.points.iter().zip(&gt.point_room) {
        let _ = writeln!(out, "{} {} {} {r}", p.x, p.y, p.z);
    }
    for (img, pid, d) in gt.train.iter().chain(&gt.query) {
        let _ = writeln!(out, "{img} {pid} {d}");
    }
    out
}

pub fn parse_gt(text: &str) -> Result<GroundTruth> {
    let err = |m: &str| Error::format("gt", m);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| err("empty file"))?.split_whitespace().collect();
    if header.len() != 5 || header[0] != "gt" || header[1] != "v1" {
        return Err(err("bad header"));
    }
    let count = |s: &str| s.parse::<usize>().map_err(|_| err("bad count"));
    let (np, nt, nq) = (count(header[2])?, count(header[3])?, count(header[4])?);
    let mut gt = GroundTruth { points: Vec::with_capacity(np), point_room: Vec::with_capacity(np), train: Vec::new(), query: Vec::new() };
    for _ in 0..np {
        let f: Vec<&str> = lines.next().ok_or_else(|| err("truncated points"))?.split_whitespace().collect();
        if f.len() != 4 {
            return Err(err("point line needs 4 fields"));
        }
        let c = |i: usize| f[i].parse::<f64>().map_err(|_| err("bad coordinate"));
        gt.points.push(Vector3::new(c(0)?, c(1)?, c(2)?));
        gt.point_room.push(f[3].parse().map_err(|_| err("bad room"))?);
    }
    for i in 0..nt + nq {
        let f: Vec<&str> = lines.next().ok_or_else(|| err("truncated rows"))?.split_whitespace().collect();
        if f.len() != 3 {
            return Err(err("row line needs 3 fields"));
        }
        let pid: u32 = f[1].parse().map_err(|_| err("bad point id"))?;
        if pid as usize >= np {
            return Err(err("point id out of range"));
        }
        let row = (f[0].parse().map_err(|_| err("bad image id"))?, pid, f[2].parse().map_err(|_| err("bad depth"))?);
        if i < nt {
            gt.train.push(row);
        } else {
            gt.query.push(row);
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(err("trailing data"));
    }
    Ok(gt)
}

fn rows(table: &FeatureTable, ids: &[u32]) -> Vec<(u32, u32, f32)> {
    (0..table.len())
        .map(|i| (table.image_id(i), ids[i], table.gt_depth(i).unwrap_or(f32::NAN)))
        .collect()
}

pub fn save_dataset(dir: &Path, ds: &SynthDataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("scene.txt"), render(&ds.spec.to_kv()))?;
    save_poses(&dir.join("train_poses.txt"), &ds.train_views)?;
    save_poses(&dir.join("query_poses.txt"), &ds.query_views)?;
    ds.train_features.save(&dir.join("train.feat"))?;
    ds.query_features.save(&dir.join("query.feat"))?;
    ds.train_retrieval.save(&dir.join("train.retr"))?;
    ds.query_retrieval.save(&dir.join("query.retr"))?;
    let gt = GroundTruth {
        points: ds.points.clone(),
        point_room: ds.point_room.clone(),
        train: rows(&ds.train_features, &ds.train_point_ids),
        query: rows(&ds.query_features, &ds.query_point_ids),
    };
    std::fs::write(dir.join("gt.txt"), write_gt(&gt))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<SynthDataset> {
    let mut kv = KvFile::parse(&std::fs::read_to_string(dir.join("scene.txt"))?)?;
    let spec = SceneSpec::from_kv(&mut kv)?;
    kv.finish()?;
    let train_features = FeatureTable::load(&dir.join("train.feat"))?;
    let query_features = FeatureTable::load(&dir.join("query.feat"))?;
    let gt = parse_gt(&std::fs::read_to_string(dir.join("gt.txt"))?)?;
    let check = |t: &FeatureTable, rows: &[(u32, u32, f32)]| -> Result<Vec<u32>> {
        if t.len() != rows.len() || rows.iter().enumerate().any(|(i, r)| r.0 != t.image_id(i)) {
            return Err(Error::format("gt", "rows do not match the feature file"));
        }
        Ok(rows.iter().map(|r| r.1).collect())
    };
    Ok(SynthDataset {
        train_point_ids: check(&train_features, &gt.train)?,
        query_point_ids: check(&query_features, &gt.query)?,
        spec,
        points: gt.points,
        point_room: gt.point_room,
        train_views: load_poses(&dir.join("train_poses.txt"))?,
        query_views: load_poses(&dir.join("query_poses.txt"))?,
        train_features,
        query_features,
        train_retrieval: GlobalEncodingTable::load(&dir.join("train.retr"))?,
        query_retrieval: GlobalEncodingTable::load(&dir.join("query.retr"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_scene, Layout};

    #[test]
    fn directory_round_trip_is_byte_exact() {
        let spec = SceneSpec {
            layout: Layout::DuplicatedRooms,
            n_points: 50,
            n_train_cameras: 4,
            n_query_cameras: 2,
            descriptor_dim: 32,
            latent_dim: 8,
            retrieval_dim: 16,
            ..Default::default()
        };
        let ds = gen_scene(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        let other = tempfile::tempdir().unwrap();
        save_dataset(other.path(), &back).unwrap();
        for f in ["scene.txt", "train_poses.txt", "query_poses.txt", "train.feat", "query.feat", "train.retr", "query.retr", "gt.txt"] {
            assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(other.path().join(f)).unwrap(), "{f}");
        }
        assert_eq!(back.points, ds.points);
        assert_eq!(back.train_point_ids, ds.train_point_ids);
    }

    #[test]
    fn gt_rejects_bad_input() {
        assert!(parse_gt("").is_err());
        assert!(parse_gt("gt v1 1 0 0\n0 0 0\n").is_err());
        assert!(parse_gt("gt v1 1 1 0\n0 0 0 0\n3 5 1.0\n").is_err());
        assert!(parse_gt("gt v1 1 1 0\n0 0 0 0\n3 0 1.0\n").is_ok());
    }
}
