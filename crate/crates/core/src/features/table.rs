use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Keypoint;

/// One keypoint observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub image_id: u32,
    pub pixel: [f32; 2],
    pub encoding: Vec<f32>,
    pub gt_depth: Option<f32>,
}

/// Flat table of keypoint observations with a fixed encoding width.
///
/// Rows for one image keep their relative order, which defines each
/// keypoint's index within its image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    dim: usize,
    image_ids: Vec<u32>,
    pixels: Vec<[f32; 2]>,
    encodings: Vec<f32>,
    depths: Vec<f32>,
}

/// Training-time table of PCA-projected local encodings.
pub type FeatureBuffer = FeatureTable;

impl FeatureTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Self {
            dim,
            image_ids: Vec::with_capacity(rows),
            pixels: Vec::with_capacity(rows),
            encodings: Vec::with_capacity(rows * dim),
            depths: Vec::with_capacity(rows),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    pub fn push(&mut self, image_id: u32, pixel: [f32; 2], encoding: &[f32], gt_depth: Option<f32>) -> Result<()> {
        if encoding.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: encoding.len() });
        }
        self.image_ids.push(image_id);
        self.pixels.push(pixel);
        self.encodings.extend_from_slice(encoding);
        self.depths.push(gt_depth.unwrap_or(f32::NAN));
        Ok(())
    }

    pub fn push_row(&mut self, row: &FeatureRow) -> Result<()> {
        self.push(row.image_id, row.pixel, &row.encoding, row.gt_depth)
    }

    #[inline]
    pub fn image_id(&self, i: usize) -> u32 {
        self.image_ids[i]
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> [f32; 2] {
        self.pixels[i]
    }

    #[inline]
    pub fn keypoint(&self, i: usize) -> Keypoint {
        let p = self.pixels[i];
        Keypoint::new(f64::from(p[0]), f64::from(p[1]))
    }

    #[inline]
    pub fn encoding(&self, i: usize) -> &[f32] {
        &self.encodings[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn gt_depth(&self, i: usize) -> Option<f32> {
        let d = self.depths[i];
        (!d.is_nan()).then_some(d)
    }

    pub fn row(&self, i: usize) -> FeatureRow {
        FeatureRow {
            image_id: self.image_id(i),
            pixel: self.pixel(i),
            encoding: self.encoding(i).to_vec(),
            gt_depth: self.gt_depth(i),
        }
    }

    /// Distinct image ids in first-appearance order.
    pub fn image_ids(&self) -> Vec<u32> {
        let mut seen = std::collections::HashSet::new();
        self.image_ids.iter().copied().filter(|id| seen.insert(*id)).collect()
    }

    /// Row indices grouped by image id, ids ascending.
    pub fn rows_by_image(&self) -> std::collections::BTreeMap<u32, Vec<usize>> {
        let mut out: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
        for (i, &id) in self.image_ids.iter().enumerate() {
            out.entry(id).or_default().push(i);
        }
        out
    }

    pub fn select(&self, rows: &[usize]) -> FeatureTable {
        let mut out = FeatureTable::with_capacity(self.dim, rows.len());
        for &i in rows {
            out.image_ids.push(self.image_ids[i]);
            out.pixels.push(self.pixels[i]);
            out.encodings.extend_from_slice(self.encoding(i));
            out.depths.push(self.depths[i]);
        }
        out
    }

    /// Encodings widened to f64, as an `n × dim` matrix.
    pub fn encodings_matrix(&self) -> crate::linalg::Matrix {
        crate::linalg::Matrix::from_vec(self.len(), self.dim, self.encodings.iter().map(|&v| f64::from(v)).collect())
    }

    /// `feat v1 <count> <dim>\n`, then per row: image id (`u32`), pixel
    /// (2 × `f32`), encoding (`dim` × `f32`), ground-truth depth (`f32`, NaN
    /// when absent); all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("feat v1 {} {}\n", self.len(), self.dim).into_bytes();
        out.reserve(self.len() * (16 + 4 * self.dim));
        for i in 0..self.len() {
            out.extend_from_slice(&self.image_ids[i].to_le_bytes());
            for v in self.pixels[i] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in self.encoding(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&self.depths[i].to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format("feature", m);
        let mut cursor = std::io::Cursor::new(bytes);
        let mut header = String::new();
        cursor.read_line(&mut header).map_err(|_| bad("unreadable header"))?;
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 4 || f[0] != "feat" || f[1] != "v1" {
            return Err(bad("bad header"));
        }
        let count: usize = f[2].parse().map_err(|_| bad("bad count"))?;
        let dim: usize = f[3].parse().map_err(|_| bad("bad dim"))?;
        let body = &bytes[cursor.position() as usize..];
        let row_bytes = 4 * (4 + dim);
        if body.len() != count * row_bytes {
            return Err(bad("body size does not match header"));
        }
        let mut t = FeatureTable::with_capacity(dim, count);
        let mut r = std::io::Cursor::new(body);
        let mut b = [0u8; 4];
        let mut next_f32 = |r: &mut std::io::Cursor<&[u8]>| -> f32 {
            r.read_exact(&mut b).expect("size checked");
            f32::from_le_bytes(b)
        };
        for _ in 0..count {
            let mut idb = [0u8; 4];
            r.read_exact(&mut idb).expect("size checked");
            t.image_ids.push(u32::from_le_bytes(idb));
            let px = [next_f32(&mut r), next_f32(&mut r)];
            t.pixels.push(px);
            for _ in 0..dim {
                let v = next_f32(&mut r);
                t.encodings.push(v);
            }
            let d = next_f32(&mut r);
            t.depths.push(d);
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
