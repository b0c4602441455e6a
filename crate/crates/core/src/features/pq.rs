use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::cluster::kmeans;
use crate::embed::GlobalEncodingTable;
use crate::error::{Error, Result};

/// Product-quantized index: `m` subspaces with `k ≤ 256` centroids each and
/// one byte per subspace per stored vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook {
    dim: usize,
    m: usize,
    k: usize,
    /// `m × k × (dim / m)` centroid coordinates.
    centroids: Vec<f32>,
    ids: Vec<u32>,
    codes: Vec<u8>,
}

impl PqCodebook {
    /// Trains per-subspace k-means on every vector of `vectors` and encodes them.
    pub fn train(vectors: &GlobalEncodingTable, m: usize, k: usize, iterations: usize, rng: &mut impl Rng) -> Result<Self> {
        let dim = vectors.dim();
        if vectors.is_empty() {
            return Err(Error::InvalidConfig("product quantization needs vectors".into()));
        }
        if m == 0 || dim % m != 0 {
            return Err(Error::DimensionMismatch { expected: dim, got: m });
        }
        if k == 0 || k > 256 {
            return Err(Error::InvalidConfig(format!("pq centroid count {k} outside 1..=256")));
        }
        let sub = dim / m;
        let n = vectors.len();
        let kk = k.min(n);
        let mut centroids = Vec::with_capacity(m * k * sub);
        for s in 0..m {
            let mut pts = Vec::with_capacity(n * sub);
            for (_, row) in vectors.iter() {
                pts.extend(row[s * sub..(s + 1) * sub].iter().map(|&v| f64::from(v)));
            }
            let km = kmeans(&pts, sub, kk, iterations, rng);
            centroids.extend(km.centers.iter().map(|&v| v as f32));
            // Pad unused centroid slots by repeating the first centroid.
            for _ in kk..k {
                let first: Vec<f32> = km.centers[..sub].iter().map(|&v| v as f32).collect();
                centroids.extend(first);
            }
        }
        let mut cb = Self {
            dim,
            m,
            k,
            centroids,
            ids: Vec::with_capacity(n),
            codes: Vec::with_capacity(n * m),
        };
        for (id, row) in vectors.iter() {
            let code = cb.encode(row)?;
            cb.ids.push(id);
            cb.codes.extend(code);
        }
        Ok(cb)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn subspaces(&self) -> usize {
        self.m
    }

    pub fn centroids_per_subspace(&self) -> usize {
        self.k
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    fn centroid(&self, s: usize, c: usize) -> &[f32] {
        let sub = self.dim / self.m;
        let off = (s * self.k + c) * sub;
        &self.centroids[off..off + sub]
    }

    pub fn encode(&self, v: &[f32]) -> Result<Vec<u8>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: v.len() });
        }
        let sub = self.dim / self.m;
        Ok((0..self.m)
            .map(|s| {
                let part = &v[s * sub..(s + 1) * sub];
                let mut best = (f64::INFINITY, 0usize);
                for c in 0..self.k {
                    let d: f64 = part.iter().zip(self.centroid(s, c)).map(|(a, b)| f64::from(a - b).powi(2)).sum();
                    if d < best.0 {
                        best = (d, c);
                    }
                }
                best.1 as u8
            })
            .collect())
    }

    pub fn decode(&self, code: &[u8]) -> Vec<f32> {
        (0..self.m).flat_map(|s| self.centroid(s, code[s] as usize).to_vec()).collect()
    }

    pub fn code(&self, index: usize) -> &[u8] {
        &self.codes[index * self.m..(index + 1) * self.m]
    }

    /// `k` stored ids by ascending asymmetric distance (squared), ties by id.
    pub fn knn(&self, query: &[f32], k: usize) -> Result<Vec<(u32, f64)>> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: query.len() });
        }
        let sub = self.dim / self.m;
        let mut lut = vec![0.0f64; self.m * self.k];
        for s in 0..self.m {
            let part = &query[s * sub..(s + 1) * sub];
            for c in 0..self.k {
                lut[s * self.k + c] = part.iter().zip(self.centroid(s, c)).map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2)).sum();
            }
        }
        let mut scored: Vec<(u32, f64)> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                let d = self.code(i).iter().enumerate().map(|(s, &c)| lut[s * self.k + c as usize]).sum();
                (id, d)
            })
            .collect();
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    /// `pq v1 <count> <dim> <m> <k>\n`, centroids as little-endian `f32`,
    /// then per stored vector a `u32` id and `m` code bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("pq v1 {} {} {} {}\n", self.ids.len(), self.dim, self.m, self.k).into_bytes();
        for v in &self.centroids {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (i, id) in self.ids.iter().enumerate() {
            out.extend_from_slice(&id.to_le_bytes());
            out.extend_from_slice(self.code(i));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format("pq", m);
        let mut cur = std::io::Cursor::new(bytes);
        let mut header = String::new();
        cur.read_line(&mut header).map_err(|_| bad("unreadable header"))?;
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 6 || f[0] != "pq" || f[1] != "v1" {
            return Err(bad("bad header"));
        }
        let p = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (count, dim, m, k) = (p(f[2])?, p(f[3])?, p(f[4])?, p(f[5])?);
        if m == 0 || dim % m != 0 || k == 0 || k > 256 {
            return Err(bad("inconsistent layout"));
        }
        let body = bytes.len() - cur.position() as usize;
        if body != 4 * m * k * (dim / m) + count * (4 + m) {
            return Err(bad("body size does not match header"));
        }
        let mut b4 = [0u8; 4];
        let mut centroids = Vec::with_capacity(m * k * (dim / m));
        for _ in 0..m * k * (dim / m) {
            cur.read_exact(&mut b4)?;
            centroids.push(f32::from_le_bytes(b4));
        }
        let mut ids = Vec::with_capacity(count);
        let mut codes = vec![0u8; count * m];
        for i in 0..count {
            cur.read_exact(&mut b4)?;
            ids.push(u32::from_le_bytes(b4));
            cur.read_exact(&mut codes[i * m..(i + 1) * m])?;
        }
        if codes.iter().any(|&c| c as usize >= k) {
            return Err(bad("code out of range"));
        }
        Ok(Self { dim, m, k, centroids, ids, codes })
    }

    pub fn size_bytes(&self) -> usize {
        self.to_bytes().len()
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

/// Brute-force nearest neighbors by squared Euclidean distance, ties by id.
pub fn exact_knn(vectors: &GlobalEncodingTable, query: &[f32], k: usize) -> Vec<(u32, f64)> {
    let mut scored: Vec<(u32, f64)> = vectors
        .iter()
        .map(|(id, v)| (id, v.iter().zip(query).map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2)).sum()))
        .collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}
