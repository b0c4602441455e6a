use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Dense per-image vectors keyed by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalEncodingTable {
    ids: Vec<u32>,
    dim: usize,
    data: Vec<f32>,
}

impl GlobalEncodingTable {
    /// Rows are reordered by id. Duplicate ids are rejected.
    pub fn new(dim: usize, rows: Vec<(u32, Vec<f32>)>) -> Result<Self> {
        let mut rows = rows;
        rows.sort_by_key(|r| r.0);
        if rows.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidConfig("duplicate id in encoding table".into()));
        }
        let mut ids = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (id, v) in rows {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig(format!("non-finite encoding for image {id}")));
            }
            ids.push(id);
            data.extend_from_slice(&v);
        }
        Ok(Self { ids, dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn get(&self, id: u32) -> Option<&[f32]> {
        self.ids.binary_search(&id).ok().map(|i| self.row(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f32])> {
        self.ids.iter().enumerate().map(move |(i, &id)| (id, self.row(i)))
    }

    pub fn size_bytes(&self) -> usize {
        self.to_bytes().len()
    }

    /// `genc v1 <count> <dim>\n`, then per row a little-endian `u32` id
    /// followed by `dim` little-endian `f32` values, sorted by id.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("genc v1 {} {}\n", self.ids.len(), self.dim).into_bytes();
        out.reserve(self.ids.len() * (4 + 4 * self.dim));
        for (id, row) in self.iter() {
            out.extend_from_slice(&id.to_le_bytes());
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format("encoding table", m);
        let mut cursor = std::io::Cursor::new(bytes);
        let mut header = String::new();
        cursor.read_line(&mut header).map_err(|_| bad("unreadable header"))?;
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() != 4 || f[0] != "genc" || f[1] != "v1" {
            return Err(bad("bad header"));
        }
        let count: usize = f[2].parse().map_err(|_| bad("bad count"))?;
        let dim: usize = f[3].parse().map_err(|_| bad("bad dim"))?;
        let mut rows = Vec::with_capacity(count);
        let mut buf4 = [0u8; 4];
        for _ in 0..count {
            cursor.read_exact(&mut buf4).map_err(|_| bad("truncated"))?;
            let id = u32::from_le_bytes(buf4);
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                cursor.read_exact(&mut buf4).map_err(|_| bad("truncated"))?;
                v.push(f32::from_le_bytes(buf4));
            }
            rows.push((id, v));
        }
        if (cursor.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        if rows.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(bad("rows not sorted by id"));
        }
        Self::new(dim, rows)
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

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip(rows in proptest::collection::btree_map(any::<u32>(), proptest::collection::vec(-1e6f32..1e6, 3), 0..20)) {
            let table = GlobalEncodingTable::new(3, rows.into_iter().collect()).unwrap();
            let bytes = table.to_bytes();
            let back = GlobalEncodingTable::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &table);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn rejects_malformed() {
        assert!(GlobalEncodingTable::new(2, vec![(1, vec![0.0])]).is_err());
        assert!(GlobalEncodingTable::new(1, vec![(1, vec![0.0]), (1, vec![1.0])]).is_err());
        assert!(GlobalEncodingTable::from_bytes(b"genc v1 1 2\n\x01\x00").is_err());
        let t = GlobalEncodingTable::new(1, vec![(7, vec![2.0])]).unwrap();
        assert_eq!(t.get(7), Some(&[2.0f32][..]));
        assert_eq!(t.get(8), None);
    }
}
