//! Binary checkpoint: `scr v1` header, a `key=value` config block closed by
//! `end`, then blobs `blob <name> <rows> <cols>\n` followed by little-endian
//! `f32` values in row-major order.
//!
//! Weights are stored at 32-bit; a loaded model re-saves to identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::PcaTransform;
use crate::linalg::Matrix;

use super::model::{ScrModel, ScrModelConfig};

fn bad(msg: impl Into<String>) -> Error {
    Error::format("checkpoint", msg)
}

fn push_blob(out: &mut Vec<u8>, name: &str, m: &Matrix) {
    out.extend_from_slice(format!("blob {name} {} {}\n", m.rows(), m.cols()).as_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn checkpoint_to_bytes(model: &ScrModel) -> Vec<u8> {
    let c = model.config();
    let mut out = b"scr v1\n".to_vec();
    let mut kv = vec![
        ("width", c.width.to_string()),
        ("n_blocks", c.n_blocks.to_string()),
        ("n_refine_blocks", c.n_refine_blocks.to_string()),
        ("expansion", c.expansion.to_string()),
        ("n_clusters", c.n_clusters.to_string()),
        ("n_periods", c.n_periods.to_string()),
        ("local_dim", c.local_dim.to_string()),
        ("global_dim", c.global_dim.to_string()),
        ("refinement", c.refinement.to_string()),
        ("pca", model.pca.is_some().to_string()),
    ];
    if let Some(p) = &model.pca {
        kv.push(("pca_explained_variance_ratio", p.explained_variance_ratio.to_string()));
    }
    for (k, v) in kv {
        out.extend_from_slice(format!("{k}={v}\n").as_bytes());
    }
    out.extend_from_slice(b"end\n");
    push_blob(&mut out, "centers", model.centers());
    for (name, p) in model.param_names().iter().zip(model.params()) {
        push_blob(&mut out, name, p);
    }
    if let Some(p) = &model.pca {
        push_blob(&mut out, "pca.mean", &Matrix::from_vec(1, p.mean.len(), p.mean.clone()));
        push_blob(&mut out, "pca.basis", &p.basis);
        push_blob(&mut out, "pca.eigenvalues", &Matrix::from_vec(1, p.eigenvalues.len(), p.eigenvalues.clone()));
    }
    out
}

fn read_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("unterminated line"))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| bad("non-utf8 header"))
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ScrModel> {
    let mut pos = 0;
    if read_line(bytes, &mut pos)? != "scr v1" {
        return Err(bad("missing scr v1 header"));
    }
    let mut kv = BTreeMap::new();
    loop {
        let line = read_line(bytes, &mut pos)?;
        if line == "end" {
            break;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad config line {line:?}")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| bad(format!("missing key {k}")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad value for {k}"))) };
    let flag = |k: &str| -> Result<bool> { get(k)?.parse().map_err(|_| bad(format!("bad value for {k}"))) };
    let config = ScrModelConfig {
        width: num("width")?,
        n_blocks: num("n_blocks")?,
        n_refine_blocks: num("n_refine_blocks")?,
        expansion: num("expansion")?,
        n_clusters: num("n_clusters")?,
        n_periods: num("n_periods")?,
        local_dim: num("local_dim")?,
        global_dim: num("global_dim")?,
        refinement: flag("refinement")?,
    };
    let has_pca = flag("pca")?;

    let mut blobs: Vec<(String, Matrix)> = Vec::new();
    while pos < bytes.len() {
        let line = read_line(bytes, &mut pos)?;
        let f: Vec<&str> = line.split(' ').collect();
        if f.len() != 4 || f[0] != "blob" {
            return Err(bad(format!("bad blob header {line:?}")));
        }
        let rows: usize = f[2].parse().map_err(|_| bad("bad blob rows"))?;
        let cols: usize = f[3].parse().map_err(|_| bad("bad blob cols"))?;
        let n = rows.checked_mul(cols).ok_or_else(|| bad("blob too large"))?;
        let end = pos.checked_add(4 * n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated blob"))?;
        let data = bytes[pos..end]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        pos = end;
        blobs.push((f[1].to_string(), Matrix::from_vec(rows, cols, data)));
    }
    let mut take = |name: &str| -> Result<Matrix> {
        let i = blobs.iter().position(|(n, _)| n == name).ok_or_else(|| bad(format!("missing blob {name}")))?;
        Ok(blobs.remove(i).1)
    };
    let centers = take("centers")?;
    let pca = if has_pca {
        let mean = take("pca.mean")?.into_vec();
        let basis = take("pca.basis")?;
        let eigenvalues = take("pca.eigenvalues")?.into_vec();
        let ratio: f64 = get("pca_explained_variance_ratio")?.parse().map_err(|_| bad("bad pca ratio"))?;
        if basis.cols() != mean.len() {
            return Err(bad("pca basis and mean disagree"));
        }
        Some(PcaTransform {
            mean,
            basis,
            explained_variance_ratio: ratio,
            eigenvalues,
        })
    } else {
        None
    };
    let mut model = ScrModel::from_parts(config, centers, blobs).map_err(|e| bad(e.to_string()))?;
    model.pca = pca;
    Ok(model)
}

pub fn save_checkpoint(model: &ScrModel, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ScrModel> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn model(with_pca: bool) -> ScrModel {
        let cfg = ScrModelConfig {
            width: 64,
            n_clusters: 3,
            local_dim: 6,
            global_dim: 2,
            ..Default::default()
        };
        let mut rng = crate::rng::stream(4, 0);
        let centers = Matrix::from_fn(3, 3, |_, _| rng.gen_range(-3.0..3.0));
        let mut m = ScrModel::new(cfg, centers, &mut rng).unwrap();
        if with_pca {
            m.pca = Some(PcaTransform {
                mean: vec![0.5, -0.25, 1.0 / 3.0],
                basis: Matrix::from_fn(2, 3, |r, c| if r == c { 1.0 } else { 0.0 }),
                explained_variance_ratio: 0.9123456789,
                eigenvalues: vec![3.0, 2.0, 0.1],
            });
        }
        m
    }

    #[test]
    fn reload_is_byte_exact() {
        for with_pca in [false, true] {
            let bytes = checkpoint_to_bytes(&model(with_pca));
            let back = checkpoint_from_bytes(&bytes).unwrap();
            assert_eq!(checkpoint_to_bytes(&back), bytes);
            assert_eq!(back.pca.is_some(), with_pca);
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = checkpoint_to_bytes(&model(false));
        assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(checkpoint_from_bytes(b"scr v2\nend\n").is_err());
        let text = String::from_utf8_lossy(&bytes).replace("width=64", "width=128");
        assert!(checkpoint_from_bytes(text.as_bytes()).is_err());
    }
}
