use rand::Rng;

use crate::error::Result;

use super::{FeatureBuffer, FeatureTable, PcaTransform};

/// Draws up to `budget_rows` observations: an image is chosen uniformly among
/// those with rows left, then one of its remaining keypoints uniformly.
/// When the budget covers the dataset, every row is kept in order.
/// Encodings are projected with `pca`.
pub fn buffer_fill(dataset: &FeatureTable, pca: &PcaTransform, budget_rows: usize, rng: &mut impl Rng) -> Result<FeatureBuffer> {
    let chosen: Vec<usize> = if budget_rows >= dataset.len() {
        (0..dataset.len()).collect()
    } else {
        let mut pools: Vec<Vec<usize>> = dataset.rows_by_image().into_values().filter(|v| !v.is_empty()).collect();
        let mut out = Vec::with_capacity(budget_rows);
        while out.len() < budget_rows && !pools.is_empty() {
            let img = rng.gen_range(0..pools.len());
            let pool = &mut pools[img];
            let k = rng.gen_range(0..pool.len());
            out.push(pool.swap_remove(k));
            if pool.is_empty() {
                pools.swap_remove(img);
            }
        }
        out
    };
    let mut buf = FeatureTable::with_capacity(pca.output_dim(), chosen.len());
    let mut raw = vec![0.0; dataset.dim()];
    let mut proj = vec![0.0; pca.output_dim()];
    let mut proj32 = vec![0f32; pca.output_dim()];
    for &i in &chosen {
        for (r, v) in raw.iter_mut().zip(dataset.encoding(i)) {
            *r = f64::from(*v);
        }
        pca.apply_into(&raw, &mut proj)?;
        for (o, v) in proj32.iter_mut().zip(&proj) {
            *o = *v as f32;
        }
        buf.push(dataset.image_id(i), dataset.pixel(i), &proj32, dataset.gt_depth(i))?;
    }
    Ok(buf)
}
