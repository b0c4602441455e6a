use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::covis::CovisGraph;

use super::GlobalEncodingTable;

/// Keeps `id`'s own encoding with probability `keep_prob`, otherwise returns
/// the encoding of a uniformly chosen covisible neighbor. Nodes without
/// neighbors (or neighbors missing from the table) fall back to their own.
pub fn augment_global<'a>(
    id: u32,
    graph: &CovisGraph,
    table: &'a GlobalEncodingTable,
    keep_prob: f64,
    rng: &mut impl Rng,
) -> Option<&'a [f32]> {
    let own = table.get(id)?;
    if rng.gen::<f64>() < keep_prob {
        return Some(own);
    }
    let Some(index) = graph.index_of(id) else {
        return Some(own);
    };
    let nbrs = graph.neighbors_of_index(index);
    if nbrs.is_empty() {
        return Some(own);
    }
    let pick = nbrs[rng.gen_range(0..nbrs.len())].0;
    Some(table.get(graph.nodes()[pick]).unwrap_or(own))
}

/// Source of the global half of a training input row.
pub trait GlobalAugmenter: Send + Sync {
    /// Writes the augmented encoding of `id` into `out` (length = table dim).
    /// Returns `false` if `id` has no encoding.
    fn augment(&self, id: u32, table: &GlobalEncodingTable, rng: &mut dyn rand::RngCore, out: &mut [f64]) -> bool;
}

/// Covisibility-graph neighbor swapping.
pub struct CovisAugmenter<'g> {
    pub graph: &'g CovisGraph,
    pub keep_prob: f64,
}

impl GlobalAugmenter for CovisAugmenter<'_> {
    fn augment(&self, id: u32, table: &GlobalEncodingTable, mut rng: &mut dyn rand::RngCore, out: &mut [f64]) -> bool {
        match augment_global(id, self.graph, table, self.keep_prob, &mut rng) {
            Some(v) => {
                for (o, x) in out.iter_mut().zip(v) {
                    *o = f64::from(*x);
                }
                true
            }
            None => false,
        }
    }
}

/// Isotropic Gaussian noise on the image's own encoding.
pub struct GaussianAugmenter {
    pub sigma: f64,
}

impl Default for GaussianAugmenter {
    fn default() -> Self {
        Self { sigma: 0.1 }
    }
}

impl GlobalAugmenter for GaussianAugmenter {
    fn augment(&self, id: u32, table: &GlobalEncodingTable, mut rng: &mut dyn rand::RngCore, out: &mut [f64]) -> bool {
        let Some(v) = table.get(id) else {
            return false;
        };
        let normal = Normal::new(0.0, self.sigma.max(0.0)).expect("finite sigma");
        for (o, x) in out.iter_mut().zip(v) {
            *o = f64::from(*x) + normal.sample(&mut rng);
        }
        true
    }
}
