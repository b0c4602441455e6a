//! Global encodings learned from the covisibility graph.
//!
//! Node2Vec walks over the graph feed a skip-gram model with negative
//! sampling; the learned input vectors become per-image global encodings.
//! During training, encodings are augmented by swapping in a covisible
//! neighbor's encoding.

mod augment;
mod skipgram;
mod table;
mod walk;

pub use augment::{augment_global, CovisAugmenter, GaussianAugmenter, GlobalAugmenter};
pub use skipgram::{skipgram_train, SkipGramConfig};
pub use table::GlobalEncodingTable;
pub use walk::{node2vec_walks, transition_weights, WalkConfig};

use crate::covis::CovisGraph;
use crate::error::Result;

/// Walks plus skip-gram in one call.
pub fn learn_global_encodings(graph: &CovisGraph, walk: &WalkConfig, sg: &SkipGramConfig) -> Result<GlobalEncodingTable> {
    let walks = node2vec_walks(graph, walk)?;
    skipgram_train(&walks, sg)
}
