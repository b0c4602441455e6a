//! Local encodings: PCA compression, the training buffer, and product
//! quantization for image retrieval.

mod buffer;
mod pca;
mod pq;
mod table;

pub use buffer::buffer_fill;
pub use pca::{pca_fit, pca_fit_sampled, PcaTransform};
pub use pq::{exact_knn, PqCodebook};
pub use table::{FeatureBuffer, FeatureRow, FeatureTable};
