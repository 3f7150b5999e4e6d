//! Activation datasets: RSAM files, JSON manifests, and sequence pooling.

mod dataset;
mod matrix;
mod pool;
pub mod rsam;

pub use dataset::{read_dataset, write_dataset, ActivationSet, Dataset, Granularity, Manifest, DTYPE_NAME};
pub use matrix::{ActivationMatrix, LayerData, TokenActivations};
pub use pool::{align_token_rows, mean_pool, token_flatten, FlattenedTokens, TokenAlignment, TokenKey};
