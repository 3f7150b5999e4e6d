//! Representation similarity analysis for multilingual activation dumps.
//!
//! The pipeline: load (or synthesize) per-language activations, pool token
//! sequences to sentence rows, score every language pair with SVCCA, then
//! summarize the resulting similarity matrices as distributions, nearest
//! neighbours, spectral embeddings, or before/after drift.

pub mod error;
pub mod io;
pub mod pairwise;
pub mod spectral;
pub mod stats;
pub mod svcca;
pub mod synth;

pub use error::{Error, Result};
pub use io::{
    mean_pool, read_dataset, token_flatten, write_dataset, ActivationMatrix, ActivationSet, Dataset, Granularity,
    LayerData, Manifest, TokenActivations,
};
pub use pairwise::{
    correlate_with_metric, finetune_drift, layer_distribution, nearest_neighbors, pairwise_similarity, DriftReport,
    LayerSummary, SimilarityMatrix, Strategy,
};
pub use spectral::{build_affinity, laplacian_eigenmap, AffinityMatrix, EmbeddingCoordinates};
pub use svcca::{cca, svcca, svcca_score, svd_truncate, CcaResult, Regularization, SvccaOptions, TruncatedSubspace};
pub use synth::{generate, layer_stack, perturb, FamilySpec, SyntheticDataset};
