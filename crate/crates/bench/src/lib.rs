//! Fixtures shared by the benchmarks.

use repsim::synth::{generate, FamilySpec, SyntheticDataset, DEFAULT_LAYER};

/// Planted-family dataset at the size used for pipeline timing.
pub fn planted(families: usize, per_family: usize, n: usize, d: usize) -> SyntheticDataset {
    let spec = FamilySpec {
        families: FamilySpec::grid(families, per_family),
        n,
        d,
        d_latent: 8.min(d),
        alpha: 1.0,
        beta: 0.2,
        sigma: 0.05,
        seed: 42,
        layer: DEFAULT_LAYER.into(),
    };
    generate(&spec).expect("valid benchmark spec")
}
