//! Synthetic multi-way parallel activations with planted language families.
//!
//! Every language reads the same latent sentence matrix `Z` (n x d_latent).
//! Language `l` in family `f` is `Z (alpha G_f + beta H_l) + sigma E_l`, where
//!
//! * `G_f` spans a family-specific block of latent directions. Blocks are
//!   disjoint slices of one random orthonormal basis while the families fit
//!   (`d_latent / families` directions each), otherwise a single random
//!   direction per family.
//! * `H_l` is a rank-one language-specific direction.
//! * `E_l` is i.i.d. Gaussian noise.
//!
//! `G_f` and `H_l` are scaled to squared Frobenius norm `d`, so each output
//! column carries unit signal variance on average. Because all languages share
//! `Z`, the family signal only separates languages through the variance
//! truncation step of SVCCA, which keeps the dominant family block.
//!
//! Each random matrix comes from its own ChaCha stream keyed by
//! `(seed, purpose, name)`, so output is independent of generation order.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{ActivationMatrix, ActivationSet, LayerData, TokenActivations};

pub const DEFAULT_LAYER: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Family {
    pub id: String,
    pub languages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub families: Vec<Family>,
    pub n: usize,
    pub d: usize,
    pub d_latent: usize,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub seed: u64,
    #[serde(default = "default_layer")]
    pub layer: String,
}

fn default_layer() -> String {
    DEFAULT_LAYER.to_string()
}

impl FamilySpec {
    /// `families` x `per_family` languages named `f{i}l{j}` in families `f{i}`.
    pub fn grid(families: usize, per_family: usize) -> Vec<Family> {
        (0..families)
            .map(|f| Family {
                id: format!("f{f}"),
                languages: (0..per_family).map(|l| format!("f{f}l{l}")).collect(),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.families.is_empty() {
            return bad("no families".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut ids = std::collections::BTreeSet::new();
        for fam in &self.families {
            if !ids.insert(&fam.id) {
                return bad(format!("duplicate family id `{}`", fam.id));
            }
            if fam.languages.is_empty() {
                return bad(format!("family `{}` has no languages", fam.id));
            }
            for lang in &fam.languages {
                if lang.is_empty() || !seen.insert(lang) {
                    return bad(format!("language code `{lang}` is empty or repeated"));
                }
            }
        }
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.d == 0 || self.d_latent == 0 || self.d_latent > self.d {
            return bad(format!("need 1 <= d_latent <= d, got d_latent={} d={}", self.d_latent, self.d));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("sigma", self.sigma)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.layer.is_empty() {
            return bad("empty layer name".into());
        }
        Ok(())
    }

    pub fn languages(&self) -> Vec<String> {
        self.families.iter().flat_map(|f| f.languages.iter().cloned()).collect()
    }

    pub fn ground_truth(&self) -> BTreeMap<String, String> {
        self.families
            .iter()
            .flat_map(|f| f.languages.iter().map(move |l| (l.clone(), f.id.clone())))
            .collect()
    }
}

/// Generated activations with the family each language was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub set: ActivationSet,
    /// language -> family id
    pub families: BTreeMap<String, String>,
}

fn stream(seed: u64, purpose: &str, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // Fill row-major so the stream order does not depend on storage layout.
    let values: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(rows, cols, &values)
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// `rows x cols` with orthonormal columns (`rows >= cols`).
fn orthonormal_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let qr = gaussian(rng, rows, cols).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            let mut c = q.column_mut(j);
            c.neg_mut();
        }
    }
    q
}

/// Latent directions (d_latent x r, orthonormal) owned by each family.
fn family_directions(spec: &FamilySpec) -> Vec<DMatrix<f64>> {
    let count = spec.families.len();
    if count <= spec.d_latent {
        let block = spec.d_latent / count;
        let basis = orthonormal_columns(&mut stream(spec.seed, "family-basis", ""), spec.d_latent, spec.d_latent);
        (0..count).map(|f| basis.columns(f * block, block).into_owned()).collect()
    } else {
        spec.families
            .iter()
            .map(|fam| {
                let v = unit_vector(&mut stream(spec.seed, "family-direction", &fam.id), spec.d_latent);
                DMatrix::from_column_slice(spec.d_latent, 1, v.as_slice())
            })
            .collect()
    }
}

/// Builds `directions * P * sqrt(d / r)` with `P` (r x d) having orthonormal rows.
fn spread(directions: &DMatrix<f64>, rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let r = directions.ncols();
    let p = orthonormal_columns(rng, d, r).transpose();
    directions * p * (d as f64 / r as f64).sqrt()
}

pub fn generate(spec: &FamilySpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let (n, d, dl) = (spec.n, spec.d, spec.d_latent);
    let latent = gaussian(&mut stream(spec.seed, "latent", ""), n, dl);
    let directions = family_directions(spec);

    let mut matrices = Vec::new();
    for (fam, dirs) in spec.families.iter().zip(&directions) {
        let g = spread(dirs, &mut stream(spec.seed, "family-map", &fam.id), d);
        for lang in &fam.languages {
            let mut rng = stream(spec.seed, "language-map", lang);
            let u = unit_vector(&mut rng, dl);
            let h = spread(&DMatrix::from_column_slice(dl, 1, u.as_slice()), &mut rng, d);
            let mixing = &g * spec.alpha + h * spec.beta;
            let mut x = &latent * mixing;
            if spec.sigma > 0.0 {
                x += gaussian(&mut stream(spec.seed, "noise", lang), n, d) * spec.sigma;
            }
            matrices.push(ActivationMatrix::from_f64(lang.clone(), spec.layer.clone(), &x)?);
        }
    }
    Ok(SyntheticDataset {
        set: ActivationSet::from_pooled("synthetic", matrices)?,
        families: spec.ground_truth(),
    })
}

/// A stack of layers whose languages share a growing fraction of latent columns.
///
/// At each layer, language `l` sees `round(f * d_latent)` columns of the common
/// latent and private columns for the rest, mixed by its own Gaussian map into
/// `d` features, plus `sigma` noise. `alpha` and `beta` are not used. Layers are
/// named `layer0`, `layer1`, ...
pub fn layer_stack(spec: &FamilySpec, shared_fractions: &[f64]) -> Result<SyntheticDataset> {
    spec.validate()?;
    if shared_fractions.is_empty() {
        return Err(Error::InvalidSpec("no shared fractions".into()));
    }
    if let Some(f) = shared_fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::InvalidSpec(format!("shared fraction {f} outside [0, 1]")));
    }
    let (n, d, dl) = (spec.n, spec.d, spec.d_latent);
    let languages = spec.languages();
    let common = gaussian(&mut stream(spec.seed, "latent", ""), n, dl);
    let layers: Vec<String> = (0..shared_fractions.len()).map(|i| format!("layer{i}")).collect();

    let mut matrices = Vec::new();
    for lang in &languages {
        for (layer, &fraction) in layers.iter().zip(shared_fractions) {
            let shared = (fraction * dl as f64).round() as usize;
            let key = format!("{layer}/{lang}");
            let private = gaussian(&mut stream(spec.seed, "private-latent", &key), n, dl - shared);
            let mut latent = DMatrix::<f64>::zeros(n, dl);
            latent.columns_mut(0, shared).copy_from(&common.columns(0, shared));
            latent.columns_mut(shared, dl - shared).copy_from(&private);
            let mixing = gaussian(&mut stream(spec.seed, "stack-map", &key), dl, d) / (dl as f64).sqrt();
            let mut x = latent * mixing;
            if spec.sigma > 0.0 {
                x += gaussian(&mut stream(spec.seed, "noise", &key), n, d) * spec.sigma;
            }
            matrices.push(ActivationMatrix::from_f64(lang.clone(), layer.clone(), &x)?);
        }
    }
    Ok(SyntheticDataset {
        set: ActivationSet::from_pooled("synthetic-stack", matrices)?,
        families: spec.ground_truth(),
    })
}

/// Adds `N(0, level^2)` noise to every layer of each named language. Languages
/// not in `levels` are copied unchanged.
pub fn perturb(set: &ActivationSet, levels: &BTreeMap<String, f64>, seed: u64) -> Result<ActivationSet> {
    for (lang, &level) in levels {
        if !set.languages().contains(lang) {
            return Err(Error::UnknownLanguage(lang.clone()));
        }
        if !(level.is_finite() && level >= 0.0) {
            return Err(Error::InvalidInput(format!("noise level for `{lang}` must be >= 0, got {level}")));
        }
    }
    set.try_map(|item| {
        let level = match levels.get(item.language()) {
            Some(&l) if l > 0.0 => l,
            _ => return Ok(item.clone()),
        };
        let key = format!("{}/{}", item.language(), item.layer());
        let mut rng = stream(seed, "perturb", &key);
        let noisy = |m: &DMatrix<f32>, rng: &mut ChaCha8Rng| {
            let noise = gaussian(rng, m.nrows(), m.ncols());
            DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| (f64::from(m[(i, j)]) + level * noise[(i, j)]) as f32)
        };
        Ok(match item {
            LayerData::Pooled(m) => LayerData::Pooled(ActivationMatrix::new(
                m.language(),
                m.layer(),
                noisy(m.data(), &mut rng),
            )?),
            LayerData::Token(t) => LayerData::Token(TokenActivations::new(
                t.language(),
                t.layer(),
                t.token_counts().to_vec(),
                noisy(t.data(), &mut rng),
            )?),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> FamilySpec {
        FamilySpec {
            families: FamilySpec::grid(2, 2),
            n: 40,
            d: 6,
            d_latent: 4,
            alpha: 1.0,
            beta: 0.2,
            sigma: 0.05,
            seed: 7,
            layer: DEFAULT_LAYER.into(),
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&spec()).unwrap();
        let b = generate(&spec()).unwrap();
        assert_eq!(a, b);
        let mut other = spec();
        other.seed = 8;
        assert_ne!(generate(&other).unwrap().set, a.set);
    }

    #[test]
    fn shapes_and_truth() {
        let s = generate(&spec()).unwrap();
        assert_eq!(s.set.languages(), &["f0l0", "f0l1", "f1l0", "f1l1"]);
        assert_eq!(s.set.sentence_count(), 40);
        assert_eq!(s.set.feature_dim(DEFAULT_LAYER).unwrap(), 6);
        assert_eq!(s.families["f1l0"], "f1");
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec();
        s.d_latent = 7;
        assert!(matches!(generate(&s), Err(Error::InvalidSpec(_))));
        let mut s = spec();
        s.families[1].languages[0] = "f0l0".into();
        assert!(matches!(generate(&s), Err(Error::InvalidSpec(_))));
        let mut s = spec();
        s.sigma = -1.0;
        assert!(generate(&s).is_err());
        let mut s = spec();
        s.n = 1;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn many_families_fall_back_to_single_directions() {
        let mut s = spec();
        s.families = FamilySpec::grid(6, 1);
        let out = generate(&s).unwrap();
        assert_eq!(out.set.languages().len(), 6);
    }

    #[test]
    fn perturb_touches_only_named_languages() {
        let base = generate(&spec()).unwrap().set;
        let levels = BTreeMap::from([("f0l1".to_string(), 0.5)]);
        let out = perturb(&base, &levels, 3).unwrap();
        assert_eq!(out.get("f0l0", DEFAULT_LAYER).unwrap(), base.get("f0l0", DEFAULT_LAYER).unwrap());
        assert_ne!(out.get("f0l1", DEFAULT_LAYER).unwrap(), base.get("f0l1", DEFAULT_LAYER).unwrap());
        assert_eq!(perturb(&base, &BTreeMap::new(), 3).unwrap(), base);
        let zeros = base.languages().iter().map(|l| (l.clone(), 0.0)).collect();
        assert_eq!(perturb(&base, &zeros, 3).unwrap(), base);
        let unknown = BTreeMap::from([("xx".to_string(), 0.1)]);
        assert!(matches!(perturb(&base, &unknown, 3), Err(Error::UnknownLanguage(_))));
    }

    #[test]
    fn stack_layers() {
        let s = layer_stack(&spec(), &[0.25, 0.75]).unwrap();
        assert_eq!(s.set.layers(), &["layer0", "layer1"]);
        assert!(layer_stack(&spec(), &[1.5]).is_err());
    }
}
