use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::matrix::{ActivationMatrix, LayerData, TokenActivations};
use super::rsam::{self, RsamHeader, RsamTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Pooled,
    Token,
}

pub const DTYPE_NAME: &str = "float32";

fn float32() -> String {
    DTYPE_NAME.to_string()
}

/// JSON sidecar describing a dataset. Paths in `files` are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset_name: String,
    pub languages: Vec<String>,
    pub layers: Vec<String>,
    pub sentence_count: usize,
    pub feature_dims: BTreeMap<String, usize>,
    pub granularity: Granularity,
    #[serde(default = "float32")]
    pub dtype: String,
    /// language -> layer -> data file.
    pub files: BTreeMap<String, BTreeMap<String, PathBuf>>,
}

fn ensure_unique(kind: &str, items: &[String]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for item in items {
        if item.is_empty() {
            return Err(Error::InvalidManifest(format!("empty {kind} name")));
        }
        if !seen.insert(item) {
            return Err(Error::InvalidManifest(format!("duplicate {kind} `{item}`")));
        }
    }
    Ok(())
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.dtype != DTYPE_NAME {
            return Err(Error::InvalidManifest(format!(
                "dtype must be `{DTYPE_NAME}`, got `{}`",
                self.dtype
            )));
        }
        ensure_unique("language", &self.languages)?;
        ensure_unique("layer", &self.layers)?;
        if self.languages.is_empty() || self.layers.is_empty() {
            return Err(Error::InvalidManifest("no languages or no layers".into()));
        }
        if self.sentence_count < 2 {
            return Err(Error::InvalidManifest(format!(
                "sentence_count must be at least 2, got {}",
                self.sentence_count
            )));
        }
        for layer in &self.layers {
            match self.feature_dims.get(layer) {
                Some(&d) if d >= 1 => {}
                Some(_) => return Err(Error::InvalidManifest(format!("layer `{layer}` has zero width"))),
                None => return Err(Error::InvalidManifest(format!("no feature_dims entry for `{layer}`"))),
            }
        }
        if let Some(extra) = self.feature_dims.keys().find(|k| !self.layers.contains(k)) {
            return Err(Error::InvalidManifest(format!("feature_dims names unknown layer `{extra}`")));
        }
        for (lang, per_layer) in &self.files {
            if !self.languages.contains(lang) {
                return Err(Error::InvalidManifest(format!("files names unknown language `{lang}`")));
            }
            if let Some(extra) = per_layer.keys().find(|k| !self.layers.contains(k)) {
                return Err(Error::InvalidManifest(format!("files names unknown layer `{extra}`")));
            }
        }
        for lang in &self.languages {
            for layer in &self.layers {
                if self.file(lang, layer).is_none() {
                    return Err(Error::InvalidManifest(format!("no data file for {lang}/{layer}")));
                }
            }
        }
        Ok(())
    }

    pub fn file(&self, language: &str, layer: &str) -> Option<&Path> {
        self.files.get(language)?.get(layer).map(PathBuf::as_path)
    }

    pub fn has_layer(&self, layer: &str) -> bool {
        self.layers.iter().any(|l| l == layer)
    }
}

/// In-memory activations for a set of languages and layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    name: String,
    languages: Vec<String>,
    layers: Vec<String>,
    sentence_count: usize,
    granularity: Granularity,
    entries: HashMap<(String, String), LayerData>,
}

impl ActivationSet {
    /// Builds and validates a complete set: every (language, layer) present exactly once,
    /// one granularity, equal sentence counts and equal widths per layer.
    pub fn new(
        name: impl Into<String>,
        languages: Vec<String>,
        layers: Vec<String>,
        data: Vec<LayerData>,
    ) -> Result<Self> {
        ensure_unique("language", &languages)?;
        ensure_unique("layer", &layers)?;
        let first = data
            .first()
            .ok_or_else(|| Error::InvalidInput("activation set has no data".into()))?;
        let granularity = match first {
            LayerData::Pooled(_) => Granularity::Pooled,
            LayerData::Token(_) => Granularity::Token,
        };
        let sentence_count = first.sentences();
        let mut widths: HashMap<String, usize> = HashMap::new();
        let mut entries = HashMap::new();
        for item in data {
            let key = (item.language().to_string(), item.layer().to_string());
            if !languages.contains(&key.0) {
                return Err(Error::UnknownLanguage(key.0));
            }
            if !layers.contains(&key.1) {
                return Err(Error::UnknownLayer(key.1));
            }
            let kind = match &item {
                LayerData::Pooled(_) => Granularity::Pooled,
                LayerData::Token(_) => Granularity::Token,
            };
            if kind != granularity {
                return Err(Error::InvalidInput(format!(
                    "{}/{}: mixed pooled and token data",
                    key.0, key.1
                )));
            }
            if item.sentences() != sentence_count {
                return Err(Error::ShapeMismatch {
                    context: format!("{}/{}", key.0, key.1),
                    expected: format!("{sentence_count} sentences"),
                    found: format!("{} sentences", item.sentences()),
                });
            }
            let w = *widths.entry(key.1.clone()).or_insert(item.cols());
            if w != item.cols() {
                return Err(Error::ShapeMismatch {
                    context: format!("{}/{}", key.0, key.1),
                    expected: format!("{w} columns"),
                    found: format!("{} columns", item.cols()),
                });
            }
            if entries.insert(key.clone(), item).is_some() {
                return Err(Error::InvalidInput(format!("duplicate data for {}/{}", key.0, key.1)));
            }
        }
        for lang in &languages {
            for layer in &layers {
                if !entries.contains_key(&(lang.clone(), layer.clone())) {
                    return Err(Error::InvalidInput(format!("missing data for {lang}/{layer}")));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            languages,
            layers,
            sentence_count,
            granularity,
            entries,
        })
    }

    pub fn from_pooled(name: impl Into<String>, matrices: Vec<ActivationMatrix>) -> Result<Self> {
        let mut languages = Vec::new();
        let mut layers = Vec::new();
        for m in &matrices {
            if !languages.iter().any(|l| l == m.language()) {
                languages.push(m.language().to_string());
            }
            if !layers.iter().any(|l| l == m.layer()) {
                layers.push(m.layer().to_string());
            }
        }
        Self::new(name, languages, layers, matrices.into_iter().map(LayerData::Pooled).collect())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn layers(&self) -> &[String] {
        &self.layers
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_count
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn has_layer(&self, layer: &str) -> bool {
        self.layers.iter().any(|l| l == layer)
    }

    pub fn get(&self, language: &str, layer: &str) -> Result<&LayerData> {
        if !self.languages.iter().any(|l| l == language) {
            return Err(Error::UnknownLanguage(language.to_string()));
        }
        if !self.has_layer(layer) {
            return Err(Error::UnknownLayer(layer.to_string()));
        }
        Ok(&self.entries[&(language.to_string(), layer.to_string())])
    }

    pub fn pooled(&self, language: &str, layer: &str) -> Result<&ActivationMatrix> {
        match self.get(language, layer)? {
            LayerData::Pooled(m) => Ok(m),
            LayerData::Token(_) => Err(Error::InvalidInput(format!(
                "{language}/{layer} holds token data; pool it first"
            ))),
        }
    }

    pub fn feature_dim(&self, layer: &str) -> Result<usize> {
        let lang = &self.languages[0];
        Ok(self.get(lang, layer)?.cols())
    }

    /// Applies `f` to every entry, keeping names and order.
    pub fn try_map(&self, mut f: impl FnMut(&LayerData) -> Result<LayerData>) -> Result<Self> {
        let mut out = Vec::with_capacity(self.entries.len());
        for lang in &self.languages {
            for layer in &self.layers {
                out.push(f(&self.entries[&(lang.clone(), layer.clone())])?);
            }
        }
        Self::new(self.name.clone(), self.languages.clone(), self.layers.clone(), out)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    fn manifest(&self, files: BTreeMap<String, BTreeMap<String, PathBuf>>) -> Result<Manifest> {
        let mut feature_dims = BTreeMap::new();
        for layer in &self.layers {
            feature_dims.insert(layer.clone(), self.feature_dim(layer)?);
        }
        Ok(Manifest {
            dataset_name: self.name.clone(),
            languages: self.languages.clone(),
            layers: self.layers.clone(),
            sentence_count: self.sentence_count,
            feature_dims,
            granularity: self.granularity,
            dtype: DTYPE_NAME.to_string(),
            files,
        })
    }
}

/// A validated manifest whose matrices are read on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    manifest: Manifest,
    root: PathBuf,
    manifest_path: PathBuf,
}

fn file_len(path: &Path) -> Result<u64> {
    fs::metadata(path).map(|m| m.len()).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Parses and validates a manifest, then checks each data file's header and size
/// against it. Payloads are not read.
pub fn read_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(manifest_path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::InvalidManifest(format!("{}: {e}", manifest_path.display())))?;
    manifest.validate()?;
    let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let dataset = Dataset {
        manifest,
        root,
        manifest_path: manifest_path.to_path_buf(),
    };
    for lang in &dataset.manifest.languages {
        for layer in &dataset.manifest.layers {
            dataset.check_file(lang, layer)?;
        }
    }
    Ok(dataset)
}

impl Dataset {
    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn manifest_path(&self) -> &Path {
        &self.manifest_path
    }

    pub fn path_of(&self, language: &str, layer: &str) -> Result<PathBuf> {
        if !self.manifest.languages.iter().any(|l| l == language) {
            return Err(Error::UnknownLanguage(language.to_string()));
        }
        if !self.manifest.has_layer(layer) {
            return Err(Error::UnknownLayer(layer.to_string()));
        }
        let rel = self.manifest.file(language, layer).expect("validated manifest");
        Ok(self.root.join(rel))
    }

    fn check_file(&self, language: &str, layer: &str) -> Result<()> {
        let path = self.path_of(language, layer)?;
        let header = rsam::read_header(&path)?;
        let n = self.manifest.sentence_count as u64;
        let d = self.manifest.feature_dims[layer] as u64;
        let mismatch = |expected: String, found: String| Error::ShapeMismatch {
            context: path.display().to_string(),
            expected,
            found,
        };
        if header.dims.len() != 2 {
            return Err(mismatch("rank 2".into(), format!("rank {}", header.dims.len())));
        }
        let (rows, cols) = (header.dims[0], header.dims[1]);
        if cols != d {
            return Err(mismatch(format!("{d} columns"), format!("{cols} columns")));
        }
        let expected_len = match self.manifest.granularity {
            Granularity::Pooled => {
                if rows != n {
                    return Err(mismatch(format!("{n} rows"), format!("{rows} rows")));
                }
                header.encoded_len() + 4 * rows * cols
            }
            Granularity::Token => {
                if rows < n {
                    return Err(mismatch(format!("at least {n} token rows"), format!("{rows} rows")));
                }
                header.encoded_len() + 4 * rows * cols + 8 + 8 * n
            }
        };
        let actual = file_len(&path)?;
        if actual != expected_len {
            return Err(mismatch(format!("{expected_len} bytes"), format!("{actual} bytes")));
        }
        Ok(())
    }

    /// Reads one (language, layer) pair.
    pub fn load(&self, language: &str, layer: &str) -> Result<LayerData> {
        let path = self.path_of(language, layer)?;
        let token = self.manifest.granularity == Granularity::Token;
        let tensor = rsam::read(&path, token)?;
        let expected = RsamHeader {
            dims: vec![tensor.dims[0], self.manifest.feature_dims[layer] as u64],
        };
        if tensor.dims != expected.dims {
            return Err(Error::ShapeMismatch {
                context: path.display().to_string(),
                expected: format!("{:?}", expected.dims),
                found: format!("{:?}", tensor.dims),
            });
        }
        let rows = tensor.dims[0] as usize;
        let cols = tensor.dims[1] as usize;
        let data = DMatrix::from_row_slice(rows, cols, &tensor.data);
        let contextualize = |e: Error| match e {
            Error::NonFiniteData { row, col, .. } => Error::NonFiniteData {
                context: path.display().to_string(),
                row,
                col,
            },
            other => other,
        };
        let item = match tensor.token_counts {
            None => LayerData::Pooled(ActivationMatrix::new(language, layer, data).map_err(contextualize)?),
            Some(counts) => {
                if counts.len() != self.manifest.sentence_count {
                    return Err(Error::ShapeMismatch {
                        context: path.display().to_string(),
                        expected: format!("{} sentences", self.manifest.sentence_count),
                        found: format!("{} sentences", counts.len()),
                    });
                }
                let counts = counts.into_iter().map(|c| c as usize).collect();
                LayerData::Token(TokenActivations::new(language, layer, counts, data).map_err(contextualize)?)
            }
        };
        Ok(item)
    }

    /// Loads every language at the given layers.
    pub fn load_layers(&self, layers: &[String]) -> Result<ActivationSet> {
        for layer in layers {
            if !self.manifest.has_layer(layer) {
                return Err(Error::UnknownLayer(layer.clone()));
            }
        }
        let mut data = Vec::new();
        for lang in &self.manifest.languages {
            for layer in layers {
                data.push(self.load(lang, layer)?);
            }
        }
        ActivationSet::new(
            self.manifest.dataset_name.clone(),
            self.manifest.languages.clone(),
            layers.to_vec(),
            data,
        )
    }

    pub fn load_all(&self) -> Result<ActivationSet> {
        self.load_layers(&self.manifest.layers.clone())
    }
}

fn file_stem_part(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes every matrix as RSAM next to a `manifest.json`; returns the manifest path.
pub fn write_dataset(set: &ActivationSet, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut files: BTreeMap<String, BTreeMap<String, PathBuf>> = BTreeMap::new();
    let mut used = BTreeSet::new();
    for lang in set.languages() {
        for layer in set.layers() {
            let name = format!("{}.{}.rsam", file_stem_part(lang), file_stem_part(layer));
            if !used.insert(name.clone()) {
                return Err(Error::InvalidInput(format!(
                    "file name collision for {lang}/{layer}: {name}"
                )));
            }
            let tensor = match set.get(lang, layer)? {
                LayerData::Pooled(m) => RsamTensor {
                    dims: vec![m.rows() as u64, m.cols() as u64],
                    data: m.to_row_major(),
                    token_counts: None,
                },
                LayerData::Token(t) => RsamTensor {
                    dims: vec![t.total_tokens() as u64, t.cols() as u64],
                    data: t.data().transpose().as_slice().to_vec(),
                    token_counts: Some(t.token_counts().iter().map(|&c| c as u64).collect()),
                },
            };
            rsam::write(&dir.join(&name), &tensor)?;
            files.entry(lang.clone()).or_default().insert(layer.clone(), PathBuf::from(name));
        }
    }
    let manifest = set.manifest(files)?;
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}
