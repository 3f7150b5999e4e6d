//! All-pairs SVCCA similarity, per-layer score distributions, nearest
//! neighbours, and before/after drift.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{align_token_rows, mean_pool, token_flatten, ActivationSet, LayerData, TokenAlignment};
use crate::stats::{self, Summary, UnitHistogram};
use crate::svcca::{cca, svcca, svd_truncate, Regularization, SvccaOptions, TruncatedSubspace};

/// Histogram resolution for layer distributions.
pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// One row per sentence, the mean of its token activations.
    MeanPool,
    /// One row per token; unequal totals are truncated to the shorter side.
    Token,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_pool" => Ok(Strategy::MeanPool),
            "token" => Ok(Strategy::Token),
            other => Err(Error::InvalidInput(format!("unknown strategy `{other}`"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::MeanPool => "mean_pool",
            Strategy::Token => "token",
        })
    }
}

/// Row pairing used for one token-level comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAlignment {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub rows: TokenAlignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    pub layer: String,
    pub strategy: Strategy,
    pub tau: f64,
    pub epsilon: Regularization,
    /// Row-major L x L.
    #[serde(with = "nested_rows")]
    pub values: DMatrix<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub token_alignment: Vec<PairAlignment>,
}

mod nested_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(D::Error::custom("similarity values must be square"));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, language: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == language)
            .ok_or_else(|| Error::UnknownLanguage(language.to_string()))
    }

    pub fn get(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.values[(self.index_of(a)?, self.index_of(b)?)])
    }

    /// Strict upper triangle, row by row.
    pub fn off_diagonal(&self) -> Vec<f64> {
        let l = self.len();
        (0..l)
            .flat_map(|i| (i + 1..l).map(move |j| (i, j)))
            .map(|(i, j)| self.values[(i, j)])
            .collect()
    }

    /// Checks symmetry, the unit diagonal and the [0, 1] range.
    pub fn validate(&self) -> Result<()> {
        let l = self.labels.len();
        if self.values.nrows() != l || self.values.ncols() != l {
            return Err(Error::ShapeMismatch {
                context: "similarity matrix".into(),
                expected: format!("{l}x{l}"),
                found: format!("{}x{}", self.values.nrows(), self.values.ncols()),
            });
        }
        for i in 0..l {
            if self.values[(i, i)] != 1.0 {
                return Err(Error::InvalidInput(format!("diagonal entry for `{}` is not 1", self.labels[i])));
            }
            for j in 0..l {
                let v = self.values[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidInput(format!("entry ({i}, {j}) = {v} outside [0, 1]")));
                }
                if (v - self.values[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!("entries ({i}, {j}) and ({j}, {i}) differ")));
                }
            }
        }
        Ok(())
    }

    /// Header row of labels, then one row of values per language.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.labels)?;
        for row in self.values.row_iter() {
            out.write_record(row.iter().map(|v| format_float(*v)))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the CSV layout; layer, strategy and parameters are not part of it.
    pub fn read_csv<R: Read>(r: R, layer: &str) -> Result<Self> {
        let mut input = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let labels: Vec<String> = input.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for record in input.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidInput(format!("bad similarity value `{v}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let l = labels.len();
        if rows.len() != l || rows.iter().any(|r| r.len() != l) {
            return Err(Error::ShapeMismatch {
                context: "similarity CSV".into(),
                expected: format!("{l}x{l}"),
                found: format!("{} rows", rows.len()),
            });
        }
        let sim = Self {
            labels,
            layer: layer.to_string(),
            strategy: Strategy::MeanPool,
            tau: crate::svcca::DEFAULT_TAU,
            epsilon: Regularization::Auto,
            values: DMatrix::from_fn(l, l, |i, j| rows[i][j]),
            token_alignment: Vec::new(),
        };
        sim.validate()?;
        Ok(sim)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sim: Self = serde_json::from_str(text)?;
        sim.validate()?;
        Ok(sim)
    }
}

/// Shortest representation that parses back to the same f64.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

fn pooled_view(set: &ActivationSet, language: &str, layer: &str) -> Result<DMatrix<f64>> {
    match set.get(language, layer)? {
        LayerData::Pooled(m) => Ok(m.to_f64()),
        LayerData::Token(t) => Ok(mean_pool(t)?.to_f64()),
    }
}

fn symmetric_from_pairs(l: usize, pairs: &[(usize, usize)], scores: &[f64]) -> DMatrix<f64> {
    let mut values = DMatrix::<f64>::identity(l, l);
    for (&(i, j), &s) in pairs.iter().zip(scores) {
        let s = s.clamp(0.0, 1.0);
        values[(i, j)] = s;
        values[(j, i)] = s;
    }
    values
}

/// Deterministic first error in pair order.
fn collect_pairs<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// Symmetrized SVCCA score for every language pair at one layer.
///
/// Entry (i, j) is the average of the scores computed in both argument orders;
/// the diagonal is 1 by definition. Pairs are evaluated in parallel.
pub fn pairwise_similarity(
    set: &ActivationSet,
    layer: &str,
    strategy: Strategy,
    options: &SvccaOptions,
) -> Result<SimilarityMatrix> {
    options.validate()?;
    if !set.has_layer(layer) {
        return Err(Error::UnknownLayer(layer.to_string()));
    }
    let labels = set.languages().to_vec();
    let l = labels.len();
    let pairs: Vec<(usize, usize)> = (0..l).flat_map(|i| (i + 1..l).map(move |j| (i, j))).collect();

    let (scores, token_alignment) = match strategy {
        Strategy::MeanPool => {
            let subspaces: Vec<Result<TruncatedSubspace>> = labels
                .par_iter()
                .map(|lang| {
                    pooled_view(set, lang, layer)
                        .and_then(|m| svd_truncate(&m, options.tau))
                        .map_err(|e| Error::pair(lang, lang, e))
                })
                .collect();
            let subspaces = collect_pairs(subspaces)?;
            let results = pairs
                .par_iter()
                .map(|&(i, j)| {
                    let (a, b) = (&subspaces[i].projected, &subspaces[j].projected);
                    let forward = cca(a, b, options.regularization)?;
                    let backward = cca(b, a, options.regularization)?;
                    Ok(0.5 * (forward.mean_correlation + backward.mean_correlation))
                })
                .map(|r: Result<f64>| r)
                .collect::<Vec<_>>();
            let results = results
                .into_iter()
                .zip(&pairs)
                .map(|(r, &(i, j))| r.map_err(|e| Error::pair(&labels[i], &labels[j], e)))
                .collect();
            (collect_pairs(results)?, Vec::new())
        }
        Strategy::Token => {
            let mut flat = Vec::with_capacity(l);
            for lang in &labels {
                match set.get(lang, layer)? {
                    LayerData::Token(t) => flat.push(token_flatten(t)),
                    LayerData::Pooled(_) => {
                        return Err(Error::InvalidInput(format!(
                            "token strategy needs token-level data, but {lang}/{layer} is pooled"
                        )))
                    }
                }
            }
            let results: Vec<Result<(f64, PairAlignment)>> = pairs
                .par_iter()
                .map(|&(i, j)| {
                    let (a, b, rows) = align_token_rows(&flat[i], &flat[j]);
                    let (a, b) = (a.map(f64::from), b.map(f64::from));
                    let run = || -> Result<f64> {
                        let forward = svcca(&a, &b, options)?;
                        let backward = svcca(&b, &a, options)?;
                        Ok(0.5 * (forward.mean_correlation + backward.mean_correlation))
                    };
                    run().map_err(|e| Error::pair(&labels[i], &labels[j], e)).map(|s| {
                        (
                            s,
                            PairAlignment {
                                a: labels[i].clone(),
                                b: labels[j].clone(),
                                rows,
                            },
                        )
                    })
                })
                .collect();
            let (scores, alignment): (Vec<f64>, Vec<PairAlignment>) = collect_pairs(results)?.into_iter().unzip();
            let truncated = alignment.into_iter().filter(|a| a.rows.truncated).collect();
            (scores, truncated)
        }
    };

    Ok(SimilarityMatrix {
        values: symmetric_from_pairs(l, &pairs, &scores),
        labels,
        layer: layer.to_string(),
        strategy,
        tau: options.tau,
        epsilon: options.regularization,
        token_alignment,
    })
}

/// Distribution of the pairwise scores at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: String,
    pub values: Vec<f64>,
    pub summary: Summary,
    pub histogram: UnitHistogram,
}

impl LayerSummary {
    pub fn from_similarity(sim: &SimilarityMatrix) -> Result<Self> {
        let values = sim.off_diagonal();
        if values.is_empty() {
            return Err(Error::InvalidInput("need at least two languages for a pairwise distribution".into()));
        }
        Ok(Self {
            layer: sim.layer.clone(),
            summary: Summary::of(&values)?,
            histogram: UnitHistogram::new(&values, HISTOGRAM_BINS),
            values,
        })
    }
}

pub fn layer_distribution(
    set: &ActivationSet,
    layers: &[String],
    strategy: Strategy,
    options: &SvccaOptions,
) -> Result<Vec<LayerSummary>> {
    if let Some(missing) = layers.iter().find(|l| !set.has_layer(l)) {
        return Err(Error::UnknownLayer(missing.clone()));
    }
    layers
        .iter()
        .map(|layer| LayerSummary::from_similarity(&pairwise_similarity(set, layer, strategy, options)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub language: String,
    pub score: f64,
}

/// The `k` most similar other languages, best first; ties go to the smaller label.
pub fn nearest_neighbors(sim: &SimilarityMatrix, language: &str, k: usize) -> Result<Vec<Neighbor>> {
    let row = sim.index_of(language)?;
    let available = sim.len() - 1;
    if k == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    if k > available {
        return Err(Error::KTooLarge { k, available });
    }
    let mut others: Vec<Neighbor> = (0..sim.len())
        .filter(|&j| j != row)
        .map(|j| Neighbor {
            language: sim.labels[j].clone(),
            score: sim.values[(row, j)],
        })
        .collect();
    others.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.language.cmp(&b.language)));
    others.truncate(k);
    Ok(others)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub labels: Vec<String>,
    pub layer: String,
    /// SVCCA similarity of each language with itself across the two snapshots.
    pub drift_scores: Vec<f64>,
    pub external_metric: Option<Vec<f64>>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

impl DriftReport {
    pub fn score_of(&self, language: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == language).map(|i| self.drift_scores[i])
    }

    /// Columns `language,drift,metric`; the metric column is empty when absent.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["language", "drift", "metric"])?;
        for (i, lang) in self.labels.iter().enumerate() {
            let metric = self
                .external_metric
                .as_ref()
                .map(|m| format_float(m[i]))
                .unwrap_or_default();
            out.write_record([lang.as_str(), &format_float(self.drift_scores[i]), &metric])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Per-language SVCCA between two snapshots of the same evaluation set.
/// A language whose activations are bit-identical in both snapshots scores exactly 1.
pub fn finetune_drift(
    before: &ActivationSet,
    after: &ActivationSet,
    layer: &str,
    options: &SvccaOptions,
) -> Result<DriftReport> {
    options.validate()?;
    if before.languages() != after.languages() {
        return Err(Error::MismatchedDatasets(format!(
            "language lists differ: {:?} vs {:?}",
            before.languages(),
            after.languages()
        )));
    }
    if before.sentence_count() != after.sentence_count() {
        return Err(Error::MismatchedDatasets(format!(
            "sentence counts differ: {} vs {}",
            before.sentence_count(),
            after.sentence_count()
        )));
    }
    for (which, set) in [("before", before), ("after", after)] {
        if !set.has_layer(layer) {
            return Err(Error::MismatchedDatasets(format!("layer `{layer}` missing from {which} snapshot")));
        }
    }
    let labels = before.languages().to_vec();
    let results: Vec<Result<f64>> = labels
        .par_iter()
        .map(|lang| {
            if before.get(lang, layer)? == after.get(lang, layer)? {
                // Unchanged snapshot, as with the similarity diagonal.
                return Ok(1.0);
            }
            let a = pooled_view(before, lang, layer)?;
            let b = pooled_view(after, lang, layer)?;
            svcca(&a, &b, options)
                .map(|r| r.mean_correlation)
                .map_err(|e| Error::pair(lang, lang, e))
        })
        .collect();
    Ok(DriftReport {
        labels,
        layer: layer.to_string(),
        drift_scores: collect_pairs(results)?,
        external_metric: None,
        pearson: None,
        spearman: None,
    })
}

/// Fills in the Pearson and Spearman correlation of drift against an external metric.
pub fn correlate_with_metric(report: &DriftReport, metric: &[f64]) -> Result<DriftReport> {
    if metric.len() != report.labels.len() {
        return Err(Error::InvalidInput(format!(
            "metric has {} values for {} languages",
            metric.len(),
            report.labels.len()
        )));
    }
    if metric.len() < 3 {
        return Err(Error::InvalidInput("need at least three languages to correlate".into()));
    }
    if let Some(v) = metric.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite metric value {v}")));
    }
    let drift = &report.drift_scores;
    let relabel = |e: Error| match e {
        Error::ConstantVector("x") => Error::ConstantVector("drift"),
        Error::ConstantVector("y") => Error::ConstantVector("metric"),
        other => other,
    };
    let pearson = stats::pearson(drift, metric).map_err(relabel)?;
    let spearman = stats::spearman(drift, metric).map_err(relabel)?;
    Ok(DriftReport {
        external_metric: Some(metric.to_vec()),
        pearson: Some(pearson),
        spearman: Some(spearman),
        ..report.clone()
    })
}

/// Reads a `language,value` CSV.
pub fn read_metric_csv<R: Read>(r: R) -> Result<BTreeMap<String, f64>> {
    let mut input = csv::Reader::from_reader(r);
    let headers: Vec<String> = input.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers != ["language", "value"] {
        return Err(Error::InvalidInput(format!(
            "metric CSV header must be `language,value`, got `{}`",
            headers.join(",")
        )));
    }
    let mut out = BTreeMap::new();
    for record in input.records() {
        let record = record?;
        let lang = record[0].trim().to_string();
        let value: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad metric value `{}` for `{lang}`", &record[1])))?;
        if out.insert(lang.clone(), value).is_some() {
            return Err(Error::InvalidInput(format!("duplicate metric row for `{lang}`")));
        }
    }
    Ok(out)
}

/// Orders a metric map by the report's labels.
pub fn metric_for_labels(labels: &[String], metric: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
    if let Some(extra) = metric.keys().find(|k| !labels.contains(k)) {
        return Err(Error::UnknownLanguage(extra.clone()));
    }
    labels
        .iter()
        .map(|l| {
            metric
                .get(l)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("metric has no value for `{l}`")))
        })
        .collect()
}
