use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use repsim::io::{align_token_rows, token_flatten};
use repsim::pairwise::{format_float, metric_for_labels, read_metric_csv};
use repsim::{
    build_affinity, correlate_with_metric, finetune_drift, laplacian_eigenmap, layer_distribution, mean_pool,
    nearest_neighbors, pairwise_similarity, read_dataset, write_dataset, ActivationMatrix, ActivationSet, Dataset,
    FamilySpec, LayerData, SimilarityMatrix, Strategy,
};
use serde::Serialize;

use crate::args::*;

/// A usage problem found after argument parsing.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

/// What a command read and wrote.
#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    /// Files written, all under `out`.
    pub artifacts: Vec<PathBuf>,
}

pub fn run(command: &Command) -> Result<Outcome> {
    match command {
        Command::Pool(a) => pool(a),
        Command::Score(a) => score(a),
        Command::Pairwise(a) => pairwise(a),
        Command::Dist(a) => dist(a),
        Command::Neighbors(a) => neighbors(a),
        Command::Embed(a) => embed(a),
        Command::Drift(a) => drift(a),
        Command::Synth(a) => synth(a),
        Command::Perturb(a) => perturb(a),
        Command::Replay(_) => unreachable!("replay is dispatched by main"),
    }
}

fn open(manifest: &Path, inputs: &mut Vec<PathBuf>) -> Result<Dataset> {
    let ds = read_dataset(manifest)?;
    inputs.push(manifest.to_path_buf());
    for lang in &ds.manifest().languages {
        for layer in &ds.manifest().layers {
            inputs.push(ds.path_of(lang, layer)?);
        }
    }
    Ok(ds)
}

fn absolute(p: &Path) -> PathBuf {
    if let Ok(c) = p.canonicalize() {
        return c;
    }
    match (p.parent(), p.file_name()) {
        (Some(parent), Some(name)) => absolute(if parent.as_os_str().is_empty() { Path::new(".") } else { parent }).join(name),
        _ => p.to_path_buf(),
    }
}

fn guard_out(out: &Path, inputs: &[PathBuf]) -> Result<()> {
    let target = absolute(out);
    if let Some(hit) = inputs.iter().find(|p| absolute(p).starts_with(&target)) {
        return usage(format!("output {} would overwrite input {}", out.display(), hit.display()));
    }
    Ok(())
}

fn emit(output: &OutputArgs, bytes: Vec<u8>, outcome: &mut Outcome) -> Result<()> {
    match &output.out {
        Some(path) => {
            guard_out(path, &outcome.inputs)?;
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
            outcome.out = Some(path.clone());
            outcome.artifacts.push(path.clone());
        }
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(())
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn csv_rows(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    Ok(w.into_inner()?)
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn write_set(set: &ActivationSet, dir: &Path, outcome: &mut Outcome) -> Result<PathBuf> {
    guard_out(dir, &outcome.inputs)?;
    let manifest = write_dataset(set, dir).with_context(|| format!("writing dataset to {}", dir.display()))?;
    let ds = read_dataset(&manifest)?;
    outcome.out = Some(dir.to_path_buf());
    outcome.artifacts.push(manifest);
    for lang in set.languages() {
        for layer in set.layers() {
            outcome.artifacts.push(ds.path_of(lang, layer)?);
        }
    }
    Ok(dir.to_path_buf())
}

fn pooled(data: &LayerData) -> repsim::Result<ActivationMatrix> {
    match data {
        LayerData::Pooled(m) => Ok(m.clone()),
        LayerData::Token(t) => mean_pool(t),
    }
}

fn pool(a: &PoolArgs) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let ds = open(&a.manifest, &mut outcome.inputs)?;
    let layers = if a.layers.is_empty() { ds.manifest().layers.clone() } else { a.layers.clone() };
    let set = ds.load_layers(&layers)?.try_map(|d| pooled(d).map(LayerData::Pooled))?;
    write_set(&set, &a.out, &mut outcome)?;
    Ok(outcome)
}

#[derive(Serialize)]
struct ScoreReport<'a> {
    language_a: &'a str,
    language_b: &'a str,
    layer: &'a str,
    strategy: Strategy,
    tau: f64,
    epsilon: repsim::Regularization,
    mean_correlation: f64,
    correlations: &'a [f64],
    rank_warning: bool,
    ridge_a: f64,
    ridge_b: f64,
}

fn score(a: &ScoreArgs) -> Result<Outcome> {
    if a.manifest.len() > 2 || a.language.len() > 2 {
        return usage("score takes at most two --manifest and two --language values");
    }
    let mut outcome = Outcome::default();
    let ds_a = open(&a.manifest[0], &mut outcome.inputs)?;
    let ds_b = match a.manifest.get(1) {
        Some(m) => open(m, &mut outcome.inputs)?,
        None => ds_a.clone(),
    };
    let lang_a = a.language[0].as_str();
    let lang_b = a.language.get(1).map_or(lang_a, String::as_str);
    let da = ds_a.load(lang_a, &a.layer)?;
    let db = ds_b.load(lang_b, &a.layer)?;
    let (x, y) = match a.svcca.strategy {
        Strategy::MeanPool => (pooled(&da)?.to_f64(), pooled(&db)?.to_f64()),
        Strategy::Token => match (&da, &db) {
            (LayerData::Token(ta), LayerData::Token(tb)) => {
                let (xa, xb, _) = align_token_rows(&token_flatten(ta), &token_flatten(tb));
                (xa.map(f64::from), xb.map(f64::from))
            }
            _ => return Err(repsim::Error::InvalidInput("the token strategy needs token-level data".into()).into()),
        },
    };
    let result =
        repsim::svcca(&x, &y, &a.svcca.options()).with_context(|| format!("pair ({lang_a}, {lang_b})"))?;
    let report = ScoreReport {
        language_a: lang_a,
        language_b: lang_b,
        layer: &a.layer,
        strategy: a.svcca.strategy,
        tau: a.svcca.tau,
        epsilon: a.svcca.epsilon,
        mean_correlation: result.mean_correlation,
        correlations: &result.correlations,
        rank_warning: result.rank_warning,
        ridge_a: result.ridge_a,
        ridge_b: result.ridge_b,
    };
    let bytes = match a.output.format {
        Format::Json => json(&report)?,
        Format::Csv => {
            let mut header = strings(&["language_a", "language_b", "layer", "mean_correlation", "rank_warning"]);
            header.extend((1..=result.correlations.len()).map(|i| format!("rho_{i}")));
            let mut row = vec![
                lang_a.to_string(),
                lang_b.to_string(),
                a.layer.clone(),
                format_float(result.mean_correlation),
                result.rank_warning.to_string(),
            ];
            row.extend(result.correlations.iter().map(|r| format_float(*r)));
            csv_rows(&header, &[row])?
        }
    };
    emit(&a.output, bytes, &mut outcome)?;
    Ok(outcome)
}

fn similarity_bytes(sim: &SimilarityMatrix, format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Json => json(sim),
        Format::Csv => {
            let mut buf = Vec::new();
            sim.write_csv(&mut buf)?;
            Ok(buf)
        }
    }
}

fn pairwise(a: &PairwiseArgs) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let ds = open(&a.manifest, &mut outcome.inputs)?;
    let set = ds.load_layers(std::slice::from_ref(&a.layer))?;
    let sim = pairwise_similarity(&set, &a.layer, a.svcca.strategy, &a.svcca.options())?;
    emit(&a.output, similarity_bytes(&sim, a.output.format)?, &mut outcome)?;
    Ok(outcome)
}

fn dist(a: &DistArgs) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let ds = open(&a.manifest, &mut outcome.inputs)?;
    let layers = if a.layers.is_empty() { ds.manifest().layers.clone() } else { a.layers.clone() };
    let set = ds.load_layers(&layers)?;
    let summaries = layer_distribution(&set, &layers, a.svcca.strategy, &a.svcca.options())?;
    let bytes = match a.output.format {
        Format::Json => json(&summaries)?,
        Format::Csv => {
            let header = strings(&["layer", "count", "mean", "std", "min", "q25", "median", "q75", "max"]);
            let rows: Vec<Vec<String>> = summaries
                .iter()
                .map(|s| {
                    let m = &s.summary;
                    let mut row = vec![s.layer.clone(), m.count.to_string()];
                    row.extend([m.mean, m.std, m.min, m.q25, m.median, m.q75, m.max].map(format_float));
                    row
                })
                .collect();
            csv_rows(&header, &rows)?
        }
    };
    emit(&a.output, bytes, &mut outcome)?;
    Ok(outcome)
}

fn load_similarity(src: &SimilaritySource, inputs: &mut Vec<PathBuf>) -> Result<SimilarityMatrix> {
    if let Some(path) = &src.similarity {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => repsim::Error::MissingFile(path.clone()),
            _ => repsim::Error::Io(e),
        })?;
        inputs.push(path.clone());
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let sim = if is_json {
            SimilarityMatrix::from_json(&text)
        } else {
            SimilarityMatrix::read_csv(text.as_bytes(), src.layer.as_deref().unwrap_or(""))
        };
        return sim.with_context(|| format!("reading {}", path.display()));
    }
    let (Some(manifest), Some(layer)) = (&src.manifest, &src.layer) else {
        return usage("need --similarity, or --manifest with --layer");
    };
    let ds = open(manifest, inputs)?;
    let set = ds.load_layers(std::slice::from_ref(layer))?;
    Ok(pairwise_similarity(&set, layer, src.svcca.strategy, &src.svcca.options())?)
}

#[derive(Serialize)]
struct NeighborList {
    language: String,
    neighbors: Vec<repsim::pairwise::Neighbor>,
}

fn neighbors(a: &NeighborsArgs) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let sim = load_similarity(&a.source, &mut outcome.inputs)?;
    let k = a.k.map_or(sim.len().saturating_sub(1), |k| k as usize);
    let languages = match &a.language {
        Some(l) => vec![l.clone()],
        None => sim.labels.clone(),
    };
    let lists = languages
        .into_iter()
        .map(|language| {
            let neighbors = nearest_neighbors(&sim, &language, k)?;
            Ok(NeighborList { language, neighbors })
        })
        .collect::<repsim::Result<Vec<_>>>()?;
    let bytes = match a.output.format {
        Format::Json => json(&lists)?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = lists
                .iter()
                .flat_map(|l| {
                    l.neighbors.iter().enumerate().map(|(i, n)| {
                        vec![l.language.clone(), (i + 1).to_string(), n.language.clone(), format_float(n.score)]
                    })
                })
                .collect();
            csv_rows(&strings(&["language", "rank", "neighbor", "score"]), &rows)?
        }
    };
    emit(&a.output, bytes, &mut outcome)?;
    Ok(outcome)
}

fn embed(a: &EmbedArgs) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let sim = load_similarity(&a.source, &mut outcome.inputs)?;
    let aff = build_affinity(&sim, a.knn.map(|k| k as usize))?;
    let coords = laplacian_eigenmap(&aff, a.dim as usize)?;
    let bytes = match a.output.format {
        Format::Json => json(&coords)?,
        Format::Csv => {
            let mut buf = Vec::new();
            coords.write_csv(&mut buf)?;
            buf
        }
    };
    emit(&a.output, bytes, &mut outcome)?;
    Ok(outcome)
}

fn drift(a: &DriftArgs) -> Result<Outcome> {
    let [before, after] = a.manifest.as_slice() else {
        return usage("drift takes exactly two --manifest values: before, then after");
    };
    let mut outcome = Outcome::default();
    let layer = std::slice::from_ref(&a.layer);
    let before = open(before, &mut outcome.inputs)?.load_layers(layer)?;
    let after = open(after, &mut outcome.inputs)?.load_layers(layer)?;
    let mut report = finetune_drift(&before, &after, &a.layer, &a.svcca.options())?;
    if let Some(path) = &a.metric {
        let file = fs::File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => repsim::Error::MissingFile(path.clone()),
            _ => repsim::Error::Io(e),
        })?;
        outcome.inputs.push(path.clone());
        let metric = read_metric_csv(file).with_context(|| format!("reading {}", path.display()))?;
        let values = metric_for_labels(&report.labels, &metric).with_context(|| format!("reading {}", path.display()))?;
        report = correlate_with_metric(&report, &values)?;
        if let (Some(p), Some(s)) = (report.pearson, report.spearman) {
            eprintln!("pearson {} spearman {}", format_float(p), format_float(s));
        }
    }
    let bytes = match a.output.format {
        Format::Json => json(&report)?,
        Format::Csv => {
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            buf
        }
    };
    emit(&a.output, bytes, &mut outcome)?;
    Ok(outcome)
}

fn synth(a: &SynthArgs) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => repsim::Error::MissingFile(path.clone()),
                _ => repsim::Error::Io(e),
            })?;
            outcome.inputs.push(path.clone());
            serde_json::from_str::<FamilySpec>(&text)
                .map_err(|e| repsim::Error::InvalidSpec(format!("{}: {e}", path.display())))?
        }
        None => FamilySpec {
            families: FamilySpec::grid(a.families, a.per_family),
            n: a.n,
            d: a.d,
            d_latent: a.d_latent,
            alpha: a.alpha,
            beta: a.beta,
            sigma: a.sigma,
            seed: a.seed,
            layer: a.layer.clone(),
        },
    };
    let data = if a.shared_fractions.is_empty() {
        repsim::generate(&spec)?
    } else {
        repsim::layer_stack(&spec, &a.shared_fractions)?
    };
    let dir = write_set(&data.set, &a.out, &mut outcome)?;
    let truth = dir.join("families.json");
    fs::write(&truth, json(&data.families)?).with_context(|| format!("writing {}", truth.display()))?;
    outcome.artifacts.push(truth);
    let spec_copy = dir.join("spec.json");
    fs::write(&spec_copy, json(&spec)?).with_context(|| format!("writing {}", spec_copy.display()))?;
    outcome.artifacts.push(spec_copy);
    Ok(outcome)
}

fn perturb(a: &PerturbArgs) -> Result<Outcome> {
    let mut levels = BTreeMap::new();
    for (lang, sigma) in &a.levels {
        if levels.insert(lang.clone(), *sigma).is_some() {
            return usage(format!("--level given twice for `{lang}`"));
        }
    }
    let mut outcome = Outcome::default();
    let set = open(&a.manifest, &mut outcome.inputs)?.load_all()?;
    let noisy = repsim::perturb(&set, &levels, a.seed)?;
    write_set(&noisy, &a.out, &mut outcome)?;
    Ok(outcome)
}
