#![allow(clippy::needless_range_loop)]

mod common;

use common::{gaussian, invertible, jacobi_eigen, rng};
use nalgebra::DMatrix;
use rand::Rng;
use repsim::pairwise::{LayerSummary, Strategy};
use repsim::spectral::{build_affinity, laplacian_eigenmap, AffinityMatrix};
use repsim::{
    correlate_with_metric, finetune_drift, layer_distribution, nearest_neighbors, pairwise_similarity,
    ActivationMatrix, ActivationSet, Error, LayerData, Regularization, SimilarityMatrix, SvccaOptions,
    TokenActivations,
};

fn pooled_set(mats: Vec<(&str, DMatrix<f64>)>) -> ActivationSet {
    ActivationSet::from_pooled(
        "t",
        mats.into_iter().map(|(l, m)| ActivationMatrix::from_f64(l, "enc", &m).unwrap()).collect(),
    )
    .unwrap()
}

fn sim_from(labels: &[String], values: DMatrix<f64>) -> SimilarityMatrix {
    SimilarityMatrix {
        labels: labels.to_vec(),
        layer: "enc".into(),
        strategy: Strategy::MeanPool,
        tau: 0.99,
        epsilon: Regularization::Auto,
        values,
        token_alignment: Vec::new(),
    }
}

#[test]
fn identical_languages_are_all_ones() {
    let mut r = rng(31);
    let x = gaussian(&mut r, 200, 6);
    let set = pooled_set(vec![("a", x.clone()), ("b", x)]);
    let sim = pairwise_similarity(&set, "enc", Strategy::MeanPool, &SvccaOptions::default()).unwrap();
    for v in sim.values.iter() {
        assert!((v - 1.0).abs() < 1e-8);
    }
}

#[test]
fn affine_copy_scores_one() {
    let mut r = rng(32);
    let x = gaussian(&mut r, 300, 8);
    let y = &x * invertible(&mut r, 8) + DMatrix::from_element(300, 8, 3.0);
    let z = gaussian(&mut r, 300, 8);
    let set = pooled_set(vec![("a", x), ("b", y), ("c", z)]);
    let sim = pairwise_similarity(&set, "enc", Strategy::MeanPool, &SvccaOptions::with_tau(1.0)).unwrap();
    assert!((sim.get("a", "b").unwrap() - 1.0).abs() < 1e-5);
    assert!(sim.get("a", "c").unwrap() < 0.5);
    sim.validate().unwrap();
}

#[test]
fn relabeling_permutes_rows_and_columns() {
    let mut r = rng(33);
    let z = gaussian(&mut r, 150, 3);
    let names = ["a", "b", "c", "d"];
    let mats: Vec<_> = names
        .iter()
        .map(|n| (*n, &z * gaussian(&mut r, 3, 6) + gaussian(&mut r, 150, 6) * 0.7))
        .collect();
    let perm = [2usize, 0, 3, 1];
    let permuted: Vec<_> = perm.iter().map(|&i| mats[i].clone()).collect();
    let opts = SvccaOptions::default();
    let s1 = pairwise_similarity(&pooled_set(mats), "enc", Strategy::MeanPool, &opts).unwrap();
    let s2 = pairwise_similarity(&pooled_set(permuted), "enc", Strategy::MeanPool, &opts).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(s2.values[(i, j)], s1.values[(perm[i], perm[j])]);
        }
    }
}

#[test]
fn unknown_layer_and_token_strategy_errors() {
    let mut r = rng(34);
    let set = pooled_set(vec![("a", gaussian(&mut r, 20, 3)), ("b", gaussian(&mut r, 20, 3))]);
    let opts = SvccaOptions::default();
    assert!(matches!(pairwise_similarity(&set, "dec", Strategy::MeanPool, &opts), Err(Error::UnknownLayer(_))));
    assert!(matches!(pairwise_similarity(&set, "enc", Strategy::Token, &opts), Err(Error::InvalidInput(_))));
}

#[test]
fn failing_pair_is_named() {
    let mut r = rng(35);
    let constant = DMatrix::from_element(20, 3, 1.0);
    let set = pooled_set(vec![("a", gaussian(&mut r, 20, 3)), ("flat", constant)]);
    match pairwise_similarity(&set, "enc", Strategy::MeanPool, &SvccaOptions::default()) {
        Err(Error::Pair { a, source, .. }) => {
            assert_eq!(a, "flat");
            assert!(matches!(*source, Error::DegenerateInput));
        }
        other => panic!("{other:?}"),
    }
}

fn token_set(r: &mut rand_chacha::ChaCha8Rng, langs: &[&str], sentences: usize) -> ActivationSet {
    let z = gaussian(r, sentences * 6, 3);
    let mut data = Vec::new();
    for lang in langs {
        let counts: Vec<usize> = (0..sentences).map(|_| r.random_range(2..=6)).collect();
        let rows: usize = counts.iter().sum();
        let mix = gaussian(r, 3, 5);
        let m = z.rows(0, rows) * mix + gaussian(r, rows, 5) * 0.1;
        data.push(LayerData::Token(TokenActivations::new(*lang, "enc", counts, m.map(|v| v as f32)).unwrap()));
    }
    ActivationSet::new("tok", langs.iter().map(|s| s.to_string()).collect(), vec!["enc".into()], data).unwrap()
}

#[test]
fn token_strategy_records_truncation() {
    let mut r = rng(36);
    let set = token_set(&mut r, &["a", "b", "c"], 40);
    let opts = SvccaOptions::default();
    let tok = pairwise_similarity(&set, "enc", Strategy::Token, &opts).unwrap();
    tok.validate().unwrap();
    assert_eq!(tok.strategy, Strategy::Token);
    for pa in &tok.token_alignment {
        assert!(pa.rows.truncated);
        assert_eq!(pa.rows.rows_used, pa.rows.rows_a.min(pa.rows.rows_b));
    }
    // Mean pooling works on the same token data.
    let pooled = pairwise_similarity(&set, "enc", Strategy::MeanPool, &opts).unwrap();
    pooled.validate().unwrap();
}

#[test]
fn distribution_of_identical_languages_is_at_one() {
    let mut r = rng(37);
    let x = gaussian(&mut r, 100, 4);
    let set = pooled_set(vec![("a", x.clone()), ("b", x.clone()), ("c", x)]);
    let d = layer_distribution(&set, &["enc".to_string()], Strategy::MeanPool, &SvccaOptions::default()).unwrap();
    assert_eq!(d[0].values.len(), 3);
    assert!(d[0].summary.min > 1.0 - 1e-8);
    assert_eq!(d[0].histogram.counts[49], 3);
    assert!(matches!(
        layer_distribution(&set, &["nope".to_string()], Strategy::MeanPool, &SvccaOptions::default()),
        Err(Error::UnknownLayer(_))
    ));
}

#[test]
fn neighbors_full_permutation_and_monotone() {
    let mut r = rng(38);
    let labels: Vec<String> = (0..6).map(|i| format!("l{i}")).collect();
    let mut v = DMatrix::from_fn(6, 6, |_, _| r.random_range(0.0..1.0));
    v = (&v + v.transpose()) * 0.5;
    v.fill_diagonal(1.0);
    let sim = sim_from(&labels, v);
    for lang in &labels {
        let nn = nearest_neighbors(&sim, lang, 5).unwrap();
        let mut names: Vec<_> = nn.iter().map(|n| n.language.clone()).collect();
        assert!(nn.windows(2).all(|w| w[0].score >= w[1].score));
        names.sort();
        let mut expected: Vec<_> = labels.iter().filter(|l| *l != lang).cloned().collect();
        expected.sort();
        assert_eq!(names, expected);
    }
}

#[test]
fn drift_identity_and_rotation() {
    let mut r = rng(39);
    let mats: Vec<_> = ["a", "b", "c"].iter().map(|l| (*l, gaussian(&mut r, 200, 6))).collect();
    let before = pooled_set(mats.clone());
    let opts = SvccaOptions::default();
    let same = finetune_drift(&before, &before, "enc", &opts).unwrap();
    assert_eq!(same.drift_scores, vec![1.0; 3]);
    let rotated: Vec<_> = mats.iter().map(|(l, m)| (*l, m * gaussian(&mut r, 6, 6).qr().q())).collect();
    let after = pooled_set(rotated);
    let rot = finetune_drift(&before, &after, "enc", &opts).unwrap();
    for s in &rot.drift_scores {
        assert!((s - 1.0).abs() < 1e-5, "{s}");
    }
    let other = pooled_set(vec![("a", gaussian(&mut r, 200, 6)), ("b", gaussian(&mut r, 200, 6))]);
    assert!(matches!(finetune_drift(&before, &other, "enc", &opts), Err(Error::MismatchedDatasets(_))));
}

#[test]
fn random_metric_rarely_correlates() {
    let mut hits = 0;
    for seed in 0..100 {
        let mut r = rng(1000 + seed);
        let report = repsim::DriftReport {
            labels: (0..50).map(|i| format!("l{i}")).collect(),
            layer: "enc".into(),
            drift_scores: (0..50).map(|_| r.random_range(0.5..1.0)).collect(),
            external_metric: None,
            pearson: None,
            spearman: None,
        };
        let metric: Vec<f64> = (0..50).map(|_| r.random_range(-1.0..1.0)).collect();
        let out = correlate_with_metric(&report, &metric).unwrap();
        if out.pearson.unwrap().abs() < 0.3 {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits}");
}

fn affinity(values: DMatrix<f64>) -> AffinityMatrix {
    AffinityMatrix {
        labels: (0..values.nrows()).map(|i| format!("n{i}")).collect(),
        values,
    }
}

#[test]
fn dumbbell_matches_jacobi_oracle() {
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[0.0, 1.0, 0.01, 0.0, 1.0, 0.0, 0.0, 0.0, 0.01, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0],
    );
    let emb = laplacian_eigenmap(&affinity(a.clone()), 1).unwrap();
    let deg: Vec<f64> = a.row_iter().map(|r| r.sum()).collect();
    let lap = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 } - a[(i, j)] / (deg[i] * deg[j]).sqrt());
    let (vals, vecs) = jacobi_eigen(&lap);
    assert!((emb.eigenvalues[0] - vals[1]).abs() < 1e-10);
    let mut col: Vec<f64> = (0..4).map(|i| vecs[(i, 1)] / deg[i].sqrt()).collect();
    let peak = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let pivot = (0..4).find(|&i| col[i].abs() >= peak * (1.0 - 1e-9)).unwrap();
    if col[pivot] < 0.0 {
        col.iter_mut().for_each(|v| *v = -*v);
    }
    for i in 0..4 {
        assert!((emb.coords[i][0] - col[i]).abs() < 1e-8);
    }
    assert!(emb.coords[0][0] * emb.coords[2][0] < 0.0);
}

#[test]
fn embedding_is_permutation_equivariant() {
    let mut r = rng(40);
    let mut v = DMatrix::from_fn(7, 7, |_, _| r.random_range(0.05..1.0));
    v = (&v + v.transpose()) * 0.5;
    v.fill_diagonal(0.0);
    let perm = [3usize, 6, 0, 2, 5, 1, 4];
    let pv = DMatrix::from_fn(7, 7, |i, j| v[(perm[i], perm[j])]);
    let e1 = laplacian_eigenmap(&affinity(v), 3).unwrap();
    let e2 = laplacian_eigenmap(&affinity(pv), 3).unwrap();
    for i in 0..7 {
        for c in 0..3 {
            assert!((e2.coords[i][c] - e1.coords[perm[i]][c]).abs() < 1e-8);
        }
    }
    for ev in &e1.eigenvalues {
        assert!((0.0..=2.0).contains(ev));
    }
    assert!(e1.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn twin_nodes_share_coordinates() {
    // Nodes 0 and 1 have identical affinity rows (no edge between them).
    let cluster = |i: usize| i / 3;
    let mut v = DMatrix::from_fn(9, 9, |i, j| if i == j { 0.0 } else if cluster(i) == cluster(j) { 0.9 } else { 0.02 });
    v[(0, 1)] = 0.0;
    v[(1, 0)] = 0.0;
    v[(0, 4)] = 0.1;
    v[(4, 0)] = 0.1;
    v[(1, 4)] = 0.1;
    v[(4, 1)] = 0.1;
    let e = laplacian_eigenmap(&affinity(v), 2).unwrap();
    assert!(e.eigenvalues.iter().all(|&ev| ev < 1.0));
    for c in 0..2 {
        assert!((e.coords[0][c] - e.coords[1][c]).abs() < 1e-8);
    }
}

#[test]
fn planted_blocks_recovered_by_nearest_centroid() {
    let l = 12;
    let block = |i: usize| i / 4;
    let v = DMatrix::from_fn(l, l, |i, j| if i == j { 1.0 } else if block(i) == block(j) { 0.9 } else { 0.05 });
    let labels: Vec<String> = (0..l).map(|i| format!("n{i}")).collect();
    let aff = build_affinity(&sim_from(&labels, v), None).unwrap();
    let e = laplacian_eigenmap(&aff, 2).unwrap();
    let centroids: Vec<[f64; 2]> = (0..3)
        .map(|b| {
            let members: Vec<_> = (0..l).filter(|&i| block(i) == b).collect();
            let mut c = [0.0; 2];
            for &i in &members {
                c[0] += e.coords[i][0] / members.len() as f64;
                c[1] += e.coords[i][1] / members.len() as f64;
            }
            c
        })
        .collect();
    for i in 0..l {
        let dist = |c: &[f64; 2]| (e.coords[i][0] - c[0]).powi(2) + (e.coords[i][1] - c[1]).powi(2);
        let nearest = (0..3).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
        assert_eq!(nearest, block(i));
    }
    let again = laplacian_eigenmap(&aff, 2).unwrap();
    let bits = |e: &repsim::EmbeddingCoordinates| e.coords.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&e), bits(&again));
}

#[test]
fn distribution_summary_from_similarity() {
    let labels: Vec<String> = (0..3).map(|i| format!("l{i}")).collect();
    let v = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.4, 0.2, 1.0, 0.9, 0.4, 0.9, 1.0]);
    let s = LayerSummary::from_similarity(&sim_from(&labels, v)).unwrap();
    assert_eq!(s.values, vec![0.2, 0.4, 0.9]);
    assert_eq!(s.summary.median, 0.4);
}
