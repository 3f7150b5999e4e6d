//! Planted-structure checks: the generator's ground truth is the oracle.

use std::collections::BTreeMap;

use repsim::synth::{generate, layer_stack, perturb, FamilySpec, DEFAULT_LAYER};
use repsim::{
    finetune_drift, layer_distribution, nearest_neighbors, pairwise_similarity, stats, SimilarityMatrix, Strategy,
    SvccaOptions,
};

fn planted(seed: u64, sigma: f64) -> FamilySpec {
    FamilySpec {
        families: FamilySpec::grid(3, 4),
        n: 500,
        d: 32,
        d_latent: 8,
        alpha: 1.0,
        beta: 0.2,
        sigma,
        seed,
        layer: DEFAULT_LAYER.into(),
    }
}

fn within_and_cross(sim: &SimilarityMatrix, truth: &BTreeMap<String, String>) -> (f64, f64) {
    let (mut w, mut c) = (Vec::new(), Vec::new());
    for i in 0..sim.len() {
        for j in i + 1..sim.len() {
            let v = sim.values[(i, j)];
            if truth[&sim.labels[i]] == truth[&sim.labels[j]] {
                w.push(v);
            } else {
                c.push(v);
            }
        }
    }
    (w.iter().sum::<f64>() / w.len() as f64, c.iter().sum::<f64>() / c.len() as f64)
}

#[test]
fn same_family_ranks_above_other_families() {
    for seed in [1, 2, 3] {
        let data = generate(&planted(seed, 0.05)).unwrap();
        let sim = pairwise_similarity(&data.set, DEFAULT_LAYER, Strategy::MeanPool, &SvccaOptions::default()).unwrap();
        sim.validate().unwrap();
        for lang in &sim.labels {
            let ranked = nearest_neighbors(&sim, lang, sim.len() - 1).unwrap();
            let family = &data.families[lang];
            let in_family = ranked.iter().take_while(|n| &data.families[&n.language] == family).count();
            assert_eq!(in_family, 3, "seed {seed}, {lang}: {ranked:?}");
        }
        let (w, c) = within_and_cross(&sim, &data.families);
        assert!(w > c);
    }
}

#[test]
fn noiseless_family_members_are_identical_up_to_mixing() {
    let mut spec = planted(4, 0.0);
    spec.beta = 0.0;
    let data = generate(&spec).unwrap();
    let opts = SvccaOptions::default();
    let a = data.set.pooled("f1l0", DEFAULT_LAYER).unwrap();
    let b = data.set.pooled("f1l3", DEFAULT_LAYER).unwrap();
    let score = repsim::svcca_score(a, b, &opts).unwrap().mean_correlation;
    assert!((score - 1.0).abs() < 1e-5, "{score}");
}

#[test]
fn within_family_score_falls_with_noise() {
    let sigmas = [0.1, 0.3, 1.0];
    let mut means = [0.0; 3];
    for seed in 0..10 {
        for (k, &sigma) in sigmas.iter().enumerate() {
            let data = generate(&planted(seed, sigma)).unwrap();
            let sim =
                pairwise_similarity(&data.set, DEFAULT_LAYER, Strategy::MeanPool, &SvccaOptions::default()).unwrap();
            means[k] += within_and_cross(&sim, &data.families).0 / 10.0;
        }
    }
    assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
}

#[test]
fn layer_stack_mean_increases_with_shared_fraction() {
    let mut spec = planted(5, 0.05);
    spec.d_latent = 10;
    let data = layer_stack(&spec, &[0.2, 0.4, 0.6, 0.8]).unwrap();
    let summaries =
        layer_distribution(&data.set, data.set.layers(), Strategy::MeanPool, &SvccaOptions::default()).unwrap();
    let means: Vec<f64> = summaries.iter().map(|s| s.summary.mean).collect();
    assert!(means.windows(2).all(|w| w[1] > w[0]), "{means:?}");
    for s in &summaries {
        // Summary statistics recomputed from the emitted values.
        let mut v = s.values.clone();
        v.sort_by(f64::total_cmp);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((s.summary.mean - mean).abs() < 1e-12);
        assert_eq!(s.summary.min, v[0]);
        assert_eq!(s.summary.max, v[v.len() - 1]);
        assert_eq!(s.histogram.counts.iter().sum::<usize>(), v.len());
        assert_eq!(s.values.len(), 66);
    }
}

#[test]
fn drift_order_follows_injected_noise() {
    let data = generate(&planted(6, 0.05)).unwrap();
    let langs = &data.set.languages()[..5];
    let sigmas = [0.05, 0.2, 0.5, 1.0, 2.0];
    let levels: BTreeMap<String, f64> = langs.iter().cloned().zip(sigmas).collect();
    let after = perturb(&data.set, &levels, 99).unwrap();
    let report = finetune_drift(&data.set, &after, DEFAULT_LAYER, &SvccaOptions::default()).unwrap();
    let drift: Vec<f64> = langs.iter().map(|l| report.score_of(l).unwrap()).collect();
    let rho = stats::spearman(&sigmas, &drift).unwrap();
    assert_eq!(rho, -1.0, "{drift:?}");
    for l in &data.set.languages()[5..] {
        assert_eq!(report.score_of(l), Some(1.0));
    }
}

#[test]
fn smaller_perturbation_drifts_less() {
    let data = generate(&planted(7, 0.05)).unwrap();
    let levels = BTreeMap::from([("f0l0".to_string(), 0.1), ("f0l1".to_string(), 0.5)]);
    let after = perturb(&data.set, &levels, 5).unwrap();
    let report = finetune_drift(&data.set, &after, DEFAULT_LAYER, &SvccaOptions::default()).unwrap();
    assert!(report.score_of("f0l0").unwrap() > report.score_of("f0l1").unwrap());
}
