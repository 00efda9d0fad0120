//! LAPE arithmetic, planted-neuron recovery and set overlap.

use std::collections::{BTreeMap, BTreeSet};

use neurosteer_core::corpus::LanguageProfile;
use neurosteer_core::identify::*;
use neurosteer_core::NeuronId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Deserialize)]
struct Reference {
    cases: Vec<RefCase>,
}

#[derive(Deserialize)]
struct RefCase {
    p: Vec<f64>,
    lape: f64,
}

#[test]
fn entropy_extremes() {
    for n in 2..=10 {
        let (_, h) = normalized_entropy(&vec![0.37; n]);
        assert!((h - (n as f64).ln()).abs() < 1e-9);
        let mut one_hot = vec![0.0; n];
        one_hot[n / 2] = 0.8;
        let (norm, h) = normalized_entropy(&one_hot);
        assert_eq!(h, 0.0);
        assert_eq!(norm[n / 2], 1.0);
    }
}

#[test]
fn entropy_matches_high_precision_reference() {
    let reference: Reference =
        serde_json::from_str(include_str!("data/lape_reference.json")).unwrap();
    assert_eq!(reference.cases.len(), 1000);
    for case in &reference.cases {
        let (_, h) = normalized_entropy(&case.p);
        assert!((h - case.lape).abs() < 1e-9, "{:?}: {h} vs {}", case.p, case.lape);
    }
}

#[test]
fn lape_is_permutation_invariant_across_languages() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let mut p: Vec<f64> = (0..6).map(|_| rng.random()).collect();
        let (_, a) = normalized_entropy(&p);
        p.reverse();
        p.rotate_left(2);
        let (_, b) = normalized_entropy(&p);
        assert!((a - b).abs() < 1e-12);
    }
}

const LANGS: [&str; 6] = ["l0", "l1", "l2", "l3", "l4", "l5"];
const TOKENS: u64 = 1000;

/// Profiles whose activation probabilities are `probs[j][k]`, expressed as
/// counts over 1000 tokens.
fn profiles_from(n_layers: usize, d_ff: usize, probs: &[Vec<f64>]) -> Vec<LanguageProfile> {
    (0..probs[0].len())
        .map(|k| {
            let mut p = LanguageProfile::empty(LANGS[k], "planted", n_layers, d_ff, false);
            for (j, row) in probs.iter().enumerate() {
                p.token_count[j] = TOKENS;
                p.positive_count[j] = (row[k] * TOKENS as f64).round() as u64;
            }
            p
        })
        .collect()
}

#[test]
fn planted_one_hot_neurons_are_recovered_exactly() {
    let (n_layers, d_ff, per_lang) = (2, 500, 10);
    let n = n_layers * d_ff;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut probs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..LANGS.len()).map(|_| rng.random_range(0.05..0.5)).collect())
        .collect();
    let mut planted: BTreeMap<&str, BTreeSet<NeuronId>> = BTreeMap::new();
    let mut pool: Vec<usize> = (0..n).collect();
    for (k, lang) in LANGS.iter().enumerate() {
        for _ in 0..per_lang {
            let j = pool.swap_remove(rng.random_range(0..pool.len()));
            probs[j] = vec![0.0; LANGS.len()];
            probs[j][k] = 0.9;
            planted.entry(lang).or_default().insert(NeuronId::from_flat(j, d_ff));
        }
    }
    let table = lape_scores(&profiles_from(n_layers, d_ff, &probs)).unwrap();
    let cfg = IdentifyConfig {
        prob_percentile: 95.0,
        lape_bottom_fraction: (per_lang * LANGS.len()) as f64 / n as f64,
    };
    let got = select_lape_neurons(&table, &cfg).unwrap();
    assert_eq!(got.thresholds.budget, Some(60));
    for lang in LANGS {
        let found = got.neurons(lang).unwrap();
        let want = &planted[lang];
        let tp = found.intersection(want).count() as f64;
        assert_eq!(tp / found.len() as f64, 1.0, "precision for {lang}");
        assert_eq!(tp / want.len() as f64, 1.0, "recall for {lang}");
    }
}

#[test]
fn baseline_requires_every_sentence_mean_positive() {
    let mut p = LanguageProfile::empty("aa", "x", 1, 3, false);
    p.sentence_means = vec![vec![0.2, 0.2], vec![0.2, 0.0], vec![]];
    p.sentences_seen = 2;
    let a = select_baseline_neurons(&[p]).unwrap();
    assert_eq!(a.neurons("aa").unwrap().iter().copied().collect::<Vec<_>>(), [NeuronId::new(0, 0)]);
}

#[test]
fn jaccard_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let languages: Vec<String> = LANGS[..5].iter().map(|s| s.to_string()).collect();
    for _ in 0..20 {
        // Sets over a 64-neuron universe, mirrored as bitmasks.
        let masks: Vec<u64> = (0..5)
            .map(|i| if i == 4 { 0 } else { rng.random::<u64>() & rng.random::<u64>() })
            .collect();
        let sets = languages
            .iter()
            .zip(&masks)
            .map(|(l, &m)| {
                let set = (0..64).filter(|b| m >> b & 1 == 1).map(|b| NeuronId::new(b / 16, b % 16)).collect();
                (l.clone(), set)
            })
            .collect();
        let assignment = NeuronSetAssignment {
            method: Method::Lape,
            languages: languages.clone(),
            sets,
            thresholds: Thresholds::default(),
            warnings: vec![],
        };
        let m = jaccard_overlap(&assignment);
        for (i, a) in masks.iter().enumerate() {
            for (j, b) in masks.iter().enumerate() {
                let union = (a | b).count_ones();
                let want = if union == 0 { 0.0 } else { (a & b).count_ones() as f64 / union as f64 };
                assert_eq!(m.values[i][j], Some(want));
                assert_eq!(m.values[i][j], m.values[j][i]);
            }
        }
    }
}
