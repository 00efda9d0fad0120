//! Language-specific (LAPE) and language-activated (baseline) neuron sets.
//!
//! LAPE: per neuron, the activation probabilities `p̂_k` over languages are
//! L1-normalized to `p'` and scored by entropy `-Σ p'_k ln p'_k`. Neurons
//! whose largest `p̂` clears the `m`-th percentile of every pooled `p̂` are
//! candidates; the lowest-entropy candidates, up to a fraction `n` of all
//! neurons, are selected and assigned to each language whose `p̂` clears
//! the threshold.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::LanguageProfile;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, NeuronId};
use crate::stats;
use crate::table::LabeledMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifyConfig {
    /// `m`: percentile (0, 100) of pooled activation probabilities.
    pub prob_percentile: f64,
    /// `n`: fraction (0, 1] of all neurons kept by lowest LAPE.
    pub lape_bottom_fraction: f64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        IdentifyConfig {
            prob_percentile: 95.0,
            lape_bottom_fraction: 0.01,
        }
    }
}

impl IdentifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.prob_percentile > 0.0 && self.prob_percentile < 100.0) {
            return Err(Error::Config(format!(
                "prob_percentile {} must lie in (0, 100)",
                self.prob_percentile
            )));
        }
        if !(self.lape_bottom_fraction > 0.0 && self.lape_bottom_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "lape_bottom_fraction {} must lie in (0, 1]",
                self.lape_bottom_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lape,
    Baseline,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lape" => Ok(Method::Lape),
            "baseline" => Ok(Method::Baseline),
            other => Err(Error::Config(format!(
                "unknown identification method {other:?} (expected lape or baseline)"
            ))),
        }
    }
}

/// Per-neuron probabilities, normalized probabilities and LAPE scores.
/// Rows are neurons in layer-major order; columns follow `languages`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapeTable {
    pub languages: Vec<String>,
    pub n_layers: usize,
    pub d_ff: usize,
    pub probabilities: Vec<Vec<f64>>,
    pub normalized: Vec<Vec<f64>>,
    pub lape: Vec<f64>,
}

/// `-Σ p ln p` over the L1-normalized vector, with `0 ln 0 = 0`. Returns the
/// normalized vector and the entropy; an all-zero input stays all-zero with
/// entropy 0.
pub fn normalized_entropy(probs: &[f64]) -> (Vec<f64>, f64) {
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return (vec![0.0; probs.len()], 0.0);
    }
    let normalized: Vec<f64> = probs.iter().map(|p| p / total).collect();
    let entropy = -normalized
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>();
    (normalized, entropy.max(0.0))
}

impl LapeTable {
    pub fn from_probabilities(
        languages: Vec<String>,
        n_layers: usize,
        d_ff: usize,
        probabilities: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if probabilities.len() != n_layers * d_ff {
            return Err(Error::Contract(format!(
                "{} probability rows for {n_layers}x{d_ff} neurons",
                probabilities.len()
            )));
        }
        if let Some(bad) = probabilities.iter().find(|r| r.len() != languages.len()) {
            return Err(Error::Contract(format!(
                "probability row of length {} for {} languages",
                bad.len(),
                languages.len()
            )));
        }
        let (normalized, lape) = probabilities
            .iter()
            .map(|p| normalized_entropy(p))
            .unzip();
        Ok(LapeTable {
            languages,
            n_layers,
            d_ff,
            probabilities,
            normalized,
            lape,
        })
    }

    pub fn n_neurons(&self) -> usize {
        self.probabilities.len()
    }
}

/// Builds the LAPE table from one profile per language.
pub fn lape_scores(profiles: &[LanguageProfile]) -> Result<LapeTable> {
    if profiles.len() < 2 {
        return Err(Error::Contract(format!(
            "LAPE needs at least two languages, got {}",
            profiles.len()
        )));
    }
    let (n_layers, d_ff) = (profiles[0].n_layers, profiles[0].d_ff);
    if let Some(p) = profiles.iter().find(|p| (p.n_layers, p.d_ff) != (n_layers, d_ff)) {
        return Err(Error::Contract(format!(
            "profile {:?} has dimensions {}x{}, expected {n_layers}x{d_ff}",
            p.language, p.n_layers, p.d_ff
        )));
    }
    let n = n_layers * d_ff;
    let mut probabilities = vec![Vec::with_capacity(profiles.len()); n];
    for p in profiles {
        for (j, row) in probabilities.iter_mut().enumerate() {
            let prob = p.activation_probability(j).ok_or_else(|| {
                Error::DataSufficiency(format!(
                    "language {:?} has no scored tokens for neuron {}",
                    p.language,
                    NeuronId::from_flat(j, d_ff)
                ))
            })?;
            row.push(prob);
        }
    }
    let languages = profiles.iter().map(|p| p.language.clone()).collect();
    LapeTable::from_probabilities(languages, n_layers, d_ff, probabilities)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Thresholds {
    pub prob_percentile: Option<f64>,
    pub lape_bottom_fraction: Option<f64>,
    /// Activation-probability threshold τ derived from the percentile.
    pub prob_threshold: Option<f64>,
    /// Selection budget derived from the bottom fraction.
    pub budget: Option<usize>,
}

/// Language → identified neurons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronSetAssignment {
    pub method: Method,
    pub languages: Vec<String>,
    pub sets: BTreeMap<String, BTreeSet<NeuronId>>,
    pub thresholds: Thresholds,
    pub warnings: Vec<String>,
}

impl NeuronSetAssignment {
    pub fn neurons(&self, language: &str) -> Option<&BTreeSet<NeuronId>> {
        self.sets.get(language)
    }

    pub fn validate_for(&self, config: &ModelConfig) -> Result<()> {
        self.sets
            .values()
            .flatten()
            .try_for_each(|&id| config.check_neuron(id))
    }

    pub fn is_empty(&self) -> bool {
        self.sets.values().all(BTreeSet::is_empty)
    }

    /// `language,layer,unit` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("language,layer,unit\n");
        for lang in &self.languages {
            for id in self.sets.get(lang).into_iter().flatten() {
                out.push_str(&format!("{lang},{},{}\n", id.layer, id.unit));
            }
        }
        out
    }
}

/// Lowest-LAPE candidates, tie-broken by `(layer, unit)`.
pub fn select_lape_neurons(table: &LapeTable, cfg: &IdentifyConfig) -> Result<NeuronSetAssignment> {
    cfg.validate()?;
    let pool: Vec<f64> = table.probabilities.iter().flatten().copied().collect();
    let tau = stats::percentile(&pool, cfg.prob_percentile).unwrap_or(0.0);

    let mut candidates: Vec<(usize, Vec<usize>)> = table
        .probabilities
        .iter()
        .enumerate()
        .filter_map(|(j, probs)| {
            let langs: Vec<usize> = probs
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0 && p >= tau)
                .map(|(k, _)| k)
                .collect();
            (!langs.is_empty()).then_some((j, langs))
        })
        .collect();
    candidates.sort_by(|a, b| table.lape[a.0].total_cmp(&table.lape[b.0]).then(a.0.cmp(&b.0)));

    let budget = ((cfg.lape_bottom_fraction * table.n_neurons() as f64) - 1e-9).ceil() as usize;
    let mut sets: BTreeMap<String, BTreeSet<NeuronId>> = table
        .languages
        .iter()
        .map(|l| (l.clone(), BTreeSet::new()))
        .collect();
    for (j, langs) in candidates.iter().take(budget) {
        let id = NeuronId::from_flat(*j, table.d_ff);
        for &k in langs {
            sets.get_mut(&table.languages[k])
                .expect("language present")
                .insert(id);
        }
    }
    let mut warnings = Vec::new();
    if candidates.is_empty() {
        warnings.push(format!(
            "no neuron has an activation probability at or above the threshold {tau}"
        ));
    }
    Ok(NeuronSetAssignment {
        method: Method::Lape,
        languages: table.languages.clone(),
        sets,
        thresholds: Thresholds {
            prob_percentile: Some(cfg.prob_percentile),
            lape_bottom_fraction: Some(cfg.lape_bottom_fraction),
            prob_threshold: Some(tau),
            budget: Some(budget),
        },
        warnings,
    })
}

/// A neuron belongs to language `k` when its token-mean activation is
/// strictly positive on every sentence of `k`.
pub fn select_baseline_neurons(profiles: &[LanguageProfile]) -> Result<NeuronSetAssignment> {
    let mut sets = BTreeMap::new();
    let mut warnings = Vec::new();
    for p in profiles {
        let mut set = BTreeSet::new();
        if p.sentences_seen == 0 {
            warnings.push(format!("language {:?} has no sentences", p.language));
        } else {
            for (j, means) in p.sentence_means.iter().enumerate() {
                if !means.is_empty() && means.iter().all(|&m| m > 0.0) {
                    set.insert(NeuronId::from_flat(j, p.d_ff));
                }
            }
        }
        sets.insert(p.language.clone(), set);
    }
    Ok(NeuronSetAssignment {
        method: Method::Baseline,
        languages: profiles.iter().map(|p| p.language.clone()).collect(),
        sets,
        thresholds: Thresholds::default(),
        warnings,
    })
}

/// Jaccard index `|S_k ∩ S_l| / |S_k ∪ S_l|` for every language pair; two
/// empty sets give 0.
pub fn jaccard_overlap(assignment: &NeuronSetAssignment) -> LabeledMatrix {
    let empty = BTreeSet::new();
    let set = |l: &String| assignment.sets.get(l).unwrap_or(&empty);
    let values = assignment
        .languages
        .iter()
        .map(|a| {
            assignment
                .languages
                .iter()
                .map(|b| {
                    let (sa, sb) = (set(a), set(b));
                    let inter = sa.intersection(sb).count();
                    let union = sa.len() + sb.len() - inter;
                    Some(if union == 0 {
                        0.0
                    } else {
                        inter as f64 / union as f64
                    })
                })
                .collect()
        })
        .collect();
    LabeledMatrix {
        name: "jaccard_index".into(),
        row_label: "language".into(),
        col_label: "language".into(),
        rows: assignment.languages.clone(),
        cols: assignment.languages.clone(),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn langs(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("l{i}")).collect()
    }

    fn lape_of(p: &[f64]) -> f64 {
        normalized_entropy(p).1
    }

    #[test]
    fn uniform_and_one_hot() {
        assert!((lape_of(&[0.5, 0.5, 0.5]) - 3f64.ln()).abs() < 1e-12);
        let (n, e) = normalized_entropy(&[0.8, 0.0, 0.0]);
        assert_eq!(n, [1.0, 0.0, 0.0]);
        assert_eq!(e, 0.0);
        assert_eq!(normalized_entropy(&[0.0, 0.0]), (vec![0.0, 0.0], 0.0));
    }

    #[test]
    fn scale_and_permutation_invariance() {
        let p = [0.1, 0.4, 0.2, 0.05];
        let scaled: Vec<f64> = p.iter().map(|x| x * 2.5).collect();
        let perm = [0.2, 0.05, 0.1, 0.4];
        assert!((lape_of(&p) - lape_of(&scaled)).abs() < 1e-12);
        assert!((lape_of(&p) - lape_of(&perm)).abs() < 1e-12);
    }

    #[test]
    fn needs_two_languages_and_tokens() {
        let p = LanguageProfile::empty("aa", "m", 1, 1, false);
        assert!(matches!(lape_scores(std::slice::from_ref(&p)), Err(Error::Contract(_))));
        match lape_scores(&[p.clone(), p]) {
            Err(Error::DataSufficiency(msg)) => assert!(msg.contains("aa")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn degenerate_single_neuron() {
        let t = LapeTable::from_probabilities(langs(2), 1, 1, vec![vec![1.0, 0.0]]).unwrap();
        let cfg = IdentifyConfig {
            prob_percentile: 95.0,
            lape_bottom_fraction: 1.0,
        };
        let a = select_lape_neurons(&t, &cfg).unwrap();
        assert_eq!(a.sets["l0"], BTreeSet::from([NeuronId::new(0, 0)]));
        assert!(a.sets["l1"].is_empty());
        assert_eq!(a.thresholds.prob_threshold, Some(0.95));
    }

    #[test]
    fn identical_vectors_break_ties_by_address() {
        let probs = vec![vec![0.3, 0.6]; 8];
        let t = LapeTable::from_probabilities(langs(2), 2, 4, probs).unwrap();
        let cfg = IdentifyConfig {
            prob_percentile: 95.0,
            lape_bottom_fraction: 0.25,
        };
        let a = select_lape_neurons(&t, &cfg).unwrap();
        assert_eq!(
            a.sets["l1"],
            BTreeSet::from([NeuronId::new(0, 0), NeuronId::new(0, 1)])
        );
        assert!(a.sets["l0"].is_empty());
    }

    #[test]
    fn no_candidates_is_a_warning() {
        let t = LapeTable::from_probabilities(langs(2), 1, 2, vec![vec![0.0; 2]; 2]).unwrap();
        let a = select_lape_neurons(&t, &IdentifyConfig::default()).unwrap();
        assert!(a.is_empty());
        assert_eq!(a.warnings.len(), 1);
    }

    #[test]
    fn config_bounds() {
        for (m, n) in [(0.0, 0.5), (100.0, 0.5), (50.0, 0.0), (50.0, 1.5)] {
            let cfg = IdentifyConfig {
                prob_percentile: m,
                lape_bottom_fraction: n,
            };
            assert!(cfg.validate().is_err(), "{m} {n}");
        }
    }

    fn profile(lang: &str, means: Vec<Vec<f64>>) -> LanguageProfile {
        let mut p = LanguageProfile::empty(lang, "m", 1, means.len(), false);
        p.sentences_seen = means[0].len() as u64;
        p.sentence_means = means;
        p
    }

    #[test]
    fn baseline_uses_strict_positivity() {
        let p = profile("aa", vec![vec![0.2, 0.2, 0.2], vec![0.2, 0.0, 0.3]]);
        let a = select_baseline_neurons(&[p]).unwrap();
        assert_eq!(a.sets["aa"], BTreeSet::from([NeuronId::new(0, 0)]));
    }

    #[test]
    fn jaccard_textbook_values() {
        let a = NeuronSetAssignment {
            method: Method::Baseline,
            languages: langs(3),
            sets: BTreeMap::from([
                ("l0".into(), BTreeSet::from([NeuronId::new(0, 1), NeuronId::new(0, 2)])),
                ("l1".into(), BTreeSet::from([NeuronId::new(0, 2), NeuronId::new(0, 3)])),
                ("l2".into(), BTreeSet::new()),
            ]),
            thresholds: Thresholds::default(),
            warnings: vec![],
        };
        let m = jaccard_overlap(&a);
        assert_eq!(m.get("l0", "l1"), Some(1.0 / 3.0));
        assert_eq!(m.get("l1", "l0"), Some(1.0 / 3.0));
        assert_eq!(m.get("l0", "l0"), Some(1.0));
        assert_eq!(m.get("l2", "l2"), Some(0.0));
        assert_eq!(m.get("l0", "l2"), Some(0.0));
    }
}
