//! Steering behaviour of the hand-wired bilingual model.

use std::collections::BTreeMap;

use neurosteer_core::corpus::{accumulate_profile, LanguageProfile};
use neurosteer_core::eval::perplexity;
use neurosteer_core::identify::{lape_scores, select_lape_neurons, IdentifyConfig, NeuronSetAssignment};
use neurosteer_core::lss::{filter_probes, lss_score, ProbeSet};
use neurosteer_core::steer::build_plan;
use neurosteer_core::synthetic::*;
use neurosteer_core::{FactorKind, Model};

struct Lab {
    model: Model,
    data: SyntheticData,
    profiles: Vec<LanguageProfile>,
    assignment: NeuronSetAssignment,
    probes: ProbeSet,
}

fn langs() -> Vec<String> {
    vec![LANG_A.to_string(), LANG_B.to_string()]
}

fn lab() -> Lab {
    let model = build_synthetic_bilingual_model(&synthetic_config(0), DEFAULT_BOOST).unwrap();
    let data = generate(&DataSpec::default());
    let profiles: Vec<_> = data
        .corpora
        .iter()
        .map(|c| accumulate_profile(&model, c, true).unwrap())
        .collect();
    let table = lape_scores(&profiles).unwrap();
    let assignment = select_lape_neurons(&table, &IdentifyConfig::default()).unwrap();
    let probes = filter_probes(data.probes.clone(), &langs());
    Lab { model, data, profiles, assignment, probes }
}

fn profile<'a>(lab: &'a Lab, lang: &str) -> &'a LanguageProfile {
    lab.profiles.iter().find(|p| p.language == lang).unwrap()
}

fn plan(lab: &Lab, kind: FactorKind, lang: &str) -> neurosteer_core::SteeringPlan {
    build_plan(kind, profile(lab, lang), lab.assignment.neurons(lang).unwrap()).unwrap()
}

#[test]
fn identification_recovers_the_wired_neurons() {
    let lab = lab();
    assert_eq!(lab.assignment.neurons(LANG_A).unwrap().iter().copied().collect::<Vec<_>>(), [NEURON_A]);
    assert_eq!(lab.assignment.neurons(LANG_B).unwrap().iter().copied().collect::<Vec<_>>(), [NEURON_B]);
}

#[test]
fn factor_ordering() {
    let lab = lab();
    let mut means = BTreeMap::new();
    for kind in FactorKind::ALL {
        let mut scores = Vec::new();
        for (src, tgt) in [(LANG_A, LANG_B), (LANG_B, LANG_A)] {
            let items: Vec<_> = lab.probes.for_language(src).cloned().collect();
            assert!(items.len() >= 200);
            let r = lss_score(&lab.model, &items, src, tgt, &plan(&lab, kind, tgt)).unwrap();
            scores.push(r.score);
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        eprintln!("{kind}: {scores:?} mean {mean}");
        means.insert(kind.name(), mean);
    }
    let m = |k: &str| means[k];
    assert!(m("pmax") >= 0.90);
    assert!(m("eq_10p") <= 0.10);
    assert!(m("pmax") >= m("pmedian"));
    assert!(m("pmedian") > m("eq_max"));
    assert!(m("eq_max") >= m("plus_max"));
    assert!(m("plus_max") > m("eq_zero"));
    assert!(m("eq_zero") > m("eq_10p"));
}

#[test]
fn self_amplification_does_not_raise_perplexity() {
    let lab = lab();
    for corpus in &lab.data.corpora {
        let own = corpus.language.as_str();
        let foreign = if own == LANG_A { LANG_B } else { LANG_A };
        let clean = perplexity(&lab.model, corpus, None).unwrap();
        let selfp = perplexity(&lab.model, corpus, Some(&plan(&lab, FactorKind::Pmax, own))).unwrap();
        let cross = perplexity(&lab.model, corpus, Some(&plan(&lab, FactorKind::Pmax, foreign))).unwrap();
        eprintln!("{own}: clean {clean} self {selfp} cross {cross}");
        assert!(selfp <= clean);
        assert!(cross > clean);
    }
}
