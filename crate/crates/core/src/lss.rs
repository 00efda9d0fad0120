//! Probe items and the language steering shift (LSS) score.
//!
//! For a prompt in source language `k` and target language `l`,
//! `δ = log p(answer_l) − log p(answer_k)`. LSS is the fraction of items
//! where `δ` under the intervention is strictly greater than `δ` on the
//! clean model.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::model::Model;
use crate::steer::{FactorKind, Intervention, SteeringPlan};
use crate::table::LabeledMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeItem {
    pub id: String,
    pub prompt_lang: String,
    pub prompt: String,
    pub answers: BTreeMap<String, String>,
}

impl ProbeItem {
    fn has_duplicate_answers(&self) -> bool {
        let mut seen = HashSet::new();
        !self.answers.values().all(|a| seen.insert(a))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbeSet {
    pub items: Vec<ProbeItem>,
    /// Items dropped because two languages share an answer string.
    pub dropped_duplicates: usize,
    /// Items dropped because their prompt language has no answer in the set.
    pub dropped_incomplete: usize,
}

impl ProbeSet {
    pub fn for_language<'a>(&'a self, lang: &'a str) -> impl Iterator<Item = &'a ProbeItem> + 'a {
        self.items.iter().filter(move |i| i.prompt_lang == lang)
    }
}

/// Reads probe JSONL, keeps items whose prompt language is in `languages`,
/// restricts answers to `languages`, and drops items with any repeated
/// answer string.
pub fn load_probes(path: impl AsRef<Path>, languages: &[String]) -> Result<ProbeSet> {
    let rows: Vec<(usize, ProbeItem)> = jsonl::read(path.as_ref())?;
    Ok(filter_probes(rows.into_iter().map(|(_, item)| item), languages))
}

pub fn filter_probes(items: impl IntoIterator<Item = ProbeItem>, languages: &[String]) -> ProbeSet {
    let wanted: BTreeSet<&str> = languages.iter().map(String::as_str).collect();
    let mut set = ProbeSet::default();
    for mut item in items {
        if !wanted.contains(item.prompt_lang.as_str()) {
            continue;
        }
        item.answers.retain(|lang, _| wanted.contains(lang.as_str()));
        if !item.answers.contains_key(&item.prompt_lang) {
            set.dropped_incomplete += 1;
        } else if item.has_duplicate_answers() {
            set.dropped_duplicates += 1;
        } else {
            set.items.push(item);
        }
    }
    set
}

pub fn write_probes(path: impl AsRef<Path>, items: &[ProbeItem]) -> Result<()> {
    jsonl::write(path.as_ref(), items)
}

fn answer<'a>(item: &'a ProbeItem, lang: &str) -> Result<&'a str> {
    item.answers
        .get(lang)
        .map(String::as_str)
        .ok_or_else(|| Error::Data(format!("probe {:?} has no answer in {lang:?}", item.id)))
}

/// Raw summed log-probabilities of the source and target answers.
fn answer_logprobs(
    model: &Model,
    item: &ProbeItem,
    source: &str,
    target: &str,
    plan: Option<&SteeringPlan>,
) -> Result<(f64, f64)> {
    if source == target {
        return Err(Error::Contract(format!(
            "source and target language are both {source:?}"
        )));
    }
    let (ans_k, ans_l) = (answer(item, source)?, answer(item, target)?);
    let tok = model.tokenizer();
    let prompt = tok.tokenize(item.prompt.as_bytes())?;
    let hook = plan
        .map(|p| {
            p.check(model.config())?;
            Intervention::for_input(model, p, prompt.ids())
        })
        .transpose()?;
    let hook_ref = hook.as_ref().map(|h| h as &dyn crate::model::FfnHook);
    let lp = |text: &str| {
        if text.is_empty() {
            return Err(Error::Data(format!("probe {:?} has an empty answer", item.id)));
        }
        model.sequence_logprob(&prompt, &tok.encode_continuation(text.as_bytes()), hook_ref)
    };
    Ok((lp(ans_k)?, lp(ans_l)?))
}

/// `δ = log p(answer_target) − log p(answer_source)` under `plan` (clean
/// model when `None`). Multi-token answers are scored by their summed
/// log-probability.
pub fn answer_delta(
    model: &Model,
    item: &ProbeItem,
    source: &str,
    target: &str,
    plan: Option<&SteeringPlan>,
) -> Result<f64> {
    let (k, l) = answer_logprobs(model, item, source, target, plan)?;
    Ok(l - k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaPair {
    pub id: String,
    pub clean: f64,
    pub intervened: f64,
}

impl DeltaPair {
    pub fn shifted(&self) -> bool {
        self.intervened - self.clean > 0.0
    }
}

/// Fraction of pairs whose δ strictly increased; ties count as failures.
pub fn score_pairs(pairs: &[DeltaPair]) -> f64 {
    pairs.iter().filter(|p| p.shifted()).count() as f64 / pairs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LssResult {
    pub source_lang: String,
    pub intervention_lang: String,
    pub kind: FactorKind,
    pub n_items: usize,
    pub score: f64,
    pub pairs: Vec<DeltaPair>,
}

/// LSS of prompts in `source` under an intervention on `target`'s neurons.
pub fn lss_score(
    model: &Model,
    items: &[ProbeItem],
    source: &str,
    target: &str,
    plan: &SteeringPlan,
) -> Result<LssResult> {
    if items.is_empty() {
        return Err(Error::Contract(format!(
            "no probe items for source language {source:?}"
        )));
    }
    if plan.lang != target {
        return Err(Error::Contract(format!(
            "plan targets {:?} but the intervention language is {target:?}",
            plan.lang
        )));
    }
    if let Some(item) = items.iter().find(|i| i.prompt_lang != source) {
        return Err(Error::Contract(format!(
            "probe {:?} is in {:?}, expected {source:?}",
            item.id, item.prompt_lang
        )));
    }
    let pairs = items
        .par_iter()
        .map(|item| {
            Ok(DeltaPair {
                id: item.id.clone(),
                clean: answer_delta(model, item, source, target, None)?,
                intervened: answer_delta(model, item, source, target, Some(plan))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LssResult {
        source_lang: source.to_string(),
        intervention_lang: target.to_string(),
        kind: plan.kind,
        n_items: pairs.len(),
        score: score_pairs(&pairs),
        pairs,
    })
}

/// Source × intervention matrix of scores; pairs without a result (including
/// the diagonal) are undefined.
pub fn lss_matrix(kind: FactorKind, languages: &[String], results: &[LssResult]) -> LabeledMatrix {
    let values = languages
        .iter()
        .map(|k| {
            languages
                .iter()
                .map(|l| {
                    results
                        .iter()
                        .find(|r| &r.source_lang == k && &r.intervention_lang == l && r.kind == kind)
                        .map(|r| r.score)
                })
                .collect()
        })
        .collect();
    LabeledMatrix {
        name: format!("lss_{kind}"),
        row_label: "source".into(),
        col_label: "intervention".into(),
        rows: languages.to_vec(),
        cols: languages.to_vec(),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn item(id: &str, answers: &[(&str, &str)]) -> ProbeItem {
        ProbeItem {
            id: id.into(),
            prompt_lang: "aa".into(),
            prompt: "abc ".into(),
            answers: answers.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    fn langs() -> Vec<String> {
        vec!["aa".into(), "bb".into()]
    }

    #[test]
    fn duplicate_answers_are_dropped() {
        let set = filter_probes(
            [item("1", &[("aa", "X"), ("bb", "X")]), item("2", &[("aa", "X"), ("bb", "Y")])],
            &langs(),
        );
        assert_eq!(set.items.len(), 1);
        assert_eq!(set.items[0].id, "2");
        assert_eq!(set.dropped_duplicates, 1);
    }

    #[test]
    fn answers_outside_the_language_set_do_not_count() {
        let set = filter_probes([item("1", &[("aa", "X"), ("bb", "Y"), ("cc", "X")])], &langs());
        assert_eq!(set.items.len(), 1);
        assert_eq!(set.items[0].answers.len(), 2);
    }

    #[test]
    fn missing_field_reports_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"1","prompt_lang":"aa","prompt":"x","answers":{{"aa":"a"}}}}"#).unwrap();
        writeln!(f, r#"{{"id":"2","prompt_lang":"aa","answers":{{"aa":"a"}}}}"#).unwrap();
        assert!(matches!(
            load_probes(f.path(), &langs()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn strict_inequality_and_shift_invariance() {
        let pair = |c: f64, i: f64| DeltaPair {
            id: String::new(),
            clean: c,
            intervened: i,
        };
        let pairs = [pair(0.0, 0.0), pair(-1.0, 2.0), pair(1.0, 0.5), pair(0.25, 0.5)];
        assert_eq!(score_pairs(&pairs), 0.5);
        // δ is a difference of the two answers' log-probs: adding a constant
        // to both leaves every δ, and hence every indicator, unchanged.
        let shim = |lp_l: f64, lp_k: f64, c: f64| (lp_l + c) - (lp_k + c);
        let shifted: Vec<_> = [(-3.0, -2.0, -1.5, -2.5), (-1.0, -4.0, -1.0, -4.0)]
            .iter()
            .map(|&(nl, nk, il, ik)| pair(shim(nl, nk, 7.0), shim(il, ik, 7.0)))
            .collect();
        let plain: Vec<_> = [(-3.0, -2.0, -1.5, -2.5), (-1.0, -4.0, -1.0, -4.0)]
            .iter()
            .map(|&(nl, nk, il, ik)| pair(nl - nk, il - ik))
            .collect();
        assert_eq!(
            shifted.iter().map(DeltaPair::shifted).collect::<Vec<_>>(),
            plain.iter().map(DeltaPair::shifted).collect::<Vec<_>>()
        );
    }
}
