//! Downstream metrics under interventions.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::model::{argmax, FfnHook, Model};
use crate::steer::{steered_forward, Intervention, SteeringPlan};
use crate::table::LabeledMatrix;
use crate::tokenizer::{detokenize, is_special, EOS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McItem {
    pub id: String,
    pub lang: String,
    pub prompt: String,
    pub options: Vec<String>,
    pub label: usize,
}

impl McItem {
    pub fn validate(&self) -> Result<()> {
        if self.options.len() < 2 {
            return Err(Error::Data(format!("item {:?} has fewer than 2 options", self.id)));
        }
        if self.label >= self.options.len() {
            return Err(Error::Data(format!(
                "item {:?} has label {} for {} options",
                self.id,
                self.label,
                self.options.len()
            )));
        }
        if self.options.iter().any(String::is_empty) {
            return Err(Error::Data(format!("item {:?} has an empty option", self.id)));
        }
        Ok(())
    }
}

pub fn load_mc(path: impl AsRef<Path>) -> Result<Vec<McItem>> {
    Ok(jsonl::read(path.as_ref())?.into_iter().map(|(_, i)| i).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationPair {
    pub id: String,
    pub src: String,
    #[serde(rename = "ref")]
    pub reference: String,
}

pub fn load_translations(path: impl AsRef<Path>) -> Result<Vec<TranslationPair>> {
    Ok(jsonl::read(path.as_ref())?.into_iter().map(|(_, p)| p).collect())
}

/// `exp(total NLL / scored tokens)` over every non-BOS position. Sentences
/// longer than the context window are left out.
pub fn perplexity(model: &Model, corpus: &Corpus, plan: Option<&SteeringPlan>) -> Result<f64> {
    let tok = model.tokenizer();
    let per_sentence = corpus
        .sentences
        .par_iter()
        .filter_map(|s| tok.tokenize(s.text.as_bytes()).ok())
        .map(|seq| {
            let ids = seq.ids();
            let out = steered_forward(model, ids, plan, false)?;
            let nll: f64 = (1..ids.len())
                .map(|t| -out.logits.log_softmax(t - 1)[ids[t] as usize])
                .sum();
            Ok((nll, ids.len() as u64 - 1))
        })
        .collect::<Result<Vec<_>>>()?;
    let tokens: u64 = per_sentence.iter().map(|p| p.1).sum();
    if tokens == 0 {
        return Err(Error::Contract(format!(
            "no scored tokens in corpus {:?}",
            corpus.language
        )));
    }
    // Sorted summation keeps the result independent of sentence order.
    let mut nlls: Vec<f64> = per_sentence.into_iter().map(|p| p.0).collect();
    nlls.sort_by(f64::total_cmp);
    Ok((nlls.iter().sum::<f64>() / tokens as f64).exp())
}

/// Index of the option with the highest summed log-probability; ties go to
/// the lowest index.
pub fn mc_predict(model: &Model, item: &McItem, plan: Option<&SteeringPlan>) -> Result<usize> {
    item.validate()?;
    let tok = model.tokenizer();
    let prompt = tok.tokenize(item.prompt.as_bytes())?;
    let hook = plan
        .map(|p| {
            p.check(model.config())?;
            Intervention::for_input(model, p, prompt.ids())
        })
        .transpose()?;
    let scores = item
        .options
        .iter()
        .map(|o| {
            model.sequence_logprob(
                &prompt,
                &tok.encode_continuation(o.as_bytes()),
                hook.as_ref().map(|h| h as &dyn FfnHook),
            )
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn mc_accuracy(model: &Model, items: &[McItem], plan: Option<&SteeringPlan>) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Contract("no multiple-choice items".into()));
    }
    let correct = items
        .par_iter()
        .map(|item| Ok(usize::from(mc_predict(model, item, plan)? == item.label)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / items.len() as f64)
}

/// `values[i][j] = metric(input i, intervention j) − metric(input i, clean)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaMatrix {
    pub name: String,
    pub languages: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub diagonal_mean: Option<f64>,
    pub offdiagonal_mean: Option<f64>,
}

pub fn delta_matrix(
    name: impl Into<String>,
    languages: &[String],
    baseline: &BTreeMap<String, f64>,
    intervened: &BTreeMap<(String, String), f64>,
) -> Result<DeltaMatrix> {
    let mut gaps = Vec::new();
    for i in languages {
        if !baseline.contains_key(i) {
            gaps.push(format!("baseline {i}"));
        }
        for j in languages {
            if !intervened.contains_key(&(i.clone(), j.clone())) {
                gaps.push(format!("{i} x {j}"));
            }
        }
    }
    if !gaps.is_empty() {
        return Err(Error::Completeness(gaps));
    }
    let values: Vec<Vec<f64>> = languages
        .iter()
        .map(|i| {
            languages
                .iter()
                .map(|j| intervened[&(i.clone(), j.clone())] - baseline[i])
                .collect()
        })
        .collect();
    let (mut diag, mut off) = (Vec::new(), Vec::new());
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i == j { diag.push(v) } else { off.push(v) }
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(DeltaMatrix {
        name: name.into(),
        languages: languages.to_vec(),
        diagonal_mean: mean(&diag),
        offdiagonal_mean: mean(&off),
        values,
    })
}

impl DeltaMatrix {
    pub fn to_labeled(&self) -> LabeledMatrix {
        LabeledMatrix {
            name: self.name.clone(),
            row_label: "input".into(),
            col_label: "intervention".into(),
            rows: self.languages.clone(),
            cols: self.languages.clone(),
            values: self
                .values
                .iter()
                .map(|r| r.iter().map(|&v| Some(v)).collect())
                .collect(),
        }
    }
}

/// Argmax decoding (ties to the lowest id) until EOS, the token budget, or
/// the context limit. Returns the generated bytes as text.
pub fn greedy_generate(
    model: &Model,
    prompt: &str,
    plan: Option<&SteeringPlan>,
    max_new_tokens: usize,
) -> Result<String> {
    if max_new_tokens == 0 {
        return Err(Error::Contract("max_new_tokens must be at least 1".into()));
    }
    let prompt = model.tokenizer().tokenize(prompt.as_bytes())?;
    let hook = plan
        .map(|p| {
            p.check(model.config())?;
            Intervention::for_input(model, p, prompt.ids())
        })
        .transpose()?;
    let mut ids = prompt.into_ids();
    let start = ids.len();
    for _ in 0..max_new_tokens {
        if ids.len() >= model.config().max_seq_len {
            break;
        }
        let out = model.forward(&ids, hook.as_ref().map(|h| h as &dyn FfnHook), false)?;
        let next = argmax(out.logits.row(ids.len() - 1)) as u32;
        if next == EOS {
            break;
        }
        ids.push(next);
    }
    let generated: Vec<u32> = ids[start..].iter().copied().filter(|&t| !is_special(t)).collect();
    Ok(String::from_utf8_lossy(&detokenize(&generated)).into_owned())
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Corpus BLEU-4 over whitespace tokens, case-sensitive. Precisions for
/// n ≥ 2 use add-one smoothing; brevity penalty `exp(1 − r/c)` when the
/// hypotheses are shorter than the references.
pub fn bleu(hypotheses: &[String], references: &[String]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let ht: Vec<&str> = h.split_whitespace().collect();
        let rt: Vec<&str> = r.split_whitespace().collect();
        hyp_len += ht.len();
        ref_len += rt.len();
        for n in 1..=4 {
            let hc = ngram_counts(&ht, n);
            let rc = ngram_counts(&rt, n);
            totals[n - 1] += ht.len().saturating_sub(n - 1);
            matches[n - 1] += hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    if hyp_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let log_p: f64 = (0..4)
        .map(|i| {
            let p = if i == 0 {
                matches[0] as f64 / totals[0] as f64
            } else {
                (matches[i] + 1) as f64 / (totals[i] + 1) as f64
            };
            p.ln()
        })
        .sum::<f64>()
        / 4.0;
    let bp = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok(bp * log_p.exp())
}

/// Translation prompt with `{src}` and `{lang}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate(pub String);

impl PromptTemplate {
    pub fn render(&self, src: &str, lang: &str) -> String {
        self.0.replace("{lang}", lang).replace("{src}", src)
    }
}

/// Greedy translations of `pairs` into `target_lang`, scored by BLEU.
pub fn translation_bleu(
    model: &Model,
    pairs: &[TranslationPair],
    template: &PromptTemplate,
    target_lang: &str,
    plan: Option<&SteeringPlan>,
    max_new_tokens: usize,
) -> Result<f64> {
    let hyps = pairs
        .par_iter()
        .map(|p| greedy_generate(model, &template.render(&p.src, target_lang), plan, max_new_tokens))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<String> = pairs.iter().map(|p| p.reference.clone()).collect();
    bleu(&hyps, &refs)
}
