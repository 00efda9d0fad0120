//! Per-language corpora and streaming activation statistics.
//!
//! A [`LanguageProfile`] accumulates, for every FFN neuron, how many scored
//! tokens it saw, how many of them activated it strictly above zero, the
//! token-mean activation of each sentence, and optionally every per-token
//! value. BOS and the other special positions are not scored.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::model::{Model, NeuronId};
use crate::tokenizer::is_special;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub language: String,
    pub sentences: Vec<Sentence>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRow {
    id: String,
    lang: String,
    text: String,
}

/// Language label of a corpus ingested without a filter from a file that
/// mixes languages.
pub const MIXED: &str = "*";

impl Corpus {
    pub fn new(language: impl Into<String>, sentences: Vec<Sentence>) -> Self {
        Corpus {
            language: language.into(),
            sentences,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Writes `{"id", "lang", "text"}` rows.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        jsonl::write(
            path.as_ref(),
            self.sentences.iter().map(|s| CorpusRow {
                id: s.id.clone(),
                lang: self.language.clone(),
                text: s.text.clone(),
            }),
        )
    }
}

/// Reads a `{"id", "lang", "text"}` JSONL file, keeping rows whose `lang`
/// matches `expected_lang` (all rows when `None`) in file order.
pub fn ingest_corpus(path: impl AsRef<Path>, expected_lang: Option<&str>) -> Result<Corpus> {
    let path = path.as_ref();
    let rows: Vec<(usize, CorpusRow)> = jsonl::read(path)?;
    let mut seen = HashSet::new();
    let mut langs = HashSet::new();
    let mut sentences = Vec::new();
    for (line, row) in rows {
        if expected_lang.is_some_and(|l| l != row.lang) {
            continue;
        }
        if row.text.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                reason: format!("sentence {:?} has empty text", row.id),
            });
        }
        if !seen.insert(row.id.clone()) {
            return Err(Error::Duplicate {
                path: path.to_path_buf(),
                line,
                id: row.id,
            });
        }
        langs.insert(row.lang);
        sentences.push(Sentence {
            id: row.id,
            text: row.text,
        });
    }
    let language = match expected_lang {
        Some(l) => l.to_string(),
        None if langs.len() == 1 => langs.into_iter().next().expect("one language"),
        None => MIXED.to_string(),
    };
    Ok(Corpus {
        language,
        sentences,
    })
}

/// Streaming per-neuron statistics for one language. Neurons are indexed
/// layer-major (see [`NeuronId::flat`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageProfile {
    pub language: String,
    pub model_fingerprint: String,
    pub n_layers: usize,
    pub d_ff: usize,
    pub token_count: Vec<u64>,
    pub positive_count: Vec<u64>,
    pub sentence_means: Vec<Vec<f64>>,
    pub token_values: Option<Vec<Vec<f32>>>,
    pub sentences_seen: u64,
    /// Sentences skipped because they did not fit the context window.
    pub skipped_sentences: u64,
}

impl LanguageProfile {
    pub fn empty(
        language: impl Into<String>,
        model_fingerprint: impl Into<String>,
        n_layers: usize,
        d_ff: usize,
        store_token_values: bool,
    ) -> Self {
        let n = n_layers * d_ff;
        LanguageProfile {
            language: language.into(),
            model_fingerprint: model_fingerprint.into(),
            n_layers,
            d_ff,
            token_count: vec![0; n],
            positive_count: vec![0; n],
            sentence_means: vec![Vec::new(); n],
            token_values: store_token_values.then(|| vec![Vec::new(); n]),
            sentences_seen: 0,
            skipped_sentences: 0,
        }
    }

    pub fn n_neurons(&self) -> usize {
        self.n_layers * self.d_ff
    }

    pub fn index(&self, neuron: NeuronId) -> Result<usize> {
        if neuron.layer < self.n_layers && neuron.unit < self.d_ff {
            Ok(neuron.flat(self.d_ff))
        } else {
            Err(Error::Addressing {
                layer: neuron.layer,
                unit: neuron.unit,
                n_layers: self.n_layers,
                d_ff: self.d_ff,
            })
        }
    }

    /// Fraction of scored tokens on which the neuron was strictly positive.
    pub fn activation_probability(&self, index: usize) -> Option<f64> {
        match self.token_count[index] {
            0 => None,
            n => Some(self.positive_count[index] as f64 / n as f64),
        }
    }

    pub fn sentence_means_of(&self, neuron: NeuronId) -> Result<&[f64]> {
        Ok(&self.sentence_means[self.index(neuron)?])
    }

    pub fn token_values_of(&self, neuron: NeuronId) -> Result<&[f32]> {
        let idx = self.index(neuron)?;
        match &self.token_values {
            Some(v) => Ok(&v[idx]),
            None => Err(Error::Capability(format!(
                "profile for {:?} holds no per-token values; re-accumulate with token-value storage enabled",
                self.language
            ))),
        }
    }

    /// Adds one sentence's activations. `rows[t]` is the flattened
    /// `(n_layers * d_ff)` activation vector of scored position `t`.
    pub fn observe_sentence<'a>(&mut self, rows: impl Iterator<Item = &'a [f32]> + Clone) {
        let n_tokens = rows.clone().count();
        if n_tokens == 0 {
            return;
        }
        let mut sums = vec![0f64; self.n_neurons()];
        for row in rows {
            for (j, &a) in row.iter().enumerate() {
                self.token_count[j] += 1;
                if a > 0.0 {
                    self.positive_count[j] += 1;
                }
                sums[j] += a as f64;
                if let Some(values) = self.token_values.as_mut() {
                    values[j].push(a);
                }
            }
        }
        for (means, sum) in self.sentence_means.iter_mut().zip(sums) {
            means.push(sum / n_tokens as f64);
        }
        self.sentences_seen += 1;
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = serde_json::to_vec(self)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Runs one clean forward per sentence and accumulates its statistics.
/// Sentences longer than the context window are skipped and counted.
pub fn accumulate_profile(
    model: &Model,
    corpus: &Corpus,
    store_token_values: bool,
) -> Result<LanguageProfile> {
    if corpus.is_empty() {
        return Err(Error::Contract(format!(
            "corpus for {:?} is empty",
            corpus.language
        )));
    }
    accumulate_sentences(model, &corpus.language, &corpus.sentences, store_token_values)
}

fn accumulate_sentences(
    model: &Model,
    language: &str,
    sentences: &[Sentence],
    store_token_values: bool,
) -> Result<LanguageProfile> {
    let cfg = model.config();
    let tok = model.tokenizer();
    let mut profile = LanguageProfile::empty(
        language,
        model.checksum(),
        cfg.n_layers,
        cfg.d_ff,
        store_token_values,
    );
    let mut flat = Vec::new();
    for sentence in sentences {
        let seq = match tok.tokenize(sentence.text.as_bytes()) {
            Ok(seq) => seq,
            Err(Error::Length { len, limit }) => {
                log::warn!(
                    "skipping sentence {:?} ({len} bytes > {limit})",
                    sentence.id
                );
                profile.skipped_sentences += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let out = model.forward(seq.ids(), None, true)?;
        let cap = out.capture.expect("capture requested");
        let positions: Vec<usize> = (0..seq.len())
            .filter(|&t| !is_special(seq.ids()[t]))
            .collect();
        flat.clear();
        for &t in &positions {
            for layer in 0..cfg.n_layers {
                flat.extend_from_slice(cap.at(layer, t));
            }
        }
        let n = profile.n_neurons();
        profile.observe_sentence(flat.chunks_exact(n));
    }
    Ok(profile)
}

/// Shards the corpus, accumulates shards in parallel and merges them in
/// shard order. Equivalent to [`accumulate_profile`].
pub fn accumulate_profile_sharded(
    model: &Model,
    corpus: &Corpus,
    store_token_values: bool,
    shards: usize,
) -> Result<LanguageProfile> {
    if corpus.is_empty() {
        return Err(Error::Contract(format!(
            "corpus for {:?} is empty",
            corpus.language
        )));
    }
    let chunk = corpus.len().div_ceil(shards.max(1));
    let parts: Vec<LanguageProfile> = corpus
        .sentences
        .par_chunks(chunk)
        .map(|s| accumulate_sentences(model, &corpus.language, s, store_token_values))
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let first = iter.next().expect("non-empty corpus");
    iter.try_fold(first, |acc, p| merge_profiles(&acc, &p))
}

/// Sums counts and concatenates value lists (`a`'s values first).
pub fn merge_profiles(a: &LanguageProfile, b: &LanguageProfile) -> Result<LanguageProfile> {
    if a.language != b.language {
        return Err(Error::Merge(format!(
            "language mismatch: {:?} vs {:?}",
            a.language, b.language
        )));
    }
    if (a.n_layers, a.d_ff) != (b.n_layers, b.d_ff) {
        return Err(Error::Merge(format!(
            "dimension mismatch: {}x{} vs {}x{}",
            a.n_layers, a.d_ff, b.n_layers, b.d_ff
        )));
    }
    if a.model_fingerprint != b.model_fingerprint {
        return Err(Error::Merge("profiles come from different models".into()));
    }
    if a.token_values.is_some() != b.token_values.is_some() {
        return Err(Error::Merge(
            "one profile stores per-token values and the other does not".into(),
        ));
    }
    let add = |x: &[u64], y: &[u64]| x.iter().zip(y).map(|(p, q)| p + q).collect::<Vec<_>>();
    let concat = |x: &[Vec<f64>], y: &[Vec<f64>]| {
        x.iter()
            .zip(y)
            .map(|(p, q)| p.iter().chain(q).copied().collect())
            .collect()
    };
    Ok(LanguageProfile {
        language: a.language.clone(),
        model_fingerprint: a.model_fingerprint.clone(),
        n_layers: a.n_layers,
        d_ff: a.d_ff,
        token_count: add(&a.token_count, &b.token_count),
        positive_count: add(&a.positive_count, &b.positive_count),
        sentence_means: concat(&a.sentence_means, &b.sentence_means),
        token_values: match (&a.token_values, &b.token_values) {
            (Some(x), Some(y)) => Some(
                x.iter()
                    .zip(y)
                    .map(|(p, q)| p.iter().chain(q).copied().collect())
                    .collect(),
            ),
            _ => None,
        },
        sentences_seen: a.sentences_seen + b.sentences_seen,
        skipped_sentences: a.skipped_sentences + b.skipped_sentences,
    })
}
