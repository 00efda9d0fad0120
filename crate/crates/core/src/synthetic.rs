//! Hand-wired bilingual model and seeded data with known ground truth.
//!
//! Language `aa` writes with bytes `a..=m`, language `bb` with `n..=z`; both
//! share the separators in [`SHARED`]. In the model, attention adds nothing
//! to the residual stream and layer 0 holds two live neurons:
//!
//! * `N_A` (unit 0) fires positively on `aa` letters, is exactly 0 on `bb`
//!   letters and other bytes, and slightly negative on shared separators;
//! * `N_B` (unit 1) mirrors it for `bb`.
//!
//! Each live neuron writes `boost` per unit of activation into a readout
//! direction that the LM head maps onto every letter of its alphabet. All
//! other neurons are inert (exactly 0).
//!
//! Since the final RMSNorm divides by the residual norm, `log p(b) − log p(a)`
//! for letters `a ∈ aa`, `b ∈ bb` equals `s·boost·(N_B − N_A)/rms`. It
//! strictly increases with `N_B` whenever `N_A ≥ 0`, or more generally while
//! `‖embedding‖²/(d·boost²) + N_A² + N_A·N_B > 0`; with the constants below
//! that holds for every `N_B` below ~60.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Sentence};
use crate::error::{Error, Result};
use crate::eval::{McItem, TranslationPair};
use crate::lss::ProbeItem;
use crate::model::{rms_norm, tensor_layout, FfnKind, Model, ModelConfig, NeuronId};
use crate::tokenizer::{byte_token, EOS, BYTE_VOCAB};

pub const LANG_A: &str = "aa";
pub const LANG_B: &str = "bb";
pub const ALPHABET_A: RangeInclusive<u8> = b'a'..=b'm';
pub const ALPHABET_B: RangeInclusive<u8> = b'n'..=b'z';
/// Separators used by both languages.
pub const SHARED: &[u8] = b" .,;:!?-";

pub const NEURON_A: NeuronId = NeuronId::new(0, 0);
pub const NEURON_B: NeuronId = NeuronId::new(0, 1);
pub const DEFAULT_BOOST: f32 = 4.0;

// Residual directions.
const DIM_CONST: usize = 0;
const DIM_A: usize = 1;
const DIM_B: usize = 2;
const DIM_SHARED: usize = 3;
const DIM_OTHER: usize = 4;
const DIM_READ_A: usize = 5;
const DIM_READ_B: usize = 6;
const MIN_D_MODEL: usize = 7;

const EMBED_CONST: f32 = 16.0;
const EMBED_GROUP: f32 = 4.0;
/// Gate pre-activation on an own-alphabet letter.
const GATE_ON: f32 = 2.0;
/// Gate pre-activation on a shared separator.
const GATE_SHARED: f32 = -1.5;
const LOGIT_SHARED: f32 = 2.0;
const LOGIT_EOS: f32 = -2.0;
const LOGIT_OTHER: f32 = -6.0;

/// 2 layers, d_model 16, 2 heads, 128 neurons per layer.
pub fn synthetic_config(seed: u64) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 2,
        d_ff: 128,
        vocab_size: BYTE_VOCAB,
        max_seq_len: 128,
        ffn_kind: FfnKind::GatedSilu,
        rng_seed: seed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Group {
    A,
    B,
    Shared,
    Other,
}

fn group_of_token(id: usize) -> Group {
    match crate::tokenizer::token_byte(id as u32) {
        Some(b) if ALPHABET_A.contains(&b) => Group::A,
        Some(b) if ALPHABET_B.contains(&b) => Group::B,
        Some(b) if SHARED.contains(&b) => Group::Shared,
        _ => Group::Other,
    }
}

fn group_dim(g: Group) -> usize {
    match g {
        Group::A => DIM_A,
        Group::B => DIM_B,
        Group::Shared => DIM_SHARED,
        Group::Other => DIM_OTHER,
    }
}

/// Builds the hand-wired bilingual model. `config` must use a gated-SiLU
/// FFN with `d_model ≥ 7` and `d_ff ≥ 2`; `rng_seed` is unused.
pub fn build_synthetic_bilingual_model(config: &ModelConfig, boost: f32) -> Result<Model> {
    config.validate()?;
    if config.ffn_kind != FfnKind::GatedSilu {
        return Err(Error::Config("the synthetic model needs a gated-silu FFN".into()));
    }
    if config.d_model < MIN_D_MODEL {
        return Err(Error::Config(format!(
            "the synthetic model needs d_model >= {MIN_D_MODEL}, got {}",
            config.d_model
        )));
    }
    if config.d_ff < 2 {
        return Err(Error::Config("the synthetic model needs d_ff >= 2".into()));
    }
    if !(boost.is_finite() && boost > 0.0) {
        return Err(Error::Config(format!("boost must be positive, got {boost}")));
    }
    let bytes_fit = [*ALPHABET_A.end(), *ALPHABET_B.end()]
        .iter()
        .chain(SHARED)
        .all(|&b| (byte_token(b) as usize) < config.vocab_size);
    if !bytes_fit {
        return Err(Error::Config("alphabets are not representable in the vocabulary".into()));
    }

    let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
    let mut embed = vec![0f32; v * d];
    for tok in 0..v {
        embed[tok * d + DIM_CONST] = EMBED_CONST;
        embed[tok * d + group_dim(group_of_token(tok))] = EMBED_GROUP;
    }
    // Every embedding has the same norm, so the normalized coordinates are
    // shared by all tokens.
    let mut normed = vec![0f32; d];
    rms_norm(&embed[..d], &vec![1.0; d], &mut normed);
    let (hat_const, hat_group) = (normed[DIM_CONST], normed[DIM_OTHER]);
    let embed_rms = EMBED_CONST / hat_const;

    let mut w_gate = vec![0f32; f * d];
    let mut w_up = vec![0f32; f * d];
    let mut w_down = vec![0f32; d * f];
    for (unit, own, read) in [(NEURON_A.unit, DIM_A, DIM_READ_A), (NEURON_B.unit, DIM_B, DIM_READ_B)] {
        w_gate[unit * d + own] = GATE_ON / hat_group;
        w_gate[unit * d + DIM_SHARED] = GATE_SHARED / hat_group;
        w_up[unit * d + DIM_CONST] = 1.0 / hat_const;
        w_down[read * f + unit] = boost;
    }

    let mut lm_head = vec![0f32; v * d];
    for tok in 0..v {
        let row = &mut lm_head[tok * d..(tok + 1) * d];
        match group_of_token(tok) {
            Group::A => row[DIM_READ_A] = embed_rms,
            Group::B => row[DIM_READ_B] = embed_rms,
            Group::Shared => row[DIM_CONST] = LOGIT_SHARED / hat_const,
            Group::Other if tok == EOS as usize => row[DIM_CONST] = LOGIT_EOS / hat_const,
            Group::Other => row[DIM_CONST] = LOGIT_OTHER / hat_const,
        }
    }

    let tensors = tensor_layout(config)
        .into_iter()
        .map(|(name, [r, c])| {
            let data = match name.as_str() {
                "embed" => embed.clone(),
                "lm_head" => lm_head.clone(),
                "layers.0.w_gate" => w_gate.clone(),
                "layers.0.w_up" => w_up.clone(),
                "layers.0.w_down" => w_down.clone(),
                n if n.ends_with("norm") => vec![1.0; r * c],
                _ => vec![0.0; r * c],
            };
            (name, data)
        })
        .collect();
    Model::from_tensors(config.clone(), tensors)
}

/// Sizes and rates for [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub sentences_per_lang: usize,
    pub probes_per_lang: usize,
    pub mc_per_lang: usize,
    pub translations_per_lang: usize,
    /// Probability that a probe prompt contains a word of the other language.
    pub loanword_rate: f64,
    /// Probability that a probe prompt ends on a shared separator.
    pub separator_ending_rate: f64,
    pub seed: u64,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            sentences_per_lang: 60,
            probes_per_lang: 240,
            mc_per_lang: 100,
            translations_per_lang: 20,
            loanword_rate: 0.5,
            separator_ending_rate: 0.25,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub corpora: Vec<Corpus>,
    pub probes: Vec<ProbeItem>,
    pub mc: Vec<McItem>,
    /// Per target language, pairs whose source is the other language.
    pub translations: Vec<(String, Vec<TranslationPair>)>,
}

fn alphabet(lang: &str) -> RangeInclusive<u8> {
    if lang == LANG_A {
        ALPHABET_A
    } else {
        ALPHABET_B
    }
}

fn other(lang: &str) -> &'static str {
    if lang == LANG_A {
        LANG_B
    } else {
        LANG_A
    }
}

fn letter(rng: &mut impl Rng, alphabet: &RangeInclusive<u8>) -> u8 {
    rng.random_range(alphabet.clone())
}

fn word(rng: &mut impl Rng, alphabet: &RangeInclusive<u8>) -> String {
    let len = rng.random_range(2..=7);
    (0..len).map(|_| letter(rng, alphabet) as char).collect()
}

fn words(rng: &mut impl Rng, alphabet: &RangeInclusive<u8>, range: RangeInclusive<usize>) -> Vec<String> {
    let n = rng.random_range(range);
    (0..n).map(|_| word(rng, alphabet)).collect()
}

/// A sentence of 4 to 9 words with occasional commas, ending in a period.
fn sentence(rng: &mut impl Rng, alphabet: &RangeInclusive<u8>) -> String {
    let ws = words(rng, alphabet, 4..=9);
    let mut out = String::new();
    for (i, w) in ws.iter().enumerate() {
        if i > 0 {
            out.push_str(if rng.random_bool(0.1) { ", " } else { " " });
        }
        out.push_str(w);
    }
    out.push('.');
    out
}

/// Maps `a..=m` onto `n..=z` and back; other bytes pass through.
pub fn rot13(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            'a'..='m' => (c as u8 + 13) as char,
            'n'..='z' => (c as u8 - 13) as char,
            _ => c,
        })
        .collect()
}

/// Seeded corpora, probes, multiple-choice items and translation pairs for
/// the two synthetic languages.
pub fn generate(spec: &DataSpec) -> SyntheticData {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let langs = [LANG_A, LANG_B];

    let corpora = langs
        .iter()
        .map(|&lang| {
            let alpha = alphabet(lang);
            let sentences = (0..spec.sentences_per_lang)
                .map(|i| Sentence {
                    id: format!("{lang}-s{i:04}"),
                    text: sentence(&mut rng, &alpha),
                })
                .collect();
            Corpus::new(lang, sentences)
        })
        .collect();

    let mut probes = Vec::new();
    for &lang in &langs {
        let (own, foreign) = (alphabet(lang), alphabet(other(lang)));
        for i in 0..spec.probes_per_lang {
            let mut ws = words(&mut rng, &own, 3..=6);
            if rng.random_bool(spec.loanword_rate) {
                let at = rng.random_range(0..ws.len());
                ws[at] = word(&mut rng, &foreign);
            }
            let mut prompt = ws.join(" ");
            if rng.random_bool(spec.separator_ending_rate) {
                prompt.push(' ');
            } else {
                // End on an own-alphabet letter even when the last word was
                // borrowed.
                prompt.push(letter(&mut rng, &own) as char);
            }
            let answers = [
                (lang.to_string(), (letter(&mut rng, &own) as char).to_string()),
                (other(lang).to_string(), (letter(&mut rng, &foreign) as char).to_string()),
            ]
            .into_iter()
            .collect();
            probes.push(ProbeItem {
                id: format!("{lang}-p{i:04}"),
                prompt_lang: lang.to_string(),
                prompt,
                answers,
            });
        }
    }

    let mut mc = Vec::new();
    for &lang in &langs {
        let (own, foreign) = (alphabet(lang), alphabet(other(lang)));
        for i in 0..spec.mc_per_lang {
            let prompt = format!("{} ", words(&mut rng, &own, 3..=6).join(" "));
            let correct = (letter(&mut rng, &own) as char).to_string();
            let wrong = (letter(&mut rng, &foreign) as char).to_string();
            let label = rng.random_range(0..2usize);
            let options = if label == 0 { vec![correct, wrong] } else { vec![wrong, correct] };
            mc.push(McItem {
                id: format!("{lang}-q{i:04}"),
                lang: lang.to_string(),
                prompt,
                options,
                label,
            });
        }
    }

    let translations = langs
        .iter()
        .map(|&target| {
            let source = alphabet(other(target));
            let pairs = (0..spec.translations_per_lang)
                .map(|i| {
                    let src = words(&mut rng, &source, 2..=4).join(" ");
                    TranslationPair {
                        id: format!("{target}-t{i:04}"),
                        reference: rot13(&src),
                        src,
                    }
                })
                .collect();
            (target.to_string(), pairs)
        })
        .collect();

    SyntheticData {
        corpora,
        probes,
        mc,
        translations,
    }
}

/// Per-language corpora over disjoint 8-byte alphabets, for up to 6
/// languages named `l0`, `l1`, ...
pub fn multilingual_corpora(n_langs: usize, sentences_per_lang: usize, seed: u64) -> Vec<Corpus> {
    const ALPHABETS: [RangeInclusive<u8>; 6] = [
        b'a'..=b'h',
        b'i'..=b'p',
        b'q'..=b'x',
        b'A'..=b'H',
        b'I'..=b'P',
        b'Q'..=b'X',
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ALPHABETS
        .iter()
        .take(n_langs)
        .enumerate()
        .map(|(i, alpha)| {
            let lang = format!("l{i}");
            let sentences = (0..sentences_per_lang)
                .map(|j| Sentence {
                    id: format!("{lang}-{j:04}"),
                    text: sentence(&mut rng, alpha),
                })
                .collect();
            Corpus::new(lang, sentences)
        })
        .collect()
}
