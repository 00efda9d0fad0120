//! Minimal decoder-only transformer.
//!
//! Pre-norm residual blocks (RMSNorm), multi-head causal self-attention with
//! rotary position embeddings, and a feed-forward sublayer that is either
//! gated (`silu(W_gate x) * (W_up x)`) or plain (`gelu(W_in x)`). The
//! activation-function output of the FFN is the neuron tensor: it is what
//! [`ActivationCapture`] records and what an [`FfnHook`] may rewrite, before
//! the gated product and the down-projection.
//!
//! Tensor order, used both for seeded initialization and for the weight
//! file, is:
//!
//! ```text
//! embed                       [vocab, d_model]
//! for each layer i:
//!   layers.i.attn_norm        [d_model]
//!   layers.i.wq/wk/wv/wo      [d_model, d_model]
//!   layers.i.ffn_norm         [d_model]
//!   layers.i.w_gate           [d_ff, d_model]   (gelu: layers.i.w_in)
//!   layers.i.w_up             [d_ff, d_model]   (gated only)
//!   layers.i.w_down           [d_model, d_ff]
//! final_norm                  [d_model]
//! lm_head                     [vocab, d_model]
//! ```
//!
//! Matrices are row-major `[out, in]`. Norm gains start at 1.0; every other
//! tensor is drawn from N(0, 0.02) in the order above.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, TokenSequence, Tokenizer, BYTE_VOCAB};

const NORM_EPS: f32 = 1e-5;
const ROPE_BASE: f64 = 10_000.0;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FfnKind {
    #[serde(rename = "gated-silu")]
    GatedSilu,
    #[serde(rename = "gelu")]
    Gelu,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Neurons per layer.
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub ffn_kind: FfnKind,
    pub rng_seed: u64,
}

impl ModelConfig {
    /// 4 layers, d_model 64, 4 heads, 256 neurons per layer.
    pub fn toy(seed: u64) -> Self {
        ModelConfig {
            n_layers: 4,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            vocab_size: BYTE_VOCAB,
            max_seq_len: 256,
            ffn_kind: FfnKind::GatedSilu,
            rng_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(Error::Config(format!(
                "head dimension {} must be even for rotary embeddings",
                self.head_dim()
            )));
        }
        if self.vocab_size < BYTE_VOCAB {
            return Err(Error::Config(format!(
                "vocab_size {} is below {BYTE_VOCAB} (256 bytes + 3 specials)",
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Total FFN neurons across all layers.
    pub fn n_neurons(&self) -> usize {
        self.n_layers * self.d_ff
    }

    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.max_seq_len)
    }

    pub fn check_neuron(&self, id: NeuronId) -> Result<()> {
        if id.layer < self.n_layers && id.unit < self.d_ff {
            Ok(())
        } else {
            Err(Error::Addressing {
                layer: id.layer,
                unit: id.unit,
                n_layers: self.n_layers,
                d_ff: self.d_ff,
            })
        }
    }
}

/// `(layer, unit)` address of one FFN neuron. Serialized as `[layer, unit]`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct NeuronId {
    pub layer: usize,
    pub unit: usize,
}

impl NeuronId {
    pub const fn new(layer: usize, unit: usize) -> Self {
        NeuronId { layer, unit }
    }

    /// Layer-major flat index.
    pub fn flat(self, d_ff: usize) -> usize {
        self.layer * d_ff + self.unit
    }

    pub fn from_flat(index: usize, d_ff: usize) -> Self {
        NeuronId {
            layer: index / d_ff,
            unit: index % d_ff,
        }
    }
}

impl From<[usize; 2]> for NeuronId {
    fn from([layer, unit]: [usize; 2]) -> Self {
        NeuronId { layer, unit }
    }
}

impl From<NeuronId> for [usize; 2] {
    fn from(id: NeuronId) -> Self {
        [id.layer, id.unit]
    }
}

impl std::fmt::Display for NeuronId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.layer, self.unit)
    }
}

/// Rewrites FFN activation-function outputs during a forward pass.
pub trait FfnHook: Sync {
    /// Rejects hooks that address neurons the model does not have.
    fn check(&self, _config: &ModelConfig) -> Result<()> {
        Ok(())
    }

    /// Called once per (layer, position) with the `d_ff` activations.
    fn apply(&self, layer: usize, position: usize, activations: &mut [f32]);
}

/// Per-layer, per-position FFN activations, shape `(n_layers, seq_len, d_ff)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCapture {
    n_layers: usize,
    seq_len: usize,
    d_ff: usize,
    data: Vec<f32>,
}

impl ActivationCapture {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_layers, self.seq_len, self.d_ff)
    }

    pub fn at(&self, layer: usize, position: usize) -> &[f32] {
        let start = (layer * self.seq_len + position) * self.d_ff;
        &self.data[start..start + self.d_ff]
    }

    pub fn value(&self, neuron: NeuronId, position: usize) -> f32 {
        self.at(neuron.layer, position)[neuron.unit]
    }
}

/// Next-token logits for every position, shape `(seq_len, vocab)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    seq_len: usize,
    vocab: usize,
    data: Vec<f32>,
}

impl Logits {
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, position: usize) -> &[f32] {
        &self.data[position * self.vocab..(position + 1) * self.vocab]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn log_softmax(&self, position: usize) -> Vec<f64> {
        log_softmax(self.row(position))
    }
}

/// Log-softmax with max subtraction, evaluated in f64 over f32 logits.
pub fn log_softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let sum: f64 = logits.iter().map(|&x| (x as f64 - max).exp()).sum();
    let log_z = max + sum.ln();
    logits.iter().map(|&x| x as f64 - log_z).collect()
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Logits,
    pub capture: Option<ActivationCapture>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Block {
    pub(crate) attn_norm: Vec<f32>,
    pub(crate) wq: Vec<f32>,
    pub(crate) wk: Vec<f32>,
    pub(crate) wv: Vec<f32>,
    pub(crate) wo: Vec<f32>,
    pub(crate) ffn_norm: Vec<f32>,
    /// `w_gate` for gated FFNs, `w_in` for gelu.
    pub(crate) w_gate: Vec<f32>,
    pub(crate) w_up: Option<Vec<f32>>,
    pub(crate) w_down: Vec<f32>,
}

/// Named view of one weight tensor.
#[derive(Debug, Clone, Copy)]
pub struct TensorRef<'a> {
    pub name: &'a str,
    pub shape: [usize; 2],
    pub data: &'a [f32],
}

/// Immutable after construction; `Sync`, so concurrent forwards on a shared
/// model are fine.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub(crate) config: ModelConfig,
    pub(crate) embed: Vec<f32>,
    pub(crate) blocks: Vec<Block>,
    pub(crate) final_norm: Vec<f32>,
    pub(crate) lm_head: Vec<f32>,
    names: Vec<String>,
    rope_cos: Vec<f32>,
    rope_sin: Vec<f32>,
}

fn tensor_names(config: &ModelConfig) -> Vec<String> {
    let mut names = vec!["embed".to_string()];
    for i in 0..config.n_layers {
        for part in ["attn_norm", "wq", "wk", "wv", "wo", "ffn_norm"] {
            names.push(format!("layers.{i}.{part}"));
        }
        match config.ffn_kind {
            FfnKind::GatedSilu => {
                names.push(format!("layers.{i}.w_gate"));
                names.push(format!("layers.{i}.w_up"));
            }
            FfnKind::Gelu => names.push(format!("layers.{i}.w_in")),
        }
        names.push(format!("layers.{i}.w_down"));
    }
    names.push("final_norm".to_string());
    names.push("lm_head".to_string());
    names
}

/// Shapes in tensor order. 1-D tensors are `[n, 1]`.
pub fn tensor_layout(config: &ModelConfig) -> Vec<(String, [usize; 2])> {
    let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
    tensor_names(config)
        .into_iter()
        .map(|name| {
            let part = name.rsplit('.').next().unwrap_or(&name).to_string();
            let shape = match part.as_str() {
                "embed" | "lm_head" => [v, d],
                "attn_norm" | "ffn_norm" | "final_norm" => [d, 1],
                "wq" | "wk" | "wv" | "wo" => [d, d],
                "w_gate" | "w_up" | "w_in" => [f, d],
                "w_down" => [d, f],
                other => unreachable!("unknown tensor {other}"),
            };
            (name, shape)
        })
        .collect()
}

fn is_norm(name: &str) -> bool {
    name.ends_with("norm")
}

impl Model {
    /// Seeded N(0, 0.02) initialization; norm gains are 1.0.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let tensors = tensor_layout(&config)
            .into_iter()
            .map(|(name, [r, c])| {
                let data = if is_norm(&name) {
                    vec![1.0f32; r * c]
                } else {
                    (0..r * c).map(|_| normal.sample(&mut rng) as f32).collect()
                };
                (name, data)
            })
            .collect();
        Self::from_tensors(config, tensors)
    }

    /// All matrices zero and norm gains 1.0: every logit is exactly 0.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let tensors = tensor_layout(&config)
            .into_iter()
            .map(|(name, [r, c])| {
                let fill = if is_norm(&name) { 1.0 } else { 0.0 };
                (name, vec![fill; r * c])
            })
            .collect();
        Self::from_tensors(config, tensors)
    }

    /// Assembles a model from `(name, data)` pairs given in tensor order.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Vec<f32>)>) -> Result<Self> {
        config.validate()?;
        let layout = tensor_layout(&config);
        if tensors.len() != layout.len() {
            return Err(Error::Config(format!(
                "expected {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter().zip(layout.iter());
        let mut take = || -> Result<Vec<f32>> {
            let ((name, data), (want, [r, c])) = it.next().expect("length checked");
            if &name != want || data.len() != r * c {
                return Err(Error::Config(format!(
                    "tensor {name} ({} values) does not match expected {want} [{r}, {c}]",
                    data.len()
                )));
            }
            Ok(data)
        };
        let embed = take()?;
        let mut blocks = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let attn_norm = take()?;
            let wq = take()?;
            let wk = take()?;
            let wv = take()?;
            let wo = take()?;
            let ffn_norm = take()?;
            let w_gate = take()?;
            let w_up = match config.ffn_kind {
                FfnKind::GatedSilu => Some(take()?),
                FfnKind::Gelu => None,
            };
            let w_down = take()?;
            blocks.push(Block {
                attn_norm,
                wq,
                wk,
                wv,
                wo,
                ffn_norm,
                w_gate,
                w_up,
                w_down,
            });
        }
        let final_norm = take()?;
        let lm_head = take()?;
        let (rope_cos, rope_sin) = rope_tables(&config);
        Ok(Model {
            names: tensor_names(&config),
            config,
            embed,
            blocks,
            final_norm,
            lm_head,
            rope_cos,
            rope_sin,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> Tokenizer {
        self.config.tokenizer()
    }

    /// Tensors in the documented order.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let layout = tensor_layout(&self.config);
        let mut data: Vec<&[f32]> = vec![&self.embed];
        for b in &self.blocks {
            data.extend([
                b.attn_norm.as_slice(),
                &b.wq,
                &b.wk,
                &b.wv,
                &b.wo,
                &b.ffn_norm,
                &b.w_gate,
            ]);
            if let Some(up) = &b.w_up {
                data.push(up);
            }
            data.push(&b.w_down);
        }
        data.push(&self.final_norm);
        data.push(&self.lm_head);
        self.names
            .iter()
            .zip(layout)
            .zip(data)
            .map(|((name, (_, shape)), data)| TensorRef {
                name,
                shape,
                data,
            })
            .collect()
    }

    /// SHA-256 over the config and the little-endian bytes of every tensor.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for t in self.tensors() {
            h.update(t.name.as_bytes());
            for v in t.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Runs the network over `tokens`, optionally rewriting FFN activations
    /// through `hook` and recording them.
    pub fn forward(
        &self,
        tokens: &[TokenId],
        hook: Option<&dyn FfnHook>,
        capture: bool,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        if tokens.is_empty() {
            return Err(Error::Contract("forward needs at least one token".into()));
        }
        if tokens.len() > cfg.max_seq_len {
            return Err(Error::Length {
                len: tokens.len(),
                limit: cfg.max_seq_len,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::Contract(format!(
                "token id {bad} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        if let Some(h) = hook {
            h.check(cfg)?;
        }

        let (d, f, n) = (cfg.d_model, cfg.d_ff, tokens.len());
        let mut x = vec![0f32; n * d];
        for (t, &tok) in tokens.iter().enumerate() {
            let row = tok as usize * d;
            x[t * d..(t + 1) * d].copy_from_slice(&self.embed[row..row + d]);
        }
        let mut captured = capture.then(|| vec![0f32; cfg.n_layers * n * f]);

        let mut normed = vec![0f32; d];
        let mut q = vec![0f32; n * d];
        let mut k = vec![0f32; n * d];
        let mut v = vec![0f32; n * d];
        let mut attn = vec![0f32; d];
        let mut proj = vec![0f32; d];
        let mut scores = vec![0f32; n];
        let mut act = vec![0f32; f];
        let mut up = vec![0f32; f];

        for (layer, block) in self.blocks.iter().enumerate() {
            for t in 0..n {
                rms_norm(&x[t * d..(t + 1) * d], &block.attn_norm, &mut normed);
                matvec(&block.wq, &normed, &mut q[t * d..(t + 1) * d]);
                matvec(&block.wk, &normed, &mut k[t * d..(t + 1) * d]);
                matvec(&block.wv, &normed, &mut v[t * d..(t + 1) * d]);
                self.rope(&mut q[t * d..(t + 1) * d], t);
                self.rope(&mut k[t * d..(t + 1) * d], t);
            }
            for t in 0..n {
                self.attend(&q, &k, &v, t, &mut scores, &mut attn);
                matvec(&block.wo, &attn, &mut proj);
                for (xi, pi) in x[t * d..(t + 1) * d].iter_mut().zip(&proj) {
                    *xi += pi;
                }
            }
            for t in 0..n {
                let xt = &mut x[t * d..(t + 1) * d];
                rms_norm(xt, &block.ffn_norm, &mut normed);
                matvec(&block.w_gate, &normed, &mut act);
                match cfg.ffn_kind {
                    FfnKind::GatedSilu => act.iter_mut().for_each(|a| *a = silu(*a)),
                    FfnKind::Gelu => act.iter_mut().for_each(|a| *a = gelu(*a)),
                }
                if let Some(h) = hook {
                    h.apply(layer, t, &mut act);
                }
                if let Some(buf) = captured.as_mut() {
                    let start = (layer * n + t) * f;
                    buf[start..start + f].copy_from_slice(&act);
                }
                if let Some(w_up) = &block.w_up {
                    matvec(w_up, &normed, &mut up);
                    act.iter_mut().zip(&up).for_each(|(a, u)| *a *= u);
                }
                matvec(&block.w_down, &act, &mut proj);
                xt.iter_mut().zip(&proj).for_each(|(xi, pi)| *xi += pi);
            }
        }

        let vocab = cfg.vocab_size;
        let mut logits = vec![0f32; n * vocab];
        for t in 0..n {
            rms_norm(&x[t * d..(t + 1) * d], &self.final_norm, &mut normed);
            matvec(&self.lm_head, &normed, &mut logits[t * vocab..(t + 1) * vocab]);
        }
        Ok(ForwardOutput {
            logits: Logits {
                seq_len: n,
                vocab,
                data: logits,
            },
            capture: captured.map(|data| ActivationCapture {
                n_layers: cfg.n_layers,
                seq_len: n,
                d_ff: f,
                data,
            }),
        })
    }

    /// Sum of next-token log-probabilities of `continuation` after `prompt`.
    pub fn sequence_logprob(
        &self,
        prompt: &TokenSequence,
        continuation: &[TokenId],
        hook: Option<&dyn FfnHook>,
    ) -> Result<f64> {
        if continuation.is_empty() {
            return Err(Error::Contract(
                "sequence_logprob needs a continuation of at least one token".into(),
            ));
        }
        if prompt.is_empty() {
            return Err(Error::Contract("prompt must contain at least BOS".into()));
        }
        let mut ids = prompt.ids().to_vec();
        ids.extend_from_slice(continuation);
        let out = self.forward(&ids, hook, false)?;
        let start = prompt.len() - 1;
        Ok(continuation
            .iter()
            .enumerate()
            .map(|(i, &tok)| out.logits.log_softmax(start + i)[tok as usize])
            .sum())
    }

    fn rope(&self, vec: &mut [f32], position: usize) {
        let hd = self.config.head_dim();
        let half = hd / 2;
        let cos = &self.rope_cos[position * half..(position + 1) * half];
        let sin = &self.rope_sin[position * half..(position + 1) * half];
        for head in vec.chunks_exact_mut(hd) {
            for i in 0..half {
                let (a, b) = (head[2 * i], head[2 * i + 1]);
                head[2 * i] = a * cos[i] - b * sin[i];
                head[2 * i + 1] = a * sin[i] + b * cos[i];
            }
        }
    }

    fn attend(&self, q: &[f32], k: &[f32], v: &[f32], t: usize, scores: &mut [f32], out: &mut [f32]) {
        let d = self.config.d_model;
        let hd = self.config.head_dim();
        let scale = 1.0 / (hd as f32).sqrt();
        out.iter_mut().for_each(|o| *o = 0.0);
        for h in 0..self.config.n_heads {
            let off = h * hd;
            let qh = &q[t * d + off..t * d + off + hd];
            let mut max = f32::NEG_INFINITY;
            for s in 0..=t {
                let kh = &k[s * d + off..s * d + off + hd];
                let dot: f32 = qh.iter().zip(kh).map(|(a, b)| a * b).sum();
                scores[s] = dot * scale;
                max = max.max(scores[s]);
            }
            let mut sum = 0f32;
            for s in scores.iter_mut().take(t + 1) {
                *s = (*s - max).exp();
                sum += *s;
            }
            let oh = &mut out[off..off + hd];
            for s in 0..=t {
                let w = scores[s] / sum;
                let vh = &v[s * d + off..s * d + off + hd];
                oh.iter_mut().zip(vh).for_each(|(o, x)| *o += w * x);
            }
        }
    }
}

fn rope_tables(config: &ModelConfig) -> (Vec<f32>, Vec<f32>) {
    let half = config.head_dim() / 2;
    let mut cos = Vec::with_capacity(config.max_seq_len * half);
    let mut sin = Vec::with_capacity(config.max_seq_len * half);
    for pos in 0..config.max_seq_len {
        for i in 0..half {
            let freq = ROPE_BASE.powf(-2.0 * i as f64 / config.head_dim() as f64);
            let angle = pos as f64 * freq;
            cos.push(angle.cos() as f32);
            sin.push(angle.sin() as f32);
        }
    }
    (cos, sin)
}

pub(crate) fn rms_norm(x: &[f32], gain: &[f32], out: &mut [f32]) {
    let ms = x.iter().map(|v| v * v).sum::<f32>() / x.len() as f32;
    let inv = 1.0 / (ms + NORM_EPS).sqrt();
    for ((o, xi), g) in out.iter_mut().zip(x).zip(gain) {
        *o = xi * inv * g;
    }
}

fn matvec(w: &[f32], x: &[f32], out: &mut [f32]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

#[inline]
pub(crate) fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

#[inline]
fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{byte_token, BOS};

    fn small(seed: u64) -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            vocab_size: BYTE_VOCAB,
            max_seq_len: 32,
            ffn_kind: FfnKind::GatedSilu,
            rng_seed: seed,
        }
    }

    struct SetUnit(NeuronId, f32);

    impl FfnHook for SetUnit {
        fn check(&self, config: &ModelConfig) -> Result<()> {
            config.check_neuron(self.0)
        }
        fn apply(&self, layer: usize, _position: usize, acts: &mut [f32]) {
            if layer == self.0.layer {
                acts[self.0.unit] = self.1;
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = small(1);
        c.n_heads = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = small(1);
        c.vocab_size = 258;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = small(1);
        c.d_ff = 0;
        assert!(matches!(Model::init(c), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Model::init(small(1)).unwrap();
        let b = Model::init(small(1)).unwrap();
        let c = Model::init(small(2)).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn capture_has_expected_dims() {
        let m = Model::init(small(3)).unwrap();
        let out = m.forward(&[BOS, byte_token(b'a'), byte_token(b'b')], None, true).unwrap();
        assert_eq!(out.capture.unwrap().dims(), (2, 3, 32));
        assert_eq!(out.logits.seq_len(), 3);
    }

    #[test]
    fn out_of_range_neuron_is_rejected() {
        let m = Model::init(small(3)).unwrap();
        let hook = SetUnit(NeuronId::new(0, 32), 0.0);
        assert!(matches!(
            m.forward(&[BOS], Some(&hook), false),
            Err(Error::Addressing { unit: 32, .. })
        ));
        let hook = SetUnit(NeuronId::new(2, 0), 0.0);
        assert!(matches!(
            m.forward(&[BOS], Some(&hook), false),
            Err(Error::Addressing { layer: 2, .. })
        ));
    }

    #[test]
    fn too_long_sequence_is_rejected() {
        let m = Model::init(small(3)).unwrap();
        let ids = vec![BOS; 33];
        assert!(matches!(m.forward(&ids, None, false), Err(Error::Length { len: 33, limit: 32 })));
    }

    #[test]
    fn zeroing_a_unit_shows_in_capture() {
        let m = Model::init(small(4)).unwrap();
        let hook = SetUnit(NeuronId::new(0, 5), 0.0);
        let ids: Vec<_> = b"hello".iter().map(|&b| byte_token(b)).collect();
        let out = m.forward(&ids, Some(&hook), true).unwrap();
        let cap = out.capture.unwrap();
        for t in 0..ids.len() {
            assert_eq!(cap.value(NeuronId::new(0, 5), t), 0.0);
        }
    }

    #[test]
    fn later_tokens_do_not_change_earlier_logits() {
        let m = Model::init(small(5)).unwrap();
        let a: Vec<_> = b"abcdef".iter().map(|&b| byte_token(b)).collect();
        let mut b = a.clone();
        b[4] = byte_token(b'z');
        b[5] = byte_token(b'q');
        let la = m.forward(&a, None, false).unwrap().logits;
        let lb = m.forward(&b, None, false).unwrap().logits;
        for t in 0..4 {
            assert_eq!(la.row(t), lb.row(t));
        }
        assert_ne!(la.row(4), lb.row(4));
    }

    #[test]
    fn gelu_variant_runs() {
        let mut c = small(6);
        c.ffn_kind = FfnKind::Gelu;
        let m = Model::init(c).unwrap();
        assert_eq!(m.tensors().len(), 1 + 2 * 8 + 2);
        let out = m.forward(&[BOS, byte_token(b'x')], None, true).unwrap();
        assert!(out.logits.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_logits_give_uniform_logprob() {
        let m = Model::zeroed(small(0)).unwrap();
        let tok = m.tokenizer();
        let lp = m
            .sequence_logprob(&tok.tokenize(b"ab").unwrap(), &[byte_token(b'c')], None)
            .unwrap();
        assert!((lp + (259f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn empty_continuation_is_a_contract_error() {
        let m = Model::zeroed(small(0)).unwrap();
        let p = m.tokenizer().tokenize(b"ab").unwrap();
        assert!(matches!(m.sequence_logprob(&p, &[], None), Err(Error::Contract(_))));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn neuron_id_serializes_as_pair() {
        let id = NeuronId::new(3, 7);
        assert_eq!(serde_json::to_string(&id).unwrap(), "[3,7]");
        assert_eq!(serde_json::from_str::<NeuronId>("[3,7]").unwrap(), id);
        assert_eq!(NeuronId::from_flat(id.flat(10), 10), id);
    }
}
