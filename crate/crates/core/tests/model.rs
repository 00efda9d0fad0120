//! Forward-pass behaviour against an independent float64 reference and
//! model-level invariants.

use std::collections::BTreeMap;

use neurosteer_core::model::{log_softmax, FfnKind, FfnHook};
use neurosteer_core::steer::{steered_forward, SteeringPlan};
use neurosteer_core::synthetic::*;
use neurosteer_core::tokenizer::{byte_token, TokenSequence, BOS};
use neurosteer_core::weights::{load_model, save_model};
use neurosteer_core::{FactorKind, Model, ModelConfig, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Deserialize)]
struct Golden {
    cases: Vec<Case>,
}

#[derive(Deserialize)]
struct Case {
    seed: u64,
    ffn_kind: FfnKind,
    scale: f32,
    prompt: String,
    token_ids: Vec<usize>,
    logits: Vec<Vec<f64>>,
    logsumexp: Vec<f64>,
    argmax: Vec<usize>,
}

/// Seeded toy model with every matrix multiplied by `scale`.
fn scaled_toy(seed: u64, kind: FfnKind, scale: f32) -> Model {
    let mut config = ModelConfig::toy(seed);
    config.ffn_kind = kind;
    let base = Model::init(config.clone()).unwrap();
    let tensors = base
        .tensors()
        .into_iter()
        .map(|t| {
            let k = if t.name.ends_with("norm") { 1.0 } else { scale };
            (t.name.to_string(), t.data.iter().map(|v| v * k).collect())
        })
        .collect();
    Model::from_tensors(config, tensors).unwrap()
}

#[test]
fn logits_match_float64_reference() {
    let golden: Golden =
        serde_json::from_str(include_str!("data/golden_forward.json")).unwrap();
    assert_eq!(golden.cases.len(), 12);
    for case in &golden.cases {
        let model = scaled_toy(case.seed, case.ffn_kind, case.scale);
        let seq = model.tokenizer().tokenize(case.prompt.as_bytes()).unwrap();
        let out = model.forward(seq.ids(), None, false).unwrap();
        // f32 accumulation drifts more once activations are large.
        let tol = if case.scale > 1.0 { 2e-3 } else { 1e-5 };
        for (t, want) in case.logits.iter().enumerate() {
            let row = out.logits.row(t);
            for (&id, &w) in case.token_ids.iter().zip(want) {
                assert!((row[id] as f64 - w).abs() < tol, "{} t={t} id={id}", case.prompt);
            }
            let lse = row[0] as f64 - out.logits.log_softmax(t)[0];
            assert!((lse - case.logsumexp[t]).abs() < tol);
            if case.scale > 1.0 {
                assert_eq!(neurosteer_core::model::argmax(row), case.argmax[t]);
            }
        }
    }
}

fn random_prompt(rng: &mut impl Rng, max: usize) -> Vec<u32> {
    let len = rng.random_range(1..=max);
    std::iter::once(BOS)
        .chain((0..len).map(|_| byte_token(rng.random())))
        .collect()
}

#[test]
fn saved_model_reproduces_logits_bit_for_bit() {
    let model = Model::init(ModelConfig::toy(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.nsl");
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded.checksum(), model.checksum());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let ids = random_prompt(&mut rng, 40);
        let a = model.forward(&ids, None, false).unwrap();
        let b = loaded.forward(&ids, None, false).unwrap();
        assert_eq!(a.logits.as_slice(), b.logits.as_slice());
    }
}

#[test]
fn sequence_logprob_follows_the_chain_rule() {
    let model = scaled_toy(2, FfnKind::GatedSilu, 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let prompt = random_prompt(&mut rng, 12);
        let cont: Vec<u32> = (0..rng.random_range(1..6)).map(|_| byte_token(rng.random())).collect();
        let got = model
            .sequence_logprob(&TokenSequence::from_ids(prompt.clone()), &cont, None)
            .unwrap();
        // Incremental oracle: one forward per prefix, scoring only its last row.
        let mut ids = prompt.clone();
        let mut want = 0.0;
        for &c in &cont {
            let out = model.forward(&ids, None, false).unwrap();
            want += log_softmax(out.logits.row(ids.len() - 1))[c as usize];
            ids.push(c);
        }
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn log_softmax_rows_normalize() {
    let model = scaled_toy(4, FfnKind::GatedSilu, 25.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ids = random_prompt(&mut rng, 50);
    let out = model.forward(&ids, None, false).unwrap();
    for t in 0..ids.len() {
        let total: f64 = out.logits.log_softmax(t).iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}

#[test]
fn uniform_model_scores_every_token_at_ln_vocab() {
    let model = Model::zeroed(ModelConfig::toy(0)).unwrap();
    let prompt = model.tokenizer().tokenize(b"abc").unwrap();
    let cont = model.tokenizer().encode_continuation(b"xyz");
    let lp = model.sequence_logprob(&prompt, &cont, None).unwrap();
    assert!((lp + 3.0 * (259f64).ln()).abs() < 1e-9);
}

#[test]
fn empty_plan_is_a_bit_exact_no_op() {
    let model = scaled_toy(6, FfnKind::GatedSilu, 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for kind in FactorKind::ALL {
        let ids = random_prompt(&mut rng, 30);
        let clean = model.forward(&ids, None, true).unwrap();
        let plan = SteeringPlan::empty(kind, "xx");
        let steered = steered_forward(&model, &ids, Some(&plan), true).unwrap();
        assert_eq!(clean.logits.as_slice(), steered.logits.as_slice());
        assert_eq!(clean.capture, steered.capture);
    }
}

#[test]
fn fully_masked_plan_is_identity() {
    let model = scaled_toy(6, FfnKind::GatedSilu, 10.0);
    let ids = random_prompt(&mut ChaCha8Rng::seed_from_u64(8), 30);
    let neurons = (0..4).flat_map(|l| (0..256).step_by(17).map(move |u| NeuronId::new(l, u)));
    let clean = model.forward(&ids, None, false).unwrap();
    for kind in FactorKind::ALL {
        let plan = if kind.is_test_time() {
            SteeringPlan::test_time(kind, "xx", neurons.clone().collect()).unwrap()
        } else {
            SteeringPlan::fixed(kind, "xx", neurons.clone().map(|n| (n, 3.5)).collect()).unwrap()
        };
        let unmasked = steered_forward(&model, &ids, Some(&plan), false).unwrap();
        assert_ne!(clean.logits.as_slice(), unmasked.logits.as_slice(), "{kind}");
        let masked = plan.with_layer_mask(Some(Default::default()));
        let out = steered_forward(&model, &ids, Some(&masked), false).unwrap();
        assert_eq!(clean.logits.as_slice(), out.logits.as_slice(), "{kind}");
    }
}

use neurosteer_core::NeuronId;

/// Records what a hook saw and wrote.
struct Pin(NeuronId, f32);

impl FfnHook for Pin {
    fn check(&self, config: &ModelConfig) -> Result<()> {
        config.check_neuron(self.0)
    }
    fn apply(&self, layer: usize, _position: usize, act: &mut [f32]) {
        if layer == self.0.layer {
            act[self.0.unit] = self.1;
        }
    }
}

#[test]
fn capture_records_post_hook_values() {
    let model = scaled_toy(7, FfnKind::Gelu, 5.0);
    let ids = random_prompt(&mut ChaCha8Rng::seed_from_u64(9), 20);
    let id = NeuronId::new(2, 100);
    let out = model.forward(&ids, Some(&Pin(id, -0.75)), true).unwrap();
    let cap = out.capture.unwrap();
    assert_eq!(cap.dims(), (4, ids.len(), 256));
    for t in 0..ids.len() {
        assert_eq!(cap.value(id, t), -0.75);
    }
}

#[test]
fn pmax_plan_pins_the_synthetic_neuron() {
    let model = build_synthetic_bilingual_model(&synthetic_config(0), DEFAULT_BOOST).unwrap();
    let plan = SteeringPlan::fixed(FactorKind::Pmax, LANG_B, BTreeMap::from([(NEURON_B, 1.375)])).unwrap();
    let ids = model.tokenizer().tokenize(b"abc def, ghi.").unwrap();
    let out = steered_forward(&model, ids.ids(), Some(&plan), true).unwrap();
    let cap = out.capture.unwrap();
    assert!((0..ids.len()).all(|t| cap.value(NEURON_B, t) == 1.375));
}

#[test]
fn amplifying_the_b_neuron_monotonically_favours_b_letters() {
    let model = build_synthetic_bilingual_model(&synthetic_config(0), DEFAULT_BOOST).unwrap();
    let tok = model.tokenizer();
    let prompt = tok.tokenize(b"abc decal").unwrap();
    let (a, b) = (tok.encode_continuation(b"c"), tok.encode_continuation(b"q"));
    let gap = |v: Option<f32>| {
        let plan = v.map(|v| SteeringPlan::fixed(FactorKind::Pmax, LANG_B, BTreeMap::from([(NEURON_B, v)])).unwrap());
        let hook = plan
            .as_ref()
            .map(|p| neurosteer_core::steer::Intervention::for_input(&model, p, prompt.ids()).unwrap());
        let h = hook.as_ref().map(|h| h as &dyn FfnHook);
        model.sequence_logprob(&prompt, &b, h).unwrap() - model.sequence_logprob(&prompt, &a, h).unwrap()
    };
    let mut last = gap(None);
    for v in [1.0, 2.0, 4.0, 8.0] {
        let g = gap(Some(v));
        assert!(g > last, "gap {g} at {v} not above {last}");
        last = g;
    }
}
