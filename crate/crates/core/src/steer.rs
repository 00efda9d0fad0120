//! Steering factors and their realization as FFN interventions.
//!
//! Six kinds of intervention act on a language's neurons at every position:
//!
//! | kind       | value written into the neuron                              |
//! |------------|------------------------------------------------------------|
//! | `pmax`     | max over identification sentences of the token-mean value  |
//! | `pmedian`  | median of the same per-sentence means                      |
//! | `eq_max`   | max over the current input's tokens (clean pass)           |
//! | `plus_max` | original value + that same max                             |
//! | `eq_zero`  | 0                                                          |
//! | `eq_10p`   | 10th percentile of identification per-token values         |
//!
//! `eq_max` and `plus_max` need a [`TestTimeContext`] built from a clean
//! forward over the very input being scored; the other kinds carry fixed
//! per-neuron values.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::LanguageProfile;
use crate::error::{Error, Result};
use crate::model::{ActivationCapture, FfnHook, Model, ModelConfig, NeuronId};
use crate::stats;
use crate::tokenizer::{is_special, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Pmax,
    Pmedian,
    EqMax,
    PlusMax,
    EqZero,
    #[serde(rename = "eq_10p")]
    Eq10p,
}

impl FactorKind {
    pub const ALL: [FactorKind; 6] = [
        FactorKind::Pmax,
        FactorKind::Pmedian,
        FactorKind::EqMax,
        FactorKind::PlusMax,
        FactorKind::EqZero,
        FactorKind::Eq10p,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FactorKind::Pmax => "pmax",
            FactorKind::Pmedian => "pmedian",
            FactorKind::EqMax => "eq_max",
            FactorKind::PlusMax => "plus_max",
            FactorKind::EqZero => "eq_zero",
            FactorKind::Eq10p => "eq_10p",
        }
    }

    /// Kinds whose value depends on the input being scored.
    pub fn is_test_time(self) -> bool {
        matches!(self, FactorKind::EqMax | FactorKind::PlusMax)
    }
}

impl fmt::Display for FactorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FactorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pmax" => FactorKind::Pmax,
            "pmedian" => FactorKind::Pmedian,
            "eq_max" | "=max" => FactorKind::EqMax,
            "plus_max" | "+max" => FactorKind::PlusMax,
            "eq_zero" | "=0" => FactorKind::EqZero,
            "eq_10p" | "=10p" => FactorKind::Eq10p,
            other => {
                return Err(Error::Config(format!(
                    "unknown steering factor {other:?} (expected one of pmax, pmedian, eq_max, plus_max, eq_zero, eq_10p)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Max,
    Median,
    Mean,
}

/// An intervention on one language's neurons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlanRepr", into = "PlanRepr")]
pub struct SteeringPlan {
    pub kind: FactorKind,
    pub lang: String,
    pub neurons: BTreeSet<NeuronId>,
    /// Present exactly for the fixed-value kinds, covering `neurons`.
    pub fixed_values: Option<BTreeMap<NeuronId, f32>>,
    /// When set, only neurons in these layers are touched.
    pub layer_mask: Option<BTreeSet<usize>>,
}

#[derive(Serialize, Deserialize)]
struct PlanRepr {
    kind: FactorKind,
    lang: String,
    layer_mask: Option<BTreeSet<usize>>,
    neurons: Vec<NeuronId>,
    /// Keys are `"layer,unit"`.
    fixed_values: Option<BTreeMap<String, f32>>,
}

impl From<SteeringPlan> for PlanRepr {
    fn from(p: SteeringPlan) -> Self {
        PlanRepr {
            kind: p.kind,
            lang: p.lang,
            layer_mask: p.layer_mask,
            neurons: p.neurons.into_iter().collect(),
            fixed_values: p.fixed_values.map(|m| {
                m.into_iter()
                    .map(|(id, v)| (format!("{},{}", id.layer, id.unit), v))
                    .collect()
            }),
        }
    }
}

impl TryFrom<PlanRepr> for SteeringPlan {
    type Error = Error;

    fn try_from(r: PlanRepr) -> Result<Self> {
        let fixed_values = r
            .fixed_values
            .map(|m| {
                m.into_iter()
                    .map(|(key, v)| {
                        let parsed = key
                            .split_once(',')
                            .and_then(|(l, u)| Some(NeuronId::new(l.trim().parse().ok()?, u.trim().parse().ok()?)));
                        parsed
                            .map(|id| (id, v))
                            .ok_or_else(|| Error::Data(format!("bad neuron key {key:?}, expected \"layer,unit\"")))
                    })
                    .collect::<Result<BTreeMap<_, _>>>()
            })
            .transpose()?;
        let plan = SteeringPlan {
            kind: r.kind,
            lang: r.lang,
            neurons: r.neurons.into_iter().collect(),
            fixed_values,
            layer_mask: r.layer_mask,
        };
        plan.validate()?;
        Ok(plan)
    }
}

impl SteeringPlan {
    /// Plan with fixed per-neuron values; the neuron set is the key set.
    pub fn fixed(kind: FactorKind, lang: impl Into<String>, values: BTreeMap<NeuronId, f32>) -> Result<Self> {
        let plan = SteeringPlan {
            kind,
            lang: lang.into(),
            neurons: values.keys().copied().collect(),
            fixed_values: Some(values),
            layer_mask: None,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// `eq_max` / `plus_max` plan.
    pub fn test_time(kind: FactorKind, lang: impl Into<String>, neurons: BTreeSet<NeuronId>) -> Result<Self> {
        let plan = SteeringPlan {
            kind,
            lang: lang.into(),
            neurons,
            fixed_values: None,
            layer_mask: None,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Plan over no neurons; a no-op for every kind.
    pub fn empty(kind: FactorKind, lang: impl Into<String>) -> Self {
        SteeringPlan {
            kind,
            lang: lang.into(),
            neurons: BTreeSet::new(),
            fixed_values: (!kind.is_test_time()).then(BTreeMap::new),
            layer_mask: None,
        }
    }

    pub fn with_layer_mask(mut self, layers: Option<BTreeSet<usize>>) -> Self {
        self.layer_mask = layers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.fixed_values, self.kind.is_test_time()) {
            (Some(_), true) => Err(Error::Contract(format!(
                "{} is a test-time factor and takes no fixed values",
                self.kind
            ))),
            (None, false) => Err(Error::Contract(format!(
                "{} needs fixed values for its neurons",
                self.kind
            ))),
            (Some(values), false) if !values.keys().eq(self.neurons.iter()) => Err(Error::Contract(
                format!("{} fixed values do not cover exactly the plan's neurons", self.kind),
            )),
            _ => Ok(()),
        }
    }

    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        self.neurons.iter().try_for_each(|&id| config.check_neuron(id))
    }

    pub fn applies_to_layer(&self, layer: usize) -> bool {
        self.layer_mask.as_ref().is_none_or(|m| m.contains(&layer))
    }

    /// Neurons the plan actually touches after layer masking.
    pub fn active_neurons(&self) -> impl Iterator<Item = NeuronId> + '_ {
        self.neurons.iter().copied().filter(|n| self.applies_to_layer(n.layer))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Per-neuron `max`/`median`/`mean` of the identification sentence means.
pub fn compute_patched_factors(
    profile: &LanguageProfile,
    neurons: &BTreeSet<NeuronId>,
    agg: Aggregate,
) -> Result<BTreeMap<NeuronId, f32>> {
    neurons
        .iter()
        .map(|&id| {
            let means = profile.sentence_means_of(id)?;
            let value = match agg {
                Aggregate::Max => stats::max(means),
                Aggregate::Median => stats::median(means),
                Aggregate::Mean => stats::mean(means),
            }
            .ok_or_else(|| {
                Error::DataSufficiency(format!(
                    "no sentence means for neuron {id} in language {:?}",
                    profile.language
                ))
            })?;
            Ok((id, value as f32))
        })
        .collect()
}

/// `q`-th percentile (linear interpolation) of a neuron's identification
/// per-token values.
pub fn compute_percentile_value(profile: &LanguageProfile, neuron: NeuronId, q: f64) -> Result<f64> {
    let values: Vec<f64> = profile.token_values_of(neuron)?.iter().map(|&v| v as f64).collect();
    stats::percentile(&values, q).ok_or_else(|| {
        Error::DataSufficiency(format!(
            "no per-token values for neuron {neuron} in language {:?}",
            profile.language
        ))
    })
}

pub const DEACTIVATION_PERCENTILE: f64 = 10.0;

/// Builds the plan of `kind` for `neurons`, drawing fixed values from the
/// identification profile of the plan's language.
pub fn build_plan(
    kind: FactorKind,
    profile: &LanguageProfile,
    neurons: &BTreeSet<NeuronId>,
) -> Result<SteeringPlan> {
    let lang = profile.language.clone();
    match kind {
        FactorKind::Pmax => SteeringPlan::fixed(kind, lang, compute_patched_factors(profile, neurons, Aggregate::Max)?),
        FactorKind::Pmedian => {
            SteeringPlan::fixed(kind, lang, compute_patched_factors(profile, neurons, Aggregate::Median)?)
        }
        FactorKind::EqZero => SteeringPlan::fixed(kind, lang, neurons.iter().map(|&n| (n, 0.0)).collect()),
        FactorKind::Eq10p => {
            let values = neurons
                .iter()
                .map(|&n| Ok((n, compute_percentile_value(profile, n, DEACTIVATION_PERCENTILE)? as f32)))
                .collect::<Result<_>>()?;
            SteeringPlan::fixed(kind, lang, values)
        }
        FactorKind::EqMax | FactorKind::PlusMax => SteeringPlan::test_time(kind, lang, neurons.clone()),
    }
}

/// `steer_j`: per-neuron maximum over the non-special positions of one
/// input's clean forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TestTimeContext {
    pub steer: BTreeMap<NeuronId, f32>,
}

impl TestTimeContext {
    pub fn from_capture(
        capture: &ActivationCapture,
        tokens: &[TokenId],
        neurons: impl IntoIterator<Item = NeuronId>,
    ) -> Result<Self> {
        let positions: Vec<usize> = (0..tokens.len()).filter(|&t| !is_special(tokens[t])).collect();
        if positions.is_empty() {
            return Err(Error::Contract(
                "test-time steering needs at least one non-special token in the input".into(),
            ));
        }
        let steer = neurons
            .into_iter()
            .map(|n| {
                let max = positions
                    .iter()
                    .map(|&t| capture.value(n, t))
                    .fold(f32::NEG_INFINITY, f32::max);
                (n, max)
            })
            .collect();
        Ok(TestTimeContext { steer })
    }

    /// Clean forward over `tokens`, then [`TestTimeContext::from_capture`].
    pub fn compute(model: &Model, tokens: &[TokenId], plan: &SteeringPlan) -> Result<Self> {
        plan.check(model.config())?;
        let out = model.forward(tokens, None, true)?;
        Self::from_capture(&out.capture.expect("capture requested"), tokens, plan.active_neurons())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Action {
    Set(f32),
    Add(f32),
}

/// A plan resolved against an optional test-time context, ready to be
/// passed to [`Model::forward`] as an [`FfnHook`].
#[derive(Debug, Clone)]
pub struct Intervention {
    neurons: Vec<NeuronId>,
    per_layer: BTreeMap<usize, Vec<(usize, Action)>>,
}

impl Intervention {
    pub fn new(plan: &SteeringPlan, context: Option<&TestTimeContext>) -> Result<Self> {
        plan.validate()?;
        let mut per_layer: BTreeMap<usize, Vec<(usize, Action)>> = BTreeMap::new();
        for id in plan.active_neurons() {
            let action = match plan.kind {
                FactorKind::EqMax | FactorKind::PlusMax => {
                    let ctx = context.ok_or_else(|| {
                        Error::Contract(format!("{} needs a test-time context", plan.kind))
                    })?;
                    let steer = *ctx.steer.get(&id).ok_or_else(|| {
                        Error::Contract(format!("test-time context has no value for neuron {id}"))
                    })?;
                    if plan.kind == FactorKind::EqMax {
                        Action::Set(steer)
                    } else {
                        Action::Add(steer)
                    }
                }
                _ => Action::Set(plan.fixed_values.as_ref().expect("validated")[&id]),
            };
            per_layer.entry(id.layer).or_default().push((id.unit, action));
        }
        Ok(Intervention {
            neurons: plan.neurons.iter().copied().collect(),
            per_layer,
        })
    }

    /// Builds the intervention for scoring `tokens`; test-time kinds get a
    /// context from a clean pass over `tokens`.
    pub fn for_input(model: &Model, plan: &SteeringPlan, tokens: &[TokenId]) -> Result<Self> {
        let ctx = if plan.kind.is_test_time() && plan.active_neurons().next().is_some() {
            Some(TestTimeContext::compute(model, tokens, plan)?)
        } else {
            None
        };
        Intervention::new(plan, ctx.as_ref())
    }

    pub fn apply_in_place(&self, layer: usize, activations: &mut [f32]) {
        if let Some(actions) = self.per_layer.get(&layer) {
            for &(unit, action) in actions {
                activations[unit] = match action {
                    Action::Set(v) => v,
                    Action::Add(v) => activations[unit] + v,
                };
            }
        }
    }
}

impl FfnHook for Intervention {
    fn check(&self, config: &ModelConfig) -> Result<()> {
        self.neurons.iter().try_for_each(|&id| config.check_neuron(id))
    }

    fn apply(&self, layer: usize, _position: usize, activations: &mut [f32]) {
        self.apply_in_place(layer, activations);
    }
}

/// Applies `plan` to one layer's activation vector and returns the result.
pub fn apply_steering(
    plan: &SteeringPlan,
    context: Option<&TestTimeContext>,
    layer: usize,
    activations: &[f32],
) -> Result<Vec<f32>> {
    if let Some(id) = plan.active_neurons().find(|n| n.layer == layer && n.unit >= activations.len()) {
        return Err(Error::Addressing {
            layer: id.layer,
            unit: id.unit,
            n_layers: layer + 1,
            d_ff: activations.len(),
        });
    }
    let hook = Intervention::new(plan, context)?;
    let mut out = activations.to_vec();
    hook.apply_in_place(layer, &mut out);
    Ok(out)
}

/// Forward pass under an optional plan. For test-time kinds the context is
/// taken from a clean pass over the same tokens.
pub fn steered_forward(
    model: &Model,
    tokens: &[TokenId],
    plan: Option<&SteeringPlan>,
    capture: bool,
) -> Result<crate::model::ForwardOutput> {
    match plan {
        None => model.forward(tokens, None, capture),
        Some(plan) => {
            plan.check(model.config())?;
            let hook = Intervention::for_input(model, plan, tokens)?;
            model.forward(tokens, Some(&hook), capture)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(l: usize, u: usize) -> NeuronId {
        NeuronId::new(l, u)
    }

    fn profile_with_means(means: Vec<f64>) -> LanguageProfile {
        let mut p = LanguageProfile::empty("aa", "m", 1, 1, true);
        p.sentences_seen = means.len() as u64;
        p.sentence_means = vec![means];
        p
    }

    #[test]
    fn patched_max_and_median() {
        let p = profile_with_means(vec![0.1, 0.9, 0.5]);
        let set = BTreeSet::from([n(0, 0)]);
        assert_eq!(compute_patched_factors(&p, &set, Aggregate::Max).unwrap()[&n(0, 0)], 0.9);
        assert_eq!(compute_patched_factors(&p, &set, Aggregate::Median).unwrap()[&n(0, 0)], 0.5);
        assert_eq!(
            compute_patched_factors(&p, &set, Aggregate::Mean).unwrap()[&n(0, 0)],
            0.5f64 as f32
        );
    }

    #[test]
    fn patched_needs_sentences() {
        let p = profile_with_means(vec![]);
        assert!(matches!(
            compute_patched_factors(&p, &BTreeSet::from([n(0, 0)]), Aggregate::Max),
            Err(Error::DataSufficiency(_))
        ));
    }

    #[test]
    fn percentile_value_from_token_values() {
        let mut p = profile_with_means(vec![1.0]);
        p.token_values = Some(vec![(0..=100).map(|i| i as f32).collect()]);
        assert_eq!(compute_percentile_value(&p, n(0, 0), 10.0).unwrap(), 10.0);
        p.token_values = Some(vec![vec![-0.25]]);
        assert_eq!(compute_percentile_value(&p, n(0, 0), 73.0).unwrap(), -0.25);
        p.token_values = None;
        assert!(matches!(
            compute_percentile_value(&p, n(0, 0), 10.0),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn eq_zero_touches_only_its_unit() {
        let plan = SteeringPlan::fixed(FactorKind::EqZero, "aa", BTreeMap::from([(n(0, 2), 0.0)])).unwrap();
        let acts = [0.5, -1.0, 3.0, 7.0];
        let out = apply_steering(&plan, None, 0, &acts).unwrap();
        assert_eq!(out, [0.5, -1.0, 0.0, 7.0]);
        assert_eq!(apply_steering(&plan, None, 1, &acts).unwrap(), acts);
        assert_eq!(apply_steering(&plan, None, 0, &out).unwrap(), out);
    }

    #[test]
    fn plus_max_doubles_the_maximum() {
        let plan = SteeringPlan::test_time(FactorKind::PlusMax, "aa", BTreeSet::from([n(0, 1)])).unwrap();
        let v_star = 1.375f32;
        let ctx = TestTimeContext {
            steer: BTreeMap::from([(n(0, 1), v_star)]),
        };
        let out = apply_steering(&plan, Some(&ctx), 0, &[0.0, v_star]).unwrap();
        assert_eq!(out[1], 2.0 * v_star);
        let eq = SteeringPlan::test_time(FactorKind::EqMax, "aa", BTreeSet::from([n(0, 1)])).unwrap();
        assert_eq!(apply_steering(&eq, Some(&ctx), 0, &[0.0, -3.0]).unwrap()[1], v_star);
    }

    #[test]
    fn test_time_kinds_need_context() {
        let plan = SteeringPlan::test_time(FactorKind::EqMax, "aa", BTreeSet::from([n(0, 0)])).unwrap();
        assert!(matches!(apply_steering(&plan, None, 0, &[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn full_layer_mask_is_identity() {
        let plan = SteeringPlan::fixed(FactorKind::Pmax, "aa", BTreeMap::from([(n(0, 0), 9.0), (n(1, 1), 9.0)]))
            .unwrap()
            .with_layer_mask(Some(BTreeSet::new()));
        for layer in 0..2 {
            assert_eq!(apply_steering(&plan, None, layer, &[1.0, 2.0]).unwrap(), [1.0, 2.0]);
        }
        let only_one = plan.clone().with_layer_mask(Some(BTreeSet::from([1])));
        assert_eq!(apply_steering(&only_one, None, 0, &[1.0, 2.0]).unwrap(), [1.0, 2.0]);
        assert_eq!(apply_steering(&only_one, None, 1, &[1.0, 2.0]).unwrap(), [1.0, 9.0]);
    }

    #[test]
    fn plan_shape_is_validated() {
        let bad = SteeringPlan {
            kind: FactorKind::Pmax,
            lang: "aa".into(),
            neurons: BTreeSet::from([n(0, 0), n(0, 1)]),
            fixed_values: Some(BTreeMap::from([(n(0, 0), 1.0)])),
            layer_mask: None,
        };
        assert!(bad.validate().is_err());
        let bad = SteeringPlan {
            kind: FactorKind::EqMax,
            fixed_values: Some(BTreeMap::new()),
            neurons: BTreeSet::new(),
            ..bad
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn plan_json_format() {
        let plan = SteeringPlan::fixed(FactorKind::Eq10p, "bb", BTreeMap::from([(n(1, 5), -0.25)]))
            .unwrap()
            .with_layer_mask(Some(BTreeSet::from([1])));
        let json = plan.to_json().unwrap();
        assert_eq!(
            json,
            r#"{"kind":"eq_10p","lang":"bb","layer_mask":[1],"neurons":[[1,5]],"fixed_values":{"1,5":-0.25}}"#
        );
        assert_eq!(SteeringPlan::from_json(&json).unwrap(), plan);
        assert!(SteeringPlan::from_json(r#"{"kind":"pmax","lang":"bb","layer_mask":null,"neurons":[[0,1]],"fixed_values":{}}"#).is_err());
    }

    #[test]
    fn factor_names_parse() {
        for k in FactorKind::ALL {
            assert_eq!(k.name().parse::<FactorKind>().unwrap(), k);
        }
        assert_eq!("+max".parse::<FactorKind>().unwrap(), FactorKind::PlusMax);
        assert!("max".parse::<FactorKind>().is_err());
    }
}
