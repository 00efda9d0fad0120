//! Language-specific neuron identification and steering on a small
//! decoder-only transformer.
//!
//! The pipeline runs bottom-up through the modules:
//!
//! * [`model`], [`tokenizer`], [`weights`]: the transformer, its byte-level
//!   tokenizer and the `NSL1` weight format, with hooks on FFN activations;
//! * [`corpus`]: per-language activation statistics;
//! * [`identify`]: LAPE and baseline neuron sets, Jaccard overlap;
//! * [`steer`]: the six steering factors as interventions;
//! * [`lss`]: the language steering shift score on probe items;
//! * [`eval`]: perplexity, multiple-choice accuracy, generation and BLEU;
//! * [`synthetic`]: a hand-wired bilingual model with analytic ground truth.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod identify;
mod jsonl;
pub mod lss;
pub mod model;
pub mod stats;
pub mod steer;
pub mod synthetic;
pub mod table;
pub mod tokenizer;
pub mod weights;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, NeuronId};
pub use steer::{FactorKind, SteeringPlan};
