//! Run configuration: one JSON file shared by every subcommand, with flag
//! overrides applied on top. Relative paths resolve against the directory
//! holding the config file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use neurosteer_core::eval::PromptTemplate;
use neurosteer_core::identify::{IdentifyConfig, Method};
use neurosteer_core::FactorKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    /// `NSL1` weight file.
    File { path: String },
    /// Hand-wired bilingual model.
    Synthetic {
        #[serde(default = "default_boost")]
        boost: f32,
    },
    /// Randomly initialized 4-layer toy model.
    Toy,
}

fn default_boost() -> f32 {
    neurosteer_core::synthetic::DEFAULT_BOOST
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifySection {
    #[serde(default = "default_method")]
    pub method: Method,
    /// Percentile of pooled activation probabilities.
    #[serde(default = "default_m")]
    pub m: f64,
    /// Fraction of all neurons kept by lowest LAPE.
    #[serde(default = "default_n")]
    pub n: f64,
}

fn default_method() -> Method {
    Method::Lape
}
fn default_m() -> f64 {
    IdentifyConfig::default().prob_percentile
}
fn default_n() -> f64 {
    IdentifyConfig::default().lape_bottom_fraction
}

impl Default for IdentifySection {
    fn default() -> Self {
        IdentifySection {
            method: default_method(),
            m: default_m(),
            n: default_n(),
        }
    }
}

impl IdentifySection {
    pub fn lape(&self) -> IdentifyConfig {
        IdentifyConfig {
            prob_percentile: self.m,
            lape_bottom_fraction: self.n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSection {
    #[serde(default = "default_max_new")]
    pub max_new_tokens: usize,
    /// Prompt naming the target language (`{lang}`, `{src}`).
    pub targeted: PromptTemplate,
    /// Prompt that leaves the target language implicit.
    pub untargeted: PromptTemplate,
}

fn default_max_new() -> usize {
    16
}

impl Default for GenerationSection {
    fn default() -> Self {
        GenerationSection {
            max_new_tokens: default_max_new(),
            targeted: PromptTemplate("translate into {lang}: {src} = ".into()),
            untargeted: PromptTemplate("{src} = ".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub languages: Vec<String>,
    /// Identification corpus per language.
    pub corpora: BTreeMap<String, String>,
    /// Perplexity corpus per language; the identification corpora when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_corpora: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<String>,
    /// Translation pairs per target language.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translations: Option<BTreeMap<String, String>>,
    #[serde(default)]
    pub identify: IdentifySection,
    #[serde(default = "all_factors")]
    pub factors: Vec<FactorKind>,
    /// Factor used for the perplexity, accuracy and BLEU deltas.
    #[serde(default = "default_eval_factor")]
    pub eval_factor: FactorKind,
    /// Layers where plans apply; all layers when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<BTreeSet<usize>>,
    #[serde(default = "default_out")]
    pub out_dir: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub generation: GenerationSection,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn all_factors() -> Vec<FactorKind> {
    FactorKind::ALL.to_vec()
}
fn default_eval_factor() -> FactorKind {
    FactorKind::Pmax
}
fn default_out() -> String {
    "out".into()
}

/// Values given on the command line; each replaces the config's own.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub factors: Option<Vec<FactorKind>>,
    pub layers: Option<BTreeSet<usize>>,
    pub method: Option<Method>,
    pub m: Option<f64>,
    pub n: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigIo {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            // Flags are relative to the working directory, not the config.
            self.out_dir = std::path::absolute(out)
                .unwrap_or_else(|_| out.clone())
                .to_string_lossy()
                .into_owned();
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(f) = &o.factors {
            self.factors = f.clone();
        }
        if o.layers.is_some() {
            self.layers = o.layers.clone();
        }
        if let Some(m) = o.method {
            self.identify.method = m;
        }
        if let Some(m) = o.m {
            self.identify.m = m;
        }
        if let Some(n) = o.n {
            self.identify.n = n;
        }
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        self.base_dir.join(path)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    /// Every input file the run reads, keyed by its configured path.
    pub fn inputs(&self) -> BTreeMap<String, PathBuf> {
        let mut paths: Vec<&String> = self.corpora.values().collect();
        paths.extend(self.eval_corpora.iter().flat_map(|m| m.values()));
        paths.extend(self.probes.iter());
        paths.extend(self.mc.iter());
        paths.extend(self.translations.iter().flat_map(|m| m.values()));
        if let ModelSpec::File { path } = &self.model {
            paths.push(path);
        }
        paths.into_iter().map(|p| (p.clone(), self.resolve(p))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CliError::Config(m));
        if self.languages.len() < 2 {
            return err(format!("need at least two languages, got {:?}", self.languages));
        }
        let unique: BTreeSet<&String> = self.languages.iter().collect();
        if unique.len() != self.languages.len() {
            return err(format!("duplicate languages in {:?}", self.languages));
        }
        for lang in &self.languages {
            if !self.corpora.contains_key(lang) {
                return err(format!("no corpus for language {lang:?}"));
            }
            if let Some(ev) = &self.eval_corpora {
                if !ev.contains_key(lang) {
                    return err(format!("no evaluation corpus for language {lang:?}"));
                }
            }
        }
        if self.factors.is_empty() {
            return err("the factor list is empty".into());
        }
        if self.threads == Some(0) {
            return err("threads must be at least 1".into());
        }
        if self.generation.max_new_tokens == 0 {
            return err("generation.max_new_tokens must be at least 1".into());
        }
        for t in [&self.generation.targeted, &self.generation.untargeted] {
            if !t.0.contains("{src}") {
                return err(format!("prompt template {:?} lacks {{src}}", t.0));
            }
        }
        self.identify.lape().validate()?;
        if let ModelSpec::Synthetic { boost } = self.model {
            if !(boost.is_finite() && boost > 0.0) {
                return err(format!("synthetic boost must be positive, got {boost}"));
            }
        }
        for (name, path) in self.inputs() {
            if !path.is_file() {
                return err(format!("input {name:?} not found at {}", path.display()));
            }
        }
        Ok(())
    }

    /// SHA-256 over the result-relevant settings and the content of every
    /// input file. The output directory and thread count are left out since
    /// they do not change any result.
    pub fn fingerprint(&self) -> Result<String> {
        let mut settings = self.clone();
        settings.out_dir = String::new();
        settings.threads = None;
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&settings)?);
        for (name, path) in self.inputs() {
            let bytes = std::fs::read(&path).map_err(|e| neurosteer_core::Error::Io {
                path: path.clone(),
                source: e,
            })?;
            h.update(name.as_bytes());
            h.update(Sha256::digest(&bytes));
        }
        Ok(hex::encode(h.finalize()))
    }
}

pub fn parse_factors(list: &str) -> Result<Vec<FactorKind>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e: neurosteer_core::Error| CliError::Config(e.to_string())))
        .collect()
}

pub fn parse_layers(list: &str) -> Result<BTreeSet<usize>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Config(format!("invalid layer index {s:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"model":{"kind":"synthetic"},"languages":["aa","bb"],
                "corpora":{"aa":"a.jsonl","bb":"b.jsonl"}}"#,
        )
        .unwrap();
        assert_eq!(cfg.factors.len(), 6);
        assert_eq!(cfg.identify.m, 95.0);
        assert_eq!(cfg.eval_factor, FactorKind::Pmax);
        assert_eq!(cfg.model, ModelSpec::Synthetic { boost: 4.0 });
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let r: std::result::Result<RunConfig, _> = serde_json::from_str(
            r#"{"model":{"kind":"toy"},"languages":[],"corpora":{},"bogus":1}"#,
        );
        assert!(r.is_err());
    }

    #[test]
    fn list_flags() {
        assert_eq!(parse_factors("pmax, =10p").unwrap(), [FactorKind::Pmax, FactorKind::Eq10p]);
        assert!(matches!(parse_factors("pmin"), Err(CliError::Config(_))));
        assert_eq!(parse_layers("2,0").unwrap(), BTreeSet::from([0, 2]));
        assert!(parse_layers("x").is_err());
    }
}
