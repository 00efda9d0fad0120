//! Stage orchestration: profiles → identification → factors → LSS → eval.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use log::{info, warn};
use neurosteer_core::corpus::{accumulate_profile_sharded, ingest_corpus, Corpus, LanguageProfile};
use neurosteer_core::eval::{
    delta_matrix, load_mc, load_translations, mc_accuracy, perplexity, translation_bleu, DeltaMatrix,
    McItem, TranslationPair,
};
use neurosteer_core::identify::{
    jaccard_overlap, lape_scores, select_baseline_neurons, select_lape_neurons, Method, NeuronSetAssignment,
};
use neurosteer_core::lss::{load_probes, lss_matrix, lss_score, LssResult, ProbeSet};
use neurosteer_core::steer::build_plan;
use neurosteer_core::synthetic::{build_synthetic_bilingual_model, synthetic_config};
use neurosteer_core::table::{format_value, LabeledMatrix};
use neurosteer_core::weights::load_model;
use neurosteer_core::{FactorKind, Model, ModelConfig, SteeringPlan};
use serde::Serialize;

use crate::artifacts::{ArtifactDir, Stage, StageState};
use crate::config::{ModelSpec, RunConfig};
use crate::error::{CliError, Result};

/// What a pipeline run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub fingerprint: String,
    pub stages: Vec<Stage>,
    /// Mean over defined matrix cells, per factor, when the LSS stage ran.
    pub lss_means: BTreeMap<FactorKind, f64>,
}

pub fn load_model_spec(cfg: &RunConfig) -> Result<Model> {
    Ok(match &cfg.model {
        ModelSpec::File { path } => load_model(cfg.resolve(path))?,
        ModelSpec::Synthetic { boost } => build_synthetic_bilingual_model(&synthetic_config(cfg.seed), *boost)?,
        ModelSpec::Toy => Model::init(ModelConfig::toy(cfg.seed))?,
    })
}

fn load_corpora(cfg: &RunConfig, paths: &BTreeMap<String, String>) -> Result<Vec<Corpus>> {
    cfg.languages
        .iter()
        .map(|lang| {
            let corpus = ingest_corpus(cfg.resolve(&paths[lang]), Some(lang))?;
            if corpus.is_empty() {
                return Err(neurosteer_core::Error::Data(format!(
                    "corpus {} has no sentences in {lang:?}",
                    paths[lang]
                ))
                .into());
            }
            Ok(corpus)
        })
        .collect()
}

/// Runs `stages` (which must form a prefix-closed set in pipeline order)
/// under a thread pool sized by the config.
pub fn run_pipeline(cfg: &RunConfig, stages: &[Stage]) -> Result<RunSummary> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?;
    pool.install(|| Pipeline::new(cfg)?.run(stages))
}

struct Pipeline<'a> {
    cfg: &'a RunConfig,
    model: Model,
    out: ArtifactDir,
    profiles: Vec<LanguageProfile>,
    assignment: Option<NeuronSetAssignment>,
    plans: BTreeMap<(FactorKind, String), SteeringPlan>,
    lss_means: BTreeMap<FactorKind, f64>,
}

impl<'a> Pipeline<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        let fingerprint = cfg.fingerprint()?;
        let model = load_model_spec(cfg)?;
        let mut out = ArtifactDir::create(cfg.out_dir(), fingerprint)?;
        let mut effective = serde_json::to_value(cfg)?;
        effective["out_dir"] = serde_json::Value::Null;
        effective["threads"] = serde_json::Value::Null;
        out.json("config.json", &serde_json::json!({ "config": effective, "model_checksum": model.checksum() }))?;
        Ok(Pipeline {
            cfg,
            model,
            out,
            profiles: Vec::new(),
            assignment: None,
            plans: BTreeMap::new(),
            lss_means: BTreeMap::new(),
        })
    }

    fn run(mut self, stages: &[Stage]) -> Result<RunSummary> {
        let wanted: BTreeSet<Stage> = stages.iter().copied().collect();
        for stage in Stage::ALL.into_iter().filter(|s| wanted.contains(s)) {
            info!("stage {}", stage.name());
            let result = match stage {
                Stage::Profiles => self.profiles(),
                Stage::Identify => self.identify(),
                Stage::Factors => self.factors(),
                Stage::Lss => self.lss(),
                Stage::Eval => self.eval(),
            };
            match result {
                Ok(()) => self.out.set_stage(stage, StageState::Complete)?,
                Err(e) => {
                    self.out.set_stage(stage, StageState::Failed { error: e.to_string() })?;
                    return Err(e);
                }
            }
        }
        Ok(RunSummary {
            out_dir: self.out.root().to_path_buf(),
            fingerprint: self.out.fingerprint().to_string(),
            stages: wanted.into_iter().collect(),
            lss_means: self.lss_means,
        })
    }

    fn require<T>(value: Option<T>, stage: Stage, needs: Stage) -> Result<T> {
        value.ok_or_else(|| {
            CliError::Config(format!("stage {} needs stage {} to run first", stage.name(), needs.name()))
        })
    }

    fn profiles(&mut self) -> Result<()> {
        let corpora = load_corpora(self.cfg, &self.cfg.corpora)?;
        let needs_values = self.cfg.factors.contains(&FactorKind::Eq10p) || self.cfg.eval_factor == FactorKind::Eq10p;
        let shards = rayon::current_num_threads();
        let mut summary = String::from("language,sentences,skipped,scored_tokens\n");
        for corpus in &corpora {
            let profile = accumulate_profile_sharded(&self.model, corpus, needs_values, shards)?;
            if profile.skipped_sentences > 0 {
                warn!("{}: skipped {} over-length sentences", corpus.language, profile.skipped_sentences);
            }
            summary.push_str(&format!(
                "{},{},{},{}\n",
                profile.language,
                profile.sentences_seen,
                profile.skipped_sentences,
                profile.token_count.first().copied().unwrap_or(0)
            ));
            // Per-token values stay in memory; the stored profile keeps the
            // counts and sentence means.
            let stored = LanguageProfile {
                token_values: None,
                ..profile.clone()
            };
            self.out.json(&format!("profiles/{}.json", profile.language), &stored)?;
            self.profiles.push(profile);
        }
        self.out.csv("profiles/summary.csv", &summary)
    }

    fn identify(&mut self) -> Result<()> {
        Self::require((!self.profiles.is_empty()).then_some(()), Stage::Identify, Stage::Profiles)?;
        let assignment = match self.cfg.identify.method {
            Method::Lape => {
                let table = lape_scores(&self.profiles)?;
                let mut csv = String::from("layer,unit,lape");
                for l in &table.languages {
                    csv.push_str(&format!(",p_{l}"));
                }
                csv.push('\n');
                for j in 0..table.n_neurons() {
                    let id = neurosteer_core::NeuronId::from_flat(j, table.d_ff);
                    csv.push_str(&format!("{},{},{}", id.layer, id.unit, format_value(table.lape[j])));
                    for p in &table.probabilities[j] {
                        csv.push(',');
                        csv.push_str(&format_value(*p));
                    }
                    csv.push('\n');
                }
                self.out.csv("lape.csv", &csv)?;
                select_lape_neurons(&table, &self.cfg.identify.lape())?
            }
            Method::Baseline => select_baseline_neurons(&self.profiles)?,
        };
        assignment.validate_for(self.model.config())?;
        for w in &assignment.warnings {
            warn!("{w}");
        }
        self.out.json("assignment.json", &assignment)?;
        self.out.csv("assignment.csv", &assignment.to_csv())?;
        let overlap = jaccard_overlap(&assignment);
        self.out.json("overlap.json", &overlap)?;
        self.out.csv("overlap.csv", &overlap.to_csv())?;
        self.assignment = Some(assignment);
        Ok(())
    }

    fn factors(&mut self) -> Result<()> {
        let assignment = Self::require(self.assignment.as_ref(), Stage::Factors, Stage::Identify)?;
        let mut kinds: BTreeSet<FactorKind> = self.cfg.factors.iter().copied().collect();
        kinds.insert(self.cfg.eval_factor);
        let mut csv = String::from("factor,language,layer,unit,value\n");
        let mut plans = Vec::new();
        for &kind in &kinds {
            for profile in &self.profiles {
                let lang = &profile.language;
                let neurons = assignment.neurons(lang).cloned().unwrap_or_default();
                let plan = build_plan(kind, profile, &neurons)?.with_layer_mask(self.cfg.layers.clone());
                for id in &plan.neurons {
                    let value = plan
                        .fixed_values
                        .as_ref()
                        .map(|v| format_value(v[id] as f64))
                        .unwrap_or_default();
                    csv.push_str(&format!("{kind},{lang},{},{},{value}\n", id.layer, id.unit));
                }
                plans.push(plan.clone());
                self.plans.insert((kind, lang.clone()), plan);
            }
        }
        #[derive(Serialize)]
        struct Factors<'a> {
            plans: &'a [SteeringPlan],
        }
        self.out.json("factors.json", &Factors { plans: &plans })?;
        self.out.csv("factors.csv", &csv)
    }

    fn plan(&self, kind: FactorKind, lang: &str, stage: Stage) -> Result<&SteeringPlan> {
        Self::require(self.plans.get(&(kind, lang.to_string())), stage, Stage::Factors)
    }

    fn lss(&mut self) -> Result<()> {
        let probes_path = self
            .cfg
            .probes
            .as_ref()
            .ok_or_else(|| CliError::Config("the lss stage needs a probes file".into()))?;
        let probes: ProbeSet = load_probes(self.cfg.resolve(probes_path), &self.cfg.languages)?;
        info!(
            "{} probes kept, {} dropped as duplicates, {} incomplete",
            probes.items.len(),
            probes.dropped_duplicates,
            probes.dropped_incomplete
        );
        let langs = &self.cfg.languages;
        let mut summary_rows = Vec::new();
        for &kind in &self.cfg.factors {
            let mut results: Vec<LssResult> = Vec::new();
            let mut warnings = Vec::new();
            for source in langs {
                let items: Vec<_> = probes.for_language(source).cloned().collect();
                for target in langs.iter().filter(|t| *t != source) {
                    let items: Vec<_> = items
                        .iter()
                        .filter(|i| i.answers.contains_key(target))
                        .cloned()
                        .collect();
                    if items.is_empty() {
                        warnings.push(format!("no probes from {source} with an answer in {target}"));
                        continue;
                    }
                    let plan = self.plan(kind, target, Stage::Lss)?;
                    results.push(lss_score(&self.model, &items, source, target, plan)?);
                }
            }
            let matrix = lss_matrix(kind, langs, &results);
            let cells: Vec<f64> = matrix.defined().collect();
            let row = SummaryRow::new(kind, &cells);
            if let Some(mean) = row.mean {
                self.lss_means.insert(kind, mean);
            }
            summary_rows.push(row);
            #[derive(Serialize)]
            struct LssArtifact<'a> {
                factor: FactorKind,
                matrix: &'a LabeledMatrix,
                results: &'a [LssResult],
                dropped_duplicates: usize,
                dropped_incomplete: usize,
                warnings: &'a [String],
            }
            self.out.json(
                &format!("lss_{kind}.json"),
                &LssArtifact {
                    factor: kind,
                    matrix: &matrix,
                    results: &results,
                    dropped_duplicates: probes.dropped_duplicates,
                    dropped_incomplete: probes.dropped_incomplete,
                    warnings: &warnings,
                },
            )?;
            self.out.csv(&format!("lss_{kind}.csv"), &matrix.to_csv())?;
        }
        let mut csv = String::from("factor,mean,stddev,cells\n");
        for r in &summary_rows {
            let f = |v: Option<f64>| v.map(format_value).unwrap_or_default();
            csv.push_str(&format!("{},{},{},{}\n", r.factor, f(r.mean), f(r.stddev), r.cells));
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            factors: &'a [SummaryRow],
        }
        self.out.json("lss_summary.json", &Summary { factors: &summary_rows })?;
        self.out.csv("lss_summary.csv", &csv)
    }

    fn eval(&mut self) -> Result<()> {
        let kind = self.cfg.eval_factor;
        let langs = self.cfg.languages.clone();
        let plans: Vec<SteeringPlan> = langs
            .iter()
            .map(|l| self.plan(kind, l, Stage::Eval).cloned())
            .collect::<Result<_>>()?;

        let corpora = load_corpora(self.cfg, self.cfg.eval_corpora.as_ref().unwrap_or(&self.cfg.corpora))?;
        let ppl = self.delta(&langs, &plans, |model, i, plan| perplexity(model, &corpora[i], plan))?;
        self.emit_delta("ppl", &ppl)?;

        if let Some(path) = &self.cfg.mc {
            let items = load_mc(self.cfg.resolve(path))?;
            let by_lang: Vec<Vec<McItem>> = langs
                .iter()
                .map(|l| items.iter().filter(|i| &i.lang == l).cloned().collect())
                .collect();
            let mc = self.delta(&langs, &plans, |model, i, plan| mc_accuracy(model, &by_lang[i], plan))?;
            self.emit_delta("mc", &mc)?;
        }

        if let Some(paths) = &self.cfg.translations {
            let pairs: Vec<Vec<TranslationPair>> = langs
                .iter()
                .map(|l| {
                    let path = paths.get(l).ok_or_else(|| {
                        CliError::Config(format!("no translation pairs into {l:?}"))
                    })?;
                    Ok(load_translations(self.cfg.resolve(path))?)
                })
                .collect::<Result<_>>()?;
            let generation = self.cfg.generation.clone();
            for (name, template) in [("targeted", &generation.targeted), ("untargeted", &generation.untargeted)] {
                let bleu = self.delta(&langs, &plans, |model, i, plan| {
                    translation_bleu(model, &pairs[i], template, &langs[i], plan, generation.max_new_tokens)
                })?;
                self.emit_delta(&format!("bleu_{name}"), &bleu)?;
            }
        }
        Ok(())
    }

    /// Metric for input language `i` with no plan and under every language's
    /// plan, reduced to a delta matrix.
    fn delta<F>(&self, langs: &[String], plans: &[SteeringPlan], metric: F) -> Result<MetricTable>
    where
        F: Fn(&Model, usize, Option<&SteeringPlan>) -> neurosteer_core::Result<f64>,
    {
        let mut baseline = BTreeMap::new();
        let mut intervened = BTreeMap::new();
        for (i, input) in langs.iter().enumerate() {
            baseline.insert(input.clone(), metric(&self.model, i, None)?);
            for (j, steer) in langs.iter().enumerate() {
                intervened.insert((input.clone(), steer.clone()), metric(&self.model, i, Some(&plans[j]))?);
            }
        }
        let deltas = delta_matrix("", langs, &baseline, &intervened)?;
        Ok(MetricTable {
            deltas,
            baseline,
            intervened: intervened.into_iter().map(|((i, j), v)| (i, j, v)).collect(),
        })
    }

    fn emit_delta(&mut self, metric: &str, table: &MetricTable) -> Result<()> {
        let mut deltas = table.deltas.clone();
        deltas.name = format!("deltas_{metric}");
        #[derive(Serialize)]
        struct DeltaArtifact<'a> {
            factor: FactorKind,
            metric: &'a str,
            deltas: &'a DeltaMatrix,
            baseline: &'a BTreeMap<String, f64>,
            intervened: &'a [(String, String, f64)],
        }
        self.out.json(
            &format!("deltas_{metric}.json"),
            &DeltaArtifact {
                factor: self.cfg.eval_factor,
                metric,
                deltas: &deltas,
                baseline: &table.baseline,
                intervened: &table.intervened,
            },
        )?;
        self.out.csv(&format!("deltas_{metric}.csv"), &deltas.to_labeled().to_csv())
    }
}

struct MetricTable {
    deltas: DeltaMatrix,
    baseline: BTreeMap<String, f64>,
    intervened: Vec<(String, String, f64)>,
}

/// Mean and population standard deviation of one factor's defined cells.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub factor: FactorKind,
    pub mean: Option<f64>,
    pub stddev: Option<f64>,
    pub cells: usize,
}

impl SummaryRow {
    fn new(factor: FactorKind, cells: &[f64]) -> Self {
        let n = cells.len() as f64;
        let mean = (!cells.is_empty()).then(|| cells.iter().sum::<f64>() / n);
        let stddev = mean.map(|m| (cells.iter().map(|c| (c - m).powi(2)).sum::<f64>() / n).sqrt());
        SummaryRow {
            factor,
            mean,
            stddev,
            cells: cells.len(),
        }
    }
}
