//! Writes the hand-wired bilingual model, its data and a ready-to-run
//! config into one directory.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use neurosteer_core::synthetic::{build_synthetic_bilingual_model, generate, synthetic_config, DataSpec};
use neurosteer_core::weights::save_model;
use serde::Serialize;

use crate::config::{GenerationSection, IdentifySection, ModelSpec, RunConfig};
use crate::error::{CliError, Result};

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|source| CliError::Output {
            path: path.to_path_buf(),
            source,
        })
}

/// Returns the path of the written `config.json`.
pub fn write_synthetic_setup(dir: &Path, spec: &DataSpec, boost: f32) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })?;
    let model = build_synthetic_bilingual_model(&synthetic_config(spec.seed), boost)?;
    save_model(&model, dir.join("model.nsl"))?;

    let data = generate(spec);
    // Perplexity is measured on held-out sentences.
    let held_out = generate(&DataSpec {
        seed: spec.seed.wrapping_add(1),
        ..spec.clone()
    });
    let mut corpora = BTreeMap::new();
    let mut eval_corpora = BTreeMap::new();
    for (train, test) in data.corpora.iter().zip(&held_out.corpora) {
        let lang = &train.language;
        let name = format!("corpus_{lang}.jsonl");
        train.write_jsonl(dir.join(&name))?;
        corpora.insert(lang.clone(), name);
        let name = format!("eval_{lang}.jsonl");
        test.write_jsonl(dir.join(&name))?;
        eval_corpora.insert(lang.clone(), name);
    }
    write_jsonl(&dir.join("probes.jsonl"), &data.probes)?;
    write_jsonl(&dir.join("mc.jsonl"), &data.mc)?;
    let mut translations = BTreeMap::new();
    for (lang, pairs) in &data.translations {
        let name = format!("translations_{lang}.jsonl");
        write_jsonl(&dir.join(&name), pairs)?;
        translations.insert(lang.clone(), name);
    }

    let cfg = RunConfig {
        model: ModelSpec::File {
            path: "model.nsl".into(),
        },
        languages: data.corpora.iter().map(|c| c.language.clone()).collect(),
        corpora,
        eval_corpora: Some(eval_corpora),
        probes: Some("probes.jsonl".into()),
        mc: Some("mc.jsonl".into()),
        translations: Some(translations),
        identify: IdentifySection::default(),
        factors: neurosteer_core::FactorKind::ALL.to_vec(),
        eval_factor: neurosteer_core::FactorKind::Pmax,
        layers: None,
        out_dir: "out".into(),
        seed: spec.seed,
        threads: None,
        generation: GenerationSection::default(),
        base_dir: PathBuf::new(),
    };
    let path = dir.join("config.json");
    let mut bytes = serde_json::to_vec_pretty(&cfg)?;
    bytes.push(b'\n');
    std::fs::write(&path, bytes).map_err(|source| CliError::Output {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}
