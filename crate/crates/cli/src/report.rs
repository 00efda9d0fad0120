//! Renders every matrix artifact of a completed run as an SVG heatmap.

use std::path::{Path, PathBuf};

use neurosteer_core::eval::DeltaMatrix;
use neurosteer_core::table::LabeledMatrix;
use serde::Deserialize;

use crate::artifacts::{sha256_hex, Manifest, MANIFEST};
use crate::error::{CliError, Result};
use crate::svg::{heatmap, Scale};

#[derive(Deserialize)]
struct Wrapped<T> {
    matrix: Option<T>,
    deltas: Option<DeltaMatrix>,
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let bytes = std::fs::read(path).map_err(|e| neurosteer_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// The matrix held by a JSON artifact and how to color it, if it holds one.
fn matrix_of(name: &str, value: serde_json::Value) -> Result<Option<(LabeledMatrix, Scale)>> {
    if name == "overlap.json" {
        return Ok(Some((serde_json::from_value(value)?, Scale::Sequential)));
    }
    if !(name.starts_with("lss_") || name.starts_with("deltas_")) || name == "lss_summary.json" {
        return Ok(None);
    }
    let wrapped: Wrapped<LabeledMatrix> = serde_json::from_value(value)?;
    Ok(match (wrapped.matrix, wrapped.deltas) {
        (Some(m), _) => Some((m, Scale::Sequential)),
        (None, Some(d)) => Some((d.to_labeled(), Scale::Diverging)),
        (None, None) => None,
    })
}

/// Writes `report/<name>.svg` for each matrix artifact and records their
/// hashes in the manifest. Refuses unless every stage is complete.
pub fn emit_report(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut manifest = Manifest::read(dir)?;
    let missing = manifest.missing();
    if !missing.is_empty() {
        return Err(CliError::Incomplete(missing));
    }
    let names: Vec<String> = manifest
        .artifacts
        .keys()
        .filter(|k| k.ends_with(".json") && !k.contains('/'))
        .cloned()
        .collect();
    let mut written = Vec::new();
    for name in names {
        let Some((matrix, scale)) = matrix_of(&name, read_json(&dir.join(&name))?)? else {
            continue;
        };
        let svg = heatmap(&matrix, scale, &manifest.fingerprint);
        let rel = format!("report/{}.svg", name.trim_end_matches(".json"));
        let path = dir.join(&rel);
        std::fs::create_dir_all(path.parent().expect("has parent")).map_err(|source| CliError::Output {
            path: dir.join("report"),
            source,
        })?;
        std::fs::write(&path, svg.as_bytes()).map_err(|source| CliError::Output {
            path: path.clone(),
            source,
        })?;
        manifest.artifacts.insert(rel, sha256_hex(svg.as_bytes()));
        written.push(path);
    }
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    let path = dir.join(MANIFEST);
    std::fs::write(&path, bytes).map_err(|source| CliError::Output { path, source })?;
    Ok(written)
}
