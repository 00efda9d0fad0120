//! Artifact directory: fingerprinted CSV/JSON/SVG files and the manifest
//! recording which stages completed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "MANIFEST.json";

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Profiles,
    Identify,
    Factors,
    Lss,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Profiles,
        Stage::Identify,
        Stage::Factors,
        Stage::Lss,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Profiles => "profiles",
            Stage::Identify => "identify",
            Stage::Factors => "factors",
            Stage::Lss => "lss",
            Stage::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "state")]
pub enum StageState {
    Pending,
    Complete,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fingerprint: String,
    pub stages: BTreeMap<Stage, StageState>,
    /// Relative path → SHA-256 of every artifact written so far.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(fingerprint: String) -> Self {
        Manifest {
            fingerprint,
            stages: Stage::ALL.iter().map(|&s| (s, StageState::Pending)).collect(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let bytes = std::fs::read(&path).map_err(|e| neurosteer_core::Error::Io { path, source: e })?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Stages not marked complete, in pipeline order.
    pub fn missing(&self) -> Vec<String> {
        Stage::ALL
            .iter()
            .filter(|s| self.stages.get(s) != Some(&StageState::Complete))
            .map(|s| s.name().to_string())
            .collect()
    }
}

/// Writes artifacts under one directory and keeps the manifest current.
pub struct ArtifactDir {
    root: PathBuf,
    pub manifest: Manifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| CliError::Output {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, bytes).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

impl ArtifactDir {
    /// Starts a fresh manifest; existing artifacts are overwritten as the
    /// stages rerun.
    pub fn create(root: PathBuf, fingerprint: String) -> Result<Self> {
        let dir = ArtifactDir {
            root,
            manifest: Manifest::new(fingerprint),
        };
        dir.save_manifest()?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn fingerprint(&self) -> &str {
        &self.manifest.fingerprint
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_file(&self.root.join(name), bytes)?;
        self.manifest.artifacts.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Pretty JSON object holding `value`'s fields plus `fingerprint`.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let bytes = fingerprinted_json(self.fingerprint(), value)?;
        self.put(name, &bytes)
    }

    /// CSV preceded by a `# fingerprint:` comment line.
    pub fn csv(&mut self, name: &str, body: &str) -> Result<()> {
        let text = format!("# fingerprint: {}\n{body}", self.fingerprint());
        self.put(name, text.as_bytes())
    }

    pub fn raw(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.put(name, bytes)
    }

    pub fn set_stage(&mut self, stage: Stage, state: StageState) -> Result<()> {
        self.manifest.stages.insert(stage, state);
        self.save_manifest()
    }

    fn save_manifest(&self) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest)?;
        bytes.push(b'\n');
        write_file(&self.root.join(MANIFEST), &bytes)
    }
}

pub fn fingerprinted_json<T: Serialize>(fingerprint: &str, value: &T) -> Result<Vec<u8>> {
    let mut object = serde_json::Map::new();
    object.insert("fingerprint".into(), fingerprint.into());
    match serde_json::to_value(value)? {
        serde_json::Value::Object(fields) => object.extend(fields),
        other => {
            object.insert("data".into(), other);
        }
    }
    let mut bytes = serde_json::to_vec_pretty(&object)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Removes the fingerprint comment so a CSV can be compared or parsed.
pub fn strip_csv_header(text: &str) -> &str {
    match text.strip_prefix("# fingerprint: ") {
        Some(rest) => rest.split_once('\n').map_or("", |(_, body)| body),
        None => text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_missing_stages_in_order() {
        let mut m = Manifest::new("f".into());
        m.stages.insert(Stage::Identify, StageState::Complete);
        m.stages.insert(Stage::Lss, StageState::Failed { error: "x".into() });
        assert_eq!(m.missing(), ["profiles", "factors", "lss", "eval"]);
    }

    #[test]
    fn json_artifacts_carry_the_fingerprint() {
        #[derive(Serialize)]
        struct V {
            a: u8,
        }
        let bytes = fingerprinted_json("abc", &V { a: 1 }).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["fingerprint"], "abc");
        assert_eq!(v["a"], 1);
        assert_eq!(strip_csv_header("# fingerprint: abc\nx,y\n"), "x,y\n");
    }
}
