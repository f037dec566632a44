//! Stage directories and their manifests.
//!
//! Each stage writes `<workspace>/<dir>/manifest.json` recording the SHA-256
//! of every input file it read and every output it wrote. A later stage
//! re-hashes the recorded files of all its upstream stages, so an edited
//! dataset or a hand-modified artifact is reported instead of silently used.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Analyze,
    Count,
    Learn,
    Predict,
    Evaluate,
    Bench,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Analyze => "analyze",
            Stage::Count => "count",
            Stage::Learn => "learn",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
            Stage::Bench => "bench",
        }
    }

    pub fn dir(self) -> &'static str {
        match self {
            Stage::Analyze => "vdb",
            Stage::Count => "cdb",
            Stage::Learn => "mdb",
            Stage::Predict => "predictions",
            Stage::Evaluate => "metrics",
            Stage::Bench => "bench",
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Analyze => &[],
            Stage::Count => &[Stage::Analyze],
            Stage::Learn => &[Stage::Analyze, Stage::Count],
            Stage::Predict | Stage::Evaluate | Stage::Bench => &[Stage::Analyze, Stage::Count, Stage::Learn],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    /// Input file path to SHA-256. Workspace files are relative to the workspace.
    pub inputs: BTreeMap<String, String>,
    pub config: serde_json::Value,
    /// Output file path (relative to the stage directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct Workspace {
    root: PathBuf,
    overwrite: bool,
}

impl Workspace {
    pub fn new(root: PathBuf, overwrite: bool) -> Workspace {
        Workspace { root, overwrite }
    }

    pub fn overwrite(&self) -> bool {
        self.overwrite
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.dir())
    }

    pub fn read_manifest(&self, stage: Stage) -> Result<StageManifest, Failure> {
        let path = self.stage_dir(stage).join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|_| {
            Failure::Missing(format!(
                "{} not found; run `relbn {}` first",
                path.display(),
                stage.name()
            ))
        })?;
        serde_json::from_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
    }

    fn resolve(&self, recorded: &str) -> PathBuf {
        let p = Path::new(recorded);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Check that every upstream stage of `stage` exists and that the files
    /// it read and wrote are unchanged. Returns the upstream manifests.
    pub fn require_upstream(&self, stage: Stage) -> Result<BTreeMap<&'static str, StageManifest>, Failure> {
        let mut out = BTreeMap::new();
        for &up in stage.upstream() {
            let m = self.read_manifest(up)?;
            let stale = |what: &str| {
                Failure::Missing(format!(
                    "{what} changed since `relbn {}` ran; rerun `relbn {}`",
                    up.name(),
                    up.name()
                ))
            };
            for (path, hash) in &m.inputs {
                match sha256_file(&self.resolve(path)) {
                    Ok(h) if &h == hash => {}
                    _ => return Err(stale(path)),
                }
            }
            let dir = self.stage_dir(up);
            for (path, hash) in &m.outputs {
                match sha256_file(&dir.join(path)) {
                    Ok(h) if &h == hash => {}
                    _ => return Err(stale(&format!("{}/{path}", up.dir()))),
                }
            }
            out.insert(up.name(), m);
        }
        Ok(out)
    }

    /// Create an empty directory for `stage`, clearing an old one only with
    /// `--overwrite`.
    pub fn begin(&self, stage: Stage) -> Result<PathBuf, Failure> {
        let dir = self.stage_dir(stage);
        prepare_dir(&dir, self.overwrite)?;
        Ok(dir)
    }

    /// Input record for a workspace file: its path relative to the workspace
    /// and its hash.
    pub fn input(&self, path: &Path) -> Result<(String, String), Failure> {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        Ok((rel.to_string_lossy().into_owned(), sha256_file(path)?))
    }

    /// Write the manifest for `stage`, hashing every file under its directory.
    pub fn finish(
        &self,
        stage: Stage,
        inputs: BTreeMap<String, String>,
        config: serde_json::Value,
    ) -> Result<StageManifest, Failure> {
        let dir = self.stage_dir(stage);
        let manifest = StageManifest {
            stage: stage.name().into(),
            inputs,
            config,
            outputs: hash_tree(&dir)?,
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        Ok(manifest)
    }
}

/// Make `dir` exist and be empty. An existing non-empty directory is an
/// error unless `overwrite` is set.
pub fn prepare_dir(dir: &Path, overwrite: bool) -> Result<(), Failure> {
    let occupied = fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied {
        if !overwrite {
            return Err(Failure::Invalid(format!(
                "{} already exists; pass --overwrite to replace it",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).map_err(|e| Failure::Invalid(format!("{}: {e}", dir.display())))?;
    }
    fs::create_dir_all(dir).map_err(|e| Failure::Invalid(format!("{}: {e}", dir.display())))
}

pub fn hash_tree(dir: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|e| Failure::Invalid(format!("{}: {e}", d.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| Failure::Invalid(e.to_string()))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "manifest.json") {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, sha256_file(&path)?);
            }
        }
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Invalid(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}
