//! Pipeline settings. Command-line flags build a base config; a TOML file
//! passed with `--config` is merged over it key by key.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use relbn::learn::LearnConfig;
use relbn::predict::{Mode, DEFAULT_ALPHA};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CountMode {
    /// One joint table up front; family tables by summation.
    #[default]
    Precount,
    /// Family tables queried as the learner asks for them.
    OnDemand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PredictMode {
    #[default]
    Block,
    Single,
}

impl From<PredictMode> for Mode {
    fn from(m: PredictMode) -> Mode {
        match m {
            PredictMode::Block => Mode::Block,
            PredictMode::Single => Mode::Single,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub alpha: f64,
    pub mode: PredictMode,
}

impl Default for PredictConfig {
    fn default() -> PredictConfig {
        PredictConfig {
            alpha: DEFAULT_ALPHA,
            mode: PredictMode::Block,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub workspace: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub backend: String,
    pub count_mode: CountMode,
    /// Refuse to build a joint table with more rows than this.
    pub max_joint_rows: u64,
    pub learn: LearnConfig,
    pub predict: PredictConfig,
}

impl PipelineConfig {
    /// Overlay the TOML file at `path` on `self`.
    pub fn merge_file(self, path: &Path) -> Result<PipelineConfig, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
        let file: toml::Table = text
            .parse()
            .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
        let mut base = toml::Table::try_from(&self).map_err(|e| Failure::Invalid(e.to_string()))?;
        merge(&mut base, file);
        toml::Value::Table(base)
            .try_into()
            .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if !(self.predict.alpha >= 0.0 && self.predict.alpha.is_finite()) {
            return Err(Failure::Invalid(format!(
                "predict.alpha must be finite and ≥ 0, got {}",
                self.predict.alpha
            )));
        }
        if self.backend != "builtin" && !self.backend.starts_with("sqlite:") {
            return Err(Failure::Invalid(format!(
                "unknown backend `{}`; use `builtin`, `sqlite::memory:` or `sqlite:<path>`",
                self.backend
            )));
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
