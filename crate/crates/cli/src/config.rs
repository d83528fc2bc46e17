//! The TOML run configuration. Flags override the file, the file overrides
//! built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use disentangle::model::ModelConfig;
use disentangle::pipeline::{ExperimentConfig, VocabConfig, WeakConfig};
use disentangle::train::TrainConfig;

use crate::failure::{Failure, Outcome};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Canonical corpus used by `train`.
    pub train: Option<PathBuf>,
    /// Seed labels from `weaklabel`; computed from `[weak]` when absent.
    pub labels: Option<PathBuf>,
    pub sources: Vec<PathBuf>,
    pub targets: Vec<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Toy,
    Pretrained,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub backbone: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab: VocabConfig,
    pub weak: WeakConfig,
    pub test_fraction: f64,
    pub data: DataConfig,
    pub backend: BackendConfig,
}

impl Default for FileConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            model: e.model,
            train: e.train,
            vocab: e.vocab,
            weak: e.weak,
            test_fraction: e.test_fraction,
            data: DataConfig::default(),
            backend: BackendConfig::default(),
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_steps: Option<usize>,
    pub backend: Option<BackendKind>,
    pub backbone: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Outcome<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let body = fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&body)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        // relative paths in the file are taken from the file's directory
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in cfg.data.train.iter_mut().chain(cfg.data.labels.iter_mut()) {
            rebase(p);
        }
        cfg.data
            .sources
            .iter_mut()
            .chain(cfg.data.targets.iter_mut())
            .for_each(rebase);
        for p in cfg
            .backend
            .backbone
            .iter_mut()
            .chain(cfg.weak.lexicon.iter_mut())
            .chain(cfg.weak.replay.iter_mut())
        {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.train.seed = s;
        }
        if let Some(n) = o.max_steps {
            self.train.max_steps = n;
        }
        if let Some(b) = o.backend {
            self.backend.kind = b;
        }
        if let Some(p) = &o.backbone {
            self.backend.backbone = Some(p.clone());
        }
    }

    pub fn experiment(&self) -> Outcome<ExperimentConfig> {
        let backbone = match self.backend.kind {
            BackendKind::Toy => None,
            BackendKind::Pretrained => Some(self.backend.backbone.clone().ok_or_else(|| {
                Failure::config(
                    "backend.kind = \"pretrained\" needs backend.backbone or --backbone",
                )
            })?),
        };
        let e = ExperimentConfig {
            model: self.model.clone(),
            train: self.train.clone(),
            vocab: self.vocab.clone(),
            weak: self.weak.clone(),
            test_fraction: self.test_fraction,
            backbone,
        };
        e.validate()?;
        Ok(e)
    }
}
