//! End-to-end experiment plumbing: seed labels, fitting with a validation
//! split, evaluation and the source-by-target grid.

use std::path::PathBuf;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::data::{split_indices, ExampleRecord};
use crate::error::{Error, Result};
use crate::eval::{f1_report, CellStatus, EvalReport, F1Report, GridCell};
use crate::losses::SoftLabel;
use crate::model::{DisentangleModel, ModelConfig};
use crate::pretrained::load_backbone;
use crate::text::{TokenSequence, Vocab};
use crate::train::{
    sha256_hex, train, Checkpoint, EvalSet, StepRecord, TrainConfig, TrainOutcome, TrainSet,
};
use crate::weak::lexicon::Lexicon;
use crate::weak::llm::{live_transport, LlmLabeler, PromptTemplate, ReplayTransport, Transport};
use crate::weak::taxonomy::TargetTaxonomy;
use crate::weak::{corrupt_labels, gold_labels, lexicon_labels, WeakLabelKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabConfig {
    pub min_count: usize,
    pub max_size: Option<usize>,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            min_count: 1,
            max_size: Some(20_000),
        }
    }
}

/// Where seed target labels come from, plus optional planted noise.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeakConfig {
    pub kind: WeakLabelKind,
    /// Lexicon file; the shipped seed lexicon when absent.
    pub lexicon: Option<PathBuf>,
    /// Recorded labeler exchanges; without one, the external labeler goes live.
    pub replay: Option<PathBuf>,
    pub template: Option<String>,
    pub noise_rate: f64,
    pub noise_seed: u64,
}

impl WeakConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!(
                "weak.noise_rate must lie in [0, 1], got {}",
                self.noise_rate
            )));
        }
        Ok(())
    }

    pub fn load_lexicon(&self, taxonomy: &TargetTaxonomy) -> Result<Lexicon> {
        match &self.lexicon {
            Some(p) => Lexicon::load(p, taxonomy),
            None => Lexicon::seed(taxonomy),
        }
    }

    /// Seed labels for `records`, with planted noise applied last.
    pub fn labels(
        &self,
        records: &[ExampleRecord],
        taxonomy: &TargetTaxonomy,
    ) -> Result<Vec<SoftLabel<f64>>> {
        self.validate()?;
        let clean = match self.kind {
            WeakLabelKind::Lexicon => lexicon_labels(records, &self.load_lexicon(taxonomy)?),
            WeakLabelKind::GoldPassthrough => gold_labels(records, taxonomy)?,
            WeakLabelKind::ExternalLlm => {
                let transport: Box<dyn Transport> = match &self.replay {
                    Some(p) => Box::new(ReplayTransport::load(p)?),
                    None => live_transport()?,
                };
                let mut labeler =
                    LlmLabeler::new(transport, taxonomy.clone(), self.load_lexicon(taxonomy)?);
                if let Some(t) = &self.template {
                    labeler.template = PromptTemplate(t.clone());
                }
                records.iter().map(|r| labeler.label(&r.text).0).collect()
            }
        };
        if self.noise_rate > 0.0 {
            let (noisy, flipped) = corrupt_labels(&clean, self.noise_rate, self.noise_seed)?;
            info!(
                "planted noise in {} of {} seed labels",
                flipped.iter().filter(|f| **f).count(),
                clean.len()
            );
            return Ok(noisy);
        }
        Ok(clean)
    }
}

/// Everything a grid or a single training run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab: VocabConfig,
    pub weak: WeakConfig,
    /// Held-out share of the source corpus for in-dataset grid cells.
    pub test_fraction: f64,
    /// Directory of an external encoder/decoder pair; the small
    /// from-scratch transformer when absent.
    pub backbone: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            vocab: VocabConfig::default(),
            weak: WeakConfig::default(),
            test_fraction: 0.2,
            backbone: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.weak.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

pub fn tokenize(vocab: &Vocab, records: &[ExampleRecord], max_len: usize) -> Vec<TokenSequence> {
    records
        .iter()
        .map(|r| vocab.tokenize(&r.text, max_len))
        .collect()
}

pub fn to_f32_labels(labels: &[SoftLabel<f64>]) -> Result<Vec<SoftLabel<f32>>> {
    labels
        .iter()
        .map(|l| SoftLabel::from_probs(&l.probs().iter().map(|&p| p as f32).collect::<Vec<_>>()))
        .collect()
}

pub struct Fitted {
    pub checkpoint: Checkpoint,
    pub outcome: TrainOutcome,
}

/// A fresh model and its vocabulary: built from `records` for the toy
/// backend, read from the backbone directory otherwise.
pub fn init_model(
    records: &[ExampleRecord],
    cfg: &ExperimentConfig,
) -> Result<(DisentangleModel<f32>, Vocab)> {
    match &cfg.backbone {
        Some(dir) => load_backbone(dir, &cfg.model, cfg.train.seed),
        None => {
            let vocab = Vocab::build(
                records.iter().map(|r| r.text.as_str()),
                cfg.vocab.min_count,
                cfg.vocab.max_size,
            );
            let model_cfg = ModelConfig {
                vocab_size: vocab.len(),
                ..cfg.model.clone()
            };
            Ok((DisentangleModel::new(model_cfg, cfg.train.seed)?, vocab))
        }
    }
}

/// Initializes a model, holds out a stratified validation split of
/// `records` and trains on the rest.
pub fn fit(
    records: &[ExampleRecord],
    seed_labels: &[SoftLabel<f64>],
    cfg: &ExperimentConfig,
    observer: impl FnMut(&StepRecord),
) -> Result<Fitted> {
    if records.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    if seed_labels.len() != records.len() {
        return Err(Error::Shape {
            what: "seed labels",
            expected: records.len(),
            got: seed_labels.len(),
        });
    }
    cfg.train.validate()?;
    let (tr, va) = split_indices(records, cfg.train.val_fraction, cfg.train.seed)?;
    let (model, vocab) = init_model(records, cfg)?;
    let max_len = model.config().max_len;
    let labels32 = to_f32_labels(seed_labels)?;
    let data = TrainSet {
        seqs: tr
            .iter()
            .map(|&i| vocab.tokenize(&records[i].text, max_len))
            .collect(),
        hate: tr.iter().map(|&i| records[i].hate).collect(),
        seed_labels: tr.iter().map(|&i| labels32[i].clone()).collect(),
    };
    let val = EvalSet {
        seqs: va
            .iter()
            .map(|&i| vocab.tokenize(&records[i].text, max_len))
            .collect(),
        hate: va.iter().map(|&i| records[i].hate).collect(),
    };
    let outcome = train(model, &data, &val, &cfg.train, observer)?;
    let checkpoint = Checkpoint::from_outcome(&outcome, vocab, cfg.train.clone());
    Ok(Fitted {
        checkpoint,
        outcome,
    })
}

/// Hate macro-F1 of `model` on `records`. Over-long texts are truncated.
pub fn evaluate(
    model: &DisentangleModel<f32>,
    vocab: &Vocab,
    records: &[ExampleRecord],
) -> Result<F1Report> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation corpus"));
    }
    let preds = model.predict_hate(&tokenize(vocab, records, model.config().max_len))?;
    let labels: Vec<u8> = records.iter().map(|r| r.hate).collect();
    f1_report(&preds, &labels)
}

/// A named corpus entering the grid.
#[derive(Clone, Debug)]
pub struct NamedCorpus {
    pub name: String,
    pub records: Vec<ExampleRecord>,
}

const TEST_SPLIT_SALT: u64 = 0x7e57_5eed;

/// Splits a source corpus into the part used for fitting and the held-out
/// in-dataset test part.
pub fn source_split(
    records: &[ExampleRecord],
    cfg: &ExperimentConfig,
) -> Result<(Vec<ExampleRecord>, Vec<ExampleRecord>)> {
    let (fit_idx, test_idx) =
        split_indices(records, cfg.test_fraction, cfg.train.seed ^ TEST_SPLIT_SALT)?;
    Ok((
        fit_idx.iter().map(|&i| records[i].clone()).collect(),
        test_idx.iter().map(|&i| records[i].clone()).collect(),
    ))
}

/// Trains once per source and evaluates on every target. A target with the
/// source's name is scored on the held-out source split; any other target on
/// its whole corpus. Failures are recorded in the cell and do not stop the
/// grid. `labeler` supplies seed labels for the fitting part of a source.
pub fn cross_platform_grid(
    sources: &[NamedCorpus],
    targets: &[NamedCorpus],
    cfg: &ExperimentConfig,
    mut labeler: impl FnMut(&NamedCorpus, &[ExampleRecord]) -> Result<Vec<SoftLabel<f64>>>,
) -> Result<EvalReport> {
    if sources.is_empty() || targets.is_empty() {
        return Err(Error::Config(
            "the grid needs at least one source and one target".into(),
        ));
    }
    cfg.validate()?;
    let mut report = EvalReport {
        cells: Vec::new(),
        config_hash: cfg.hash(),
    };
    for src in sources {
        let fitted = source_split(&src.records, cfg).and_then(|(fit_part, test_part)| {
            let labels = labeler(src, &fit_part)?;
            info!("training on {} ({} posts)", src.name, fit_part.len());
            let f = fit(&fit_part, &labels, cfg, |_| {})?;
            Ok((f.checkpoint, test_part))
        });
        for tgt in targets {
            let cell = match &fitted {
                Err(e) => failed_cell(src, tgt, format!("training failed: {e}")),
                Ok((ckpt, test_part)) => {
                    let records = if tgt.name == src.name {
                        test_part.as_slice()
                    } else {
                        tgt.records.as_slice()
                    };
                    match evaluate(&ckpt.model, &ckpt.vocab, records) {
                        Ok(r) => GridCell {
                            source: src.name.clone(),
                            target: tgt.name.clone(),
                            macro_f1: Some(r.macro_f1),
                            n_examples: r.n,
                            status: CellStatus::Ok,
                        },
                        Err(e) => failed_cell(src, tgt, e.to_string()),
                    }
                }
            };
            if let CellStatus::Failed(m) = &cell.status {
                warn!("cell {} -> {} failed: {m}", src.name, tgt.name);
            }
            report.cells.push(cell);
        }
    }
    Ok(report)
}

fn failed_cell(src: &NamedCorpus, tgt: &NamedCorpus, msg: String) -> GridCell {
    GridCell {
        source: src.name.clone(),
        target: tgt.name.clone(),
        macro_f1: None,
        n_examples: 0,
        status: CellStatus::Failed(msg),
    }
}
