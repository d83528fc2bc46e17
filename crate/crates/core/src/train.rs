//! The multi-task training loop, early stopping and checkpoints.

use std::fs;
use std::path::Path;

use log::{debug, info};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::eval::{f1_report, F1Report};
use crate::losses::{
    compose_losses, conf_regularizer_var, contrastive_loss_var, hate_loss_var,
    high_confidence_indices, kl_causal_var, recon_loss_var, target_loss_var, LossBreakdown,
    LossCoefficients, LossParts, SoftLabel,
};
use crate::model::{DisentangleModel, ModelConfig};
use crate::nn::{AdamW, AdamWConfig, AdamWState, NamedTensor, Session};
use crate::scalar::Scalar;
use crate::text::{Batch, TokenSequence, Vocab};
use crate::weak::teacher::PseudoLabelState;

/// Relative tolerance of the per-step composition audit.
pub const AUDIT_TOLERANCE: f64 = 1e-6;
/// Relative agreement required between the differentiated f32 total and the
/// f64 recomposition.
pub const GRAPH_TOTAL_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub dropout: f64,
    pub alpha_t: f64,
    pub alpha_c: f64,
    pub delta_cont: f64,
    pub delta_conf: f64,
    pub eta: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub patience: usize,
    pub eval_every: usize,
    pub weight_decay: f64,
    pub refresh_period: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            dropout: 0.2,
            alpha_t: 0.05,
            alpha_c: 0.05,
            delta_cont: 0.001,
            delta_conf: 0.001,
            eta: 0.95,
            beta: 2.0,
            batch_size: 32,
            max_steps: 2000,
            patience: 5,
            eval_every: 200,
            weight_decay: 0.01,
            refresh_period: 100,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lr", self.lr),
            ("alpha_t", self.alpha_t),
            ("alpha_c", self.alpha_c),
            ("delta_cont", self.delta_cont),
            ("delta_conf", self.delta_conf),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be a finite nonnegative number, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!(
                "eta must lie in [0, 1], got {}",
                self.eta
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.refresh_period == 0 {
            return Err(Error::Config(
                "batch_size, eval_every and refresh_period must be positive".into(),
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }

    pub fn coefficients(&self) -> LossCoefficients {
        LossCoefficients {
            alpha_t: self.alpha_t,
            alpha_c: self.alpha_c,
            delta_cont: self.delta_cont,
            delta_conf: self.delta_conf,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Tokenized training corpus with its seed weak labels.
#[derive(Clone, Debug)]
pub struct TrainSet<T> {
    pub seqs: Vec<TokenSequence>,
    pub hate: Vec<u8>,
    pub seed_labels: Vec<SoftLabel<T>>,
}

impl<T: Scalar> TrainSet<T> {
    pub fn validate(&self) -> Result<()> {
        if self.seqs.is_empty() {
            return Err(Error::Empty("training corpus"));
        }
        if self.hate.len() != self.seqs.len() || self.seed_labels.len() != self.seqs.len() {
            return Err(Error::Shape {
                what: "training labels",
                expected: self.seqs.len(),
                got: self.hate.len().min(self.seed_labels.len()),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvalSet {
    pub seqs: Vec<TokenSequence>,
    pub hate: Vec<u8>,
}

/// Patience-based early stopping on a metric that should increase.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<(f64, usize)>,
    pub since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records `metric` at `step`. Only strict improvements reset patience.
    pub fn observe(&mut self, metric: f64, step: usize) -> StopDecision {
        match self.best {
            Some((b, _)) if metric <= b => {
                self.since_best += 1;
                if self.since_best >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((metric, step));
                self.since_best = 0;
                StopDecision::Improved
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub selected: usize,
    pub breakdown: LossBreakdown,
}

pub struct TrainOutcome {
    /// Parameters of the best validation evaluation (the final ones when
    /// nothing was evaluated).
    pub model: DisentangleModel<f32>,
    pub optimizer: AdamWState,
    pub steps_run: usize,
    pub best_step: Option<usize>,
    pub history: Vec<EvalPoint>,
    pub steps: Vec<StepRecord>,
    pub refreshes: usize,
    pub empty_selection_steps: usize,
}

fn step_seed(seed: u64, step: usize) -> u64 {
    seed ^ (step as u64 + 1).wrapping_mul(0xd1b5_4a32_d192_ed03)
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
}

/// Validation macro-F1 of `model`.
pub fn validation_f1(model: &DisentangleModel<f32>, val: &EvalSet) -> Result<F1Report> {
    let preds = model.predict_hate(&val.seqs)?;
    f1_report(&preds, &val.hate)
}

/// Runs the training loop from `model`'s current parameters.
pub fn train(
    mut model: DisentangleModel<f32>,
    data: &TrainSet<f32>,
    val: &EvalSet,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate()?;
    for q in data.seqs.iter().chain(&val.seqs) {
        model.check_sequence(q)?;
    }
    let coeffs = cfg.coefficients();
    let mut opt = AdamW::new(cfg.optimizer(), &model.params);
    let mut teacher = PseudoLabelState::new(cfg.refresh_period)?;
    let mut stopper = EarlyStopping::new(cfg.patience.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.seqs.len()).collect();
    let mut cursor = order.len();
    let mut best = None;
    let mut history = Vec::new();
    let mut steps = Vec::with_capacity(cfg.max_steps);
    let mut empty_selection_steps = 0;
    let mut last: Option<LossBreakdown> = None;
    let h_causal = model.config().h_causal;
    let eta = cfg.eta as f32;
    let beta = cfg.beta as f32;

    let mut steps_run = 0;
    for step in 0..cfg.max_steps {
        if cursor + cfg.batch_size > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx: Vec<usize> = order[cursor..(cursor + cfg.batch_size).min(order.len())].to_vec();
        cursor += idx.len();
        let b = idx.len();
        let batch = Batch::from_sequences(idx.iter().map(|&i| &data.seqs[i]));
        let hate: Vec<u8> = idx.iter().map(|&i| data.hate[i]).collect();
        let noise = Array2::from_shape_simple_fn((b, h_causal), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            z as f32
        });
        let labels = teacher.labels(&model.arch, &idx, &data.seqs, &data.seed_labels)?;

        let params = &model.params;
        let mut s = Session::train(
            params,
            cfg.dropout,
            ChaCha8Rng::seed_from_u64(step_seed(cfg.seed, step)),
        );
        let v = model.arch.forward(&mut s, &batch, Some(noise), true);

        let chosen = high_confidence_indices(&labels, eta);
        let (contrastive, conf, target) = if chosen.is_empty() {
            debug!("step {step}: no pseudo-label reaches eta={eta}; skipping the selection terms");
            empty_selection_steps += 1;
            let z = s.g.scalar_constant(0.0);
            (z, z, z)
        } else {
            let sel_labels: Vec<SoftLabel<f32>> =
                chosen.iter().map(|&i| labels[i].clone()).collect();
            let classes: Vec<usize> = sel_labels.iter().map(SoftLabel::argmax).collect();
            let xw = s.g.select_rows(v.target, &chosen);
            let fp = s.g.select_rows(v.target_probs, &chosen);
            (
                contrastive_loss_var(&mut s.g, xw, &classes, beta),
                conf_regularizer_var(&mut s.g, fp),
                target_loss_var(&mut s.g, fp, &sel_labels),
            )
        };
        let recon_probs = v.recon_probs.expect("decoder ran");
        let recon = recon_loss_var(&mut s.g, recon_probs, &batch.ids, &batch.mask, b)?;
        let kl = kl_causal_var(&mut s.g, v.mu, v.log_var);
        let hate_term = hate_loss_var(&mut s.g, v.hate_probs, &hate)?;

        let scalar = |g: &crate::autodiff::Graph<f32>, x: Var| g.scalar(x) as f64;
        let parts = LossParts {
            contrastive: scalar(&s.g, contrastive),
            conf: scalar(&s.g, conf),
            target: scalar(&s.g, target),
            recon: scalar(&s.g, recon),
            kl_causal: scalar(&s.g, kl),
            hate: scalar(&s.g, hate_term),
        };
        let breakdown = compose_losses(parts, coeffs).map_err(|e| match e {
            Error::NonFinite { term, detail } => Error::NonFinite {
                term,
                detail: format!("{detail} at step {step}; previous breakdown {last:?}"),
            },
            other => other,
        })?;
        breakdown
            .audit(coeffs, AUDIT_TOLERANCE)
            .map_err(|m| Error::NonFinite {
                term: "loss composition".into(),
                detail: m,
            })?;

        let total = graph_total(
            &mut s.g,
            coeffs,
            [contrastive, conf, target, recon, kl, hate_term],
        );
        let graph_value = s.g.scalar(total) as f64;
        if !rel_close(graph_value, breakdown.total, GRAPH_TOTAL_TOLERANCE) {
            return Err(Error::NonFinite {
                term: "total".into(),
                detail: format!(
                    "graph total {graph_value} disagrees with composed total {}",
                    breakdown.total
                ),
            });
        }
        let mut grads = s.g.backward(total);
        let grads = s.param_grads(&mut grads);
        drop(s);
        opt.update(&mut model.params, &grads);

        let record = StepRecord {
            step,
            selected: chosen.len(),
            breakdown,
        };
        observer(&record);
        steps.push(record);
        last = Some(breakdown);
        steps_run = step + 1;
        teacher.refresh_teacher(steps_run, &model.params);

        if !val.seqs.is_empty() && (steps_run % cfg.eval_every == 0 || steps_run == cfg.max_steps) {
            let f1 = validation_f1(&model, val)?.macro_f1;
            history.push(EvalPoint {
                step: steps_run,
                macro_f1: f1,
            });
            info!(
                "step {steps_run}: total {:.4}, validation macro-F1 {f1:.4}",
                breakdown.total
            );
            match stopper.observe(f1, steps_run) {
                StopDecision::Improved => best = Some(model.params.clone()),
                StopDecision::Continue => {}
                StopDecision::Stop => {
                    info!("early stop at step {steps_run}");
                    break;
                }
            }
        }
    }

    let optimizer = opt.state(&model.params);
    let best_step = stopper.best.map(|(_, s)| s);
    if let Some(p) = best {
        model.params = p;
    }
    Ok(TrainOutcome {
        model,
        optimizer,
        steps_run,
        best_step,
        history,
        steps,
        refreshes: teacher.refreshes,
        empty_selection_steps,
    })
}

/// `hate + recon + alpha_t (target + delta_cont contrastive + delta_conf conf) + alpha_c kl`
/// on the tape. `terms` is `[contrastive, conf, target, recon, kl, hate]`.
pub fn graph_total<T: Scalar>(
    g: &mut crate::autodiff::Graph<T>,
    k: LossCoefficients,
    terms: [Var; 6],
) -> Var {
    let [contrastive, conf, target, recon, kl, hate] = terms;
    let c = g.scale(contrastive, T::of(k.delta_cont));
    let f = g.scale(conf, T::of(k.delta_conf));
    let d = g.add(target, c);
    let d = g.add(d, f);
    let d = g.scale(d, T::of(k.alpha_t));
    let kl = g.scale(kl, T::of(k.alpha_c));
    let vae = g.add(recon, d);
    let vae = g.add(vae, kl);
    g.add(hate, vae)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ParamsFile {
    step: usize,
    tensors: Vec<NamedTensor>,
    optimizer: AdamWState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub steps_run: usize,
    pub best_step: Option<usize>,
    pub history: Vec<EvalPoint>,
    pub config_hash: String,
}

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: DisentangleModel<f32>,
    pub vocab: Vocab,
    pub train: TrainConfig,
    pub optimizer: AdamWState,
    pub step: usize,
    pub metrics: Metrics,
}

impl Checkpoint {
    pub fn from_outcome(outcome: &TrainOutcome, vocab: Vocab, train: TrainConfig) -> Self {
        let run = RunConfig {
            model: outcome.model.config().clone(),
            train: train.clone(),
        };
        Self {
            model: outcome.model.clone(),
            vocab,
            train,
            optimizer: outcome.optimizer.clone(),
            step: outcome.steps_run,
            metrics: Metrics {
                steps_run: outcome.steps_run,
                best_step: outcome.best_step,
                history: outcome.history.clone(),
                config_hash: run.hash(),
            },
        }
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            model: self.model.config().clone(),
            train: self.train.clone(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let params = ParamsFile {
            step: self.step,
            tensors: self.model.params.to_named(),
            optimizer: self.optimizer.clone(),
        };
        fs::write(dir.join("params.json"), serde_json::to_vec(&params)?)?;
        fs::write(
            dir.join("config.json"),
            serde_json::to_vec_pretty(&self.run_config())?,
        )?;
        fs::write(
            dir.join("metrics.json"),
            serde_json::to_vec_pretty(&self.metrics)?,
        )?;
        self.vocab.save(&dir.join("vocab.txt"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let err = |msg: String| Error::Checkpoint {
            path: dir.to_path_buf(),
            msg,
        };
        let read = |name: &str| fs::read(dir.join(name)).map_err(|e| err(format!("{name}: {e}")));
        let run: RunConfig = serde_json::from_slice(&read("config.json")?)
            .map_err(|e| err(format!("config.json: {e}")))?;
        let params: ParamsFile = serde_json::from_slice(&read("params.json")?)
            .map_err(|e| err(format!("params.json: {e}")))?;
        let metrics: Metrics = serde_json::from_slice(&read("metrics.json")?)
            .map_err(|e| err(format!("metrics.json: {e}")))?;
        let vocab = Vocab::load(&dir.join("vocab.txt"))?;
        if vocab.len() != run.model.vocab_size {
            return Err(err(format!(
                "vocab.txt has {} entries, config expects {}",
                vocab.len(),
                run.model.vocab_size
            )));
        }
        let mut model = DisentangleModel::new(run.model, 0)?;
        model.params.load_named(&params.tensors).map_err(err)?;
        let mut opt = AdamW::new(run.train.optimizer(), &model.params);
        opt.restore(&params.optimizer).map_err(err)?;
        Ok(Self {
            model,
            vocab,
            train: run.train,
            optimizer: params.optimizer,
            step: params.step,
            metrics,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.dropout, c.eta, c.beta), (1e-4, 0.2, 0.95, 2.0));
        assert_eq!(c.coefficients(), LossCoefficients::default());
        assert!(c.validate().is_ok());
        assert!(TrainConfig {
            eta: 1.5,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            beta: 0.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig { alpha_t: -1.0, ..c }.validate().is_err());
    }

    #[test]
    fn early_stopping_keeps_the_best() {
        let mut e = EarlyStopping::new(2);
        let seq = [0.5, 0.7, 0.6, 0.7, 0.9, 0.8, 0.8];
        let decisions: Vec<_> = seq
            .iter()
            .enumerate()
            .map(|(i, &m)| e.observe(m, i))
            .collect();
        use StopDecision::*;
        assert_eq!(
            decisions,
            vec![Improved, Improved, Continue, Stop, Improved, Continue, Stop]
        );
        assert_eq!(e.best, Some((0.9, 4)));
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        };
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.train.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
