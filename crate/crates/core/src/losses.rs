//! Loss terms of the disentanglement objective.
//!
//! Tensor-valued losses are written once against the autodiff [`Graph`] (the
//! `*_var` functions used during training); the plain-value functions build a
//! throwaway graph of constants and evaluate the same code path.
//!
//! Conventions shared by every term:
//! - probabilities are clamped to `[1e-8, 1]` before any logarithm;
//! - terms over the high-confidence set are `0` when the set is empty;
//! - reconstruction and causal KL are means over the batch.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::latent::{CausalLatent, TargetLatent};
use crate::scalar::Scalar;
use crate::text::TokenSequence;

pub const PROB_FLOOR: f64 = 1e-8;
const SUM_TOLERANCE: f64 = 1e-6;

fn clamp_p<T: Scalar>(p: T) -> T {
    p.max(T::of(PROB_FLOOR)).min(T::one())
}

/// Natural-log entropy with clamped probabilities.
pub fn entropy<T: Scalar>(probs: &[T]) -> T {
    probs
        .iter()
        .map(|&p| {
            if p > T::zero() {
                -p * clamp_p(p).ln()
            } else {
                T::zero()
            }
        })
        .sum()
}

/// `1 - H(p) / ln C`: 1 for a one-hot vector, 0 for the uniform one.
pub fn confidence_weight<T: Scalar>(probs: &[T]) -> Result<T> {
    let c = probs.len();
    if c < 2 {
        return Err(Error::Config(format!(
            "confidence needs at least 2 classes, got {c}"
        )));
    }
    let w = T::one() - entropy(probs) / T::of(c as f64).ln();
    Ok(w.max(T::zero()).min(T::one()))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// A probability vector over the target classes together with its
/// confidence weight.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftLabel<T> {
    probs: Vec<T>,
    confidence: T,
}

impl<T: Scalar> SoftLabel<T> {
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < T::zero()) {
            return Err(Error::Config(format!("invalid probability {p}")));
        }
        let total: T = probs.iter().copied().sum();
        // f32 softmax outputs over a few classes can miss 1 by a few ulps
        let tol = SUM_TOLERANCE.max(4.0 * probs.len() as f64 * T::epsilon().f64());
        if (total.f64() - 1.0).abs() > tol {
            return Err(Error::Config(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        let confidence = confidence_weight(&probs)?;
        Ok(Self { probs, confidence })
    }

    /// Normalizes nonnegative weights; all-zero weights give the uniform label.
    pub fn from_weights(weights: &[T]) -> Result<Self> {
        let total: T = weights.iter().copied().sum();
        if total <= T::zero() {
            return Self::uniform(weights.len());
        }
        Self::new(weights.iter().map(|&w| w / total).collect())
    }

    /// Renormalizes an already-normalized vector (a softmax output, say) to
    /// absorb rounding.
    pub fn from_probs(probs: &[T]) -> Result<Self> {
        let total: T = probs.iter().copied().sum();
        Self::new(probs.iter().map(|&p| p / total).collect())
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        let p = T::one() / T::of(classes as f64);
        Self::new(vec![p; classes])
    }

    pub fn one_hot(classes: usize, k: usize) -> Result<Self> {
        if k >= classes {
            return Err(Error::Config(format!(
                "class {k} out of range for {classes} classes"
            )));
        }
        let mut probs = vec![T::zero(); classes];
        probs[k] = T::one();
        Self::new(probs)
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn confidence(&self) -> T {
        self.confidence
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Members of a batch whose pseudo-label confidence reaches the threshold.
#[derive(Clone, Debug, Default)]
pub struct HighConfidenceSet<T> {
    pub members: Vec<(TargetLatent<T>, SoftLabel<T>)>,
}

impl<T: Scalar> HighConfidenceSet<T> {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn latent_matrix(&self) -> Array2<T> {
        let h = self.members.first().map_or(0, |(t, _)| t.vector.len());
        Array2::from_shape_fn((self.len(), h), |(i, j)| self.members[i].0.vector[j])
    }

    fn labels(&self) -> Vec<SoftLabel<T>> {
        self.members.iter().map(|(_, l)| l.clone()).collect()
    }
}

/// Positions (in order) of the labels with confidence `>= eta`.
pub fn high_confidence_indices<T: Scalar>(labels: &[SoftLabel<T>], eta: T) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, l)| l.confidence() >= eta)
        .map(|(i, _)| i)
        .collect()
}

pub fn select_high_confidence<T: Scalar>(
    batch: &[(TargetLatent<T>, SoftLabel<T>)],
    eta: T,
) -> HighConfidenceSet<T> {
    HighConfidenceSet {
        members: batch
            .iter()
            .filter(|(_, l)| l.confidence() >= eta)
            .cloned()
            .collect(),
    }
}

/// 1 when both labels have the same argmax class.
pub fn pair_similarity<T: Scalar>(a: &SoftLabel<T>, b: &SoftLabel<T>) -> u8 {
    u8::from(a.argmax() == b.argmax())
}

/// `w d^2 + (1 - w) max(0, beta - d)^2` with `d` the Euclidean distance.
pub fn contrastive_pair<T: Scalar>(a: &TargetLatent<T>, b: &TargetLatent<T>, w: u8, beta: T) -> T {
    let d2: T = a
        .vector
        .iter()
        .zip(&b.vector)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    if w == 1 {
        d2
    } else {
        let gap = (beta - d2.sqrt()).max(T::zero());
        gap * gap
    }
}

/// Contrastive regularizer over all ordered pairs of distinct rows of
/// `latents`, where `classes[i]` is the pseudo-label argmax of row `i`.
pub fn contrastive_loss_var<T: Scalar>(
    g: &mut Graph<T>,
    latents: Var,
    classes: &[usize],
    beta: T,
) -> Var {
    let n = classes.len();
    assert_eq!(g.value(latents).nrows(), n, "one class per latent row");
    if n <= 1 {
        return g.scalar_constant(T::zero());
    }
    let same = Array2::from_shape_fn((n, n), |(i, j)| {
        if i != j && classes[i] == classes[j] {
            T::one()
        } else {
            T::zero()
        }
    });
    let diff = Array2::from_shape_fn((n, n), |(i, j)| {
        if i != j && classes[i] != classes[j] {
            T::one()
        } else {
            T::zero()
        }
    });
    let d2 = g.pairwise_sq_dist(latents);
    let same = g.constant(same);
    let pos = g.mul(d2, same);
    let pos = g.sum_all(pos);
    let d = g.sqrt(d2);
    let neg_d = g.scale(d, -T::one());
    let gap = g.add_scalar(neg_d, beta);
    let gap = g.relu(gap);
    let gap2 = g.square(gap);
    let diff = g.constant(diff);
    let neg = g.mul(gap2, diff);
    let neg = g.sum_all(neg);
    g.add(pos, neg)
}

/// Mean over rows of `KL(u || f)` with `u` uniform.
pub fn conf_regularizer_var<T: Scalar>(g: &mut Graph<T>, probs: Var) -> Var {
    let (n, c) = g.value(probs).dim();
    if n == 0 {
        return g.scalar_constant(T::zero());
    }
    let cf = T::of(c as f64);
    let clamped = g.clamp(probs, T::of(PROB_FLOOR), T::one());
    let logs = g.ln(clamped);
    let total = g.sum_all(logs);
    // sum_j (1/C)(ln(1/C) - ln f_j) = -ln C - (1/C) sum_j ln f_j
    let scaled = g.scale(total, -T::one() / (cf * T::of(n as f64)));
    g.add_scalar(scaled, -cf.ln())
}

/// `(1/|S|) sum_i w_i KL(y_i || f_i)` with pseudo-labels `y_i` and their
/// confidence weights `w_i` held constant.
pub fn target_loss_var<T: Scalar>(g: &mut Graph<T>, probs: Var, labels: &[SoftLabel<T>]) -> Var {
    let (n, c) = g.value(probs).dim();
    assert_eq!(labels.len(), n, "one pseudo-label per row");
    if n == 0 {
        return g.scalar_constant(T::zero());
    }
    let mut entropy_part = T::zero();
    let weights = Array2::from_shape_fn((n, c), |(i, j)| {
        let y = labels[i].probs()[j];
        labels[i].confidence() * y
    });
    for l in labels {
        let wy: T = l
            .probs()
            .iter()
            .map(|&y| {
                if y > T::zero() {
                    y * clamp_p(y).ln()
                } else {
                    T::zero()
                }
            })
            .sum();
        entropy_part += l.confidence() * wy;
    }
    let clamped = g.clamp(probs, T::of(PROB_FLOOR), T::one());
    let logs = g.ln(clamped);
    let wc = g.constant(weights);
    let cross = g.mul(logs, wc);
    let cross = g.sum_all(cross);
    let nf = T::of(n as f64);
    let scaled = g.scale(cross, -T::one() / nf);
    g.add_scalar(scaled, entropy_part / nf)
}

/// Negative log-likelihood of the true tokens summed over unmasked
/// positions, averaged over `batch` sequences. `probs` has one row per
/// position.
pub fn recon_loss_var<T: Scalar>(
    g: &mut Graph<T>,
    probs: Var,
    targets: &[usize],
    mask: &[bool],
    batch: usize,
) -> Result<Var> {
    let (rows, vocab) = g.value(probs).dim();
    if targets.len() != rows || mask.len() != rows {
        return Err(Error::Shape {
            what: "reconstruction targets",
            expected: rows,
            got: targets.len(),
        });
    }
    if let Some(&id) = targets
        .iter()
        .zip(mask)
        .find(|(&id, &m)| m && id >= vocab)
        .map(|(id, _)| id)
    {
        return Err(Error::TokenOutOfRange { id, vocab });
    }
    let valid: Vec<usize> = (0..rows).filter(|&i| mask[i]).collect();
    if valid.is_empty() {
        return Ok(g.scalar_constant(T::zero()));
    }
    let cols: Vec<usize> = valid.iter().map(|&i| targets[i]).collect();
    let kept = g.select_rows(probs, &valid);
    let picked = g.pick_per_row(kept, &cols);
    let clamped = g.clamp(picked, T::of(PROB_FLOOR), T::one());
    let logs = g.ln(clamped);
    let total = g.sum_all(logs);
    Ok(g.scale(total, -T::one() / T::of(batch.max(1) as f64)))
}

/// Closed-form `KL(N(mu, exp(log_var)) || N(0, I))`, summed over latent
/// dimensions and averaged over rows.
pub fn kl_causal_var<T: Scalar>(g: &mut Graph<T>, mu: Var, log_var: Var) -> Var {
    let (rows, dims) = g.value(mu).dim();
    let m2 = g.square(mu);
    let var = g.exp(log_var);
    let t = g.add(m2, var);
    let t = g.sub(t, log_var);
    let total = g.sum_all(t);
    let total = g.add_scalar(total, -T::of((rows * dims) as f64));
    g.scale(total, T::of(0.5) / T::of(rows.max(1) as f64))
}

/// Mean negative log-likelihood of the true hate class.
pub fn hate_loss_var<T: Scalar>(g: &mut Graph<T>, probs: Var, labels: &[u8]) -> Result<Var> {
    let (rows, classes) = g.value(probs).dim();
    if labels.len() != rows {
        return Err(Error::Shape {
            what: "hate labels",
            expected: rows,
            got: labels.len(),
        });
    }
    if rows == 0 {
        return Err(Error::Empty("hate loss batch"));
    }
    let cols: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
    if let Some(&c) = cols.iter().find(|&&c| c >= classes) {
        return Err(Error::Data(format!(
            "hate label {c} outside {classes} classes"
        )));
    }
    let picked = g.pick_per_row(probs, &cols);
    let clamped = g.clamp(picked, T::of(PROB_FLOOR), T::one());
    let logs = g.ln(clamped);
    let total = g.sum_all(logs);
    Ok(g.scale(total, -T::one() / T::of(rows as f64)))
}

fn rows_matrix<T: Scalar>(rows: &[Vec<T>]) -> Result<Array2<T>> {
    let c = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().find(|r| r.len() != c) {
        return Err(Error::Shape {
            what: "probability rows",
            expected: c,
            got: r.len(),
        });
    }
    Ok(Array2::from_shape_fn((rows.len(), c), |(i, j)| rows[i][j]))
}

pub fn contrastive_loss<T: Scalar>(s: &HighConfidenceSet<T>, beta: T) -> T {
    if s.len() <= 1 {
        return T::zero();
    }
    let classes: Vec<usize> = s.members.iter().map(|(_, l)| l.argmax()).collect();
    let mut g = Graph::new();
    let x = g.constant(s.latent_matrix());
    let out = contrastive_loss_var(&mut g, x, &classes, beta);
    g.scalar(out)
}

pub fn conf_regularizer<T: Scalar>(
    s: &HighConfidenceSet<T>,
    classifier_probs: &[Vec<T>],
) -> Result<T> {
    if s.is_empty() {
        return Ok(T::zero());
    }
    check_members(s, classifier_probs)?;
    let mut g = Graph::new();
    let p = g.constant(rows_matrix(classifier_probs)?);
    let out = conf_regularizer_var(&mut g, p);
    Ok(g.scalar(out))
}

pub fn target_loss<T: Scalar>(s: &HighConfidenceSet<T>, classifier_probs: &[Vec<T>]) -> Result<T> {
    if s.is_empty() {
        return Ok(T::zero());
    }
    check_members(s, classifier_probs)?;
    let mut g = Graph::new();
    let p = g.constant(rows_matrix(classifier_probs)?);
    let out = target_loss_var(&mut g, p, &s.labels());
    Ok(g.scalar(out))
}

fn check_members<T: Scalar>(s: &HighConfidenceSet<T>, probs: &[Vec<T>]) -> Result<()> {
    if probs.len() != s.len() {
        return Err(Error::Shape {
            what: "classifier outputs",
            expected: s.len(),
            got: probs.len(),
        });
    }
    Ok(())
}

/// Reconstruction loss of a single sequence.
pub fn recon_loss<T: Scalar>(true_ids: &TokenSequence, predicted_probs: &[Vec<T>]) -> Result<T> {
    if predicted_probs.len() != true_ids.len() {
        return Err(Error::Shape {
            what: "predicted rows",
            expected: true_ids.len(),
            got: predicted_probs.len(),
        });
    }
    if true_ids.is_empty() {
        return Ok(T::zero());
    }
    let mut g = Graph::new();
    let p = g.constant(rows_matrix(predicted_probs)?);
    let out = recon_loss_var(&mut g, p, &true_ids.token_ids, &true_ids.attention_mask, 1)?;
    Ok(g.scalar(out))
}

pub fn kl_causal<T: Scalar>(c: &CausalLatent<T>) -> Result<T> {
    if let Some(s) = c.sigma.iter().find(|s| **s <= T::zero()) {
        return Err(Error::Config(format!("sigma must be positive, got {s}")));
    }
    let mut g = Graph::new();
    let mu = g.constant(Array2::from_shape_vec((1, c.mu.len()), c.mu.clone()).expect("row"));
    let lv = Array2::from_shape_fn((1, c.sigma.len()), |(_, j)| (c.sigma[j] * c.sigma[j]).ln());
    let lv = g.constant(lv);
    let out = kl_causal_var(&mut g, mu, lv);
    Ok(g.scalar(out))
}

pub fn hate_loss<T: Scalar>(preds: &[Vec<T>], labels: &[u8]) -> Result<T> {
    if preds.len() != labels.len() {
        return Err(Error::Shape {
            what: "hate labels",
            expected: preds.len(),
            got: labels.len(),
        });
    }
    let mut g = Graph::new();
    let p = g.constant(rows_matrix(preds)?);
    let out = hate_loss_var(&mut g, p, labels)?;
    Ok(g.scalar(out))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub alpha_t: f64,
    pub alpha_c: f64,
    pub delta_cont: f64,
    pub delta_conf: f64,
}

impl Default for LossCoefficients {
    fn default() -> Self {
        Self {
            alpha_t: 0.05,
            alpha_c: 0.05,
            delta_cont: 0.001,
            delta_conf: 0.001,
        }
    }
}

/// The individual loss terms of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub contrastive: f64,
    pub conf: f64,
    pub target: f64,
    pub recon: f64,
    pub kl_causal: f64,
    pub hate: f64,
}

/// Every term plus the composed objectives:
/// `vae = recon + alpha_t (target + delta_cont contrastive + delta_conf conf) + alpha_c kl_causal`
/// and `total = hate + vae`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub conf: f64,
    pub target: f64,
    pub recon: f64,
    pub kl_causal: f64,
    pub vae: f64,
    pub hate: f64,
    pub total: f64,
}

pub fn compose_losses(parts: LossParts, k: LossCoefficients) -> Result<LossBreakdown> {
    for (name, v) in [
        ("contrastive", parts.contrastive),
        ("conf", parts.conf),
        ("target", parts.target),
        ("recon", parts.recon),
        ("kl_causal", parts.kl_causal),
        ("hate", parts.hate),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: name.to_string(),
                detail: format!("value {v}"),
            });
        }
    }
    let d_target = parts.target + k.delta_cont * parts.contrastive + k.delta_conf * parts.conf;
    let vae = parts.recon + k.alpha_t * d_target + k.alpha_c * parts.kl_causal;
    Ok(LossBreakdown {
        contrastive: parts.contrastive,
        conf: parts.conf,
        target: parts.target,
        recon: parts.recon,
        kl_causal: parts.kl_causal,
        vae,
        hate: parts.hate,
        total: parts.hate + vae,
    })
}

impl LossBreakdown {
    /// Checks the composition equalities to relative tolerance `rel`.
    pub fn audit(&self, k: LossCoefficients, rel: f64) -> std::result::Result<(), String> {
        let vae = self.recon
            + k.alpha_t
                * (self.target + k.delta_cont * self.contrastive + k.delta_conf * self.conf)
            + k.alpha_c * self.kl_causal;
        let close =
            |a: f64, b: f64| (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
        if !close(vae, self.vae) {
            return Err(format!("vae {} != recomputed {}", self.vae, vae));
        }
        if !close(self.hate + self.vae, self.total) {
            return Err(format!(
                "total {} != hate + vae {}",
                self.total,
                self.hate + self.vae
            ));
        }
        Ok(())
    }
}
