use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::losses::SoftLabel;
use crate::model::Architecture;
use crate::nn::{ParamStore, Session};
use crate::scalar::Scalar;
use crate::text::{Batch, TokenSequence};

/// Self-training teacher. Until the first refresh, pseudo-labels are the
/// seed weak labels; afterwards they come from a frozen snapshot of the
/// model parameters, replaced every `refresh_period` steps.
#[derive(Clone, Debug)]
pub struct PseudoLabelState<T> {
    pub teacher: Option<ParamStore<T>>,
    pub refresh_period: usize,
    pub step_of_last_refresh: usize,
    pub refreshes: usize,
    cache: HashMap<usize, SoftLabel<T>>,
}

impl<T: Scalar> PseudoLabelState<T> {
    pub fn new(refresh_period: usize) -> Result<Self> {
        if refresh_period == 0 {
            return Err(Error::Config("refresh_period must be positive".into()));
        }
        Ok(Self {
            teacher: None,
            refresh_period,
            step_of_last_refresh: 0,
            refreshes: 0,
            cache: HashMap::new(),
        })
    }

    pub fn is_due(&self, current_step: usize) -> bool {
        current_step.saturating_sub(self.step_of_last_refresh) >= self.refresh_period
    }

    /// Replaces the snapshot iff the period has elapsed. Returns whether it did.
    pub fn refresh_teacher(&mut self, current_step: usize, current: &ParamStore<T>) -> bool {
        if !self.is_due(current_step) {
            return false;
        }
        match self.teacher.as_mut() {
            Some(t) => t.copy_from(current),
            None => self.teacher = Some(current.clone()),
        }
        self.step_of_last_refresh = current_step;
        self.refreshes += 1;
        self.cache.clear();
        true
    }

    /// Pseudo-labels for corpus positions `indices`.
    pub fn labels(
        &mut self,
        arch: &Architecture,
        indices: &[usize],
        corpus: &[TokenSequence],
        seed: &[SoftLabel<T>],
    ) -> Result<Vec<SoftLabel<T>>> {
        let Some(teacher) = &self.teacher else {
            return indices
                .iter()
                .map(|&i| {
                    seed.get(i).cloned().ok_or(Error::Shape {
                        what: "seed labels",
                        expected: corpus.len(),
                        got: seed.len(),
                    })
                })
                .collect();
        };
        let missing: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|i| !self.cache.contains_key(i))
            .collect();
        if !missing.is_empty() {
            let batch = Batch::from_sequences(missing.iter().map(|&i| &corpus[i]));
            let mut s = Session::eval(teacher);
            let (_, pooled) = arch.encoder.encode_batch(&mut s, &batch);
            let target = arch.heads.target_var(&mut s, pooled);
            let probs = arch.target_probs_var(&mut s, target);
            for (row, &i) in s.g.value(probs).rows().into_iter().zip(&missing) {
                let row = row.to_vec();
                if row.iter().any(|p| !p.is_finite()) {
                    return Err(Error::NonFinite {
                        term: "teacher target probabilities".into(),
                        detail: format!("example {i}"),
                    });
                }
                self.cache.insert(i, SoftLabel::from_probs(&row)?);
            }
        }
        Ok(indices.iter().map(|i| self.cache[i].clone()).collect())
    }
}
