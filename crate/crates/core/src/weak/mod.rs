//! Weak supervision for the target head: seed labelers, the self-training
//! teacher and the external labeler client.

pub mod lexicon;
pub mod llm;
pub mod taxonomy;
pub mod teacher;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ExampleRecord, Platform};
use crate::error::{Error, Result};
use crate::losses::SoftLabel;
use lexicon::Lexicon;
use taxonomy::TargetTaxonomy;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeakLabelKind {
    #[default]
    Lexicon,
    ExternalLlm,
    GoldPassthrough,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeakLabelSource {
    pub kind: WeakLabelKind,
    pub provenance: String,
}

impl WeakLabelSource {
    pub fn new(kind: WeakLabelKind, provenance: impl Into<String>) -> Self {
        Self {
            kind,
            provenance: provenance.into(),
        }
    }

    /// Gold passthrough is only allowed for platforms with target annotations.
    pub fn check_allowed(&self, platform: &Platform) -> Result<()> {
        if self.kind == WeakLabelKind::GoldPassthrough && !platform.has_targets() {
            return Err(Error::Config(format!(
                "{platform} has no gold target labels to pass through"
            )));
        }
        Ok(())
    }
}

pub fn lexicon_labels(records: &[ExampleRecord], lexicon: &Lexicon) -> Vec<SoftLabel<f64>> {
    records.iter().map(|r| lexicon.label(&r.text)).collect()
}

/// One-hot labels from gold targets; records without a target get a uniform
/// label.
pub fn gold_labels(
    records: &[ExampleRecord],
    taxonomy: &TargetTaxonomy,
) -> Result<Vec<SoftLabel<f64>>> {
    records
        .iter()
        .map(|r| {
            WeakLabelSource::new(WeakLabelKind::GoldPassthrough, "gold")
                .check_allowed(&r.platform)?;
            match &r.gold_target {
                None => SoftLabel::uniform(taxonomy.len()),
                Some(t) => {
                    let k = taxonomy.index(t).ok_or_else(|| {
                        Error::Data(format!(
                            "record {}: target {t:?} is not in the taxonomy",
                            r.id
                        ))
                    })?;
                    SoftLabel::one_hot(taxonomy.len(), k)
                }
            }
        })
        .collect()
}

/// With probability `rate`, replaces a label by a one-hot label on a class
/// drawn uniformly from the classes other than its argmax. Returns the new
/// labels and which positions were corrupted.
pub fn corrupt_labels(
    labels: &[SoftLabel<f64>],
    rate: f64,
    seed: u64,
) -> Result<(Vec<SoftLabel<f64>>, Vec<bool>)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "noise rate must lie in [0, 1], got {rate}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flipped = Vec::with_capacity(labels.len());
    let out = labels
        .iter()
        .map(|l| {
            let hit = rng.random::<f64>() < rate;
            flipped.push(hit);
            if !hit {
                return Ok(l.clone());
            }
            let c = l.num_classes();
            let mut k = rng.random_range(0..c - 1);
            if k >= l.argmax() {
                k += 1;
            }
            SoftLabel::one_hot(c, k)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((out, flipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gold_passthrough_is_gated_by_platform() {
        let src = WeakLabelSource::new(WeakLabelKind::GoldPassthrough, "annotations");
        assert!(src.check_allowed(&Platform::Gab).is_ok());
        assert!(src.check_allowed(&Platform::X).is_err());
        assert!(WeakLabelSource::new(WeakLabelKind::Lexicon, "seed")
            .check_allowed(&Platform::X)
            .is_ok());
        let rec = ExampleRecord {
            id: "1".into(),
            text: "t".into(),
            hate: 0,
            gold_target: None,
            platform: Platform::Reddit,
        };
        assert!(gold_labels(&[rec], &TargetTaxonomy::default()).is_err());
    }

    #[test]
    fn corruption_rate_matches_plant() {
        let labels: Vec<_> = (0..20_000)
            .map(|i| SoftLabel::one_hot(9, i % 9).unwrap())
            .collect();
        let (noisy, flipped) = corrupt_labels(&labels, 0.2, 4).unwrap();
        let changed = labels
            .iter()
            .zip(&noisy)
            .filter(|(a, b)| a.argmax() != b.argmax())
            .count();
        assert_eq!(changed, flipped.iter().filter(|f| **f).count());
        let rate = changed as f64 / labels.len() as f64;
        // 3 sigma of Binomial(2e4, 0.2) / 2e4 is about 0.0085
        assert!((rate - 0.2).abs() < 0.0085, "rate {rate}");
    }
}
