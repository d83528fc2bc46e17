//! Synthetic multi-platform corpora with a known causal structure.
//!
//! Every post holds `target_tokens` words naming its target group (drawn
//! from the platform's own vocabulary for that group) and a body of
//! `body_tokens` words. Hateful bodies contain `causal_tokens` words from the
//! shared causal vocabulary; the rest of every body is neutral filler shared
//! by all platforms. The hate label is a function of the causal words alone
//! and the target group is drawn independently of it, unless a spurious
//! plant is configured.

use std::collections::{BTreeMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution};
use serde::{Deserialize, Serialize};

use super::{ExampleRecord, Platform};
use crate::error::{Error, Result};
use crate::weak::taxonomy::TargetTaxonomy;

/// Makes target tokens of one platform predictive of the label for a share
/// of that platform's posts: hateful posts get `hate_class`, the others
/// `clean_class`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpuriousPlant {
    pub platform: usize,
    pub fraction: f64,
    pub hate_class: usize,
    pub clean_class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub platform_names: Vec<String>,
    pub n_per_platform: usize,
    pub causal_vocab: Vec<String>,
    pub filler_vocab: Vec<String>,
    /// `[platform][class]` token lists.
    pub target_vocabs: Vec<Vec<Vec<String>>>,
    /// `[platform][class]` target-group probabilities.
    pub target_dists: Vec<Vec<f64>>,
    pub hate_rate: f64,
    pub target_tokens: usize,
    pub body_tokens: usize,
    pub causal_tokens: usize,
    pub spurious: Option<SpuriousPlant>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `n_platforms` platforms named `a`, `b`, ... over the default taxonomy,
    /// 20 causal words, 60 filler words and 6 words per platform and class.
    /// Target distributions differ per platform.
    pub fn standard(n_platforms: usize, n_per_platform: usize, seed: u64) -> Self {
        let classes = TargetTaxonomy::default().len();
        let platform_names: Vec<String> = (0..n_platforms)
            .map(|p| ((b'a' + p as u8) as char).to_string())
            .collect();
        let target_vocabs = platform_names
            .iter()
            .map(|name| {
                (0..classes)
                    .map(|c| (0..6).map(|i| format!("{name}{c}w{i}")).collect())
                    .collect()
            })
            .collect();
        let target_dists = (0..n_platforms)
            .map(|p| {
                let w: Vec<f64> = (0..classes)
                    .map(|c| 1.0 + ((c + 3 * p) % classes) as f64)
                    .collect();
                let total: f64 = w.iter().sum();
                w.into_iter().map(|x| x / total).collect()
            })
            .collect();
        Self {
            platform_names,
            n_per_platform,
            causal_vocab: (0..20).map(|i| format!("cause{i}")).collect(),
            filler_vocab: (0..60).map(|i| format!("fill{i}")).collect(),
            target_vocabs,
            target_dists,
            hate_rate: 0.5,
            target_tokens: 3,
            body_tokens: 4,
            causal_tokens: 2,
            spurious: None,
            seed,
        }
    }

    pub fn platform(&self, p: usize) -> Platform {
        Platform::Synthetic(self.platform_names[p].clone())
    }

    pub fn num_classes(&self) -> usize {
        self.target_dists.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.platform_names.len();
        if n == 0 || self.target_vocabs.len() != n || self.target_dists.len() != n {
            return Err(Error::Config(
                "one name, vocabulary and distribution per platform".into(),
            ));
        }
        let c = self.num_classes();
        if c < 2 {
            return Err(Error::Config("at least two target classes".into()));
        }
        for (p, (vocab, dist)) in self
            .target_vocabs
            .iter()
            .zip(&self.target_dists)
            .enumerate()
        {
            if vocab.len() != c || dist.len() != c {
                return Err(Error::Config(format!(
                    "platform {p} must cover {c} classes"
                )));
            }
            if vocab.iter().any(Vec::is_empty) {
                return Err(Error::Config(format!(
                    "platform {p} has an empty class vocabulary"
                )));
            }
            let total: f64 = dist.iter().sum();
            if dist.iter().any(|x| !(*x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "platform {p} target distribution is invalid"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.hate_rate) {
            return Err(Error::Config("hate_rate must lie in [0, 1]".into()));
        }
        if self.causal_tokens == 0 || self.causal_tokens > self.body_tokens {
            return Err(Error::Config(
                "need 1 <= causal_tokens <= body_tokens".into(),
            ));
        }
        if self.causal_vocab.is_empty() || self.filler_vocab.is_empty() {
            return Err(Error::Config(
                "causal and filler vocabularies must be nonempty".into(),
            ));
        }
        let causal: HashSet<&String> = self.causal_vocab.iter().collect();
        let filler: HashSet<&String> = self.filler_vocab.iter().collect();
        if let Some(t) = causal.intersection(&filler).next() {
            return Err(Error::Config(format!(
                "token {t:?} is both causal and filler"
            )));
        }
        let mut owner: BTreeMap<&String, usize> = BTreeMap::new();
        for (p, vocab) in self.target_vocabs.iter().enumerate() {
            for t in vocab.iter().flatten() {
                if causal.contains(t) || filler.contains(t) {
                    return Err(Error::Config(format!(
                        "target token {t:?} overlaps the shared vocabularies"
                    )));
                }
                if let Some(q) = owner.insert(t, p) {
                    if q != p {
                        return Err(Error::Config(format!(
                            "target token {t:?} is shared by platforms {q} and {p}"
                        )));
                    }
                }
            }
        }
        if let Some(s) = &self.spurious {
            if s.platform >= n
                || s.hate_class >= c
                || s.clean_class >= c
                || !(0.0..=1.0).contains(&s.fraction)
            {
                return Err(Error::Config("spurious plant out of range".into()));
            }
        }
        Ok(())
    }

    /// Keyword lexicon built from one platform's target vocabulary.
    pub fn lexicon_entries(&self, p: usize, taxonomy: &TargetTaxonomy) -> Vec<(String, String)> {
        self.target_vocabs[p]
            .iter()
            .enumerate()
            .flat_map(|(c, words)| {
                words
                    .iter()
                    .map(move |w| (w.clone(), taxonomy.classes()[c].clone()))
            })
            .collect()
    }
}

/// One corpus per platform, in platform order.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Vec<ExampleRecord>>> {
    spec.validate()?;
    let taxonomy = TargetTaxonomy::default();
    let names = if spec.num_classes() == taxonomy.len() {
        taxonomy.classes().to_vec()
    } else {
        (0..spec.num_classes())
            .map(|c| format!("class{c}"))
            .collect()
    };
    let mut out = Vec::with_capacity(spec.platform_names.len());
    for p in 0..spec.platform_names.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(
            spec.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(p as u64 + 1)),
        );
        let dist =
            WeightedIndex::new(&spec.target_dists[p]).map_err(|e| Error::Config(e.to_string()))?;
        let platform = spec.platform(p);
        let mut records = Vec::with_capacity(spec.n_per_platform);
        for i in 0..spec.n_per_platform {
            let hate = u8::from(rng.random::<f64>() < spec.hate_rate);
            let mut class = dist.sample(&mut rng);
            if let Some(s) = spec.spurious.as_ref().filter(|s| s.platform == p) {
                if rng.random::<f64>() < s.fraction {
                    class = if hate == 1 {
                        s.hate_class
                    } else {
                        s.clean_class
                    };
                }
            }
            let mut words: Vec<&String> = Vec::with_capacity(spec.target_tokens + spec.body_tokens);
            for _ in 0..spec.target_tokens {
                words.push(
                    spec.target_vocabs[p][class]
                        .choose(&mut rng)
                        .expect("nonempty"),
                );
            }
            let n_causal = if hate == 1 { spec.causal_tokens } else { 0 };
            for _ in 0..n_causal {
                words.push(spec.causal_vocab.choose(&mut rng).expect("nonempty"));
            }
            for _ in n_causal..spec.body_tokens {
                words.push(spec.filler_vocab.choose(&mut rng).expect("nonempty"));
            }
            words.shuffle(&mut rng);
            let text = words
                .iter()
                .map(|w| w.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            records.push(ExampleRecord {
                id: format!("{platform}-{i}"),
                text,
                hate,
                gold_target: Some(names[class].clone()),
                platform: platform.clone(),
            });
        }
        out.push(records);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::words;

    #[test]
    fn deterministic_and_disjoint() {
        let spec = SyntheticSpec::standard(2, 300, 5);
        let a = generate_synthetic(&spec).unwrap();
        assert_eq!(a, generate_synthetic(&spec).unwrap());
        let a_vocab: HashSet<&String> = spec.target_vocabs[0].iter().flatten().collect();
        for r in &a[1] {
            assert!(words(&r.text).all(|w| !a_vocab.contains(&w)));
        }
    }

    #[test]
    fn label_is_a_function_of_causal_tokens() {
        let spec = SyntheticSpec::standard(2, 500, 1);
        let causal: HashSet<&String> = spec.causal_vocab.iter().collect();
        for r in generate_synthetic(&spec).unwrap().iter().flatten() {
            let has = words(&r.text).any(|w| causal.contains(&w));
            assert_eq!(u8::from(has), r.hate);
            assert_eq!(words(&r.text).count(), 7);
        }
    }

    #[test]
    fn overlap_is_rejected() {
        let mut spec = SyntheticSpec::standard(2, 10, 0);
        spec.target_vocabs[1][0][0] = "cause3".into();
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
        let mut spec = SyntheticSpec::standard(2, 10, 0);
        spec.target_vocabs[1][0][0] = spec.target_vocabs[0][2][1].clone();
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn hate_rate_within_binomial_bound() {
        let spec = SyntheticSpec {
            hate_rate: 0.5,
            ..SyntheticSpec::standard(1, 10_000, 11)
        };
        let corpus = &generate_synthetic(&spec).unwrap()[0];
        let rate = corpus.iter().filter(|r| r.hate == 1).count() as f64 / corpus.len() as f64;
        // 3 sigma of Binomial(10^4, 0.5) / 10^4
        assert!((rate - 0.5).abs() <= 0.015, "rate {rate}");
    }

    #[test]
    fn spurious_plant_correlates_target_with_label() {
        let mut spec = SyntheticSpec::standard(2, 2000, 3);
        spec.spurious = Some(SpuriousPlant {
            platform: 0,
            fraction: 0.3,
            hate_class: 0,
            clean_class: 1,
        });
        let data = generate_synthetic(&spec).unwrap();
        let names = TargetTaxonomy::default();
        let share = |corpus: &[ExampleRecord], hate: u8, class: usize| {
            let sub: Vec<_> = corpus.iter().filter(|r| r.hate == hate).collect();
            sub.iter()
                .filter(|r| r.gold_target.as_deref() == Some(names.classes()[class].as_str()))
                .count() as f64
                / sub.len() as f64
        };
        assert!(share(&data[0], 1, 0) > share(&data[0], 0, 0) + 0.2);
        assert!((share(&data[1], 1, 0) - share(&data[1], 0, 0)).abs() < 0.05);
    }
}
