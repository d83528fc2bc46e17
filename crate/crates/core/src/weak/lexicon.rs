use std::collections::HashMap;
use std::path::Path;

use super::taxonomy::TargetTaxonomy;
use crate::error::{Error, Result};
use crate::losses::SoftLabel;
use crate::text::words;

/// The shipped seed lexicon.
pub const SEED_LEXICON: &str = include_str!("../../assets/lexicon.txt");

/// Keyword to class index map.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    entries: HashMap<String, usize>,
    classes: usize,
}

impl Lexicon {
    pub fn from_pairs<I, K, C>(pairs: I, taxonomy: &TargetTaxonomy) -> Result<Self>
    where
        I: IntoIterator<Item = (K, C)>,
        K: AsRef<str>,
        C: AsRef<str>,
    {
        let mut entries = HashMap::new();
        for (k, c) in pairs {
            let class = taxonomy.index(c.as_ref()).ok_or_else(|| {
                Error::Config(format!(
                    "lexicon class {:?} is not in the taxonomy",
                    c.as_ref()
                ))
            })?;
            let key = k.as_ref().trim().to_lowercase();
            if key.is_empty() {
                continue;
            }
            if let Some(prev) = entries.insert(key.clone(), class) {
                if prev != class {
                    return Err(Error::Config(format!(
                        "keyword {key:?} is listed under two classes"
                    )));
                }
            }
        }
        if entries.is_empty() {
            return Err(Error::Config("lexicon is empty".into()));
        }
        Ok(Self {
            entries,
            classes: taxonomy.len(),
        })
    }

    /// Parses `Category: term, term` lines; `#` starts a comment.
    pub fn parse(body: &str, taxonomy: &TargetTaxonomy) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in body.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (class, terms) = line.split_once(':').ok_or_else(|| {
                Error::Config(format!(
                    "lexicon line {}: expected `Category: terms`",
                    n + 1
                ))
            })?;
            pairs.extend(
                terms
                    .split(',')
                    .map(|t| (t.trim().to_string(), class.trim().to_string())),
            );
        }
        Self::from_pairs(pairs, taxonomy)
    }

    pub fn load(path: &Path, taxonomy: &TargetTaxonomy) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, taxonomy)
    }

    pub fn seed(taxonomy: &TargetTaxonomy) -> Result<Self> {
        Self::parse(SEED_LEXICON, taxonomy)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    /// Normalized keyword-hit counts; uniform when nothing matches.
    pub fn label(&self, text: &str) -> SoftLabel<f64> {
        let mut counts = vec![0.0; self.classes];
        for w in words(text) {
            if let Some(&c) = self.entries.get(&w) {
                counts[c] += 1.0;
            }
        }
        SoftLabel::from_weights(&counts).expect("lexicon covers at least two classes")
    }
}

/// Free-function form of [`Lexicon::label`].
pub fn lexicon_label(text: &str, lexicon: &Lexicon) -> SoftLabel<f64> {
    lexicon.label(text)
}
