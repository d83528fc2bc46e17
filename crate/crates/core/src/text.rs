//! Word-level vocabulary, token sequences and padded batches.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const UNK: usize = 2;
const SPECIALS: [&str; 3] = ["[PAD]", "[CLS]", "[UNK]"];

/// Lowercased whitespace tokens with surrounding punctuation stripped.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().filter_map(|w| {
        let w =
            w.trim_matches(|c: char| c.is_ascii_punctuation() && c != '_' && c != '#' && c != '@');
        (!w.is_empty()).then(|| w.to_lowercase())
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Specials followed by `tokens` in the given order (duplicates dropped).
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for s in SPECIALS {
            v.push(s.to_string());
        }
        for t in tokens {
            v.push(t.into());
        }
        v
    }

    /// Vocabulary of every word occurring at least `min_count` times, most
    /// frequent first with ties broken alphabetically, capped at `max_size`
    /// entries including specials.
    pub fn build<'a, I>(texts: I, min_count: usize, max_size: Option<usize>) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for w in words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let cap = max_size
            .map(|m| m.saturating_sub(SPECIALS.len()))
            .unwrap_or(usize::MAX);
        Self::from_tokens(ranked.into_iter().take(cap).map(|(w, _)| w))
    }

    fn push(&mut self, t: String) {
        if !self.index.contains_key(&t) {
            self.index.insert(t.clone(), self.tokens.len());
            self.tokens.push(t);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `[CLS]` followed by the text's words, truncated to `max_len`.
    pub fn tokenize(&self, text: &str, max_len: usize) -> TokenSequence {
        let mut ids = vec![CLS];
        ids.extend(words(text).map(|w| self.id(&w)));
        ids.truncate(max_len.max(1));
        TokenSequence::unmasked(ids)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path)?;
        let tokens: Vec<&str> = body.lines().collect();
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Data(format!(
                "{} is not a vocabulary file",
                path.display()
            )));
        }
        Ok(Self::from_tokens(tokens[SPECIALS.len()..].iter().copied()))
    }
}

/// Token ids with a parallel attention mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub token_ids: Vec<usize>,
    pub attention_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn new(token_ids: Vec<usize>, attention_mask: Vec<bool>) -> Result<Self> {
        if token_ids.len() != attention_mask.len() {
            return Err(Error::Shape {
                what: "attention mask",
                expected: token_ids.len(),
                got: attention_mask.len(),
            });
        }
        Ok(Self {
            token_ids,
            attention_mask,
        })
    }

    pub fn unmasked(token_ids: Vec<usize>) -> Self {
        let attention_mask = vec![true; token_ids.len()];
        Self {
            token_ids,
            attention_mask,
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn validate(&self, max_len: usize, vocab_size: usize) -> Result<()> {
        if self.token_ids.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        if self.token_ids.len() > max_len {
            return Err(Error::SequenceTooLong {
                len: self.token_ids.len(),
                max: max_len,
            });
        }
        if self.attention_mask.len() != self.token_ids.len() {
            return Err(Error::Shape {
                what: "attention mask",
                expected: self.token_ids.len(),
                got: self.attention_mask.len(),
            });
        }
        if let Some(&id) = self.token_ids.iter().find(|&&id| id >= vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: vocab_size,
            });
        }
        Ok(())
    }
}

/// Sequences padded to a common length, flattened row-major as
/// `batch * seq_len`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub batch: usize,
    pub seq_len: usize,
}

impl Batch {
    pub fn from_sequences<'a, I>(seqs: I) -> Self
    where
        I: IntoIterator<Item = &'a TokenSequence>,
    {
        let seqs: Vec<&TokenSequence> = seqs.into_iter().collect();
        let seq_len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * seq_len);
        let mut mask = Vec::with_capacity(seqs.len() * seq_len);
        for s in &seqs {
            ids.extend_from_slice(&s.token_ids);
            mask.extend_from_slice(&s.attention_mask);
            for _ in s.len()..seq_len {
                ids.push(PAD);
                mask.push(false);
            }
        }
        Self {
            ids,
            mask,
            batch: seqs.len(),
            seq_len,
        }
    }

    pub fn valid_count(&self, b: usize) -> usize {
        self.mask[b * self.seq_len..(b + 1) * self.seq_len]
            .iter()
            .filter(|m| **m)
            .count()
    }
}
