//! Corpus records, the canonical line-delimited format, summaries and
//! stratified splitting.

pub mod adapters;
pub mod synthetic;

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Platform {
    Gab,
    Reddit,
    X,
    YouTube,
    Synthetic(String),
}

impl Platform {
    /// Whether the source corpus carries gold target annotations.
    pub fn has_targets(&self) -> bool {
        matches!(
            self,
            Platform::Gab | Platform::YouTube | Platform::Synthetic(_)
        )
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Platform::Gab => f.write_str("GAB"),
            Platform::Reddit => f.write_str("Reddit"),
            Platform::X => f.write_str("X"),
            Platform::YouTube => f.write_str("YouTube"),
            Platform::Synthetic(name) => write!(f, "synthetic-{name}"),
        }
    }
}

impl FromStr for Platform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gab" => Ok(Platform::Gab),
            "reddit" => Ok(Platform::Reddit),
            "x" | "twitter" => Ok(Platform::X),
            "youtube" => Ok(Platform::YouTube),
            other => match other.strip_prefix("synthetic-") {
                Some(name) if !name.is_empty() => Ok(Platform::Synthetic(name.to_string())),
                _ => Err(Error::Data(format!("unknown platform {s:?}"))),
            },
        }
    }
}

impl TryFrom<String> for Platform {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Platform> for String {
    fn from(p: Platform) -> String {
        p.to_string()
    }
}

/// One post in canonical form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub text: String,
    pub hate: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_target: Option<String>,
    pub platform: Platform,
}

impl ExampleRecord {
    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::Data(format!("record {} has empty text", self.id)));
        }
        if self.hate > 1 {
            return Err(Error::Data(format!(
                "record {} has hate label {}",
                self.id, self.hate
            )));
        }
        if self.gold_target.is_some() && !self.platform.has_targets() {
            return Err(Error::Data(format!(
                "record {} carries a gold target but {} has no target annotations",
                self.id, self.platform
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub n_posts: usize,
    pub n_hateful: usize,
    pub hate_pct: f64,
    pub has_targets: bool,
}

impl CorpusSummary {
    pub fn of(records: &[ExampleRecord]) -> Self {
        let n_posts = records.len();
        let n_hateful = records.iter().filter(|r| r.hate == 1).count();
        let hate_pct = if n_posts == 0 {
            0.0
        } else {
            100.0 * n_hateful as f64 / n_posts as f64
        };
        let has_targets = records.iter().any(|r| r.gold_target.is_some());
        Self {
            n_posts,
            n_hateful,
            hate_pct,
            has_targets,
        }
    }
}

/// A record the loader could not use.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: u64,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct LoadedCorpus {
    pub records: Vec<ExampleRecord>,
    pub summary: CorpusSummary,
    pub rejected: Vec<Rejection>,
}

impl LoadedCorpus {
    pub fn new(records: Vec<ExampleRecord>, rejected: Vec<Rejection>) -> Self {
        let summary = CorpusSummary::of(&records);
        Self {
            records,
            summary,
            rejected,
        }
    }
}

pub fn write_jsonl(path: &Path, records: &[ExampleRecord]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a canonical corpus. Malformed or invalid lines are skipped and
/// reported.
pub fn read_jsonl(path: &Path) -> Result<LoadedCorpus> {
    let file = fs::File::open(path)?;
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i as u64 + 1;
        match serde_json::from_str::<ExampleRecord>(&line) {
            Ok(r) => match r.validate() {
                Ok(()) => records.push(r),
                Err(e) => rejected.push(Rejection {
                    line: lineno,
                    reason: e.to_string(),
                }),
            },
            Err(e) => rejected.push(Rejection {
                line: lineno,
                reason: e.to_string(),
            }),
        }
    }
    Ok(LoadedCorpus::new(records, rejected))
}

/// Stratified split by hate label. Order within each side follows the input.
pub fn split(
    records: &[ExampleRecord],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<ExampleRecord>, Vec<ExampleRecord>)> {
    let (t, v) = split_indices(records, val_fraction, seed)?;
    Ok((
        t.iter().map(|&i| records[i].clone()).collect(),
        v.iter().map(|&i| records[i].clone()).collect(),
    ))
}

/// Index form of [`split`]: `(train, validation)` positions, each ascending.
pub fn split_indices(
    records: &[ExampleRecord],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    if records.len() < 2 {
        return Err(Error::Data(format!(
            "corpus too small to split: {} records",
            records.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_val = vec![false; records.len()];
    for class in 0..=1u8 {
        let mut idx: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].hate == class)
            .collect();
        match idx.len() {
            0 => continue,
            1 => {
                return Err(Error::Data(format!(
                    "corpus too small to stratify: hate={class} has a single example"
                )))
            }
            n => {
                idx.shuffle(&mut rng);
                let k = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
                for &i in &idx[..k] {
                    in_val[i] = true;
                }
            }
        }
    }
    let (val, train): (Vec<usize>, Vec<usize>) = (0..records.len()).partition(|&i| in_val[i]);
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: usize, hate: u8) -> ExampleRecord {
        ExampleRecord {
            id: format!("r{i}"),
            text: format!("post {i}"),
            hate,
            gold_target: None,
            platform: Platform::X,
        }
    }

    #[test]
    fn platform_names_round_trip() {
        for p in [
            Platform::Gab,
            Platform::Reddit,
            Platform::X,
            Platform::YouTube,
            Platform::Synthetic("a".into()),
        ] {
            assert_eq!(p.to_string().parse::<Platform>().unwrap(), p);
        }
        assert!("myspace".parse::<Platform>().is_err());
        assert!("synthetic-".parse::<Platform>().is_err());
    }

    #[test]
    fn record_validation() {
        assert!(rec(0, 1).validate().is_ok());
        assert!(rec(0, 2).validate().is_err());
        let mut r = rec(0, 1);
        r.gold_target = Some("Race".into());
        assert!(r.validate().is_err());
        r.platform = Platform::Gab;
        assert!(r.validate().is_ok());
        r.text = "  ".into();
        assert!(r.validate().is_err());
    }

    #[test]
    fn jsonl_round_trip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let recs = vec![rec(0, 1), rec(1, 0)];
        write_jsonl(&path, &recs).unwrap();
        let mut body = fs::read_to_string(&path).unwrap();
        body.push_str("{not json}\n");
        body.push_str(r#"{"id":"z","text":"t","hate":3,"platform":"X"}"#);
        body.push('\n');
        fs::write(&path, body).unwrap();
        let loaded = read_jsonl(&path).unwrap();
        assert_eq!(loaded.records, recs);
        assert_eq!(
            loaded.rejected.iter().map(|r| r.line).collect::<Vec<_>>(),
            vec![3, 4]
        );
        assert_eq!(loaded.summary, CorpusSummary::of(&recs));
        assert_eq!(loaded.summary.hate_pct, 50.0);
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let recs: Vec<_> = (0..1000).map(|i| rec(i, (i % 2) as u8)).collect();
        let (t1, v1) = split(&recs, 0.1, 7).unwrap();
        let (t2, v2) = split(&recs, 0.1, 7).unwrap();
        assert_eq!((&t1, &v1), (&t2, &v2));
        assert!((99..=101).contains(&v1.len()));
        let hate_val = v1.iter().filter(|r| r.hate == 1).count();
        assert!((hate_val as i64 - 50).abs() <= 1);
        let mut all: Vec<String> = t1.iter().chain(&v1).map(|r| r.id.clone()).collect();
        all.sort();
        let mut want: Vec<String> = recs.iter().map(|r| r.id.clone()).collect();
        want.sort();
        assert_eq!(all, want);
    }

    #[test]
    fn split_rejects_tiny_corpora() {
        assert!(matches!(split(&[rec(0, 1)], 0.1, 0), Err(Error::Data(_))));
        assert!(matches!(
            split(&[rec(0, 1), rec(1, 1), rec(2, 0)], 0.5, 0),
            Err(Error::Data(_))
        ));
        assert!(split(&[rec(0, 1), rec(1, 1)], 0.5, 0).is_ok());
        assert!(matches!(
            split(&[rec(0, 1), rec(1, 1)], 1.0, 0),
            Err(Error::Config(_))
        ));
    }
}
