//! Latent dumps for representation plots and the cross/within distance
//! ratio.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DisentangleModel;
use crate::pipeline::{tokenize, NamedCorpus};
use crate::text::Vocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentRow {
    pub platform: String,
    pub id: String,
    pub hate: u8,
    /// Causal mean (noise fixed to zero).
    pub causal: Vec<f32>,
    pub target: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentKind {
    Causal,
    Target,
}

impl LatentRow {
    pub fn vector(&self, kind: LatentKind) -> &[f32] {
        match kind {
            LatentKind::Causal => &self.causal,
            LatentKind::Target => &self.target,
        }
    }
}

/// `n_per_platform` seeded samples from each corpus.
pub fn export_latents(
    model: &DisentangleModel<f32>,
    vocab: &Vocab,
    corpora: &[NamedCorpus],
    n_per_platform: usize,
    seed: u64,
) -> Result<Vec<LatentRow>> {
    let mut rows = Vec::with_capacity(n_per_platform * corpora.len());
    for (p, c) in corpora.iter().enumerate() {
        if n_per_platform > c.records.len() {
            return Err(Error::Config(format!(
                "{} has {} posts, fewer than the {n_per_platform} requested",
                c.name,
                c.records.len()
            )));
        }
        let mut idx: Vec<usize> = (0..c.records.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(p as u64)));
        idx.truncate(n_per_platform);
        let picked: Vec<_> = idx.iter().map(|&i| c.records[i].clone()).collect();
        let out = model.infer(&tokenize(vocab, &picked, model.config().max_len))?;
        for (r, inf) in picked.iter().zip(out) {
            rows.push(LatentRow {
                platform: c.name.clone(),
                id: r.id.clone(),
                hate: r.hate,
                causal: inf.mu,
                target: inf.target,
            });
        }
    }
    Ok(rows)
}

pub fn write_latents(path: &Path, rows: &[LatentRow]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_latents(path: &Path) -> Result<Vec<LatentRow>> {
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(rows)
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Mean Euclidean distance between platforms `a` and `b` divided by the mean
/// distance within each platform, pairing only rows of equal hate label.
pub fn distance_ratio(rows: &[LatentRow], kind: LatentKind, a: &str, b: &str) -> Result<f64> {
    let (mut cross, mut n_cross, mut within, mut n_within) = (0.0, 0usize, 0.0, 0usize);
    for h in 0..=1u8 {
        let pick = |p: &str| {
            rows.iter()
                .filter(|r| r.platform == p && r.hate == h)
                .map(|r| r.vector(kind))
                .collect::<Vec<_>>()
        };
        let (ra, rb) = (pick(a), pick(b));
        for x in &ra {
            for y in &rb {
                cross += dist(x, y);
                n_cross += 1;
            }
        }
        for side in [&ra, &rb] {
            for i in 0..side.len() {
                for j in i + 1..side.len() {
                    within += dist(side[i], side[j]);
                    n_within += 1;
                }
            }
        }
    }
    if n_cross == 0 || n_within == 0 {
        return Err(Error::Data(format!("no matched pairs between {a} and {b}")));
    }
    let within = within / n_within as f64;
    if within == 0.0 {
        return Err(Error::Data("all within-platform latents coincide".into()));
    }
    Ok((cross / n_cross as f64) / within)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(p: &str, hate: u8, v: Vec<f32>) -> LatentRow {
        LatentRow {
            platform: p.into(),
            id: String::new(),
            hate,
            causal: v.clone(),
            target: v,
        }
    }

    #[test]
    fn ratio_of_hand_built_clusters() {
        // within distance 1 on both sides, cross distance sqrt(1 + 9)
        let rows = vec![
            row("a", 1, vec![0.0, 0.0]),
            row("a", 1, vec![1.0, 0.0]),
            row("b", 1, vec![0.0, 3.0]),
            row("b", 1, vec![1.0, 3.0]),
        ];
        let cross = (3.0 + 3.0 + 10f64.sqrt() * 2.0) / 4.0;
        let r = distance_ratio(&rows, LatentKind::Causal, "a", "b").unwrap();
        assert!((r - cross).abs() < 1e-12);
        assert!(distance_ratio(&rows, LatentKind::Causal, "a", "c").is_err());
    }

    #[test]
    fn unmatched_classes_do_not_pair() {
        let rows = vec![
            row("a", 1, vec![0.0]),
            row("a", 1, vec![2.0]),
            row("b", 0, vec![100.0]),
            row("b", 0, vec![101.0]),
            row("b", 1, vec![1.0]),
        ];
        // cross pairs: (0,1), (2,1); within: a (0,2) and b-hate0 (100,101)
        let r = distance_ratio(&rows, LatentKind::Target, "a", "b").unwrap();
        assert!((r - 1.0 / 1.5).abs() < 1e-12);
    }
}
