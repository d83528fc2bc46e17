//! Source-schema adapters. Each converts a public dataset file into
//! canonical records, applying that dataset's binarization rule.
//!
//! | platform | file | text | label rule |
//! |---|---|---|---|
//! | GAB | HateXplain-style JSON object | `post_tokens` joined | annotator majority; hatespeech/offensive = 1, normal = 0 |
//! | Reddit | CSV | `body` | `gold_label`: DEG = 1; NDG, NONE, NEUTRAL = 0 |
//! | X | CSV | `tweet` | `class`: 0 (hate), 1 (offensive) = 1; 2 (neither) = 0 |
//! | YouTube | CSV | `Text` | `IsHate`: true/1 = 1, false/0 = 0 |
//!
//! Column names can be overridden with [`AdapterOptions`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExampleRecord, LoadedCorpus, Platform, Rejection};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterOptions {
    pub text_column: Option<String>,
    pub label_column: Option<String>,
    pub id_column: Option<String>,
    pub target_column: Option<String>,
    /// GAB only: keep posts whose id ends with this suffix. Defaults to
    /// `_gab`; an empty string keeps every post.
    pub id_suffix: Option<String>,
}

/// Loads a source file for `platform`. Canonical `.jsonl` files are accepted
/// for any platform.
pub fn load_corpus(
    path: &Path,
    platform: &Platform,
    opts: &AdapterOptions,
) -> Result<LoadedCorpus> {
    if !path.exists() {
        return Err(Error::Data(format!("{} does not exist", path.display())));
    }
    if path.extension().is_some_and(|e| e == "jsonl") {
        let mut c = super::read_jsonl(path)?;
        let (keep, other): (Vec<_>, Vec<_>) =
            c.records.into_iter().partition(|r| &r.platform == platform);
        c.rejected.extend(other.iter().map(|r| Rejection {
            line: 0,
            reason: format!("record {} belongs to {}", r.id, r.platform),
        }));
        return Ok(LoadedCorpus::new(keep, c.rejected));
    }
    match platform {
        Platform::Gab => load_hatexplain(path, opts),
        Platform::Reddit => load_csv(
            path,
            platform,
            opts,
            ("body", "gold_label", None),
            reddit_label,
        ),
        Platform::X => load_csv(
            path,
            platform,
            opts,
            ("tweet", "class", None),
            davidson_label,
        ),
        Platform::YouTube => load_csv(
            path,
            platform,
            opts,
            ("Text", "IsHate", None),
            boolean_label,
        ),
        Platform::Synthetic(_) => Err(Error::Data(
            "synthetic corpora are read from .jsonl files".into(),
        )),
    }
}

fn reddit_label(v: &str) -> Option<u8> {
    match v.trim().to_ascii_uppercase().as_str() {
        "DEG" | "1" => Some(1),
        "NDG" | "NONE" | "NEUTRAL" | "0" => Some(0),
        _ => None,
    }
}

fn davidson_label(v: &str) -> Option<u8> {
    match v.trim() {
        "0" | "1" => Some(1),
        "2" => Some(0),
        _ => None,
    }
}

fn boolean_label(v: &str) -> Option<u8> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(1),
        "false" | "0" | "no" => Some(0),
        _ => None,
    }
}

fn load_csv(
    path: &Path,
    platform: &Platform,
    opts: &AdapterOptions,
    defaults: (&str, &str, Option<&str>),
    rule: fn(&str) -> Option<u8>,
) -> Result<LoadedCorpus> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let text_name = opts.text_column.as_deref().unwrap_or(defaults.0);
    let label_name = opts.label_column.as_deref().unwrap_or(defaults.1);
    let text_col = col(text_name)
        .ok_or_else(|| Error::Data(format!("{}: missing column {text_name:?}", path.display())))?;
    let label_col = col(label_name)
        .ok_or_else(|| Error::Data(format!("{}: missing column {label_name:?}", path.display())))?;
    let id_col = opts.id_column.as_deref().and_then(col);
    let target_col = match (
        platform.has_targets(),
        opts.target_column.as_deref().or(defaults.2),
    ) {
        (true, Some(name)) => col(name),
        _ => None,
    };

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = row
            .as_ref()
            .ok()
            .and_then(|r| r.position())
            .map_or(i as u64 + 2, |p| p.line());
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                rejected.push(Rejection {
                    line,
                    reason: format!("malformed row: {e}"),
                });
                continue;
            }
        };
        let (Some(text), Some(raw)) = (row.get(text_col), row.get(label_col)) else {
            rejected.push(Rejection {
                line,
                reason: "row is missing required fields".into(),
            });
            continue;
        };
        let Some(hate) = rule(raw) else {
            rejected.push(Rejection {
                line,
                reason: format!("unknown label value {raw:?}"),
            });
            continue;
        };
        let id = id_col
            .and_then(|c| row.get(c))
            .map_or_else(|| format!("{}-{line}", platform), str::to_string);
        let gold_target = target_col
            .and_then(|c| row.get(c))
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::to_string);
        let record = ExampleRecord {
            id,
            text: text.to_string(),
            hate,
            gold_target,
            platform: platform.clone(),
        };
        match record.validate() {
            Ok(()) => records.push(record),
            Err(e) => rejected.push(Rejection {
                line,
                reason: e.to_string(),
            }),
        }
    }
    Ok(LoadedCorpus::new(records, rejected))
}

#[derive(Deserialize)]
struct HxPost {
    #[serde(default)]
    post_id: Option<String>,
    annotators: Vec<HxAnnotator>,
    post_tokens: Vec<String>,
}

#[derive(Deserialize)]
struct HxAnnotator {
    label: String,
    #[serde(default)]
    target: Vec<String>,
}

/// Maps a HateXplain community name onto the default taxonomy.
pub fn hatexplain_target(community: &str) -> Option<&'static str> {
    Some(match community.to_ascii_lowercase().as_str() {
        "african" | "arab" | "asian" | "caucasian" | "hispanic" | "indian" | "indigenous" => "Race",
        "islam" | "christian" | "jewish" | "buddhism" | "hindu" | "nonreligious" => "Religion",
        "women" | "men" => "Gender",
        "homosexual" | "gay" | "bisexual" | "asexual" => "Sexuality",
        "heterosexual" => "Sexual Preferences",
        "refugee" => "Immigration Status",
        "economic" => "Class",
        "disability" => "Ability/Disability",
        _ => return None,
    })
}

fn load_hatexplain(path: &Path, opts: &AdapterOptions) -> Result<LoadedCorpus> {
    let body = fs::read_to_string(path)?;
    let raw: BTreeMap<String, serde_json::Value> = serde_json::from_str(&body)?;
    let suffix = opts.id_suffix.as_deref().unwrap_or("_gab");
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (n, (key, value)) in raw.into_iter().enumerate() {
        if !key.ends_with(suffix) {
            continue;
        }
        let line = n as u64 + 1;
        let post: HxPost = match serde_json::from_value(value) {
            Ok(p) => p,
            Err(e) => {
                rejected.push(Rejection {
                    line,
                    reason: format!("{key}: {e}"),
                });
                continue;
            }
        };
        let mut votes = [0usize; 2];
        let mut unknown = None;
        for a in &post.annotators {
            match a.label.as_str() {
                "hatespeech" | "offensive" => votes[1] += 1,
                "normal" => votes[0] += 1,
                other => unknown = Some(other.to_string()),
            }
        }
        if let Some(label) = unknown {
            rejected.push(Rejection {
                line,
                reason: format!("{key}: unknown label value {label:?}"),
            });
            continue;
        }
        if votes[0] == votes[1] {
            rejected.push(Rejection {
                line,
                reason: format!("{key}: no annotator majority"),
            });
            continue;
        }
        let hate = u8::from(votes[1] > votes[0]);
        let mut target_votes: BTreeMap<&str, usize> = BTreeMap::new();
        for a in &post.annotators {
            for t in a.target.iter().filter_map(|t| hatexplain_target(t)) {
                *target_votes.entry(t).or_default() += 1;
            }
        }
        let gold_target = target_votes
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(t, _)| t.to_string());
        let record = ExampleRecord {
            id: post.post_id.unwrap_or(key),
            text: post.post_tokens.join(" "),
            hate,
            gold_target,
            platform: Platform::Gab,
        };
        match record.validate() {
            Ok(()) => records.push(record),
            Err(e) => rejected.push(Rejection {
                line,
                reason: e.to_string(),
            }),
        }
    }
    Ok(LoadedCorpus::new(records, rejected))
}
