//! Binary macro-F1 and the source-by-target evaluation report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts with hate (1) as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn of(preds: &[u8], labels: &[u8]) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::Shape {
                what: "predictions",
                expected: labels.len(),
                got: preds.len(),
            });
        }
        let mut m = Self::default();
        for (&p, &y) in preds.iter().zip(labels) {
            match (p, y) {
                (1, 1) => m.tp += 1,
                (1, 0) => m.fp += 1,
                (0, 0) => m.tn += 1,
                (0, 1) => m.fn_ += 1,
                _ => {
                    return Err(Error::Data(format!(
                        "labels must be 0 or 1, got prediction {p} and label {y}"
                    )))
                }
            }
        }
        Ok(m)
    }

    /// `[non-hate, hate]` F1; a class without true positives scores 0.
    pub fn per_class_f1(&self) -> [f64; 2] {
        let f1 = |tp: usize, fp: usize, fn_: usize| {
            if tp == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
            }
        };
        [
            f1(self.tn, self.fn_, self.fp),
            f1(self.tp, self.fp, self.fn_),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub macro_f1: f64,
    pub per_class: [f64; 2],
    pub confusion: ConfusionMatrix,
    pub n: usize,
}

pub fn f1_report(preds: &[u8], labels: &[u8]) -> Result<F1Report> {
    if labels.is_empty() {
        return Err(Error::Empty("evaluation corpus"));
    }
    let confusion = ConfusionMatrix::of(preds, labels)?;
    let per_class = confusion.per_class_f1();
    Ok(F1Report {
        macro_f1: 0.5 * (per_class[0] + per_class[1]),
        per_class,
        confusion,
        n: labels.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CellStatus {
    Ok,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub source: String,
    pub target: String,
    pub macro_f1: Option<f64>,
    pub n_examples: usize,
    pub status: CellStatus,
}

/// Source-by-target macro-F1 grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cells: Vec<GridCell>,
    pub config_hash: String,
}

const HEADER: &str = "source\ttarget\tmacro_f1\tn_examples\tstatus";

impl EvalReport {
    pub fn cell(&self, source: &str, target: &str) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.source == source && c.target == target)
    }

    pub fn failed(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| c.status != CellStatus::Ok)
            .count()
    }

    pub fn sources(&self) -> Vec<String> {
        unique(self.cells.iter().map(|c| c.source.clone()))
    }

    pub fn targets(&self) -> Vec<String> {
        unique(self.cells.iter().map(|c| c.target.clone()))
    }

    /// Tab-separated rows preceded by a `# config_hash` comment line.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# config_hash\t{}\n{HEADER}\n", self.config_hash);
        for c in &self.cells {
            let f1 = c
                .macro_f1
                .map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
            let status = match &c.status {
                CellStatus::Ok => "ok".to_string(),
                CellStatus::Failed(m) => format!("failed: {}", m.replace(['\t', '\n'], " ")),
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{f1}\t{}\t{status}",
                c.source, c.target, c.n_examples
            );
        }
        out
    }

    pub fn from_tsv(body: &str) -> Result<Self> {
        let mut report = EvalReport::default();
        let mut seen_header = false;
        for (n, line) in body.lines().enumerate() {
            let bad = |what: &str| Error::Data(format!("report line {}: {what}", n + 1));
            if let Some(rest) = line.strip_prefix("# config_hash\t") {
                report.config_hash = rest.trim().to_string();
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !seen_header {
                if line != HEADER {
                    return Err(bad("expected the header row"));
                }
                seen_header = true;
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 columns"));
            }
            let macro_f1 = match f[2] {
                "NA" => None,
                v => Some(
                    v.parse::<f64>()
                        .map_err(|_| bad("macro_f1 is not a number"))?,
                ),
            };
            let status = match f[4] {
                "ok" => CellStatus::Ok,
                s => CellStatus::Failed(s.strip_prefix("failed: ").unwrap_or(s).to_string()),
            };
            report.cells.push(GridCell {
                source: f[0].to_string(),
                target: f[1].to_string(),
                macro_f1,
                n_examples: f[3]
                    .parse()
                    .map_err(|_| bad("n_examples is not an integer"))?,
                status,
            });
        }
        if !seen_header {
            return Err(Error::Data("report has no header row".into()));
        }
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tsv(&fs::read_to_string(path)?)
    }
}

fn unique(it: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in it {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}
