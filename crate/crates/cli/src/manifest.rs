//! `manifest.json`: what a command read, how it was configured and what it
//! wrote.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::Serialize;

use disentangle::train::sha256_hex;

use crate::failure::Outcome;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub resolved_config: Option<serde_json::Value>,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_path: None,
            resolved_config: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: Utc::now(),
            finished_at: None,
        }
    }

    pub fn input(&mut self, path: &Path) -> Outcome<()> {
        self.inputs.push(InputDigest {
            path: path.to_path_buf(),
            sha256: digest(path)?,
        });
        Ok(())
    }

    pub fn config<T: Serialize>(&mut self, cfg: &T) {
        self.resolved_config = Some(serde_json::to_value(cfg).expect("config serializes"));
    }

    pub fn finish(mut self, out: &Path) -> Outcome<()> {
        self.finished_at = Some(Utc::now());
        fs::create_dir_all(out)?;
        fs::write(out.join("manifest.json"), serde_json::to_vec_pretty(&self)?)?;
        Ok(())
    }
}

/// SHA-256 of a file, or of a directory's files in name order (each file
/// contributes its name and content digest).
pub fn digest(path: &Path) -> Outcome<String> {
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        let mut acc = String::new();
        for e in entries {
            if e.path().is_file() {
                acc.push_str(&format!(
                    "{} {}\n",
                    e.file_name().to_string_lossy(),
                    digest(&e.path())?
                ));
            }
        }
        Ok(sha256_hex(acc.as_bytes()))
    } else {
        Ok(sha256_hex(&fs::read(path)?))
    }
}
