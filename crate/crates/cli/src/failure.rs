//! Exit codes: 0 success, 1 configuration, 2 data, 3 grid with failed cells.

use std::fmt::Display;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type Outcome<T> = Result<T, Failure>;

pub const CONFIG: u8 = 1;
pub const DATA: u8 = 2;
pub const PARTIAL_GRID: u8 = 3;

impl Failure {
    pub fn config(msg: impl Display) -> Self {
        Self {
            code: CONFIG,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn data(msg: impl Display) -> Self {
        Self {
            code: DATA,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

impl From<disentangle::Error> for Failure {
    fn from(e: disentangle::Error) -> Self {
        let code = match e {
            disentangle::Error::Config(_) => CONFIG,
            _ => DATA,
        };
        Self {
            code,
            error: e.into(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: DATA,
            error: e.into(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self {
            code: DATA,
            error: e.into(),
        }
    }
}
