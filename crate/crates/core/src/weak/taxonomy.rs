use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered target-group categories.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TargetTaxonomy {
    classes: Vec<String>,
}

pub const DEFAULT_CLASSES: [&str; 9] = [
    "Ability/Disability",
    "Class",
    "Gender",
    "Immigration Status",
    "Nationality",
    "Race",
    "Religion",
    "Sexuality",
    "Sexual Preferences",
];

impl Default for TargetTaxonomy {
    fn default() -> Self {
        Self {
            classes: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TargetTaxonomy {
    pub fn new(classes: Vec<String>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::Config(format!(
                "taxonomy needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        for (i, c) in classes.iter().enumerate() {
            if c.trim().is_empty() {
                return Err(Error::Config(
                    "taxonomy class names must be nonempty".into(),
                ));
            }
            if classes[..i].iter().any(|d| d.eq_ignore_ascii_case(c)) {
                return Err(Error::Config(format!("duplicate taxonomy class {c:?}")));
            }
        }
        Ok(Self { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Case-insensitive lookup.
    pub fn index(&self, name: &str) -> Option<usize> {
        let name = name.trim();
        self.classes
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name))
    }
}

impl TryFrom<Vec<String>> for TargetTaxonomy {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TargetTaxonomy> for Vec<String> {
    fn from(t: TargetTaxonomy) -> Self {
        t.classes
    }
}
