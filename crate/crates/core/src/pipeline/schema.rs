use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::BinningSpec;
use crate::model::Task;

/// Dataset-specific cleaning applied at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    #[default]
    Generic,
    Compas,
    Pg15,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Response,
    Exposure,
    Feature,
    /// Protected attribute kept out of the model inputs.
    Protected,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    OneHot,
    Ordinal,
    MinMax,
    /// 1 for the `positive` level, 0 otherwise.
    Binary,
    #[default]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtectedKind {
    Binary,
    Categorical,
    Continuous,
}

/// What to do with a category that was not seen when fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnseenPolicy {
    #[default]
    Error,
    /// Encode as all zeros (one-hot) or as the negative level (binary).
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub encoding: Encoding,
    /// Level order for ordinal and one-hot encodings; fitted from the
    /// training rows when absent (one-hot only).
    #[serde(default)]
    pub levels: Option<Vec<String>>,
    /// Positive level of a binary encoding.
    #[serde(default)]
    pub positive: Option<String>,
    /// Marks the column as a protected attribute. Required for role
    /// `protected`, optional for features.
    #[serde(default)]
    pub protected: Option<ProtectedKind>,
    /// Multiplier applied to numeric values after parsing (for example
    /// days to years for an exposure column).
    #[serde(default)]
    pub scale: Option<f64>,
}

impl ColumnSpec {
    pub fn is_protected(&self) -> bool {
        self.protected.is_some()
    }

    pub fn is_feature(&self) -> bool {
        self.role == Role::Feature
    }

    /// Whether the raw values must parse as numbers.
    pub fn is_numeric(&self) -> bool {
        match self.role {
            Role::Response | Role::Exposure => self.encoding != Encoding::Binary,
            Role::Feature => matches!(self.encoding, Encoding::MinMax | Encoding::None),
            Role::Protected => self.protected == Some(ProtectedKind::Continuous),
            Role::Drop => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    #[serde(default)]
    pub recipe: Recipe,
    pub task: Task,
    pub columns: Vec<ColumnSpec>,
    #[serde(default)]
    pub binning: BinningSpec,
    #[serde(default)]
    pub unseen: UnseenPolicy,
}

impl DatasetSchema {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: Self = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let count = |role| self.columns.iter().filter(|c| c.role == role).count();
        if count(Role::Response) != 1 {
            return Err(Error::Schema(format!(
                "exactly one response column required, found {}",
                count(Role::Response)
            )));
        }
        let exposures = count(Role::Exposure);
        match self.task {
            Task::Poisson if exposures != 1 => {
                return Err(Error::Schema(
                    "a Poisson task needs exactly one exposure column".into(),
                ))
            }
            Task::Binary if exposures != 0 => {
                return Err(Error::Schema(
                    "a binary task takes no exposure column".into(),
                ))
            }
            _ => {}
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("column '{}' listed twice", c.name)));
            }
            if c.role == Role::Protected && c.protected.is_none() {
                return Err(Error::Schema(format!(
                    "protected column '{}' needs a protected kind",
                    c.name
                )));
            }
            if c.protected.is_some() && !matches!(c.role, Role::Protected | Role::Feature) {
                return Err(Error::Schema(format!(
                    "column '{}' can only be protected as a feature or protected role",
                    c.name
                )));
            }
            if c.encoding == Encoding::Ordinal && c.levels.is_none() {
                return Err(Error::Schema(format!(
                    "ordinal column '{}' needs explicit levels",
                    c.name
                )));
            }
            if let Some(s) = c.scale {
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::Schema(format!(
                        "column '{}' has invalid scale {s}",
                        c.name
                    )));
                }
            }
        }
        if !self.columns.iter().any(ColumnSpec::is_feature) {
            return Err(Error::Schema("no feature columns".into()));
        }
        self.binning
            .validate()
            .map_err(|e| Error::Schema(e.to_string()))?;
        Ok(())
    }

    pub fn response(&self) -> &ColumnSpec {
        self.columns
            .iter()
            .find(|c| c.role == Role::Response)
            .expect("validated")
    }

    pub fn exposure(&self) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.role == Role::Exposure)
    }

    pub fn features(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| c.is_feature())
    }

    pub fn protected(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| c.is_protected())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COMPAS: &str = r#"
recipe = "compas"
task = "binary"

[[columns]]
name = "two_year_recid"
role = "response"

[[columns]]
name = "sex"
role = "feature"
encoding = "binary"
positive = "Female"
protected = "binary"

[[columns]]
name = "race"
role = "feature"
encoding = "one_hot"
protected = "categorical"

[[columns]]
name = "age"
role = "feature"
encoding = "min_max"
protected = "continuous"
"#;

    #[test]
    fn parses_and_validates() {
        let s = DatasetSchema::from_toml_str(COMPAS).unwrap();
        assert_eq!(s.recipe, Recipe::Compas);
        assert_eq!(s.protected().count(), 3);
        assert_eq!(s.binning, BinningSpec::default());
    }

    #[test]
    fn rejects_missing_response() {
        let text = COMPAS.replace("role = \"response\"", "role = \"drop\"");
        assert!(matches!(
            DatasetSchema::from_toml_str(&text),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn exposure_required_iff_poisson() {
        let text = COMPAS.replace("task = \"binary\"", "task = \"poisson\"");
        assert!(DatasetSchema::from_toml_str(&text).is_err());
    }

    #[test]
    fn protected_role_needs_kind() {
        let text = format!("{COMPAS}\n[[columns]]\nname = \"x\"\nrole = \"protected\"\n");
        assert!(DatasetSchema::from_toml_str(&text).is_err());
    }
}
