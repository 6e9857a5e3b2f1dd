use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generator log-probabilities of one target span: with all passages, and
/// with each passage removed in turn. Values are natural-log probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropEntry {
    pub instance_id: String,
    /// Half-open token range of the target span.
    pub span: [usize; 2],
    pub log_p_full: f64,
    pub log_p_ablated: Vec<f64>,
}

impl DropEntry {
    /// `log p_full - log p_ablated[passage]`.
    pub fn drop_for(&self, passage: usize) -> Option<f64> {
        self.log_p_ablated.get(passage).map(|a| self.log_p_full - a)
    }

    pub fn drops(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_p_ablated.iter().map(|a| self.log_p_full - a)
    }
}

/// Contents of `drops.json`: a JSON array of [`DropEntry`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DropTable {
    pub entries: Vec<DropEntry>,
}

impl DropTable {
    pub fn find(&self, instance_id: &str, span: [usize; 2]) -> Option<&DropEntry> {
        self.entries
            .iter()
            .find(|e| e.instance_id == instance_id && e.span == span)
    }

    /// Every entry must hold exactly `num_passages(instance_id)` ablations.
    pub fn validate(&self, num_passages: impl Fn(&str) -> Option<usize>) -> Result<()> {
        for (idx, e) in self.entries.iter().enumerate() {
            if !e.log_p_full.is_finite() || e.log_p_ablated.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "drop entry {idx} ({}) has a non-finite log probability",
                    e.instance_id
                )));
            }
            if let Some(p) = num_passages(&e.instance_id) {
                if e.log_p_ablated.len() != p {
                    return Err(Error::Validation(format!(
                        "drop entry {idx} ({}) has {} ablations for {p} passages",
                        e.instance_id,
                        e.log_p_ablated.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let entries: Vec<DropEntry> =
            serde_json::from_str(text).map_err(|e| Error::schema(path, e.to_string()))?;
        let table = DropTable { entries };
        table.validate(|_| None)?;
        Ok(table)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.entries).expect("drops serialize");
        s.push('\n');
        s
    }
}

pub fn load_drops(path: &Path) -> Result<DropTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DropTable::from_json(&text, path)
}
