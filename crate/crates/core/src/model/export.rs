use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interaction matrix of one text, ready for heatmap plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub class_names: Vec<String>,
    pub tokens: Vec<String>,
    /// `true` where the column is padding.
    pub padding_mask: Vec<bool>,
    /// `c` rows of `n` scores.
    pub matrix: Vec<Vec<f64>>,
}

impl InteractionRecord {
    /// Column with the largest score in `class`'s row (first on ties).
    pub fn argmax_column(&self, class: usize) -> usize {
        let row = &self.matrix[class];
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        best
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&body)?)
    }
}
