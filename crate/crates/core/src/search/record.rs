use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, SearchError};
use crate::io_util::write_atomic;
use crate::model::CompressionConfig;

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    /// 0-based evaluation index.
    pub id: usize,
    pub kappa: CompressionConfig,
    /// Search cost `E` (compressed FLOPs).
    pub cost: f64,
    pub property_names: Vec<String>,
    pub rho_min: Vec<f64>,
    pub rho_th: Vec<f64>,
    pub feasible: bool,
    pub avg_pp: f64,
    /// Mean preservation score of each built-in property.
    pub ps: Vec<f64>,
}

impl EvaluationRecord {
    /// Smallest per-property minimum robustness.
    pub fn rho_overall(&self) -> f64 {
        self.rho_min.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Smallest slack `rho_min[i] - rho_th[i]`.
    pub fn margin(&self) -> f64 {
        self.rho_min
            .iter()
            .zip(&self.rho_th)
            .map(|(r, t)| r - t)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Parse a record log, one JSON object per line. Blank lines are skipped.
pub fn parse_log(text: &str) -> Result<Vec<EvaluationRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: EvaluationRecord = serde_json::from_str(line).map_err(|e| SearchError::Log {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.id != out.len() {
            return Err(SearchError::Log {
                line: i + 1,
                message: format!("expected id {}, found {}", out.len(), rec.id),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_log(path: &Path) -> Result<Vec<EvaluationRecord>> {
    parse_log(&fs::read_to_string(path)?)
}

pub fn render_log(records: &[EvaluationRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).map_err(|e| SearchError::Log {
            line: r.id + 1,
            message: e.to_string(),
        })?);
        s.push('\n');
    }
    Ok(s)
}

/// Rewrite the whole log atomically.
pub fn write_log(path: &Path, records: &[EvaluationRecord]) -> Result<()> {
    write_atomic(path, render_log(records)?.as_bytes())?;
    Ok(())
}
