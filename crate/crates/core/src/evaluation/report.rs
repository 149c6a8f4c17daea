use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::RegressionReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSummary {
    pub loss: f64,
    pub accuracy: f64,
}

/// Everything measured for one model. Split maps are keyed by split name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub dataset_hash: String,
    #[serde(default)]
    pub classification: BTreeMap<String, ClassificationSummary>,
    /// Pose loss on normalized targets per split.
    #[serde(default)]
    pub regression_loss: BTreeMap<String, f64>,
    /// Test-split world-space errors (mean absolute, millimetres).
    #[serde(default)]
    pub mae_mm: Option<[f64; 3]>,
    #[serde(default)]
    pub quat_deg: Option<f64>,
    #[serde(default)]
    pub disruption_loss: Option<f64>,
}

impl EvalReport {
    pub fn new(model: &str, dataset_hash: &str) -> Self {
        Self {
            model: model.to_string(),
            dataset_hash: dataset_hash.to_string(),
            ..Self::default()
        }
    }

    /// Fills the world-space columns from a test-split regression report.
    pub fn set_test_errors(&mut self, test: &RegressionReport) {
        self.mae_mm = Some(test.mae_mm);
        self.quat_deg = Some(test.quat_deg);
    }

    /// Flat `(column, value)` view. Every column is lower-is-better except
    /// those ending in `accuracy`.
    pub fn columns(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (split, c) in &self.classification {
            out.push((format!("{split}_class_loss"), c.loss));
            out.push((format!("{split}_accuracy"), c.accuracy));
        }
        for split in ["train", "validation", "test"] {
            if let Some(&v) = self.regression_loss.get(split) {
                out.push((format!("{split}_loss"), v));
            }
        }
        if let Some(m) = self.mae_mm {
            for (axis, v) in ["x", "y", "z"].iter().zip(m) {
                out.push((format!("mae_{axis}_mm"), v));
            }
        }
        if let Some(d) = self.quat_deg {
            out.push(("quat_deg".into(), d));
        }
        if let Some(d) = self.disruption_loss {
            out.push(("disruption_loss".into(), d));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let mut values: Vec<f64> = self.columns().into_iter().map(|(_, v)| v).collect();
        values.extend(self.classification.values().map(|c| c.accuracy));
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!("report {} has a negative or non-finite metric", self.model)));
        }
        if self.classification.values().any(|c| c.accuracy > 1.0) {
            return Err(Error::invalid(format!("report {} has accuracy above 1", self.model)));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Models as rows, metrics as columns. Empty cells are metrics a model does
/// not report.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
    /// Row index of the best value per column.
    pub best: Vec<Option<usize>>,
}

fn higher_is_better(column: &str) -> bool {
    column.ends_with("accuracy")
}

pub fn compare_models(reports: &[EvalReport]) -> Result<ComparisonTable> {
    if reports.len() < 2 {
        return Err(Error::IncomparableReports(format!("need at least 2 reports, got {}", reports.len())));
    }
    let hash = &reports[0].dataset_hash;
    if let Some(r) = reports.iter().find(|r| &r.dataset_hash != hash) {
        return Err(Error::IncomparableReports(format!(
            "{} uses dataset {} but {} uses {}",
            r.model, r.dataset_hash, reports[0].model, hash
        )));
    }
    let mut columns: Vec<String> = Vec::new();
    let per_model: Vec<BTreeMap<String, f64>> = reports
        .iter()
        .map(|r| {
            let cols = r.columns();
            for (c, _) in &cols {
                if !columns.contains(c) {
                    columns.push(c.clone());
                }
            }
            cols.into_iter().collect()
        })
        .collect();
    let rows: Vec<(String, Vec<Option<f64>>)> = reports
        .iter()
        .zip(&per_model)
        .map(|(r, m)| (r.model.clone(), columns.iter().map(|c| m.get(c).copied()).collect()))
        .collect();
    let best = columns
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let mut best: Option<(usize, f64)> = None;
            for (i, (_, vals)) in rows.iter().enumerate() {
                if let Some(v) = vals[j] {
                    let better = match best {
                        None => true,
                        Some((_, b)) if higher_is_better(c) => v > b,
                        Some((_, b)) => v < b,
                    };
                    if better {
                        best = Some((i, v));
                    }
                }
            }
            best.map(|(i, _)| i)
        })
        .collect();
    Ok(ComparisonTable { columns, rows, best })
}

impl ComparisonTable {
    /// Restriction to `columns` (in that order), skipping unknown names.
    pub fn select(&self, columns: &[&str]) -> ComparisonTable {
        let idx: Vec<usize> = columns
            .iter()
            .filter_map(|c| self.columns.iter().position(|k| k == c))
            .collect();
        ComparisonTable {
            columns: idx.iter().map(|&j| self.columns[j].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|(m, v)| (m.clone(), idx.iter().map(|&j| v[j]).collect()))
                .collect(),
            best: idx.iter().map(|&j| self.best[j]).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model");
        for c in &self.columns {
            write!(s, ",{c}").unwrap();
        }
        s.push_str(",best_in\n");
        for (i, (model, vals)) in self.rows.iter().enumerate() {
            s.push_str(model);
            for v in vals {
                match v {
                    Some(v) => write!(s, ",{v}").unwrap(),
                    None => s.push(','),
                }
            }
            let wins: Vec<&str> = self
                .best
                .iter()
                .zip(&self.columns)
                .filter(|(b, _)| **b == Some(i))
                .map(|(_, c)| c.as_str())
                .collect();
            writeln!(s, ",{}", wins.join(";")).unwrap();
        }
        s
    }

    /// Fixed-width text table; the best value of each column carries a `*`.
    pub fn to_text(&self) -> String {
        let cell = |i: usize, j: usize| -> String {
            match self.rows[i].1[j] {
                Some(v) => format!("{v:.6}{}", if self.best[j] == Some(i) { "*" } else { " " }),
                None => "-".into(),
            }
        };
        let name_w = self.rows.iter().map(|(m, _)| m.len()).max().unwrap_or(0).max(5);
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|j| {
                (0..self.rows.len())
                    .map(|i| cell(i, j).len())
                    .chain([self.columns[j].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut s = format!("{:name_w$}", "model");
        for (c, w) in self.columns.iter().zip(&widths) {
            write!(s, "  {c:>w$}").unwrap();
        }
        s.push('\n');
        for i in 0..self.rows.len() {
            write!(s, "{:name_w$}", self.rows[i].0).unwrap();
            for (j, w) in widths.iter().enumerate() {
                write!(s, "  {:>w$}", cell(i, j)).unwrap();
            }
            s.push('\n');
        }
        s
    }
}
