use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::SplitName;
use crate::error::{Error, Result};

/// Metrics of one completed epoch, keyed by `(split, metric)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub metrics: BTreeMap<(SplitName, String), f64>,
    pub seconds: f64,
}

impl EpochRecord {
    pub fn get(&self, split: SplitName, metric: &str) -> Option<f64> {
        self.metrics.get(&(split, metric.to_string())).copied()
    }
}

/// Per-epoch curves of one training stage. `baseline` holds metrics measured
/// before the first update (written as epoch 0).
#[derive(Debug, Clone, Default)]
pub struct TrainingHistory {
    pub stage: String,
    pub epochs: Vec<EpochRecord>,
    pub baseline: BTreeMap<(SplitName, String), f64>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: Option<usize>,
}

impl TrainingHistory {
    pub fn new(stage: &str) -> Self {
        Self {
            stage: stage.to_string(),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn curve(&self, split: SplitName, metric: &str) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.get(split, metric)).collect()
    }

    pub fn metric_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .epochs
            .iter()
            .flat_map(|e| e.metrics.keys().map(|(_, m)| m.clone()))
            .collect();
        names.sort();
        names.dedup();
        names
    }

    /// Metrics equal, ignoring wall-clock time.
    pub fn same_curves(&self, other: &TrainingHistory) -> bool {
        self.baseline == other.baseline
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| a.metrics == b.metrics)
    }

    /// CSV with columns `epoch,split,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,metric,value\n");
        for ((split, metric), v) in &self.baseline {
            let _ = writeln!(out, "0,{},{metric},{v:?}", split.as_str());
        }
        for e in &self.epochs {
            for ((split, metric), v) in &e.metrics {
                let _ = writeln!(out, "{},{},{metric},{v:?}", e.epoch, split.as_str());
            }
            let _ = writeln!(out, "{},train,wall_seconds,{:?}", e.epoch, e.seconds);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path, stage: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut h = TrainingHistory::new(stage);
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(parse_err(i + 1, format!("expected 4 columns, got {}", cols.len())));
            }
            let epoch: usize = cols[0].parse().map_err(|e| parse_err(i + 1, format!("{e}")))?;
            let split = match cols[1] {
                "train" => SplitName::Train,
                "validation" => SplitName::Val,
                "test" => SplitName::Test,
                other => return Err(parse_err(i + 1, format!("unknown split {other}"))),
            };
            let value: f64 = cols[3].parse().map_err(|e| parse_err(i + 1, format!("{e}")))?;
            if epoch == 0 {
                h.baseline.insert((split, cols[2].to_string()), value);
                continue;
            }
            while h.epochs.len() < epoch {
                let n = h.epochs.len() + 1;
                h.epochs.push(EpochRecord {
                    epoch: n,
                    ..EpochRecord::default()
                });
            }
            let rec = &mut h.epochs[epoch - 1];
            if cols[2] == "wall_seconds" {
                rec.seconds = value;
            } else {
                rec.metrics.insert((split, cols[2].to_string()), value);
            }
        }
        Ok(h)
    }
}
