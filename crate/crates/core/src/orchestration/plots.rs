use std::path::{Path, PathBuf};

use super::{stage_dir, Stage};
use crate::dataset::SplitName;
use crate::error::{Error, Result};
use crate::evaluation::plots::{confusion_heatmap, line_chart, Series};
use crate::evaluation::ConfusionMatrix;
use crate::training::TrainingHistory;

/// `(stage directory, history file, row title)` for the loss panel grid.
const ROWS: [(Stage, &str, &str); 3] = [
    (Stage::PretrainBranches, "history_rgb.csv", "RGB branch"),
    (Stage::PretrainBranches, "history_pc.csv", "P.Cloud branch"),
    (Stage::TrainFused, "history.csv", "Multi-modal"),
];

const METRICS: [(&str, &str); 3] = [
    ("loss", "total loss"),
    ("position", "position loss"),
    ("quaternion", "quaternion loss"),
];

pub const PLOT_PANELS: usize = ROWS.len() * METRICS.len();

fn missing(what: &str) -> Error {
    Error::Dependency {
        stage: Stage::Report.as_str().into(),
        missing: what.into(),
    }
}

/// Writes the 3x3 loss panels (branch rows by loss-component columns) and
/// the confusion heatmap under `<run>/report/plots`. Returns the file paths.
pub fn emit_plots(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let out_dir = stage_dir(run_dir, Stage::Report).join("plots");
    std::fs::create_dir_all(&out_dir)?;
    let mut written = Vec::new();
    for (r, (stage, file, title)) in ROWS.iter().enumerate() {
        let path = stage_dir(run_dir, *stage).join(file);
        if !path.is_file() {
            return Err(missing(&format!("{} ({file})", stage.as_str())));
        }
        let history = TrainingHistory::read_csv(&path, stage.as_str())?;
        if history.is_empty() {
            return Err(missing(&format!("{} ({file} is empty)", stage.as_str())));
        }
        for (c, (metric, label)) in METRICS.iter().enumerate() {
            let series: Vec<Series<'_>> = [SplitName::Train, SplitName::Val]
                .into_iter()
                .map(|split| Series {
                    label: split.as_str(),
                    points: history
                        .curve(split, metric)
                        .into_iter()
                        .enumerate()
                        .map(|(i, v)| ((i + 1) as f64, v))
                        .collect(),
                })
                .collect();
            let svg = line_chart(&format!("{title}: {label}"), "epoch", label, &series);
            let p = out_dir.join(format!("panel_{}{}_{}.svg", r + 1, c + 1, metric));
            std::fs::write(&p, svg)?;
            written.push(p);
        }
    }
    let cm_path = stage_dir(run_dir, Stage::Evaluate).join("confusion.json");
    if !cm_path.is_file() {
        return Err(missing("evaluate (confusion.json)"));
    }
    let cm: ConfusionMatrix = serde_json::from_str(&std::fs::read_to_string(cm_path)?)?;
    let p = out_dir.join("confusion_matrix.svg");
    std::fs::write(&p, confusion_heatmap(&cm, "Scene classifier confusion matrix (test)"))?;
    written.push(p);
    Ok(written)
}
