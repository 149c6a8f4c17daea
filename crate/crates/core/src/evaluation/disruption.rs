use serde::{Deserialize, Serialize};

use super::metrics::{classifier_logits, regression_metrics, RegressionReport};
use crate::dataset::NormalizationParams;
use crate::error::{Error, Result};
use crate::models::{ClassifierModel, Generator, Modality, MultiModalRegressor, RegressorBranch};
use crate::training::{predict_branch, predict_fused, reconstruct_point_clouds, SplitData};

/// A pose regressor under evaluation.
#[derive(Clone, Copy)]
pub enum PoseModel<'a> {
    Branch(&'a RegressorBranch),
    Fused(&'a MultiModalRegressor),
}

impl PoseModel<'_> {
    pub fn kind(&self) -> ModelKind {
        match self {
            PoseModel::Branch(b) if b.modality == Modality::Rgb => ModelKind::Rgb,
            PoseModel::Branch(_) => ModelKind::PointCloud,
            PoseModel::Fused(_) => ModelKind::Fused,
        }
    }

    fn needs_pc(&self) -> bool {
        self.kind() != ModelKind::Rgb
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Rgb,
    PointCloud,
    Fused,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Rgb, ModelKind::PointCloud, ModelKind::Fused];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rgb => "rgb",
            ModelKind::PointCloud => "point_cloud",
            ModelKind::Fused => "fused",
        }
    }

    /// Row label used in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Rgb => "RGB",
            ModelKind::PointCloud => "P.Cloud",
            ModelKind::Fused => "APS",
        }
    }
}

/// Pose loss of `model` on `split`, whose point-cloud member (if the model
/// needs one) must already hold the images to feed.
pub fn regression_report(
    model: PoseModel<'_>,
    split: &SplitData,
    norm: &NormalizationParams,
    beta: f64,
    batch: usize,
) -> Result<RegressionReport> {
    if split.is_empty() {
        return Err(Error::invalid("empty split"));
    }
    let preds = match model {
        PoseModel::Branch(b) => predict_branch(b, split, batch)?,
        PoseModel::Fused(m) => predict_fused(m, split, batch)?,
    };
    regression_metrics(&preds, None, split.samples(), norm, beta)
}

/// Upstream components used on the occluded images.
#[derive(Clone, Copy, Default)]
pub struct Upstream<'a> {
    /// When set, positions are decoded with the predicted scene.
    pub classifier: Option<&'a ClassifierModel>,
    /// Required for models that consume point clouds.
    pub generator: Option<&'a Generator>,
}

/// Mean pose loss over occluded RGB test images. Point-cloud inputs are
/// reconstructed from the occluded RGB by the generator, and the scene used
/// for denormalization comes from the classifier when one is given.
pub fn disruption_test(
    model: PoseModel<'_>,
    occluded: &SplitData,
    upstream: Upstream<'_>,
    norm: &NormalizationParams,
    beta: f64,
    batch: usize,
) -> Result<RegressionReport> {
    if occluded.is_empty() {
        return Err(Error::invalid("empty occluded split"));
    }
    let all: Vec<usize> = (0..occluded.len()).collect();
    let split = if model.needs_pc() {
        let generator = upstream
            .generator
            .ok_or_else(|| Error::invalid("point-cloud models need a generator for disruption"))?;
        let recon = reconstruct_point_clouds(generator, occluded, batch)?;
        occluded.subset(&all)?.with_pc(recon)?
    } else {
        occluded.subset(&all)?
    };
    let preds = match model {
        PoseModel::Branch(b) => predict_branch(b, &split, batch)?,
        PoseModel::Fused(m) => predict_fused(m, &split, batch)?,
    };
    let decode = match upstream.classifier {
        Some(c) => Some(
            classifier_logits(c, &split, batch)?
                .iter()
                .map(|row| {
                    let mut best = 0;
                    for (i, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = i;
                        }
                    }
                    best
                })
                .collect::<Vec<_>>(),
        ),
        None => None,
    };
    regression_metrics(&preds, decode.as_deref(), split.samples(), norm, beta)
}
