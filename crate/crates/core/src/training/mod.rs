//! Training stages: scene classifier, RGB to point-cloud translator,
//! single-modality branch pretraining and fused regressor training, all
//! driven by the pose loss in [`loss`].

mod data;
mod history;
pub mod loss;
mod loops;
mod predict;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use data::{load_square, Modalities, SplitData, TrainingData};
pub use history::{EpochRecord, TrainingHistory};
pub use loops::{pretrain_branch, train_classifier, train_multimodal, train_pix2pix};
pub use loss::{pose_loss, pose_loss_grad, pose_loss_tensor, PoseLossTerms};
pub use predict::{
    predict_branch, predict_fused, predict_scene_probabilities, reconstruct_point_clouds, PosePrediction,
};

/// Validation quantity used to select the kept checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyMetric {
    ValAccuracy,
    ValLoss,
    ValL1,
}

impl EarlyMetric {
    fn higher_is_better(self) -> bool {
        matches!(self, EarlyMetric::ValAccuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Pose loss balance factor.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub seed: u64,
    pub early_metric: EarlyMetric,
}

fn default_beta() -> f64 {
    1.0
}

impl TrainingConfig {
    pub fn classifier() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            beta: 1.0,
            seed: 0,
            early_metric: EarlyMetric::ValAccuracy,
        }
    }

    pub fn pix2pix() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            learning_rate: 2e-4,
            early_metric: EarlyMetric::ValL1,
            ..Self::classifier()
        }
    }

    pub fn branch() -> Self {
        Self {
            epochs: 40,
            early_metric: EarlyMetric::ValLoss,
            ..Self::classifier()
        }
    }

    pub fn fused() -> Self {
        Self {
            epochs: 90,
            ..Self::branch()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta {} must be positive", self.beta)));
        }
        Ok(())
    }
}
