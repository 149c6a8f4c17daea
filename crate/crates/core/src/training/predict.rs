use candle_core::{Tensor, D};

use super::data::{chunks, SplitData};
use crate::error::Result;
use crate::image::Image;
use crate::models::{unit_to_images, ClassifierModel, Ctx, Generator, Modality, MultiModalRegressor, RegressorBranch};
use crate::pose::Quat;

/// Raw regressor output: normalized position and unnormalized quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosePrediction {
    pub position: [f64; 3],
    pub quaternion: Quat,
}

impl PosePrediction {
    pub fn from_row(r: &[f32]) -> Self {
        Self {
            position: [r[0] as f64, r[1] as f64, r[2] as f64],
            quaternion: [r[3] as f64, r[4] as f64, r[5] as f64, r[6] as f64],
        }
    }
}

fn rows(t: &Tensor) -> Result<Vec<PosePrediction>> {
    Ok(t.to_vec2::<f32>()?.iter().map(|r| PosePrediction::from_row(r)).collect())
}

/// Evaluation-mode class probabilities for every sample.
pub fn predict_scene_probabilities(model: &ClassifierModel, split: &SplitData, batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(split.len());
    for idx in chunks(split.len(), batch) {
        let p = model.probabilities(&split.rgb_input(&idx)?)?;
        out.extend(p.to_vec2::<f32>()?.into_iter().map(|r| r.into_iter().map(f64::from).collect()));
    }
    Ok(out)
}

/// Generator outputs for every RGB image of the split.
pub fn reconstruct_point_clouds(generator: &Generator, split: &SplitData, batch: usize) -> Result<Vec<Image>> {
    let mut out = Vec::with_capacity(split.len());
    for idx in chunks(split.len(), batch) {
        let y = generator.forward(&split.rgb_input(&idx)?, &mut Ctx::eval())?;
        out.extend(unit_to_images(&y)?);
    }
    Ok(out)
}

pub fn predict_branch(branch: &RegressorBranch, split: &SplitData, batch: usize) -> Result<Vec<PosePrediction>> {
    let mut out = Vec::with_capacity(split.len());
    for idx in chunks(split.len(), batch) {
        let x = match branch.modality {
            Modality::Rgb => split.rgb_input(&idx)?,
            Modality::PointCloud => split.pc_input(&idx)?,
        };
        out.extend(rows(&branch.forward(&x, &mut Ctx::eval())?)?);
    }
    Ok(out)
}

pub fn predict_fused(model: &MultiModalRegressor, split: &SplitData, batch: usize) -> Result<Vec<PosePrediction>> {
    let mut out = Vec::with_capacity(split.len());
    for idx in chunks(split.len(), batch) {
        let y = model.forward(&split.rgb_input(&idx)?, &split.pc_input(&idx)?, &mut Ctx::eval())?;
        out.extend(rows(&y)?);
    }
    Ok(out)
}

pub(crate) fn argmax_rows(t: &Tensor) -> Result<Vec<u32>> {
    Ok(t.argmax(D::Minus1)?.to_vec1::<u32>()?)
}
