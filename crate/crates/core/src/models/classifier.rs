use candle_core::{Tensor, D};

use super::backbone::{Backbone, BackboneConfig, HeadStack};
use super::nn::{Ctx, Linear, ParamStore};
use crate::error::{Error, Result};

/// Scene classifier: backbone, head stack and a softmax layer over scenes.
pub struct ClassifierModel {
    pub store: ParamStore,
    pub config: BackboneConfig,
    backbone: Backbone,
    head: HeadStack,
    out: Linear,
    scene_count: usize,
}

pub fn build_classifier(cfg: &BackboneConfig, scene_count: usize, seed: u64) -> Result<ClassifierModel> {
    if scene_count < 2 {
        return Err(Error::invalid("classifier needs at least two scenes"));
    }
    let mut store = ParamStore::new(seed);
    let backbone = Backbone::new(&mut store, "backbone", cfg)?;
    let head = HeadStack::new(&mut store, "head", backbone.feature_width(), &cfg.head_units, cfg)?;
    let width = head.out_features(backbone.feature_width());
    let out = Linear::new(&mut store, "out", width, scene_count)?;
    Ok(ClassifierModel {
        store,
        config: cfg.clone(),
        backbone,
        head,
        out,
        scene_count,
    })
}

impl ClassifierModel {
    pub fn scene_count(&self) -> usize {
        self.scene_count
    }

    /// Unnormalized scores `(N, scene_count)` for inputs in `[-1, 1]`.
    pub fn logits(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let f = self.backbone.forward(x, ctx)?;
        let h = self.head.forward(&f, ctx)?;
        self.out.forward(&h, ctx)
    }

    /// Softmax probabilities in evaluation mode.
    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        let logits = self.logits(x, &mut Ctx::eval())?;
        Ok(candle_nn::ops::softmax(&logits, D::Minus1)?)
    }
}
