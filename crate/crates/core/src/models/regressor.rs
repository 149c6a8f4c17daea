use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneConfig, DenseLayer, HeadStack};
use super::nn::{Ctx, Linear, ParamStore};
use crate::error::{Error, Result};

/// Position (3) followed by quaternion (4).
pub const POSE_OUTPUTS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Rgb,
    PointCloud,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::PointCloud => "point_cloud",
        }
    }
}

/// How the fused model's branch weights are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusedInit {
    /// Copy backbone and first head layer from trained single-modality branches.
    Pretrained,
    Fresh,
}

/// Single-modality pose regressor. The fusion point is the output of the
/// first head layer.
pub struct RegressorBranch {
    pub store: ParamStore,
    pub config: BackboneConfig,
    pub modality: Modality,
    backbone: Backbone,
    head: HeadStack,
    out: Linear,
}

pub fn build_regressor_branch(cfg: &BackboneConfig, modality: Modality, seed: u64) -> Result<RegressorBranch> {
    let mut store = ParamStore::new(seed);
    let backbone = Backbone::new(&mut store, "backbone", cfg)?;
    let head = HeadStack::new(&mut store, "head", backbone.feature_width(), &cfg.head_units, cfg)?;
    let out = Linear::new(&mut store, "out", head.out_features(backbone.feature_width()), POSE_OUTPUTS)?;
    Ok(RegressorBranch {
        store,
        config: cfg.clone(),
        modality,
        backbone,
        head,
        out,
    })
}

impl RegressorBranch {
    /// Width of the truncated feature vector.
    pub fn truncation_width(&self) -> usize {
        self.head.layers[0].out_features()
    }

    /// Output of the first head layer.
    pub fn features(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let f = self.backbone.forward(x, ctx)?;
        self.head.layers[0].forward(&f, ctx)
    }

    /// `(N, 7)` raw pose output.
    pub fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let f = self.backbone.forward(x, ctx)?;
        let h = self.head.forward(&f, ctx)?;
        self.out.forward(&h, ctx)
    }
}

struct FusedBranch {
    backbone: Backbone,
    first: DenseLayer,
}

impl FusedBranch {
    fn new(ps: &mut ParamStore, prefix: &str, cfg: &BackboneConfig) -> Result<Self> {
        let backbone = Backbone::new(ps, &format!("{prefix}.backbone"), cfg)?;
        let first = DenseLayer::new(
            ps,
            &format!("{prefix}.head.dense0"),
            backbone.feature_width(),
            cfg.head_units[0],
            cfg,
        )?;
        Ok(Self { backbone, first })
    }

    fn forward(&self, x: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let f = self.backbone.forward(x, ctx)?;
        self.first.forward(&f, ctx)
    }
}

/// Two truncated branches whose features are concatenated and passed through
/// the remaining head layers and a 7-way linear output.
pub struct MultiModalRegressor {
    pub store: ParamStore,
    pub rgb_config: BackboneConfig,
    pub pc_config: BackboneConfig,
    pub init: FusedInit,
    rgb: FusedBranch,
    pc: FusedBranch,
    shared: HeadStack,
    out: Linear,
}

impl MultiModalRegressor {
    pub fn new(rgb_cfg: &BackboneConfig, pc_cfg: &BackboneConfig, init: FusedInit, seed: u64) -> Result<Self> {
        if rgb_cfg.head_units[0] != pc_cfg.head_units[0] {
            return Err(Error::IncompatibleBranch {
                rgb: rgb_cfg.head_units[0],
                pc: pc_cfg.head_units[0],
            });
        }
        let mut store = ParamStore::new(seed);
        let rgb = FusedBranch::new(&mut store, "rgb", rgb_cfg)?;
        let pc = FusedBranch::new(&mut store, "pc", pc_cfg)?;
        let fused_width = 2 * rgb_cfg.head_units[0];
        let shared = HeadStack::new(&mut store, "shared", fused_width, &rgb_cfg.head_units[1..], rgb_cfg)?;
        let out = Linear::new(&mut store, "out", shared.out_features(fused_width), POSE_OUTPUTS)?;
        Ok(Self {
            store,
            rgb_config: rgb_cfg.clone(),
            pc_config: pc_cfg.clone(),
            init,
            rgb,
            pc,
            shared,
            out,
        })
    }

    /// Width of the concatenated feature vector.
    pub fn fused_width(&self) -> usize {
        self.rgb.first.out_features() + self.pc.first.out_features()
    }

    pub fn forward(&self, rgb: &Tensor, pc: &Tensor, ctx: &mut Ctx) -> Result<Tensor> {
        let a = self.rgb.forward(rgb, ctx)?;
        let b = self.pc.forward(pc, ctx)?;
        let h = self.shared.forward(&Tensor::cat(&[&a, &b], 1)?, ctx)?;
        self.out.forward(&h, ctx)
    }

    /// Copies backbone and first head layer of both branches. Returns the
    /// number of tensors copied.
    pub fn load_branches(&self, rgb: &RegressorBranch, pc: &RegressorBranch) -> Result<usize> {
        let mut n = 0;
        for (prefix, branch) in [("rgb.", rgb), ("pc.", pc)] {
            let snap = branch.store.snapshot()?;
            n += self.store.restore_mapped(&snap, |name| {
                let rest = name.strip_prefix(prefix)?;
                (rest.starts_with("backbone.") || rest.starts_with("head.dense0.")).then(|| rest.to_string())
            })?;
        }
        Ok(n)
    }

    /// Trainable parameters of the truncated branches.
    pub fn branch_parameters(&self) -> Vec<candle_core::Var> {
        let mut v = self.store.trainable_with_prefix("rgb.");
        v.extend(self.store.trainable_with_prefix("pc."));
        v
    }
}

/// Builds the fused model from an RGB and a point-cloud branch.
pub fn fuse_branches(
    rgb: &RegressorBranch,
    pc: &RegressorBranch,
    init: FusedInit,
    seed: u64,
) -> Result<MultiModalRegressor> {
    if rgb.modality != Modality::Rgb || pc.modality != Modality::PointCloud {
        return Err(Error::invalid(format!(
            "expected rgb and point_cloud branches, got {} and {}",
            rgb.modality.as_str(),
            pc.modality.as_str()
        )));
    }
    if rgb.truncation_width() != pc.truncation_width() {
        return Err(Error::IncompatibleBranch {
            rgb: rgb.truncation_width(),
            pc: pc.truncation_width(),
        });
    }
    let fused = MultiModalRegressor::new(&rgb.config, &pc.config, init, seed)?;
    if init == FusedInit::Pretrained {
        fused.load_branches(rgb, pc)?;
    }
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn small() -> BackboneConfig {
        BackboneConfig {
            input_size: 32,
            head_units: vec![64, 16, 8],
            ..BackboneConfig::default()
        }
    }

    fn input(seed: f32) -> Tensor {
        (Tensor::randn(0f32, 1.0, (2, 3, 32, 32), &Device::Cpu).unwrap() * seed as f64).unwrap()
    }

    #[test]
    fn branch_outputs_seven_values_and_truncates_at_first_layer() {
        let b = build_regressor_branch(&small(), Modality::Rgb, 0).unwrap();
        let x = input(1.0);
        assert_eq!(b.forward(&x, &mut Ctx::eval()).unwrap().dims(), &[2, 7]);
        assert_eq!(b.truncation_width(), 64);
        assert_eq!(b.features(&x, &mut Ctx::eval()).unwrap().dims(), &[2, 64]);
        let d = build_regressor_branch(&BackboneConfig::default(), Modality::Rgb, 0).unwrap();
        assert_eq!(d.truncation_width(), 1024);
    }

    #[test]
    fn fused_model_depends_on_both_inputs() {
        let rgb = build_regressor_branch(&small(), Modality::Rgb, 1).unwrap();
        let pc = build_regressor_branch(&small(), Modality::PointCloud, 2).unwrap();
        let fused = fuse_branches(&rgb, &pc, FusedInit::Pretrained, 3).unwrap();
        assert_eq!(fused.fused_width(), 128);
        let (a, b) = (input(1.0), input(1.0));
        let base = fused.forward(&a, &b, &mut Ctx::eval()).unwrap();
        let moved_rgb = fused.forward(&input(2.0), &b, &mut Ctx::eval()).unwrap();
        let moved_pc = fused.forward(&a, &input(2.0), &mut Ctx::eval()).unwrap();
        let diff = |x: &Tensor, y: &Tensor| {
            (x - y).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap()
        };
        assert!(diff(&base, &moved_rgb) > 0.0);
        assert!(diff(&base, &moved_pc) > 0.0);
    }

    #[test]
    fn pretrained_init_copies_branch_features() {
        let rgb = build_regressor_branch(&small(), Modality::Rgb, 1).unwrap();
        let pc = build_regressor_branch(&small(), Modality::PointCloud, 2).unwrap();
        let fused = fuse_branches(&rgb, &pc, FusedInit::Pretrained, 3).unwrap();
        let x = input(1.0);
        let want = rgb.features(&x, &mut Ctx::eval()).unwrap().to_vec2::<f32>().unwrap();
        let got = fused.rgb.forward(&x, &mut Ctx::eval()).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(want, got);
        let fresh = fuse_branches(&rgb, &pc, FusedInit::Fresh, 3).unwrap();
        let other = fresh.rgb.forward(&x, &mut Ctx::eval()).unwrap().to_vec2::<f32>().unwrap();
        assert_ne!(want, other);
    }

    #[test]
    fn mismatched_truncation_widths_are_rejected() {
        let rgb = build_regressor_branch(&small(), Modality::Rgb, 1).unwrap();
        let mut cfg = small();
        cfg.head_units = vec![48, 16, 8];
        let pc = build_regressor_branch(&cfg, Modality::PointCloud, 2).unwrap();
        assert!(matches!(
            fuse_branches(&rgb, &pc, FusedInit::Pretrained, 0),
            Err(Error::IncompatibleBranch { rgb: 64, pc: 48 })
        ));
        assert!(fuse_branches(&pc, &rgb, FusedInit::Fresh, 0).is_err());
    }
}
