use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::backbone::BackboneConfig;
use super::classifier::{build_classifier, ClassifierModel};
use super::nn::ParamStore;
use super::pix2pix::{Generator, Pix2PixConfig};
use super::regressor::{build_regressor_branch, FusedInit, Modality, MultiModalRegressor, RegressorBranch};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Name of the layer whose output the fused model concatenates.
pub const TRUNCATION_LAYER: &str = "head.dense0";

/// JSON sidecar stored next to each `.ckpt` tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    /// `classifier`, `generator`, `branch` or `fused`.
    pub kind: String,
    pub config: serde_json::Value,
    #[serde(default)]
    pub seed: u64,
    /// Epoch whose weights were kept.
    #[serde(default)]
    pub epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<Modality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused_init: Option<FusedInit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_params_hash: Option<String>,
    /// Training history file, relative to the checkpoint directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<String>,
}

/// Caller-supplied provenance recorded in the sidecar.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointInfo {
    pub seed: u64,
    pub epoch: Option<usize>,
    pub norm_params_hash: Option<String>,
    pub history: Option<String>,
}

impl CheckpointMeta {
    fn new(kind: &str, config: serde_json::Value, info: &CheckpointInfo) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            config,
            seed: info.seed,
            epoch: info.epoch,
            scene_count: None,
            modality: None,
            fused_init: None,
            truncation: None,
            norm_params_hash: info.norm_params_hash.clone(),
            history: info.history.clone(),
        }
    }

    fn config_as<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.config.clone())?)
    }
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `path` (tensors) and its `.json` sidecar.
pub fn save_checkpoint(store: &ParamStore, path: &Path, meta: &CheckpointMeta) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    store.save(path)?;
    std::fs::write(sidecar(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn load_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let side = sidecar(path);
    let text = std::fs::read_to_string(&side)
        .map_err(|e| Error::BundleIntegrity(format!("{}: {e}", side.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(Error::BundleIntegrity(format!(
            "{}: format version {} (expected {CHECKPOINT_VERSION})",
            side.display(),
            meta.format_version
        )));
    }
    Ok(meta)
}

fn load_kind(path: &Path, kind: &str) -> Result<CheckpointMeta> {
    let meta = load_checkpoint_meta(path)?;
    if meta.kind != kind {
        return Err(Error::BundleIntegrity(format!(
            "{} holds a {} checkpoint, expected {kind}",
            path.display(),
            meta.kind
        )));
    }
    Ok(meta)
}

pub fn save_classifier(model: &ClassifierModel, path: &Path, info: &CheckpointInfo) -> Result<()> {
    let mut meta = CheckpointMeta::new("classifier", serde_json::to_value(&model.config)?, info);
    meta.scene_count = Some(model.scene_count());
    save_checkpoint(&model.store, path, &meta)
}

pub fn load_classifier(path: &Path) -> Result<ClassifierModel> {
    let meta = load_kind(path, "classifier")?;
    let scenes = meta
        .scene_count
        .ok_or_else(|| Error::BundleIntegrity(format!("{}: missing scene_count", path.display())))?;
    let model = build_classifier(&meta.config_as::<BackboneConfig>()?, scenes, 0)?;
    model.store.load(path)?;
    Ok(model)
}

pub fn save_generator(generator: &Generator, path: &Path, info: &CheckpointInfo) -> Result<()> {
    let meta = CheckpointMeta::new("generator", serde_json::to_value(&generator.config)?, info);
    save_checkpoint(&generator.store, path, &meta)
}

pub fn load_generator(path: &Path) -> Result<Generator> {
    let meta = load_kind(path, "generator")?;
    let generator = Generator::new(&meta.config_as::<Pix2PixConfig>()?, 0)?;
    generator.store.load(path)?;
    Ok(generator)
}

pub fn save_branch(branch: &RegressorBranch, path: &Path, info: &CheckpointInfo) -> Result<()> {
    let mut meta = CheckpointMeta::new("branch", serde_json::to_value(&branch.config)?, info);
    meta.modality = Some(branch.modality);
    meta.truncation = Some(TRUNCATION_LAYER.to_string());
    save_checkpoint(&branch.store, path, &meta)
}

pub fn load_branch(path: &Path) -> Result<RegressorBranch> {
    let meta = load_kind(path, "branch")?;
    let modality = meta
        .modality
        .ok_or_else(|| Error::BundleIntegrity(format!("{}: missing modality", path.display())))?;
    let branch = build_regressor_branch(&meta.config_as::<BackboneConfig>()?, modality, 0)?;
    branch.store.load(path)?;
    Ok(branch)
}

#[derive(Serialize, Deserialize)]
struct FusedConfig {
    rgb: BackboneConfig,
    pc: BackboneConfig,
}

pub fn save_fused(model: &MultiModalRegressor, path: &Path, info: &CheckpointInfo) -> Result<()> {
    let config = FusedConfig {
        rgb: model.rgb_config.clone(),
        pc: model.pc_config.clone(),
    };
    let mut meta = CheckpointMeta::new("fused", serde_json::to_value(&config)?, info);
    meta.fused_init = Some(model.init);
    meta.truncation = Some(TRUNCATION_LAYER.to_string());
    save_checkpoint(&model.store, path, &meta)
}

pub fn load_fused(path: &Path) -> Result<MultiModalRegressor> {
    let meta = load_kind(path, "fused")?;
    let cfg: FusedConfig = meta.config_as()?;
    let init = meta.fused_init.unwrap_or(FusedInit::Pretrained);
    let model = MultiModalRegressor::new(&cfg.rgb, &cfg.pc, init, 0)?;
    model.store.load(path)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::nn::{Ctx, Linear};
    use crate::models::regressor::fuse_branches;
    use candle_core::{Device, Tensor};

    #[test]
    fn raw_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut ps = ParamStore::new(0);
        Linear::new(&mut ps, "fc", 4, 2).unwrap();
        let meta = CheckpointMeta::new("classifier", serde_json::json!([1, 2]), &CheckpointInfo::default());
        save_checkpoint(&ps, &path, &meta).unwrap();
        assert_eq!(load_checkpoint_meta(&path).unwrap(), meta);

        let mut other = ParamStore::new(1);
        Linear::new(&mut other, "fc", 4, 2).unwrap();
        other.load(&path).unwrap();
        let a = ps.snapshot().unwrap()["fc.weight"].to_vec2::<f32>().unwrap();
        let b = other.snapshot().unwrap()["fc.weight"].to_vec2::<f32>().unwrap();
        assert_eq!(a, b);

        let mut bigger = ParamStore::new(1);
        Linear::new(&mut bigger, "fc", 4, 2).unwrap();
        Linear::new(&mut bigger, "fc2", 2, 2).unwrap();
        assert!(matches!(bigger.load(&path), Err(Error::BundleIntegrity(_))));
    }

    #[test]
    fn typed_round_trips_preserve_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = BackboneConfig {
            input_size: 32,
            head_units: vec![16, 8],
            ..BackboneConfig::default()
        };
        let x = Tensor::randn(0f32, 1.0, (2, 3, 32, 32), &Device::Cpu).unwrap();
        let info = CheckpointInfo {
            seed: 4,
            epoch: Some(2),
            ..Default::default()
        };

        let c = build_classifier(&cfg, 3, 5).unwrap();
        let p = dir.path().join("classifier.ckpt");
        save_classifier(&c, &p, &info).unwrap();
        let c2 = load_classifier(&p).unwrap();
        assert_eq!(
            c.probabilities(&x).unwrap().to_vec2::<f32>().unwrap(),
            c2.probabilities(&x).unwrap().to_vec2::<f32>().unwrap()
        );
        assert!(matches!(load_generator(&p), Err(Error::BundleIntegrity(_))));

        let rgb = build_regressor_branch(&cfg, Modality::Rgb, 1).unwrap();
        let pc = build_regressor_branch(&cfg, Modality::PointCloud, 2).unwrap();
        let bp = dir.path().join("pc.ckpt");
        save_branch(&pc, &bp, &info).unwrap();
        let pc2 = load_branch(&bp).unwrap();
        assert_eq!(pc2.modality, Modality::PointCloud);
        let fused = fuse_branches(&rgb, &pc2, FusedInit::Fresh, 3).unwrap();
        let fp = dir.path().join("regressor.ckpt");
        save_fused(&fused, &fp, &info).unwrap();
        let meta = load_checkpoint_meta(&fp).unwrap();
        assert_eq!(meta.fused_init, Some(FusedInit::Fresh));
        assert_eq!(meta.truncation.as_deref(), Some(TRUNCATION_LAYER));
        let fused2 = load_fused(&fp).unwrap();
        let a = fused.forward(&x, &x, &mut Ctx::eval()).unwrap().to_vec2::<f32>().unwrap();
        let b = fused2.forward(&x, &x, &mut Ctx::eval()).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(a, b);
    }
}
