use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augmentation::{MaskSpec, DEFAULT_BRIGHTNESS_LEVELS};
use crate::dataset::SplitSpec;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::inference::DEFAULT_CONFIDENCE_THRESHOLD;
use crate::models::{BackboneConfig, FusedInit, Pix2PixConfig};
use crate::scene_world::{RenderSettings, DEFAULT_VERTEX_SPACING};
use crate::training::TrainingConfig;
use crate::trajectories::{TrajectoryKind, TrajectoryParams, TrajectoryRegime, ViewDirection};

/// Environment variable naming the directory that relative output paths
/// resolve against.
pub const OUTPUT_ROOT_ENV: &str = "APS_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub scene_count: usize,
    pub extent: f64,
    #[serde(default = "default_spacing")]
    pub vertex_spacing: f64,
}

fn default_spacing() -> f64 {
    DEFAULT_VERTEX_SPACING
}

/// One trajectory regime, generated in every scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub kind: TrajectoryKind,
    pub direction: ViewDirection,
    pub height: f64,
    pub step: f64,
    #[serde(default)]
    pub margin: f64,
    #[serde(default)]
    pub turns: Option<u32>,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub sample_count: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl TrajectoryConfig {
    pub fn regime(&self) -> TrajectoryRegime {
        TrajectoryRegime::new(self.kind, self.direction)
    }

    pub fn params(&self, scene_id: usize) -> TrajectoryParams {
        TrajectoryParams {
            height: self.height,
            step: self.step,
            margin: self.margin,
            turns: self.turns,
            radius: self.radius,
            sample_count: self.sample_count,
            seed: self.seed.wrapping_add(1000 * scene_id as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    /// Factors applied to every original; a factor of exactly 1 is skipped.
    #[serde(default = "default_levels")]
    pub brightness_levels: Vec<f64>,
    #[serde(default)]
    pub mask: MaskSpec,
    /// Fraction of originals that receive the full set of mask variants.
    #[serde(default = "default_mask_subsample")]
    pub mask_subsample: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_levels() -> Vec<f64> {
    DEFAULT_BRIGHTNESS_LEVELS.to_vec()
}

fn default_mask_subsample() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    pub classifier: BackboneConfig,
    pub rgb_branch: BackboneConfig,
    pub pc_branch: BackboneConfig,
    pub pix2pix: Pix2PixConfig,
}

/// Point-cloud images fed to the point-cloud branch and the fused model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcSource {
    Reconstructed,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingStages {
    pub classifier: TrainingConfig,
    pub pix2pix: TrainingConfig,
    pub branch: TrainingConfig,
    pub fused: TrainingConfig,
    #[serde(default = "default_fused_init")]
    pub fused_init: FusedInit,
    #[serde(default = "default_pc_source")]
    pub pc_source: PcSource,
    /// Batch size of evaluation passes.
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
}

fn default_fused_init() -> FusedInit {
    FusedInit::Pretrained
}

fn default_pc_source() -> PcSource {
    PcSource::Reconstructed
}

fn default_eval_batch() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisruptionConfig {
    pub occluders_per_scene: usize,
    pub size_range: [f64; 2],
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    #[serde(default = "default_threshold")]
    pub confidence_threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_CONFIDENCE_THRESHOLD
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
        }
    }
}

/// A complete experiment, loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Offset added to every training and model-initialization seed.
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub world: WorldConfig,
    pub render: RenderSettings,
    pub trajectories: Vec<TrajectoryConfig>,
    pub augmentation: AugmentationConfig,
    #[serde(default)]
    pub split: SplitSpec,
    pub models: ModelsConfig,
    pub training: TrainingStages,
    pub disruption: DisruptionConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `text` after applying `section.key=value` overrides. Values are
    /// read as TOML, falling back to a bare string.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            set_dotted(&mut doc, o)?;
        }
        let cfg: Self = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_overrides(path, &[])
    }

    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_with_overrides(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Square image side shared by every stage.
    pub fn image_size(&self) -> usize {
        self.render.width
    }

    pub fn validate(&self) -> Result<()> {
        let size = self.render.width;
        if self.render.height != size {
            return Err(Error::Config(format!(
                "render size {}x{} must be square",
                self.render.width, self.render.height
            )));
        }
        self.render.validate().map_err(config_err)?;
        if self.world.scene_count < 2 {
            return Err(Error::Config("world.scene_count must be >= 2".into()));
        }
        if !(self.world.extent > 0.0) || !(self.world.vertex_spacing > 0.0) {
            return Err(Error::Config("world.extent and world.vertex_spacing must be positive".into()));
        }
        if self.trajectories.is_empty() {
            return Err(Error::Config("at least one trajectory regime is required".into()));
        }
        let m = &self.models;
        for (name, c) in [
            ("classifier", &m.classifier),
            ("rgb_branch", &m.rgb_branch),
            ("pc_branch", &m.pc_branch),
        ] {
            c.validate().map_err(config_err)?;
            if c.input_size != size {
                return Err(Error::Config(format!(
                    "models.{name}.input_size {} differs from render size {size}",
                    c.input_size
                )));
            }
        }
        m.pix2pix.validate().map_err(config_err)?;
        if m.pix2pix.input_size != size {
            return Err(Error::Config(format!(
                "models.pix2pix.input_size {} differs from render size {size}",
                m.pix2pix.input_size
            )));
        }
        if m.rgb_branch.head_units[0] != m.pc_branch.head_units[0] {
            return Err(Error::Config(format!(
                "branch truncation widths differ: rgb {}, pc {}",
                m.rgb_branch.head_units[0], m.pc_branch.head_units[0]
            )));
        }
        let t = &self.training;
        for c in [&t.classifier, &t.pix2pix, &t.branch, &t.fused] {
            c.validate().map_err(config_err)?;
        }
        if t.eval_batch_size == 0 {
            return Err(Error::Config("training.eval_batch_size must be >= 1".into()));
        }
        let a = &self.augmentation;
        a.mask.validate().map_err(config_err)?;
        if a.brightness_levels.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::Config("brightness levels must be positive".into()));
        }
        if !(0.0..=1.0).contains(&a.mask_subsample) {
            return Err(Error::Config("augmentation.mask_subsample must lie in [0, 1]".into()));
        }
        self.split.validate().map_err(config_err)?;
        let d = &self.disruption;
        if d.occluders_per_scene == 0 || !(d.size_range[0] > 0.0 && d.size_range[1] >= d.size_range[0]) {
            return Err(Error::Config("disruption needs >= 1 occluder and a valid size range".into()));
        }
        if !(0.0..=1.0).contains(&self.inference.confidence_threshold) {
            return Err(Error::Config("inference.confidence_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Output directory, resolved against `$APS_OUTPUT_ROOT` when relative.
    pub fn run_dir(&self) -> PathBuf {
        if self.output_dir.is_absolute() {
            return self.output_dir.clone();
        }
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Seed of a training stage after applying the experiment offset.
    pub fn stage_seed(&self, base: u64) -> u64 {
        base.wrapping_add(self.seed.wrapping_mul(7919))
    }
}

fn set_dotted(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut table = doc;
    for p in path {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}
