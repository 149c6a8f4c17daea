//! Experiment configuration and the stage DAG from dataset generation to the
//! final report.

mod config;
mod plots;
mod stages;

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::models::FusedInit;

pub use config::{
    AugmentationConfig, DisruptionConfig, ExperimentConfig, InferenceConfig, ModelsConfig, PcSource,
    TrainingStages, TrajectoryConfig, WorldConfig, OUTPUT_ROOT_ENV,
};
pub use plots::{emit_plots, PLOT_PANELS};
pub use stages::{dataset_hash, load_split_samples, table_paths};

const MARKER_FILE: &str = "stage.json";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Generate,
    Augment,
    TrainClassifier,
    TrainGan,
    PretrainBranches,
    TrainFused,
    Evaluate,
    Disruption,
    Report,
}

impl Stage {
    /// Topological order.
    pub const ALL: [Stage; 9] = [
        Stage::Generate,
        Stage::Augment,
        Stage::TrainClassifier,
        Stage::TrainGan,
        Stage::PretrainBranches,
        Stage::TrainFused,
        Stage::Evaluate,
        Stage::Disruption,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Augment => "augment",
            Stage::TrainClassifier => "train-classifier",
            Stage::TrainGan => "train-gan",
            Stage::PretrainBranches => "pretrain-branches",
            Stage::TrainFused => "train-fused",
            Stage::Evaluate => "evaluate",
            Stage::Disruption => "disruption",
            Stage::Report => "report",
        }
    }

    /// Direct prerequisites under `cfg`.
    pub fn dependencies(self, cfg: &ExperimentConfig) -> Vec<Stage> {
        let reconstructed = cfg.training.pc_source == PcSource::Reconstructed;
        match self {
            Stage::Generate => vec![],
            Stage::Augment => vec![Stage::Generate],
            Stage::TrainClassifier | Stage::TrainGan => vec![Stage::Augment],
            Stage::PretrainBranches => {
                let mut d = vec![Stage::Augment];
                if reconstructed {
                    d.push(Stage::TrainGan);
                }
                d
            }
            Stage::TrainFused => {
                let mut d = vec![Stage::Augment];
                if reconstructed {
                    d.push(Stage::TrainGan);
                }
                if cfg.training.fused_init == FusedInit::Pretrained {
                    d.push(Stage::PretrainBranches);
                }
                d
            }
            Stage::Evaluate => vec![
                Stage::TrainClassifier,
                Stage::TrainGan,
                Stage::PretrainBranches,
                Stage::TrainFused,
            ],
            Stage::Disruption => vec![Stage::Evaluate],
            Stage::Report => vec![Stage::Evaluate, Stage::Disruption],
        }
    }

    /// Config sections this stage reads.
    fn inputs(self, cfg: &ExperimentConfig) -> serde_json::Value {
        let t = &cfg.training;
        let m = &cfg.models;
        let v = match self {
            Stage::Generate => serde_json::json!([cfg.world, cfg.render, cfg.trajectories]),
            Stage::Augment => serde_json::json!([cfg.augmentation, cfg.split]),
            Stage::TrainClassifier => serde_json::json!([cfg.seed, m.classifier, t.classifier]),
            Stage::TrainGan => serde_json::json!([cfg.seed, m.pix2pix, t.pix2pix, t.eval_batch_size]),
            Stage::PretrainBranches => {
                serde_json::json!([cfg.seed, m.rgb_branch, m.pc_branch, t.branch, t.pc_source])
            }
            Stage::TrainFused => {
                serde_json::json!([cfg.seed, m.rgb_branch, m.pc_branch, t.fused, t.fused_init, t.pc_source])
            }
            Stage::Evaluate => serde_json::json!([cfg.inference, t.eval_batch_size, t.pc_source, t.fused.beta]),
            Stage::Disruption => serde_json::json!([cfg.disruption, cfg.render, t.fused.beta]),
            Stage::Report => serde_json::json!([]),
        };
        serde_json::Value::Array(vec![serde_json::json!(self.as_str()), v])
    }

    /// Hash of this stage's inputs and, recursively, of its prerequisites.
    pub fn hash(self, cfg: &ExperimentConfig) -> String {
        let deps: Vec<(String, String)> = self
            .dependencies(cfg)
            .into_iter()
            .map(|d| (d.as_str().to_string(), d.hash(cfg)))
            .collect();
        let doc = serde_json::json!({ "inputs": self.inputs(cfg), "deps": deps });
        sha256_hex(doc.to_string().as_bytes())
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Completion record written as the last step of a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMarker {
    pub stage: Stage,
    pub hash: String,
    pub config_hash: String,
    pub seed: u64,
    pub seconds: f64,
}

pub fn stage_dir(run_dir: &Path, stage: Stage) -> PathBuf {
    run_dir.join(stage.as_str())
}

pub fn read_marker(run_dir: &Path, stage: Stage) -> Result<Option<StageMarker>> {
    let p = stage_dir(run_dir, stage).join(MARKER_FILE);
    if !p.is_file() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&std::fs::read_to_string(p)?)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    UpToDate,
}

/// Exclusive writer lock on a run directory, released on drop.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(run_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(run_dir)?;
        let path = run_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = write!(f, "{}", std::process::id());
                Ok(Self(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(run_dir.to_path_buf())),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

fn check_dependencies(cfg: &ExperimentConfig, run_dir: &Path, stage: Stage) -> Result<()> {
    for dep in stage.dependencies(cfg) {
        let marker = read_marker(run_dir, dep)?.ok_or_else(|| Error::Dependency {
            stage: stage.as_str().into(),
            missing: dep.as_str().into(),
        })?;
        let expected = dep.hash(cfg);
        if marker.hash != expected {
            return Err(Error::StaleArtifact {
                stage: dep.as_str().into(),
                found: marker.hash,
                expected,
            });
        }
    }
    Ok(())
}

/// Runs one stage. A stage whose recorded hash matches the current config is
/// left untouched unless `force` is set.
pub fn run_stage(cfg: &ExperimentConfig, stage: Stage, force: bool) -> Result<StageOutcome> {
    cfg.validate()?;
    let run_dir = cfg.run_dir();
    let _lock = RunLock::acquire(&run_dir)?;
    check_dependencies(cfg, &run_dir, stage)?;
    let hash = stage.hash(cfg);
    if !force {
        if let Some(m) = read_marker(&run_dir, stage)? {
            if m.hash == hash {
                log::info!("{stage}: up to date, skipping");
                return Ok(StageOutcome::UpToDate);
            }
        }
    }
    let dir = stage_dir(&run_dir, stage);
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    std::fs::create_dir_all(&dir)?;
    std::fs::write(run_dir.join("config.toml"), cfg.to_toml()?)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    log::info!("{stage}: running");
    let start = Instant::now();
    let ctx = stages::StageContext {
        cfg,
        run_dir: &run_dir,
        dir: &dir,
    };
    match stage {
        Stage::Generate => stages::generate(&ctx)?,
        Stage::Augment => stages::augment(&ctx)?,
        Stage::TrainClassifier => stages::train_classifier_stage(&ctx)?,
        Stage::TrainGan => stages::train_gan_stage(&ctx)?,
        Stage::PretrainBranches => stages::pretrain_branches_stage(&ctx)?,
        Stage::TrainFused => stages::train_fused_stage(&ctx)?,
        Stage::Evaluate => stages::evaluate_stage(&ctx)?,
        Stage::Disruption => stages::disruption_stage(&ctx)?,
        Stage::Report => stages::report_stage(&ctx)?,
    }
    let marker = StageMarker {
        stage,
        hash,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        seconds: start.elapsed().as_secs_f64(),
    };
    std::fs::write(dir.join(MARKER_FILE), serde_json::to_string_pretty(&marker)?)?;
    log::info!("{stage}: done in {:.1} s", marker.seconds);
    Ok(StageOutcome::Ran)
}

/// Every stage in order.
pub fn run_all(cfg: &ExperimentConfig, force: bool) -> Result<Vec<(Stage, StageOutcome)>> {
    Stage::ALL
        .into_iter()
        .map(|s| Ok((s, run_stage(cfg, s, force)?)))
        .collect()
}
