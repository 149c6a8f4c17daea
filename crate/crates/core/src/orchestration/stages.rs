use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PcSource};
use super::plots::emit_plots;
use super::{stage_dir, Stage};
use crate::augmentation::{adjust_brightness, sliding_mask_variants, PairedImages};
use crate::dataset::{
    compute_norm_params, read_manifest, split_manifest, validate_manifest, write_manifest, AugmentationKind,
    NormalizationParams, PairedSample, Provenance, SplitName,
};
use crate::digest::{sha256_file, sha256_hex};
use crate::error::{Error, Result};
use crate::evaluation::{
    classification_report, compare_models, disruption_test, regression_report, ClassificationSummary,
    ComparisonTable, ConfusionMatrix, EvalReport, ModelKind, PoseModel, Upstream,
};
use crate::image::{BitDepth, Image};
use crate::inference::{localize_batch, ModelBundle};
use crate::models::{
    build_classifier, build_pix2pix, build_regressor_branch, fuse_branches, load_branch, load_classifier,
    load_fused, load_generator, save_branch, save_classifier, save_fused, save_generator, CheckpointInfo,
    FusedInit, Modality, MultiModalRegressor,
};
use crate::scene_world::{build_world_with_spacing, insert_occluders_avoiding, render_pointcloud, render_rgb, WorldModel};
use crate::training::{
    load_square, pretrain_branch, reconstruct_point_clouds, train_classifier, train_multimodal, train_pix2pix,
    Modalities, SplitData, TrainingConfig, TrainingData, TrainingHistory,
};
use crate::trajectories::{generate_trajectory, write_trajectory_jsonl};

pub(super) struct StageContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub run_dir: &'a Path,
    pub dir: &'a Path,
}

impl StageContext<'_> {
    fn stage(&self, s: Stage) -> PathBuf {
        stage_dir(self.run_dir, s)
    }

    fn size(&self) -> usize {
        self.cfg.image_size()
    }

    fn training(&self, base: &TrainingConfig) -> TrainingConfig {
        TrainingConfig {
            seed: self.cfg.stage_seed(base.seed),
            ..base.clone()
        }
    }

    fn norm(&self) -> Result<NormalizationParams> {
        NormalizationParams::load(&self.stage(Stage::Augment).join(NORM_FILE))
    }

    fn norm_hash(&self) -> Result<String> {
        sha256_file(&self.stage(Stage::Augment).join(NORM_FILE))
    }

    fn info(&self, seed: u64, history: &TrainingHistory, history_file: &str) -> Result<CheckpointInfo> {
        Ok(CheckpointInfo {
            seed,
            epoch: history.best_epoch,
            norm_params_hash: Some(self.norm_hash()?),
            history: Some(history_file.to_string()),
        })
    }

    fn split(&self, name: SplitName) -> Result<Vec<PairedSample>> {
        load_split_samples(self.run_dir, name)
    }

    /// Split with the requested members. Point clouds come from the
    /// configured source.
    fn split_data(&self, name: SplitName, rgb: bool, pc: bool) -> Result<SplitData> {
        let samples = self.split(name)?;
        let aug = self.stage(Stage::Augment);
        let data = SplitData::load(&aug, &samples, self.size(), Modalities { rgb, pc: false })?;
        if !pc {
            return Ok(data);
        }
        let images = match self.cfg.training.pc_source {
            PcSource::Reconstructed => samples
                .iter()
                .map(|s| load_square(&reconstruction_path(self.run_dir, s.id), self.size()))
                .collect::<Result<Vec<_>>>()?,
            PcSource::GroundTruth => samples
                .iter()
                .map(|s| load_square(&aug.join(&s.pc_path), self.size()))
                .collect::<Result<Vec<_>>>()?,
        };
        data.with_pc(images)
    }
}

const MANIFEST_FILE: &str = "manifest.jsonl";
const NORM_FILE: &str = "norm_params.json";
const DATASET_FILE: &str = "dataset.json";

fn split_file(name: SplitName) -> String {
    format!("{}.jsonl", name.as_str())
}

/// Samples of one split; image paths are relative to the augment stage
/// directory.
pub fn load_split_samples(run_dir: &Path, name: SplitName) -> Result<Vec<PairedSample>> {
    read_manifest(&stage_dir(run_dir, Stage::Augment).join(split_file(name)))
}

/// Dataset hash recorded by the augment stage.
pub fn dataset_hash(run_dir: &Path) -> Result<String> {
    let p = stage_dir(run_dir, Stage::Augment).join(DATASET_FILE);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p)?)?;
    v["dataset_hash"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::invalid("dataset.json has no dataset_hash"))
}

fn reconstruction_path(run_dir: &Path, id: u64) -> PathBuf {
    stage_dir(run_dir, Stage::TrainGan)
        .join("reconstructions")
        .join(format!("{id:07}.png"))
}

/// Table CSVs written by the report stage: classifier, losses, errors, disruption.
pub fn table_paths(run_dir: &Path) -> [PathBuf; 4] {
    let t = stage_dir(run_dir, Stage::Report).join("tables");
    [
        t.join("table1_classifier.csv"),
        t.join("table2_losses.csv"),
        t.join("table3_errors.csv"),
        t.join("table4_disruption.csv"),
    ]
}

pub(super) fn generate(ctx: &StageContext<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let w = &cfg.world;
    let world = build_world_with_spacing(w.seed, w.scene_count, w.extent, w.vertex_spacing)?;
    world.save(&ctx.dir.join("world.json"))?;
    for sub in ["trajectories", "images/rgb", "images/pc"] {
        std::fs::create_dir_all(ctx.dir.join(sub))?;
    }
    let mut samples = Vec::new();
    let mut next_id = 0u64;
    for scene in &world.scenes {
        for (ri, tc) in cfg.trajectories.iter().enumerate() {
            let regime = tc.regime();
            let poses = generate_trajectory(scene, regime, &tc.params(scene.id))?;
            let name = format!("scene{}_{ri}_{}.jsonl", scene.id, regime.to_string().replace('/', "_"));
            write_trajectory_jsonl(&ctx.dir.join("trajectories").join(name), regime, &poses)?;
            log::info!("scene {}: {} poses for {regime}", scene.id, poses.len());
            for pose in poses {
                let rgb_path = PathBuf::from(format!("images/rgb/{next_id:07}.png"));
                let pc_path = PathBuf::from(format!("images/pc/{next_id:07}.png"));
                render_rgb(&world, scene.id, &pose, &cfg.render)?.save_png(&ctx.dir.join(&rgb_path), BitDepth::Eight)?;
                render_pointcloud(&world, scene.id, &pose, &cfg.render)?
                    .save_png(&ctx.dir.join(&pc_path), BitDepth::Sixteen)?;
                samples.push(PairedSample {
                    id: next_id,
                    scene_id: scene.id,
                    rgb_path,
                    pc_path,
                    pose,
                    provenance: Provenance::Original,
                });
                next_id += 1;
            }
        }
    }
    write_manifest(&ctx.dir.join(MANIFEST_FILE), &samples)
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRecord {
    dataset_hash: String,
    originals: usize,
    augmented: usize,
    split_sizes: BTreeMap<String, usize>,
}

pub(super) fn augment(ctx: &StageContext<'_>) -> Result<()> {
    let cfg = &ctx.cfg.augmentation;
    let gen_dir = ctx.stage(Stage::Generate);
    let rebase = |p: &Path| PathBuf::from("..").join(Stage::Generate.as_str()).join(p);
    let originals: Vec<PairedSample> = read_manifest(&gen_dir.join(MANIFEST_FILE))?
        .into_iter()
        .map(|s| PairedSample {
            rgb_path: rebase(&s.rgb_path),
            pc_path: rebase(&s.pc_path),
            ..s
        })
        .collect();
    let mut ids: Vec<u64> = originals.iter().map(|s| s.id).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let masked: std::collections::HashSet<u64> = ids
        .iter()
        .take((cfg.mask_subsample * ids.len() as f64).round() as usize)
        .copied()
        .collect();

    for sub in ["images/rgb", "images/pc"] {
        std::fs::create_dir_all(ctx.dir.join(sub))?;
    }
    let mut next_id = originals.iter().map(|s| s.id).max().map_or(0, |m| m + 1);
    let mut all = originals.clone();
    for s in &originals {
        let rgb = Image::load_png(&ctx.dir.join(&s.rgb_path))?;
        for &factor in &cfg.brightness_levels {
            if factor == 1.0 {
                continue;
            }
            let rgb_path = PathBuf::from(format!("images/rgb/{next_id:07}.png"));
            adjust_brightness(&rgb, factor)?.save_png(&ctx.dir.join(&rgb_path), BitDepth::Eight)?;
            all.push(PairedSample {
                id: next_id,
                rgb_path,
                provenance: Provenance::Augmented {
                    source_id: s.id,
                    kind: AugmentationKind::Brightness { factor },
                },
                ..s.clone()
            });
            next_id += 1;
        }
        if masked.contains(&s.id) {
            let pair = PairedImages {
                rgb: rgb.clone(),
                pc: Image::load_png(&ctx.dir.join(&s.pc_path))?,
                scene_id: s.scene_id,
                pose: s.pose,
            };
            for (rect, v) in sliding_mask_variants(&pair, &cfg.mask)? {
                let rgb_path = PathBuf::from(format!("images/rgb/{next_id:07}.png"));
                let pc_path = PathBuf::from(format!("images/pc/{next_id:07}.png"));
                v.rgb.save_png(&ctx.dir.join(&rgb_path), BitDepth::Eight)?;
                v.pc.save_png(&ctx.dir.join(&pc_path), BitDepth::Sixteen)?;
                all.push(PairedSample {
                    id: next_id,
                    scene_id: v.scene_id,
                    rgb_path,
                    pc_path,
                    pose: v.pose,
                    provenance: Provenance::Augmented {
                        source_id: s.id,
                        kind: AugmentationKind::Mask {
                            rect,
                            mask_fraction: cfg.mask.mask_fraction,
                            stride_fraction: cfg.mask.stride_fraction,
                        },
                    },
                });
                next_id += 1;
            }
        }
    }
    validate_manifest(&all, ctx.dir)?;
    write_manifest(&ctx.dir.join(MANIFEST_FILE), &all)?;

    let splits = split_manifest(&all, &ctx.cfg.split)?;
    let mut bytes = Vec::new();
    let mut split_sizes = BTreeMap::new();
    for name in SplitName::ALL {
        let path = ctx.dir.join(split_file(name));
        write_manifest(&path, splits.get(name))?;
        bytes.extend(std::fs::read(&path)?);
        split_sizes.insert(name.as_str().to_string(), splits.get(name).len());
    }
    compute_norm_params(&splits.train)?.save(&ctx.dir.join(NORM_FILE))?;
    let record = DatasetRecord {
        dataset_hash: sha256_hex(&bytes),
        originals: originals.len(),
        augmented: all.len() - originals.len(),
        split_sizes,
    };
    log::info!(
        "{} originals, {} augmented, splits {:?}",
        record.originals,
        record.augmented,
        record.split_sizes
    );
    std::fs::write(ctx.dir.join(DATASET_FILE), serde_json::to_string_pretty(&record)?)?;
    Ok(())
}

pub(super) fn train_classifier_stage(ctx: &StageContext<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let data = TrainingData {
        train: ctx.split_data(SplitName::Train, true, false)?,
        val: ctx.split_data(SplitName::Val, true, false)?,
    };
    let tc = ctx.training(&cfg.training.classifier);
    let model = build_classifier(&cfg.models.classifier, cfg.world.scene_count, tc.seed)?;
    let (model, history) = train_classifier(model, &data, &tc)?;
    history.write_csv(&ctx.dir.join("history.csv"))?;
    save_classifier(&model, &ctx.dir.join("classifier.ckpt"), &ctx.info(tc.seed, &history, "history.csv")?)
}

pub(super) fn train_gan_stage(ctx: &StageContext<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let aug = ctx.stage(Stage::Augment);
    let load = |name| -> Result<SplitData> {
        SplitData::load(&aug, &ctx.split(name)?, ctx.size(), Modalities::BOTH)
    };
    let data = TrainingData {
        train: load(SplitName::Train)?,
        val: load(SplitName::Val)?,
    };
    let tc = ctx.training(&cfg.training.pix2pix);
    let model = build_pix2pix(&cfg.models.pix2pix, tc.seed)?;
    let (model, history) = train_pix2pix(model, &data, &tc)?;
    history.write_csv(&ctx.dir.join("history.csv"))?;
    save_generator(
        &model.generator,
        &ctx.dir.join("generator.ckpt"),
        &ctx.info(tc.seed, &history, "history.csv")?,
    )?;

    let recon_dir = ctx.dir.join("reconstructions");
    std::fs::create_dir_all(&recon_dir)?;
    let test = SplitData::load(&aug, &ctx.split(SplitName::Test)?, ctx.size(), Modalities::RGB)?;
    for split in [&data.train, &data.val, &test] {
        let images = reconstruct_point_clouds(&model.generator, split, cfg.training.eval_batch_size)?;
        for (s, img) in split.samples().iter().zip(images) {
            img.save_png(&reconstruction_path(ctx.run_dir, s.id), BitDepth::Sixteen)?;
        }
    }
    Ok(())
}

pub(super) fn pretrain_branches_stage(ctx: &StageContext<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let norm = ctx.norm()?;
    let tc = ctx.training(&cfg.training.branch);
    for (modality, branch_cfg, tag, seed_offset) in [
        (Modality::Rgb, &cfg.models.rgb_branch, "rgb", 0u64),
        (Modality::PointCloud, &cfg.models.pc_branch, "pc", 1),
    ] {
        let (rgb, pc) = match modality {
            Modality::Rgb => (true, false),
            Modality::PointCloud => (false, true),
        };
        let mut data = TrainingData {
            train: ctx.split_data(SplitName::Train, rgb, pc)?,
            val: ctx.split_data(SplitName::Val, rgb, pc)?,
        };
        if !rgb {
            data.train = data.train.without_rgb();
            data.val = data.val.without_rgb();
        }
        let seed = tc.seed.wrapping_add(seed_offset);
        let branch = build_regressor_branch(branch_cfg, modality, seed)?;
        let stage_cfg = TrainingConfig { seed, ..tc.clone() };
        let (branch, history) = pretrain_branch(branch, &data, &norm, &stage_cfg)?;
        let hist = format!("history_{tag}.csv");
        history.write_csv(&ctx.dir.join(&hist))?;
        save_branch(&branch, &ctx.dir.join(format!("{tag}.ckpt")), &ctx.info(seed, &history, &hist)?)?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct RunRecord {
    config_hash: String,
    dataset_hash: String,
    experiment_seed: u64,
    fused_seed: u64,
    fused_init: FusedInit,
    pc_source: PcSource,
}

pub(super) fn train_fused_stage(ctx: &StageContext<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let norm = ctx.norm()?;
    let tc = ctx.training(&cfg.training.fused);
    let data = TrainingData {
        train: ctx.split_data(SplitName::Train, true, true)?,
        val: ctx.split_data(SplitName::Val, true, true)?,
    };
    let model = match cfg.training.fused_init {
        FusedInit::Pretrained => {
            let dir = ctx.stage(Stage::PretrainBranches);
            let rgb = load_branch(&dir.join("rgb.ckpt"))?;
            let pc = load_branch(&dir.join("pc.ckpt"))?;
            fuse_branches(&rgb, &pc, FusedInit::Pretrained, tc.seed)?
        }
        FusedInit::Fresh => {
            MultiModalRegressor::new(&cfg.models.rgb_branch, &cfg.models.pc_branch, FusedInit::Fresh, tc.seed)?
        }
    };
    let (model, history) = train_multimodal(model, &data, &norm, &tc)?;
    history.write_csv(&ctx.dir.join("history.csv"))?;
    save_fused(&model, &ctx.dir.join("regressor.ckpt"), &ctx.info(tc.seed, &history, "history.csv")?)?;
    let record = RunRecord {
        config_hash: cfg.hash(),
        dataset_hash: dataset_hash(ctx.run_dir)?,
        experiment_seed: cfg.seed,
        fused_seed: tc.seed,
        fused_init: cfg.training.fused_init,
        pc_source: cfg.training.pc_source,
    };
    std::fs::write(ctx.dir.join("run.json"), serde_json::to_string_pretty(&record)?)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct InferenceCheck {
    test_images: usize,
    scene_accuracy: f64,
    low_confidence: usize,
    mean_latency_ms: f64,
}

pub(super) fn evaluate_stage(ctx: &StageContext<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let batch = cfg.training.eval_batch_size;
    let beta = cfg.training.fused.beta;
    let norm = ctx.norm()?;
    let hash = dataset_hash(ctx.run_dir)?;
    let classifier = load_classifier(&ctx.stage(Stage::TrainClassifier).join("classifier.ckpt"))?;
    let generator = load_generator(&ctx.stage(Stage::TrainGan).join("generator.ckpt"))?;
    let branches = ctx.stage(Stage::PretrainBranches);
    let rgb = load_branch(&branches.join("rgb.ckpt"))?;
    let pc = load_branch(&branches.join("pc.ckpt"))?;
    let fused = load_fused(&ctx.stage(Stage::TrainFused).join("regressor.ckpt"))?;

    let mut table1 = String::from("split,loss,accuracy\n");
    let mut reports: BTreeMap<ModelKind, EvalReport> = ModelKind::ALL
        .into_iter()
        .map(|k| (k, EvalReport::new(k.display_name(), &hash)))
        .collect();
    let mut confusion: Option<ConfusionMatrix> = None;
    for name in SplitName::ALL {
        let data = ctx.split_data(name, true, true)?;
        let c = classification_report(&classifier, &data, batch)?;
        table1.push_str(&format!("{},{},{}\n", name.as_str(), c.loss, c.accuracy));
        let summary = ClassificationSummary {
            loss: c.loss,
            accuracy: c.accuracy,
        };
        for r in reports.values_mut() {
            r.classification.insert(name.as_str().to_string(), summary);
        }
        if name == SplitName::Test {
            confusion = Some(c.confusion);
        }
        for (kind, model) in [
            (ModelKind::Rgb, PoseModel::Branch(&rgb)),
            (ModelKind::PointCloud, PoseModel::Branch(&pc)),
            (ModelKind::Fused, PoseModel::Fused(&fused)),
        ] {
            let r = regression_report(model, &data, &norm, beta, batch)?;
            let report = reports.get_mut(&kind).expect("all kinds present");
            report.regression_loss.insert(name.as_str().to_string(), r.loss);
            if name == SplitName::Test {
                report.set_test_errors(&r);
            }
        }
        log::info!("evaluated {} split", name.as_str());
    }
    let confusion = confusion.expect("test split evaluated");
    std::fs::write(ctx.dir.join("table1_classifier.csv"), table1)?;
    std::fs::write(ctx.dir.join("confusion.csv"), confusion.to_csv())?;
    std::fs::write(ctx.dir.join("confusion.json"), serde_json::to_string_pretty(&confusion)?)?;
    let reports_dir = ctx.dir.join("reports");
    std::fs::create_dir_all(&reports_dir)?;
    for (kind, r) in &reports {
        r.validate()?;
        r.save(&reports_dir.join(format!("{}.json", kind.as_str())))?;
    }
    let list: Vec<EvalReport> = reports.into_values().collect();
    let table = compare_models(&list)?;
    write_table(&table, &["train_loss", "validation_loss", "test_loss"], &ctx.dir.join("table2_losses.csv"))?;
    write_table(
        &table,
        &["mae_x_mm", "mae_y_mm", "mae_z_mm", "quat_deg"],
        &ctx.dir.join("table3_errors.csv"),
    )?;

    let mut bundle = ModelBundle::new(classifier, generator, fused, norm, &hash, &cfg.hash())?
        .with_threshold(cfg.inference.confidence_threshold)?;
    bundle.save(&ctx.dir.join("bundle"))?;

    let test = ctx.split(SplitName::Test)?;
    let images = test
        .iter()
        .map(|s| Image::load_png(&ctx.stage(Stage::Augment).join(&s.rgb_path)))
        .collect::<Result<Vec<_>>>()?;
    let mut correct = 0;
    let mut low = 0;
    let mut latency = 0.0;
    for (chunk_s, chunk_i) in test.chunks(batch).zip(images.chunks(batch)) {
        for (s, r) in chunk_s.iter().zip(localize_batch(chunk_i, &bundle, None)?) {
            correct += usize::from(r.scene_id == s.scene_id);
            low += usize::from(r.low_confidence);
            latency += r.latency.as_secs_f64() * 1e3;
        }
    }
    let check = InferenceCheck {
        test_images: test.len(),
        scene_accuracy: correct as f64 / test.len().max(1) as f64,
        low_confidence: low,
        mean_latency_ms: latency / test.len().max(1) as f64,
    };
    std::fs::write(ctx.dir.join("inference_check.json"), serde_json::to_string_pretty(&check)?)?;
    Ok(())
}

fn write_table(table: &ComparisonTable, columns: &[&str], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, table.select(columns).to_csv())?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DisruptionRecord {
    occluded_images: usize,
    occluders_per_scene: usize,
    losses: BTreeMap<String, f64>,
}

pub(super) fn disruption_stage(ctx: &StageContext<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let d = &cfg.disruption;
    let batch = cfg.training.eval_batch_size;
    let mut world = WorldModel::load(&ctx.stage(Stage::Generate).join("world.json"))?;
    let test: Vec<PairedSample> = ctx
        .split(SplitName::Test)?
        .into_iter()
        .filter(|s| s.is_original())
        .collect();
    if test.is_empty() {
        return Err(Error::invalid("test split has no original samples"));
    }
    for scene in 0..world.scene_count() {
        let keep_out: Vec<Vector3<f64>> = test
            .iter()
            .filter(|s| s.scene_id == scene)
            .map(|s| s.pose.position)
            .collect();
        world = insert_occluders_avoiding(
            &world,
            scene,
            d.occluders_per_scene,
            (d.size_range[0], d.size_range[1]),
            d.seed,
            &keep_out,
        )?;
    }
    world.save(&ctx.dir.join("occluded_world.json"))?;
    std::fs::create_dir_all(ctx.dir.join("images"))?;
    let mut occluded = Vec::with_capacity(test.len());
    for s in &test {
        let rgb_path = PathBuf::from(format!("images/{:07}.png", s.id));
        render_rgb(&world, s.scene_id, &s.pose, &cfg.render)?.save_png(&ctx.dir.join(&rgb_path), BitDepth::Eight)?;
        occluded.push(PairedSample {
            rgb_path,
            ..s.clone()
        });
    }
    write_manifest(&ctx.dir.join("occluded.jsonl"), &occluded)?;

    let split = SplitData::load(ctx.dir, &occluded, ctx.size(), Modalities::RGB)?;
    let norm = ctx.norm()?;
    let classifier = load_classifier(&ctx.stage(Stage::TrainClassifier).join("classifier.ckpt"))?;
    let generator = load_generator(&ctx.stage(Stage::TrainGan).join("generator.ckpt"))?;
    let branches = ctx.stage(Stage::PretrainBranches);
    let rgb = load_branch(&branches.join("rgb.ckpt"))?;
    let pc = load_branch(&branches.join("pc.ckpt"))?;
    let fused = load_fused(&ctx.stage(Stage::TrainFused).join("regressor.ckpt"))?;
    let upstream = Upstream {
        classifier: Some(&classifier),
        generator: Some(&generator),
    };
    let beta = cfg.training.fused.beta;
    let mut losses = BTreeMap::new();
    let mut csv = String::from("model,disruption_loss\n");
    for (kind, model) in [
        (ModelKind::Rgb, PoseModel::Branch(&rgb)),
        (ModelKind::PointCloud, PoseModel::Branch(&pc)),
        (ModelKind::Fused, PoseModel::Fused(&fused)),
    ] {
        let r = disruption_test(model, &split, upstream, &norm, beta, batch)?;
        csv.push_str(&format!("{},{}\n", kind.display_name(), r.loss));
        losses.insert(kind.as_str().to_string(), r.loss);
    }
    std::fs::write(ctx.dir.join("table4_disruption.csv"), csv)?;
    let record = DisruptionRecord {
        occluded_images: occluded.len(),
        occluders_per_scene: d.occluders_per_scene,
        losses,
    };
    std::fs::write(ctx.dir.join("disruption.json"), serde_json::to_string_pretty(&record)?)?;
    Ok(())
}

pub(super) fn report_stage(ctx: &StageContext<'_>) -> Result<()> {
    let eval = ctx.stage(Stage::Evaluate);
    let disruption: DisruptionRecord =
        serde_json::from_str(&std::fs::read_to_string(ctx.stage(Stage::Disruption).join("disruption.json"))?)?;
    let mut reports = Vec::new();
    for kind in ModelKind::ALL {
        let mut r = EvalReport::load(&eval.join("reports").join(format!("{}.json", kind.as_str())))?;
        r.disruption_loss = disruption.losses.get(kind.as_str()).copied();
        reports.push(r);
    }
    let table = compare_models(&reports)?;
    std::fs::write(ctx.dir.join("comparison.csv"), table.to_csv())?;
    std::fs::write(ctx.dir.join("comparison.txt"), table.to_text())?;
    std::fs::write(ctx.dir.join("reports.json"), serde_json::to_string_pretty(&reports)?)?;

    let [t1, t2, t3, t4] = table_paths(ctx.run_dir);
    std::fs::create_dir_all(t1.parent().expect("tables dir"))?;
    std::fs::copy(eval.join("table1_classifier.csv"), &t1)?;
    write_table(&table, &["train_loss", "validation_loss", "test_loss"], &t2)?;
    write_table(&table, &["mae_x_mm", "mae_y_mm", "mae_z_mm", "quat_deg"], &t3)?;
    write_table(&table, &["disruption_loss"], &t4)?;
    let plots = emit_plots(ctx.run_dir)?;
    log::info!("wrote {} plots", plots.len());
    Ok(())
}
