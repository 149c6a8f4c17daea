use std::collections::HashMap;
use std::time::Instant;

use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{chunks, SplitData, TrainingData};
use super::history::{EpochRecord, TrainingHistory};
use super::loss::pose_loss_tensor;
use super::predict::argmax_rows;
use super::{EarlyMetric, TrainingConfig};
use crate::dataset::{NormalizationParams, SplitName};
use crate::error::{Error, Result};
use crate::models::{ClassifierModel, Ctx, Modality, MultiModalRegressor, ParamStore, Pix2PixModel, RegressorBranch};

fn adam(vars: Vec<Var>, lr: f64, beta1: f64) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            beta1,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?)
}

fn scalar(t: &Tensor, stage: &str, epoch: usize) -> Result<f64> {
    let v = t.to_scalar::<f32>()? as f64;
    if !v.is_finite() {
        return Err(Error::Divergence {
            stage: stage.to_string(),
            epoch,
        });
    }
    Ok(v)
}

/// Training batches of one epoch; a trailing batch of one sample is dropped
/// because batch statistics are undefined for it.
fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch)
        .filter(|c| c.len() > 1 || n == 1)
        .map(|c| c.to_vec())
        .collect()
}

/// Sample-weighted running means.
#[derive(Default)]
struct Means {
    sums: Vec<(String, f64)>,
    count: f64,
}

impl Means {
    fn add(&mut self, n: usize, values: &[(&str, f64)]) {
        for (k, v) in values {
            match self.sums.iter_mut().find(|(name, _)| name == k) {
                Some((_, s)) => *s += v * n as f64,
                None => self.sums.push((k.to_string(), v * n as f64)),
            }
        }
        self.count += n as f64;
    }

    fn record(&self, rec: &mut EpochRecord, split: SplitName) {
        for (k, s) in &self.sums {
            rec.metrics.insert((split, k.clone()), s / self.count.max(1.0));
        }
    }
}

/// Keeps the parameters of the best epoch.
struct Best {
    metric: EarlyMetric,
    value: Option<f64>,
    epoch: Option<usize>,
    snapshot: Option<HashMap<String, Tensor>>,
}

impl Best {
    fn new(metric: EarlyMetric, allowed: &[EarlyMetric], stage: &str) -> Result<Self> {
        if !allowed.contains(&metric) {
            return Err(Error::invalid(format!("early metric {metric:?} not available for {stage}")));
        }
        Ok(Self {
            metric,
            value: None,
            epoch: None,
            snapshot: None,
        })
    }

    fn offer(&mut self, value: f64, epoch: usize, store: &ParamStore) -> Result<()> {
        let improved = match self.value {
            None => true,
            Some(b) if self.metric.higher_is_better() => value > b,
            Some(b) => value < b,
        };
        if improved {
            self.value = Some(value);
            self.epoch = Some(epoch);
            self.snapshot = Some(store.snapshot()?);
        }
        Ok(())
    }

    fn finish(self, store: &ParamStore, history: &mut TrainingHistory) -> Result<()> {
        if let Some(s) = &self.snapshot {
            store.restore(s)?;
        }
        history.best_epoch = self.epoch;
        Ok(())
    }
}

fn check_labels(split: &SplitData, classes: usize) -> Result<()> {
    if let Some(s) = split.samples().iter().find(|s| s.scene_id >= classes) {
        return Err(Error::invalid(format!(
            "sample {} has scene {} but the model has {classes} classes",
            s.id, s.scene_id
        )));
    }
    Ok(())
}

fn evaluate_classifier(model: &ClassifierModel, split: &SplitData, batch: usize, epoch: usize) -> Result<Means> {
    let mut m = Means::default();
    for idx in chunks(split.len(), batch) {
        let labels = split.labels(&idx)?;
        let logits = model.logits(&split.rgb_input(&idx)?, &mut Ctx::eval())?;
        let loss = scalar(&candle_nn::loss::cross_entropy(&logits, &labels)?, "train-classifier", epoch)?;
        let acc = accuracy(&logits, &labels)?;
        m.add(idx.len(), &[("loss", loss), ("accuracy", acc)]);
    }
    Ok(m)
}

fn accuracy(logits: &Tensor, labels: &Tensor) -> Result<f64> {
    let pred = argmax_rows(logits)?;
    let truth = labels.to_vec1::<u32>()?;
    let hits = pred.iter().zip(&truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Categorical cross-entropy training; keeps the epoch with the best
/// validation accuracy (or loss, per `cfg.early_metric`).
pub fn train_classifier(
    model: ClassifierModel,
    data: &TrainingData,
    cfg: &TrainingConfig,
) -> Result<(ClassifierModel, TrainingHistory)> {
    const STAGE: &str = "train-classifier";
    cfg.validate()?;
    data.check_non_empty()?;
    check_labels(&data.train, model.scene_count())?;
    check_labels(&data.val, model.scene_count())?;
    let mut best = Best::new(cfg.early_metric, &[EarlyMetric::ValAccuracy, EarlyMetric::ValLoss], STAGE)?;
    let mut opt = adam(model.store.trainable(), cfg.learning_rate, 0.9)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = TrainingHistory::new(STAGE);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut ctx = Ctx::train(rng.random());
        let mut train = Means::default();
        for idx in epoch_batches(data.train.len(), cfg.batch_size, &mut rng) {
            let labels = data.train.labels(&idx)?;
            let logits = model.logits(&data.train.rgb_input(&idx)?, &mut ctx)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &labels)?;
            let lv = scalar(&loss, STAGE, epoch)?;
            opt.backward_step(&loss)?;
            train.add(idx.len(), &[("loss", lv), ("accuracy", accuracy(&logits, &labels)?)]);
        }
        let val = evaluate_classifier(&model, &data.val, cfg.batch_size, epoch)?;
        let mut rec = EpochRecord {
            epoch,
            ..Default::default()
        };
        train.record(&mut rec, SplitName::Train);
        val.record(&mut rec, SplitName::Val);
        rec.seconds = start.elapsed().as_secs_f64();
        let key = if cfg.early_metric == EarlyMetric::ValAccuracy { "accuracy" } else { "loss" };
        best.offer(rec.get(SplitName::Val, key).unwrap_or(f64::NAN), epoch, &model.store)?;
        log::info!(
            "{STAGE} epoch {epoch}: train loss {:.4}, val accuracy {:.4}",
            rec.get(SplitName::Train, "loss").unwrap_or(f64::NAN),
            rec.get(SplitName::Val, "accuracy").unwrap_or(f64::NAN)
        );
        history.epochs.push(rec);
    }
    best.finish(&model.store, &mut history)?;
    Ok((model, history))
}

/// Mean of `max(x, 0) - x * t + log(1 + exp(-|x|))` with constant target `t`.
fn bce_with_logits(logits: &Tensor, target: f64) -> Result<Tensor> {
    let relu = logits.relu()?;
    let soft = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok(((relu - (logits * target)?)? + soft)?.mean_all()?)
}

fn generator_l1(model: &Pix2PixModel, split: &SplitData, batch: usize, epoch: usize) -> Result<f64> {
    let mut m = Means::default();
    for idx in chunks(split.len(), batch) {
        let y = model.generator.forward(&split.rgb_input(&idx)?, &mut Ctx::eval())?;
        let l1 = scalar(&(y - split.pc_unit(&idx)?)?.abs()?.mean_all()?, "train-gan", epoch)?;
        m.add(idx.len(), &[("l1", l1)]);
    }
    Ok(m.sums[0].1 / m.count)
}

/// One discriminator update on a batch; returns the discriminator loss.
fn discriminator_step(
    model: &Pix2PixModel,
    opt: &mut AdamW,
    rgb: &Tensor,
    real: &Tensor,
    fake: &Tensor,
    ctx: &Ctx,
    epoch: usize,
) -> Result<f64> {
    let d_real = model.discriminator.forward(rgb, real, ctx)?;
    let d_fake = model.discriminator.forward(rgb, &fake.detach(), ctx)?;
    let loss = ((bce_with_logits(&d_real, 1.0)? + bce_with_logits(&d_fake, 0.0)?)? * 0.5)?;
    let v = scalar(&loss, "train-gan", epoch)?;
    opt.backward_step(&loss)?;
    Ok(v)
}

/// Alternating discriminator / generator updates. The generator objective is
/// the adversarial term plus `l1_weight` times the L1 distance to the true
/// point-cloud image. Keeps the epoch with the lowest validation L1.
pub fn train_pix2pix(
    model: Pix2PixModel,
    data: &TrainingData,
    cfg: &TrainingConfig,
) -> Result<(Pix2PixModel, TrainingHistory)> {
    const STAGE: &str = "train-gan";
    cfg.validate()?;
    data.check_non_empty()?;
    let mut best = Best::new(cfg.early_metric, &[EarlyMetric::ValL1], STAGE)?;
    let mut opt_g = adam(model.generator.store.trainable(), cfg.learning_rate, 0.5)?;
    let mut opt_d = adam(model.discriminator.store.trainable(), cfg.learning_rate, 0.5)?;
    let lambda = model.config.l1_weight;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = TrainingHistory::new(STAGE);
    history
        .baseline
        .insert((SplitName::Val, "l1".into()), generator_l1(&model, &data.val, cfg.batch_size, 0)?);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut ctx = Ctx::train(rng.random());
        let mut train = Means::default();
        for idx in epoch_batches(data.train.len(), cfg.batch_size, &mut rng) {
            let rgb = data.train.rgb_input(&idx)?;
            let real = data.train.pc_unit(&idx)?;
            let fake = model.generator.forward(&rgb, &mut ctx)?;
            let d_loss = discriminator_step(&model, &mut opt_d, &rgb, &real, &fake, &ctx, epoch)?;
            let adv = bce_with_logits(&model.discriminator.forward(&rgb, &fake, &ctx)?, 1.0)?;
            let l1 = (&fake - &real)?.abs()?.mean_all()?;
            let g_loss = (&adv + (&l1 * lambda)?)?;
            let gv = scalar(&g_loss, STAGE, epoch)?;
            opt_g.backward_step(&g_loss)?;
            train.add(
                idx.len(),
                &[
                    ("g_loss", gv),
                    ("d_loss", d_loss),
                    ("adversarial", adv.to_scalar::<f32>()? as f64),
                    ("l1", l1.to_scalar::<f32>()? as f64),
                ],
            );
        }
        let val_l1 = generator_l1(&model, &data.val, cfg.batch_size, epoch)?;
        let mut rec = EpochRecord {
            epoch,
            ..Default::default()
        };
        train.record(&mut rec, SplitName::Train);
        rec.metrics.insert((SplitName::Val, "l1".into()), val_l1);
        rec.seconds = start.elapsed().as_secs_f64();
        best.offer(val_l1, epoch, &model.generator.store)?;
        log::info!("{STAGE} epoch {epoch}: val l1 {val_l1:.4}");
        history.epochs.push(rec);
    }
    best.finish(&model.generator.store, &mut history)?;
    Ok((model, history))
}

type PoseForward<'a> = dyn Fn(&SplitData, &[usize], &mut Ctx) -> Result<Tensor> + 'a;

fn evaluate_pose(
    forward: &PoseForward,
    split: &SplitData,
    norm: &NormalizationParams,
    cfg: &TrainingConfig,
    stage: &str,
    epoch: usize,
) -> Result<Means> {
    let mut m = Means::default();
    for idx in chunks(split.len(), cfg.batch_size) {
        let pred = forward(split, &idx, &mut Ctx::eval())?;
        let t = pose_loss_tensor(&pred, &split.pose_targets(&idx, norm)?, cfg.beta)?;
        m.add(
            idx.len(),
            &[
                ("loss", scalar(&t.total, stage, epoch)?),
                ("position", scalar(&t.position, stage, epoch)?),
                ("quaternion", scalar(&t.quaternion, stage, epoch)?),
            ],
        );
    }
    Ok(m)
}

fn train_pose(
    stage: &str,
    store: &ParamStore,
    forward: &PoseForward,
    data: &TrainingData,
    norm: &NormalizationParams,
    cfg: &TrainingConfig,
) -> Result<TrainingHistory> {
    cfg.validate()?;
    data.check_non_empty()?;
    let mut best = Best::new(cfg.early_metric, &[EarlyMetric::ValLoss], stage)?;
    let mut opt = adam(store.trainable(), cfg.learning_rate, 0.9)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = TrainingHistory::new(stage);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut ctx = Ctx::train(rng.random());
        let mut train = Means::default();
        for idx in epoch_batches(data.train.len(), cfg.batch_size, &mut rng) {
            let pred = forward(&data.train, &idx, &mut ctx)?;
            let t = pose_loss_tensor(&pred, &data.train.pose_targets(&idx, norm)?, cfg.beta)?;
            let lv = scalar(&t.total, stage, epoch)?;
            opt.backward_step(&t.total)?;
            train.add(
                idx.len(),
                &[
                    ("loss", lv),
                    ("position", t.position.to_scalar::<f32>()? as f64),
                    ("quaternion", t.quaternion.to_scalar::<f32>()? as f64),
                ],
            );
        }
        let val = evaluate_pose(forward, &data.val, norm, cfg, stage, epoch)?;
        let mut rec = EpochRecord {
            epoch,
            ..Default::default()
        };
        train.record(&mut rec, SplitName::Train);
        val.record(&mut rec, SplitName::Val);
        rec.seconds = start.elapsed().as_secs_f64();
        let vl = rec.get(SplitName::Val, "loss").unwrap_or(f64::NAN);
        best.offer(vl, epoch, store)?;
        log::info!(
            "{stage} epoch {epoch}: train loss {:.4}, val loss {vl:.4}",
            rec.get(SplitName::Train, "loss").unwrap_or(f64::NAN)
        );
        history.epochs.push(rec);
    }
    best.finish(store, &mut history)?;
    Ok(history)
}

/// Standalone pose-loss training of one branch on its own modality only.
pub fn pretrain_branch(
    branch: RegressorBranch,
    data: &TrainingData,
    norm: &NormalizationParams,
    cfg: &TrainingConfig,
) -> Result<(RegressorBranch, TrainingHistory)> {
    let stage = match branch.modality {
        Modality::Rgb => "pretrain-rgb",
        Modality::PointCloud => "pretrain-pc",
    };
    let modality = branch.modality;
    let forward = |split: &SplitData, idx: &[usize], ctx: &mut Ctx| -> Result<Tensor> {
        let x = match modality {
            Modality::Rgb => split.rgb_input(idx)?,
            Modality::PointCloud => split.pc_input(idx)?,
        };
        branch.forward(&x, ctx)
    };
    let history = train_pose(stage, &branch.store, &forward, data, norm, cfg)?;
    Ok((branch, history))
}

/// End-to-end pose-loss training of the fused regressor on (RGB,
/// point-cloud) pairs. History carries the position and quaternion terms
/// next to the total.
pub fn train_multimodal(
    model: MultiModalRegressor,
    data: &TrainingData,
    norm: &NormalizationParams,
    cfg: &TrainingConfig,
) -> Result<(MultiModalRegressor, TrainingHistory)> {
    let forward = |split: &SplitData, idx: &[usize], ctx: &mut Ctx| -> Result<Tensor> {
        model.forward(&split.rgb_input(idx)?, &split.pc_input(idx)?, ctx)
    };
    let history = train_pose("train-fused", &model.store, &forward, data, norm, cfg)?;
    Ok((model, history))
}
