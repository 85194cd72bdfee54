//! Training loop: two reconstruction paths plus a style-switched cycle pass.

use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::losses::{
    content_contrastive, content_cycle_loss, inverse_cls_loss, regression_loss, style_cls_loss, style_cycle_loss,
    total_loss, LossTerms, LossWeights, Preset, TERM_NAMES,
};
use crate::manifest::{Dataset, Split};
use crate::model::{ModelConfig, MotionModel};
use crate::optim::{Adam, AdamConfig};

/// Training hyperparameters. Serialized as a flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub window_seconds: f64,
    pub seed: u64,
    pub preset: Preset,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<usize>,
    /// Cut the cycle pass off from the first-pass graph.
    pub detach_cycle: bool,
    pub workers: usize,
    pub model_dim: usize,
    pub latent_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub tcn_channels: usize,
    pub proj_dim: usize,
    pub lambda_r: Option<f64>,
    pub lambda_s: Option<f64>,
    pub lambda_c: Option<f64>,
    pub lambda_con: Option<f64>,
    pub lambda_cycle_s: Option<f64>,
    pub lambda_cycle_c: Option<f64>,
    pub lambda_grl: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            learning_rate: 1e-4,
            epochs: 150,
            window_seconds: 6.0,
            seed: 0,
            preset: Preset::Desk,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 0,
            max_steps: None,
            detach_cycle: false,
            workers: 1,
            model_dim: 128,
            latent_dim: 64,
            layers: 2,
            heads: 4,
            tcn_channels: 128,
            proj_dim: 64,
            lambda_r: None,
            lambda_s: None,
            lambda_c: None,
            lambda_con: None,
            lambda_cycle_s: None,
            lambda_cycle_c: None,
            lambda_grl: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.workers == 0 {
            return Err(Error::Config("batch size, epochs and workers must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.window_seconds > 0.0) {
            return Err(Error::Config("learning rate and window length must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam betas must lie in [0, 1) and epsilon must be positive".into()));
        }
        self.weights().validate()
    }

    /// Preset weights with any per-term overrides applied.
    pub fn weights(&self) -> LossWeights {
        let mut w = LossWeights::preset(self.preset);
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut w.r, self.lambda_r);
        set(&mut w.s, self.lambda_s);
        set(&mut w.c, self.lambda_c);
        set(&mut w.con, self.lambda_con);
        set(&mut w.cycle_s, self.lambda_cycle_s);
        set(&mut w.cycle_c, self.lambda_cycle_c);
        set(&mut w.grl, self.lambda_grl);
        w
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    /// Model shape for a corpus with `vertices` vertices and `identities`
    /// training identities at the given rates.
    pub fn model_config(&self, vertices: usize, identities: usize, motion_rate: f64, audio_rate: u32) -> ModelConfig {
        let mut m = ModelConfig::new(vertices, identities);
        m.proj_dim = self.proj_dim;
        let e = &mut m.encoder;
        e.style_dim = self.latent_dim;
        e.content_dim = self.latent_dim;
        e.audio_dim = self.latent_dim;
        e.model_dim = self.model_dim;
        e.layers = self.layers;
        e.heads = self.heads;
        e.tcn_channels = self.tcn_channels;
        e.frontend_channels = self.tcn_channels;
        e.motion_rate = motion_rate;
        e.audio_rate = audio_rate;
        e.token_rate = motion_rate * e.align.stride as f64;
        let d = &mut m.decoder;
        d.model_dim = self.model_dim;
        d.layers = self.layers;
        d.heads = self.heads;
        m
    }
}

/// A permutation of batch positions used to swap style codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StyleSwitch {
    pub perm: Vec<usize>,
    /// False when the batch is too small for a cycle pass.
    pub enabled: bool,
}

/// Draws `perm` with `perm[i] ≠ i` and, when possible, a different identity
/// at `perm[i]` than at `i`.
pub fn switch_styles(identities: &[usize], rng: &mut impl Rng) -> StyleSwitch {
    let b = identities.len();
    if b < 2 {
        return StyleSwitch { perm: (0..b).collect(), enabled: false };
    }
    let mut counts = std::collections::HashMap::new();
    for &id in identities {
        *counts.entry(id).or_insert(0usize) += 1;
    }
    let largest = counts.values().copied().max().unwrap_or(0);
    // A cross-identity permutation exists iff no identity holds more than half the batch.
    let cross = 2 * largest <= b;
    let mut perm: Vec<usize> = (0..b).collect();
    for _ in 0..10_000 {
        perm.shuffle(rng);
        let ok = (0..b).all(|i| perm[i] != i && (!cross || identities[perm[i]] != identities[i]));
        if ok {
            return StyleSwitch { perm, enabled: true };
        }
    }
    // Deterministic construction: sort by identity and rotate by the largest group.
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by_key(|&i| (identities[i], i));
    let shift = if cross { largest } else { 1 };
    let mut perm = vec![0; b];
    for (j, &i) in order.iter().enumerate() {
        perm[i] = order[(j + shift) % b];
    }
    StyleSwitch { perm, enabled: true }
}

/// One batch of equal-length windows.
pub struct Batch {
    pub motion: Tensor,
    pub wave: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(model: &MotionModel, samples: &[&Sample], labels: Vec<usize>) -> Result<Self> {
        let motions: Vec<_> = samples.iter().map(|s| &s.motion).collect();
        let waves: Vec<_> = samples.iter().map(|s| &s.waveform).collect();
        Ok(Self { motion: model.motion_batch(&motions)?, wave: model.wave_batch(&waves)?, labels })
    }
}

/// Forward pass of every loss term. `switch` enables the cycle pass.
pub fn loss_terms(
    model: &MotionModel,
    batch: &Batch,
    weights: &LossWeights,
    switch: Option<&StyleSwitch>,
    detach_cycle: bool,
) -> Result<LossTerms<Tensor>> {
    let m = &batch.motion;
    let t = m.dims()[1];
    let s = model.style.forward(m)?;
    let c = model.content.forward(m)?;
    let a = model.audio_features(&batch.wave, Some(t))?;
    let mc = model.decoder.decode_teacher_forced(&s, &c, m)?;
    let ma = model.decoder.decode_teacher_forced(&s, &a, m)?;
    let zero = Tensor::zeros((), m.dtype(), m.device())?;
    let r = regression_loss(&mc, &ma, m)?;
    let ls = style_cls_loss(&s, &batch.labels, &model.style_head)?;
    let lc = inverse_cls_loss(&c, &batch.labels, &model.content_head, weights.grl)?;
    let con = content_contrastive(&c, &a, &model.contrast, weights.mix)?;
    let (cycle_s, cycle_c) = match switch {
        Some(sw) if sw.enabled && (weights.cycle_s > 0.0 || weights.cycle_c > 0.0) => {
            let idx = Tensor::from_vec(sw.perm.iter().map(|&i| i as u32).collect::<Vec<_>>(), sw.perm.len(), m.device())?;
            let (s0, c0, mc0) = if detach_cycle {
                (s.detach(), c.detach(), mc.detach())
            } else {
                (s.clone(), c.clone(), mc.clone())
            };
            let switched = s0.index_select(&idx, 0)?;
            // Cross-style motion has no ground truth; it is only re-encoded.
            let cross = model.decoder.decode_teacher_forced(&switched, &c0, &mc0)?;
            let s_hat = model.style.forward(&cross)?;
            let c_hat = model.content.forward(&cross)?;
            (
                style_cycle_loss(&switched, &s_hat)?,
                content_cycle_loss(&c0, &c_hat, &model.contrast, weights.mix)?,
            )
        }
        _ => (zero.clone(), zero),
    };
    Ok(LossTerms { r, s: ls, c: lc, con, cycle_s, cycle_c })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub total: f64,
    pub r: f64,
    pub s: f64,
    pub c: f64,
    pub con: f64,
    pub cycle_s: f64,
    pub cycle_c: f64,
    pub tau: f64,
    pub cycle: bool,
}

impl StepLog {
    pub fn terms(&self) -> LossTerms<f64> {
        LossTerms { r: self.r, s: self.s, c: self.c, con: self.con, cycle_s: self.cycle_s, cycle_c: self.cycle_c }
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Forward, backward and one Adam update.
pub fn train_step(
    model: &MotionModel,
    batch: &Batch,
    weights: &LossWeights,
    adam: &mut Adam,
    switch: &StyleSwitch,
    detach_cycle: bool,
) -> Result<(f64, LossTerms<f64>)> {
    let terms = loss_terms(model, batch, weights, Some(switch), detach_cycle)?;
    let total = total_loss(&terms, weights)?;
    let total_v = scalar(&total)?;
    if !total_v.is_finite() {
        return Err(Error::Numeric(format!("total loss is {total_v}")));
    }
    let grads = total.backward()?;
    adam.apply(&model.params, &grads)?;
    let values = LossTerms {
        r: scalar(&terms.r)?,
        s: scalar(&terms.s)?,
        c: scalar(&terms.c)?,
        con: scalar(&terms.con)?,
        cycle_s: scalar(&terms.cycle_s)?,
        cycle_c: scalar(&terms.cycle_c)?,
    };
    Ok((total_v, values))
}

/// Per-epoch RNG: a fresh ChaCha stream keyed by epoch.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Sorted training identity ids; position in this list is the class label.
pub fn training_identities(dataset: &Dataset) -> Vec<usize> {
    dataset.manifest.split_identities(Split::Train)
}

pub struct TrainOutcome {
    pub model: MotionModel,
    pub adam: Adam,
    pub log: Vec<StepLog>,
    pub identities: Vec<usize>,
    pub epochs_done: usize,
    pub checkpoints: Vec<PathBuf>,
}

/// Where and how to persist progress.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

pub fn build_model(cfg: &TrainConfig, dataset: &Dataset) -> Result<(MotionModel, Vec<usize>)> {
    let ids = training_identities(dataset);
    if ids.len() < 2 {
        return Err(Error::Manifest(format!("training needs at least 2 train identities, found {}", ids.len())));
    }
    let mc = cfg.model_config(
        dataset.template.vertex_count(),
        ids.len(),
        dataset.manifest.motion_rate,
        dataset.manifest.audio_rate,
    );
    Ok((MotionModel::new(mc, cfg.seed, DType::F32)?, ids))
}

/// Windows every training clip at a random offset and groups them into batches.
pub fn epoch_batches(
    cfg: &TrainConfig,
    dataset: &Dataset,
    identities: &[usize],
    rng: &mut impl Rng,
) -> Result<Vec<(Vec<Sample>, Vec<usize>)>> {
    let fm = dataset.manifest.motion_rate;
    let window_frames = (cfg.window_seconds * fm).round() as usize;
    let mut items = dataset.split(Split::Train);
    items.shuffle(rng);
    let mut windows = Vec::with_capacity(items.len());
    for (_, sample) in items {
        let frames = sample.motion.len();
        if frames < window_frames {
            return Err(Error::Range(format!(
                "clip of {frames} frames is shorter than the {window_frames}-frame window"
            )));
        }
        let start = rng.random_range(0..=frames - window_frames);
        let w = sample.window(start as f64 / fm, window_frames as f64 / fm)?;
        let label = identities
            .binary_search(&sample.identity_id)
            .map_err(|_| Error::Manifest(format!("identity {} is not a training identity", sample.identity_id)))?;
        windows.push((w, label));
    }
    let min = if cfg.batch_size >= 2 { 2 } else { 1 };
    Ok(windows
        .chunks(cfg.batch_size)
        .filter(|c| c.len() >= min)
        .map(|c| (c.iter().map(|(s, _)| s.clone()).collect(), c.iter().map(|(_, l)| *l).collect()))
        .collect())
}

/// Trains from scratch on the train split.
pub fn train(cfg: &TrainConfig, dataset: &Dataset, out: &TrainOutput) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (model, ids) = build_model(cfg, dataset)?;
    let adam = Adam::new(cfg.adam());
    resume(cfg, dataset, out, model, adam, ids, 0)
}

/// Continues training from `start_epoch` with existing state.
pub fn resume(
    cfg: &TrainConfig,
    dataset: &Dataset,
    out: &TrainOutput,
    model: MotionModel,
    mut adam: Adam,
    ids: Vec<usize>,
    start_epoch: usize,
) -> Result<TrainOutcome> {
    let weights = cfg.weights();
    if cfg.batch_size < 2 {
        log::warn!("batch size {} leaves no other style to switch to; cycle terms are disabled", cfg.batch_size);
    }
    let mut log_file = match &out.dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            let path = dir.join("train_log.jsonl");
            let f = std::fs::OpenOptions::new()
                .create(true)
                .append(start_epoch > 0)
                .write(true)
                .truncate(start_epoch == 0)
                .open(&path)
                .map_err(|e| Error::Io { path: path.clone(), source: e })?;
            Some((path, std::io::BufWriter::new(f)))
        }
        None => None,
    };
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let mut step = adam.step as usize;
    let mut epochs_done = start_epoch;
    'outer: for epoch in start_epoch..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let batches = epoch_batches(cfg, dataset, &ids, &mut rng)?;
        for (samples, labels) in batches {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'outer;
            }
            let refs: Vec<&Sample> = samples.iter().collect();
            let switch = switch_styles(&labels, &mut rng);
            let batch = Batch::new(&model, &refs, labels)?;
            let (total, terms) = train_step(&model, &batch, &weights, &mut adam, &switch, cfg.detach_cycle)?;
            let record = StepLog {
                epoch,
                step,
                total,
                r: terms.r,
                s: terms.s,
                c: terms.c,
                con: terms.con,
                cycle_s: terms.cycle_s,
                cycle_c: terms.cycle_c,
                tau: scalar(&model.contrast.tau()?)?,
                cycle: switch.enabled,
            };
            if let Some((path, w)) = &mut log_file {
                let line = serde_json::to_string(&record).expect("log record serializes");
                writeln!(w, "{line}").map_err(|e| Error::Io { path: path.clone(), source: e })?;
            }
            log.push(record);
            step += 1;
        }
        epochs_done = epoch + 1;
        if let Some((path, w)) = &mut log_file {
            w.flush().map_err(|e| Error::Io { path: path.clone(), source: e })?;
        }
        if let Some(dir) = &out.dir {
            if cfg.checkpoint_every > 0 && epochs_done % cfg.checkpoint_every == 0 && epochs_done < cfg.epochs {
                let path = dir.join(format!("epoch{epochs_done:04}.ckpt"));
                crate::checkpoint::save(&path, &model, Some(&adam), &sidecar(cfg, &ids, epochs_done, dataset))?;
                checkpoints.push(path);
            }
        }
        log::info!(
            "epoch {epochs_done}/{}: {}",
            cfg.epochs,
            TERM_NAMES
                .iter()
                .map(|n| format!("{n}={:.4}", mean_term(&log, epoch, n)))
                .collect::<Vec<_>>()
                .join(" ")
        );
    }
    if let Some(dir) = &out.dir {
        let path = dir.join("final.ckpt");
        crate::checkpoint::save(&path, &model, Some(&adam), &sidecar(cfg, &ids, epochs_done, dataset))?;
        checkpoints.push(path);
    }
    Ok(TrainOutcome { model, adam, log, identities: ids, epochs_done, checkpoints })
}

fn sidecar(cfg: &TrainConfig, ids: &[usize], epoch: usize, dataset: &Dataset) -> crate::checkpoint::Sidecar {
    let mut side = crate::checkpoint::Sidecar::new(cfg, ids, epoch);
    side.face = Some(crate::checkpoint::FaceInfo::from_dataset(dataset));
    side
}

fn mean_term(log: &[StepLog], epoch: usize, name: &str) -> f64 {
    let vals: Vec<f64> = log
        .iter()
        .filter(|r| r.epoch == epoch)
        .map(|r| {
            let t = r.terms();
            match name {
                "r" => t.r,
                "s" => t.s,
                "c" => t.c,
                "con" => t.con,
                "cycle_s" => t.cycle_s,
                _ => t.cycle_c,
            }
        })
        .collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn switch_two_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(switch_styles(&[3, 5], &mut rng).perm, vec![1, 0]);
        let one = switch_styles(&[0], &mut rng);
        assert_eq!(one.perm, vec![0]);
        assert!(!one.enabled);
    }

    #[test]
    fn switch_avoids_same_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ids = [0, 0, 1, 1, 2, 2];
        for _ in 0..200 {
            let sw = switch_styles(&ids, &mut rng);
            assert!((0..6).all(|i| ids[sw.perm[i]] != ids[i]));
        }
        // No cross-identity permutation exists here; a derangement is still returned.
        let sw = switch_styles(&[4, 4, 4, 1], &mut rng);
        assert!((0..4).all(|i| sw.perm[i] != i));
    }

    #[test]
    fn config_json_is_flat() {
        let cfg = TrainConfig::from_json(r#"{"batch_size": 2, "preset": "paper", "lambda_s": 0.0}"#).unwrap();
        assert_eq!(cfg.weights().s, 0.0);
        assert_eq!(cfg.weights().c, 5.0e-7);
        assert!(TrainConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"learning_rate": -1}"#).is_err());
    }
}
