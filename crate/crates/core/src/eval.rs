//! Test-split evaluation and disentanglement probes.

use std::fmt::Write as _;

use candle_core::{DType, Tensor};
use ndarray::{Array2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::data::{add_template_frames, MotionSequence, Sample, TemplateMesh};
use crate::error::{Error, Result};
use crate::inference::{animate_batch, extract_styles};
use crate::manifest::{Dataset, Split};
use crate::metrics::{fve, ldd, ldtw, lip_distance_curve, lve, pop_std};
use crate::model::{tensor_to_motion, MotionModel};
use crate::probes::{probe_accuracy, scs, StyleProbe, StyleProbeConfig};

/// Produces displacement sequences for test clips given style references.
pub trait Predictor {
    fn name(&self) -> String;
    fn predict(&self, clips: &[&Sample], refs: &[&Sample]) -> Result<Vec<MotionSequence>>;
}

/// Returns the ground truth; evaluating it scores perfectly.
pub struct GroundTruth;

impl Predictor for GroundTruth {
    fn name(&self) -> String {
        "ground_truth".into()
    }

    fn predict(&self, clips: &[&Sample], _refs: &[&Sample]) -> Result<Vec<MotionSequence>> {
        Ok(clips.iter().map(|c| c.motion.clone()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Drive {
    Audio,
    Content,
}

/// Autoregressive model output driven by audio or by content codes of the
/// ground-truth motion, styled from the reference (or a zero style code).
pub struct ModelPredictor<'a> {
    pub model: &'a MotionModel,
    pub drive: Drive,
    pub zero_style: bool,
    pub batch: usize,
}

impl<'a> ModelPredictor<'a> {
    pub fn audio(model: &'a MotionModel) -> Self {
        Self { model, drive: Drive::Audio, zero_style: false, batch: 16 }
    }

    pub fn content(model: &'a MotionModel) -> Self {
        Self { model, drive: Drive::Content, zero_style: false, batch: 16 }
    }

    pub fn zero_style(model: &'a MotionModel) -> Self {
        Self { model, drive: Drive::Audio, zero_style: true, batch: 16 }
    }

    fn predict_group(&self, clips: &[&Sample], refs: &[&Sample]) -> Result<Vec<MotionSequence>> {
        let m = self.model;
        let styles = if self.zero_style {
            Tensor::zeros((clips.len(), m.config.encoder.style_dim), m.dtype(), m.device())?
        } else {
            let motions: Vec<&MotionSequence> = refs.iter().map(|r| &r.motion).collect();
            extract_styles(m, &motions)?
        };
        match self.drive {
            Drive::Audio => {
                let waves: Vec<_> = clips.iter().map(|c| &c.waveform).collect();
                let out = animate_batch(m, &waves, &styles)?;
                // Audio can overshoot the motion by one frame.
                Ok(out
                    .into_iter()
                    .zip(clips)
                    .map(|(o, c)| trim(o, c.motion.len()))
                    .collect())
            }
            Drive::Content => {
                let motions: Vec<&MotionSequence> = clips.iter().map(|c| &c.motion).collect();
                let out = m.reenact_tensor(&m.motion_batch(&motions)?, &styles)?;
                (0..clips.len())
                    .map(|i| tensor_to_motion(&out.get(i)?, m.config.vertices, m.config.encoder.motion_rate))
                    .collect()
            }
        }
    }
}

fn trim(m: MotionSequence, len: usize) -> MotionSequence {
    if m.len() <= len {
        return m;
    }
    MotionSequence { frames: m.frames.slice(ndarray::s![..len, .., ..]).to_owned(), frame_rate: m.frame_rate }
}

impl Predictor for ModelPredictor<'_> {
    fn name(&self) -> String {
        let drive = match self.drive {
            Drive::Audio => "audio",
            Drive::Content => "content",
        };
        if self.zero_style {
            format!("model_{drive}_zero_style")
        } else {
            format!("model_{drive}")
        }
    }

    fn predict(&self, clips: &[&Sample], refs: &[&Sample]) -> Result<Vec<MotionSequence>> {
        let mut out = Vec::with_capacity(clips.len());
        let mut start = 0;
        while start < clips.len() {
            // Batch consecutive clips that share clip and reference lengths.
            let key = |i: usize| (clips[i].motion.len(), clips[i].waveform.samples.len(), refs[i].motion.len());
            let mut end = start + 1;
            while end < clips.len() && end - start < self.batch.max(1) && key(end) == key(start) {
                end += 1;
            }
            out.extend(self.predict_group(&clips[start..end], &refs[start..end])?);
            start = end;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub sample_id: String,
    pub identity_id: usize,
    pub reference_id: String,
    pub fve: f64,
    pub lve: f64,
    pub ldtw: f64,
    pub ldd: f64,
    pub scs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub split: Split,
    pub predictor: String,
    pub samples: usize,
    pub units: String,
    pub fve: f64,
    pub lve: f64,
    pub ldtw: f64,
    pub ldd: f64,
    pub scs: Option<f64>,
    pub style_from_style: Option<f64>,
    pub style_from_content: Option<f64>,
    pub content_from_content: Option<f64>,
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.fve, self.lve, self.ldtw, self.ldd];
        let opts = [self.scs, self.style_from_style, self.style_from_content, self.content_from_content];
        if vals.iter().chain(opts.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("metrics report holds a non-finite value".into()));
        }
        if self.scs.is_some_and(|s| !(-1.0..=1.0).contains(&s)) {
            return Err(Error::Numeric("SCS outside [-1, 1]".into()));
        }
        Ok(())
    }

    pub fn with_probes(mut self, p: &ProbeAccuracies) -> Self {
        self.style_from_style = Some(p.style_from_style);
        self.style_from_content = Some(p.style_from_content);
        self.content_from_content = Some(p.content_from_content);
        self
    }
}

pub struct Evaluation {
    pub report: MetricsReport,
    pub clips: Vec<ClipMetrics>,
    pub predictions: Vec<MotionSequence>,
}

impl Evaluation {
    pub fn clips_csv(&self) -> String {
        let mut out = String::from("sample_id,identity_id,reference_id,fve,lve,ldtw,ldd,scs\n");
        for c in &self.clips {
            let scs = c.scs.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.sample_id, c.identity_id, c.reference_id, c.fve, c.lve, c.ldtw, c.ldd, scs
            )
            .unwrap();
        }
        out
    }
}

/// For every clip in `split`, the index of the next clip of the same identity
/// (wrapping around).
pub fn reference_indices(dataset: &Dataset, split: Split) -> Result<Vec<(usize, usize)>> {
    let items: Vec<usize> = dataset.split(split).into_iter().map(|(i, _)| i).collect();
    let mut out = Vec::with_capacity(items.len());
    for (k, &i) in items.iter().enumerate() {
        let id = dataset.samples[i].identity_id;
        let next = items[k + 1..]
            .iter()
            .chain(&items[..k])
            .copied()
            .find(|&j| dataset.samples[j].identity_id == id)
            .ok_or_else(|| {
                Error::Manifest(format!(
                    "missing reference clip: {} is the only {split} clip of identity {id}",
                    dataset.manifest.samples[i].stem
                ))
            })?;
        out.push((i, next));
    }
    Ok(out)
}

fn absolute(template: &TemplateMesh, m: &MotionSequence) -> Result<ndarray::Array3<f32>> {
    add_template_frames(&template.vertices, &m.frames)
}

pub fn evaluate(
    predictor: &dyn Predictor,
    dataset: &Dataset,
    split: Split,
    probe: Option<&StyleProbe>,
) -> Result<Evaluation> {
    let pairs = reference_indices(dataset, split)?;
    if pairs.is_empty() {
        return Err(Error::Range(format!("split {split} is empty")));
    }
    let clips: Vec<&Sample> = pairs.iter().map(|&(i, _)| &dataset.samples[i]).collect();
    let refs: Vec<&Sample> = pairs.iter().map(|&(_, j)| &dataset.samples[j]).collect();
    let preds = predictor.predict(&clips, &refs)?;
    let tpl = &dataset.template;
    let lips = &tpl.lip_mask;
    let scs_values: Option<Vec<f64>> = match probe {
        Some(p) => {
            let mut v = Vec::with_capacity(preds.len());
            for (pred, clip) in preds.iter().zip(&clips) {
                v.push(scs(p, &[pred], &[&clip.motion])?);
            }
            Some(v)
        }
        None => None,
    };
    let mut rows = Vec::with_capacity(pairs.len());
    for (k, (&(i, j), pred)) in pairs.iter().zip(&preds).enumerate() {
        let gt = &dataset.samples[i].motion;
        let pa = absolute(tpl, pred)?;
        let ga = absolute(tpl, gt)?;
        rows.push(ClipMetrics {
            sample_id: dataset.manifest.samples[i].stem.clone(),
            identity_id: dataset.samples[i].identity_id,
            reference_id: dataset.manifest.samples[j].stem.clone(),
            fve: fve(pa.view(), ga.view())?,
            lve: lve(pa.view(), ga.view(), lips)?,
            ldtw: ldtw(pa.view(), ga.view(), lips)?,
            ldd: ldd(pred.frames.view(), gt.frames.view(), lips)?,
            scs: scs_values.as_ref().map(|v| v[k]),
        });
    }
    let mean = |f: &dyn Fn(&ClipMetrics) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    let report = MetricsReport {
        split,
        predictor: predictor.name(),
        samples: rows.len(),
        units: "mm".into(),
        fve: mean(&|r| r.fve),
        lve: mean(&|r| r.lve),
        ldtw: mean(&|r| r.ldtw),
        ldd: mean(&|r| r.ldd),
        scs: scs_values.as_ref().map(|v| v.iter().sum::<f64>() / v.len() as f64),
        style_from_style: None,
        style_from_content: None,
        content_from_content: None,
        config: serde_json::Value::Null,
    };
    report.validate()?;
    Ok(Evaluation { report, clips: rows, predictions: preds })
}

/// Trains the SCS classifier on ground-truth train-split motions.
pub fn train_style_probe(dataset: &Dataset, config: StyleProbeConfig) -> Result<StyleProbe> {
    let ids = dataset.manifest.split_identities(Split::Train);
    if ids.len() < 2 {
        return Err(Error::Manifest("the style probe needs at least 2 train identities".into()));
    }
    let train = dataset.split(Split::Train);
    let motions: Vec<&MotionSequence> = train.iter().map(|(_, s)| &s.motion).collect();
    let labels: Vec<usize> = train
        .iter()
        .map(|(_, s)| ids.binary_search(&s.identity_id).expect("train identity"))
        .collect();
    let mut probe = StyleProbe::new(config, dataset.template.vertex_count(), ids.len())?;
    probe.fit(&motions, &labels)?;
    Ok(probe)
}

/// Held-out (test_seen) accuracy of a style probe.
pub fn style_probe_accuracy(probe: &StyleProbe, dataset: &Dataset) -> Result<f64> {
    let ids = dataset.manifest.split_identities(Split::Train);
    let test = dataset.split(Split::TestSeen);
    let motions: Vec<&MotionSequence> = test.iter().map(|(_, s)| &s.motion).collect();
    let labels: Vec<usize> = test
        .iter()
        .map(|(_, s)| {
            ids.binary_search(&s.identity_id)
                .map_err(|_| Error::Manifest(format!("identity {} is not in train", s.identity_id)))
        })
        .collect::<Result<_>>()?;
    probe.accuracy(&motions, &labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeAccuracies {
    pub style_from_style: f64,
    pub style_from_content: f64,
    pub content_from_content: f64,
    pub identity_chance: f64,
    pub token_chance: f64,
}

pub struct SplitCodes {
    pub styles: Array2<f64>,
    pub content_means: Array2<f64>,
    pub identities: Vec<usize>,
    /// Per-frame content codes of frames with a token.
    pub frame_codes: Array2<f64>,
    pub frame_tokens: Vec<usize>,
}

fn rows_to_array(rows: Vec<Vec<f32>>, width: usize) -> Array2<f64> {
    let n = rows.len();
    Array2::from_shape_vec((n, width), rows.into_iter().flatten().map(f64::from).collect()).expect("rows")
}

/// Style codes, mean content codes and per-frame content codes of a split.
pub fn split_codes(model: &MotionModel, dataset: &Dataset, split: Split) -> Result<SplitCodes> {
    let items = dataset.split(split);
    let ds = model.config.encoder.style_dim;
    let dc = model.config.encoder.content_dim;
    let (mut styles, mut means, mut ids, mut frames, mut tokens) = (vec![], vec![], vec![], vec![], vec![]);
    let mut start = 0;
    while start < items.len() {
        let len = items[start].1.motion.len();
        let mut end = start + 1;
        while end < items.len() && end - start < 16 && items[end].1.motion.len() == len {
            end += 1;
        }
        let group: Vec<&Sample> = items[start..end].iter().map(|(_, s)| *s).collect();
        let motions: Vec<&MotionSequence> = group.iter().map(|s| &s.motion).collect();
        let x = model.motion_batch(&motions)?;
        let s: Vec<Vec<f32>> = model.style.forward(&x)?.to_dtype(DType::F32)?.to_vec2()?;
        let c = model.content.forward(&x)?.to_dtype(DType::F32)?;
        let cm: Vec<Vec<f32>> = c.mean(1)?.to_vec2()?;
        let cf: Vec<Vec<Vec<f32>>> = c.to_vec3()?;
        for (k, sample) in group.iter().enumerate() {
            styles.push(s[k].clone());
            means.push(cm[k].clone());
            ids.push(sample.identity_id);
            let script = sample
                .script
                .as_ref()
                .ok_or_else(|| Error::Manifest("content probing needs scripts for every clip".into()))?;
            for (t, tok) in script.frame_tokens().into_iter().enumerate() {
                if let (Some(tok), Some(code)) = (tok, cf[k].get(t)) {
                    frames.push(code.clone());
                    tokens.push(tok as usize);
                }
            }
        }
        start = end;
    }
    Ok(SplitCodes {
        styles: rows_to_array(styles, ds),
        content_means: rows_to_array(means, dc),
        identities: ids,
        frame_codes: rows_to_array(frames, dc),
        frame_tokens: tokens,
    })
}

/// Linear probes fitted on train codes and scored on test_seen codes.
pub fn probe_disentanglement(model: &MotionModel, dataset: &Dataset) -> Result<ProbeAccuracies> {
    let train = split_codes(model, dataset, Split::Train)?;
    let test = split_codes(model, dataset, Split::TestSeen)?;
    let ids = dataset.manifest.split_identities(Split::Train);
    let label = |v: &[usize]| -> Result<Vec<usize>> {
        v.iter()
            .map(|id| ids.binary_search(id).map_err(|_| Error::Manifest(format!("identity {id} not in train"))))
            .collect()
    };
    let (ytr, yte) = (label(&train.identities)?, label(&test.identities)?);
    let tokens = dataset
        .manifest
        .tokens
        .unwrap_or_else(|| train.frame_tokens.iter().chain(&test.frame_tokens).max().map_or(1, |m| m + 1));
    if train.frame_tokens.is_empty() || test.frame_tokens.is_empty() {
        return Err(Error::Manifest("no voiced frames to probe".into()));
    }
    Ok(ProbeAccuracies {
        style_from_style: probe_accuracy(train.styles.view(), &ytr, test.styles.view(), &yte, ids.len())?,
        style_from_content: probe_accuracy(
            train.content_means.view(),
            &ytr,
            test.content_means.view(),
            &yte,
            ids.len(),
        )?,
        content_from_content: probe_accuracy(
            train.frame_codes.view(),
            &train.frame_tokens,
            test.frame_codes.view(),
            &test.frame_tokens,
            tokens,
        )?,
        identity_chance: 1.0 / ids.len() as f64,
        token_chance: 1.0 / tokens as f64,
    })
}

/// Temporal std of the distance between two lip vertices on absolute meshes.
pub fn lip_opening_amplitude(motion: ArrayView3<f32>, template: &TemplateMesh, pair: [usize; 2]) -> Result<f64> {
    let abs = add_template_frames(&template.vertices, &motion.to_owned())?;
    Ok(pop_std(&lip_distance_curve(abs.view(), &template.lip_mask, pair)?))
}
