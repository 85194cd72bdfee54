//! Style extraction, speech-driven animation, style interpolation and latent export.

use std::fmt::Write as _;

use candle_core::{DType, Tensor};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::data::{add_template_frames, MotionSequence, TemplateMesh, Waveform};
use crate::error::{Error, Result};
use crate::manifest::{Dataset, Split};
use crate::model::{tensor_to_motion, MotionModel};
use crate::probes::Pca;

/// Shortest accepted style reference and driving audio, in seconds.
pub const MIN_SECONDS: f64 = 1.0;

pub fn check_reference(model: &MotionModel, motion: &MotionSequence) -> Result<()> {
    let min_frames = (MIN_SECONDS * motion.frame_rate).ceil() as usize;
    let min_frames = min_frames.max(model.config.encoder.motion_receptive_field());
    if motion.len() < min_frames {
        return Err(Error::Range(format!(
            "style reference lasts {:.2} s ({} frames); at least {MIN_SECONDS} s ({min_frames} frames) is needed",
            motion.duration(),
            motion.len()
        )));
    }
    Ok(())
}

/// Style codes for equal-length references, `(B, d_s)`.
pub fn extract_styles(model: &MotionModel, motions: &[&MotionSequence]) -> Result<Tensor> {
    for m in motions {
        check_reference(model, m)?;
    }
    model.style.forward(&model.motion_batch(motions)?)
}

pub fn extract_style(model: &MotionModel, motion: &MotionSequence) -> Result<Vec<f32>> {
    Ok(extract_styles(model, &[motion])?.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?)
}

pub fn style_tensor(model: &MotionModel, styles: &[&[f32]]) -> Result<Tensor> {
    let d = model.config.encoder.style_dim;
    if let Some(bad) = styles.iter().find(|s| s.len() != d) {
        return Err(Error::Shape(format!("style code has {} values, model expects {d}", bad.len())));
    }
    let data: Vec<f32> = styles.iter().flat_map(|s| s.iter().copied()).collect();
    Ok(Tensor::from_vec(data, (styles.len(), d), model.device())?.to_dtype(model.dtype())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Animation {
    /// Absolute vertex positions, `(T, V, 3)`.
    pub vertices: Array3<f32>,
    pub displacements: MotionSequence,
}

pub fn check_audio(model: &MotionModel, waveform: &Waveform) -> Result<()> {
    if waveform.sample_rate != model.config.encoder.audio_rate {
        return Err(Error::Config(format!(
            "audio is {} Hz, model expects {} Hz",
            waveform.sample_rate, model.config.encoder.audio_rate
        )));
    }
    if waveform.duration() < MIN_SECONDS {
        return Err(Error::Range(format!(
            "driving audio lasts {:.2} s; at least {MIN_SECONDS} s is needed",
            waveform.duration()
        )));
    }
    Ok(())
}

/// Motion displacements for equal-length waveforms under per-item styles.
pub fn animate_batch(model: &MotionModel, waves: &[&Waveform], styles: &Tensor) -> Result<Vec<MotionSequence>> {
    for w in waves {
        check_audio(model, w)?;
    }
    let out = model.animate_tensor(&model.wave_batch(waves)?, styles)?;
    let rate = model.config.encoder.motion_rate;
    (0..waves.len())
        .map(|i| tensor_to_motion(&out.get(i)?, model.config.vertices, rate))
        .collect()
}

pub fn animate(model: &MotionModel, waveform: &Waveform, style: &[f32], template: &TemplateMesh) -> Result<Animation> {
    if template.vertex_count() != model.config.vertices {
        return Err(Error::Shape(format!(
            "template has {} vertices, model expects {}",
            template.vertex_count(),
            model.config.vertices
        )));
    }
    let s = style_tensor(model, &[style])?;
    let motion = animate_batch(model, &[waveform], &s)?.remove(0);
    Ok(Animation { vertices: add_template_frames(&template.vertices, &motion.frames)?, displacements: motion })
}

/// `ω·s1 + (1 − ω)·s2`. Values of ω outside `[0, 1]` extrapolate with a warning.
pub fn interpolate(s1: &[f32], s2: &[f32], omega: f64) -> Result<Vec<f32>> {
    if s1.len() != s2.len() {
        return Err(Error::Shape(format!("style codes of length {} and {}", s1.len(), s2.len())));
    }
    if !omega.is_finite() {
        return Err(Error::Range(format!("ω = {omega} is not finite")));
    }
    if !(0.0..=1.0).contains(&omega) {
        log::warn!("ω = {omega} lies outside [0, 1]; extrapolating");
    }
    Ok(s1
        .iter()
        .zip(s2)
        .map(|(&a, &b)| (omega * a as f64 + (1.0 - omega) * b as f64) as f32)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentKind {
    Style,
    ContentMean,
}

impl LatentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LatentKind::Style => "style",
            LatentKind::ContentMean => "content_mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentRow {
    pub sample_id: String,
    pub identity_id: usize,
    pub kind: LatentKind,
    pub values: Vec<f64>,
    /// Projection onto the first two principal components of this kind.
    pub pca: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentTable {
    pub rows: Vec<LatentRow>,
}

impl LatentTable {
    pub fn of_kind(&self, kind: LatentKind) -> impl Iterator<Item = &LatentRow> {
        self.rows.iter().filter(move |r| r.kind == kind)
    }

    /// PCA coordinates and identity labels for one kind.
    pub fn projected(&self, kind: LatentKind) -> (Array2<f64>, Vec<usize>) {
        let rows: Vec<&LatentRow> = self.of_kind(kind).collect();
        let mut pts = Array2::zeros((rows.len(), 2));
        for (i, r) in rows.iter().enumerate() {
            let p = r.pca.unwrap_or([0.0, 0.0]);
            pts[[i, 0]] = p[0];
            pts[[i, 1]] = p[1];
        }
        (pts, rows.iter().map(|r| r.identity_id).collect())
    }

    pub fn to_csv(&self) -> String {
        let width = self.rows.iter().map(|r| r.values.len()).max().unwrap_or(0);
        let mut out = String::from("sample_id,identity_id,kind");
        for i in 0..width {
            write!(out, ",z{i}").unwrap();
        }
        out.push_str(",pc1,pc2\n");
        for r in &self.rows {
            write!(out, "{},{},{}", r.sample_id, r.identity_id, r.kind.as_str()).unwrap();
            for v in &r.values {
                write!(out, ",{v}").unwrap();
            }
            match r.pca {
                Some([a, b]) => writeln!(out, ",{a},{b}").unwrap(),
                None => out.push_str(",,\n"),
            }
        }
        out
    }
}

fn fill_pca(rows: &mut [LatentRow], kind: LatentKind) -> Result<()> {
    let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].kind == kind).collect();
    if idx.len() < 2 {
        return Ok(());
    }
    let d = rows[idx[0]].values.len();
    let mut x = Array2::zeros((idx.len(), d));
    for (k, &i) in idx.iter().enumerate() {
        for (j, v) in rows[i].values.iter().enumerate() {
            x[[k, j]] = *v;
        }
    }
    let proj = Pca::fit(x.view())?.transform(x.view());
    for (k, &i) in idx.iter().enumerate() {
        rows[i].pca = Some([proj[[k, 0]], proj[[k, 1]]]);
    }
    Ok(())
}

/// Style codes and time-averaged content codes of every clip in `split`.
pub fn export_latents(model: &MotionModel, dataset: &Dataset, split: Split) -> Result<LatentTable> {
    let items = dataset.split(split);
    if items.is_empty() {
        return Err(Error::Range(format!("split {split} is empty")));
    }
    let mut styles = Vec::new();
    let mut contents = Vec::new();
    for (i, sample) in &items {
        let m = model.motion_batch(&[&sample.motion])?;
        let s: Vec<f32> = model.style.forward(&m)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        let c: Vec<f32> = model.content.forward(&m)?.mean(1)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        let entry = &dataset.manifest.samples[*i];
        styles.push(LatentRow {
            sample_id: entry.stem.clone(),
            identity_id: entry.identity_id,
            kind: LatentKind::Style,
            values: s.into_iter().map(f64::from).collect(),
            pca: None,
        });
        contents.push(LatentRow {
            sample_id: entry.stem.clone(),
            identity_id: entry.identity_id,
            kind: LatentKind::ContentMean,
            values: c.into_iter().map(f64::from).collect(),
            pca: None,
        });
    }
    let mut rows = styles;
    rows.extend(contents);
    fill_pca(&mut rows, LatentKind::Style)?;
    fill_pca(&mut rows, LatentKind::ContentMean)?;
    Ok(LatentTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a = [1.0f32, 0.0];
        let b = [0.0f32, 1.0];
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), a.to_vec());
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), b.to_vec());
        assert_eq!(interpolate(&a, &b, 0.5).unwrap(), vec![0.5, 0.5]);
        assert_eq!(interpolate(&a, &a, 0.3).unwrap(), a.to_vec());
        assert!(interpolate(&a, &[1.0], 0.5).is_err());
        assert_eq!(interpolate(&a, &b, 2.0).unwrap(), vec![2.0, -1.0]);
    }
}
