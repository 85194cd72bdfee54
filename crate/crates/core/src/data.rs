//! Core data types shared by the generator, the model and the metrics.

use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayD, Axis, Ix2, Ix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io;

/// Neutral face: `V×3` vertex positions (mm) plus the lip vertex subset.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMesh {
    pub vertices: Array2<f32>,
    pub lip_mask: Vec<usize>,
}

impl TemplateMesh {
    pub fn new(vertices: Array2<f32>, mut lip_mask: Vec<usize>) -> Result<Self> {
        if vertices.ncols() != 3 || vertices.nrows() == 0 {
            return Err(Error::Shape(format!(
                "template must be V×3 with V ≥ 1, got {:?}",
                vertices.shape()
            )));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("template has non-finite vertices".into()));
        }
        lip_mask.sort_unstable();
        lip_mask.dedup();
        if lip_mask.is_empty() {
            return Err(Error::Range("lip mask is empty".into()));
        }
        if let Some(&bad) = lip_mask.iter().find(|&&i| i >= vertices.nrows()) {
            return Err(Error::Range(format!(
                "lip mask index {bad} outside [0, {})",
                vertices.nrows()
            )));
        }
        Ok(Self { vertices, lip_mask })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.nrows()
    }

    pub fn load(template_path: &Path, lip_mask_path: &Path) -> Result<Self> {
        let vertices = tensor_io::read_tensor(template_path)?
            .into_dimensionality::<Ix2>()
            .map_err(|_| Error::Shape(format!("{}: template must be rank 2", template_path.display())))?;
        let mask = read_index_list(lip_mask_path)?;
        Self::new(vertices, mask)
    }
}

/// Reads a rank-1 tensor of non-negative integral values as indices.
pub fn read_index_list(path: &Path) -> Result<Vec<usize>> {
    let raw = tensor_io::read_tensor(path)?;
    if raw.ndim() != 1 {
        return Err(Error::Shape(format!("{}: index list must be rank 1", path.display())));
    }
    raw.iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v < (1u32 << 24) as f32 {
                Ok(v as usize)
            } else {
                Err(Error::Range(format!("{}: {v} is not a vertex index", path.display())))
            }
        })
        .collect()
}

pub fn write_index_list(path: &Path, indices: &[usize]) -> Result<()> {
    let arr = ArrayD::from_shape_vec(
        vec![indices.len()],
        indices.iter().map(|&i| i as f32).collect(),
    )
    .expect("rank-1 shape");
    tensor_io::write_tensor(path, &arr)
}

/// Per-frame vertex displacements `T×V×3` (mm) at `frame_rate` Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub frames: Array3<f32>,
    pub frame_rate: f64,
}

impl MotionSequence {
    pub fn new(frames: Array3<f32>, frame_rate: f64) -> Result<Self> {
        if frames.shape()[0] == 0 || frames.shape()[2] != 3 {
            return Err(Error::Shape(format!(
                "motion must be T×V×3 with T ≥ 1, got {:?}",
                frames.shape()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("motion has non-finite values".into()));
        }
        if !(frame_rate > 0.0) {
            return Err(Error::Config(format!("frame rate must be positive, got {frame_rate}")));
        }
        Ok(Self { frames, frame_rate })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vertex_count(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.frame_rate
    }

    pub fn load(path: &Path, frame_rate: f64) -> Result<Self> {
        let frames = tensor_io::read_tensor(path)?
            .into_dimensionality::<Ix3>()
            .map_err(|_| Error::Shape(format!("{}: motion must be rank 3", path.display())))?;
        Self::new(frames, frame_rate)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        tensor_io::write_tensor(path, &self.frames.clone().into_dyn())
    }
}

/// Mono audio in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// One content segment; `token == None` marks silence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptSegment {
    pub token: Option<u32>,
    pub start: usize,
    pub end: usize,
}

/// Frame-level ground-truth content labels of a synthetic clip.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContentScript {
    pub segments: Vec<ScriptSegment>,
}

impl ContentScript {
    /// Checks that segments are ordered, non-empty, gap-free and cover `[0, frames)`.
    pub fn validate(&self, frames: usize, tokens: Option<usize>) -> Result<()> {
        let mut cursor = 0usize;
        for seg in &self.segments {
            if seg.end <= seg.start {
                return Err(Error::Range(format!(
                    "script segment [{}, {}) is empty",
                    seg.start, seg.end
                )));
            }
            if seg.start != cursor {
                return Err(Error::Range(format!(
                    "script gap or overlap at frame {cursor} (segment starts at {})",
                    seg.start
                )));
            }
            if let (Some(tok), Some(p)) = (seg.token, tokens) {
                if tok as usize >= p {
                    return Err(Error::Range(format!("token {tok} outside [0, {p})")));
                }
            }
            cursor = seg.end;
        }
        if cursor != frames {
            return Err(Error::Range(format!(
                "script covers [0, {cursor}) but the clip has {frames} frames"
            )));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    /// Per-frame token labels.
    pub fn frame_tokens(&self) -> Vec<Option<u32>> {
        let mut out = Vec::with_capacity(self.frames());
        for seg in &self.segments {
            out.extend(std::iter::repeat_n(seg.token, seg.end - seg.start));
        }
        out
    }

    /// Clips the script to `[start, start + len)` and re-bases it to frame 0.
    pub fn crop(&self, start: usize, len: usize) -> Self {
        let end = start + len;
        let segments = self
            .segments
            .iter()
            .filter(|s| s.end > start && s.start < end)
            .map(|s| ScriptSegment {
                token: s.token,
                start: s.start.max(start) - start,
                end: s.end.min(end) - start,
            })
            .collect();
        Self { segments }
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::json(path, e))
    }
}

/// A paired motion/audio clip of one identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub identity_id: usize,
    pub motion: MotionSequence,
    pub waveform: Waveform,
    pub script: Option<ContentScript>,
}

impl Sample {
    pub fn new(
        identity_id: usize,
        motion: MotionSequence,
        waveform: Waveform,
        script: Option<ContentScript>,
    ) -> Result<Self> {
        check_durations(&motion, &waveform)?;
        if let Some(script) = &script {
            script.validate(motion.len(), None)?;
        }
        Ok(Self {
            identity_id,
            motion,
            waveform,
            script,
        })
    }

    pub fn duration(&self) -> f64 {
        self.motion.duration()
    }

    /// Crops a `length_s` second window starting at `start_s`.
    pub fn window(&self, start_s: f64, length_s: f64) -> Result<Self> {
        let duration = self.duration();
        // One audio sample of slack absorbs float noise in the bounds.
        let slack = 0.5 / self.waveform.sample_rate as f64;
        if !(start_s >= 0.0) || !(length_s > 0.0) || start_s + length_s > duration + slack {
            return Err(Error::Range(format!(
                "window [{start_s}, {}) exceeds sample duration {duration}",
                start_s + length_s
            )));
        }
        let fm = self.motion.frame_rate;
        let fw = self.waveform.sample_rate as f64;
        let f0 = (start_s * fm).round() as usize;
        let nf = (length_s * fm).round() as usize;
        let a0 = (start_s * fw).round() as usize;
        let na = (length_s * fw).round() as usize;
        if nf == 0 || f0 + nf > self.motion.len() || a0 + na > self.waveform.samples.len() {
            return Err(Error::Range(format!(
                "window [{start_s}, {}) exceeds sample duration {duration}",
                start_s + length_s
            )));
        }
        Ok(Self {
            identity_id: self.identity_id,
            motion: MotionSequence {
                frames: self.motion.frames.slice(s![f0..f0 + nf, .., ..]).to_owned(),
                frame_rate: fm,
            },
            waveform: Waveform {
                samples: self.waveform.samples[a0..a0 + na].to_vec(),
                sample_rate: self.waveform.sample_rate,
            },
            script: self.script.as_ref().map(|sc| sc.crop(f0, nf)),
        })
    }
}

/// Rejects motion/audio pairs whose durations differ by more than one motion frame.
pub fn check_durations(motion: &MotionSequence, waveform: &Waveform) -> Result<()> {
    let gap = (motion.duration() - waveform.duration()).abs();
    if gap > 1.0 / motion.frame_rate + 1e-9 {
        return Err(Error::Range(format!(
            "motion lasts {:.4} s but audio lasts {:.4} s",
            motion.duration(),
            waveform.duration()
        )));
    }
    Ok(())
}

/// Absolute vertex positions: `template + motion[t]` for every frame.
pub fn add_template(template: &TemplateMesh, motion: &MotionSequence) -> Result<Array3<f32>> {
    add_template_frames(&template.vertices, &motion.frames)
}

pub fn add_template_frames(vertices: &Array2<f32>, frames: &Array3<f32>) -> Result<Array3<f32>> {
    if frames.shape()[1..] != *vertices.shape() {
        return Err(Error::Shape(format!(
            "template is {:?} but motion frames are {:?}",
            vertices.shape(),
            &frames.shape()[1..]
        )));
    }
    let mut out = frames.clone();
    for mut frame in out.axis_iter_mut(Axis(0)) {
        frame += vertices;
    }
    Ok(out)
}
