//! The full network: three encoders, the shared decoder and the training heads.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{MotionSequence, Waveform};
use crate::decoder::{DecoderConfig, MotionDecoder};
use crate::encoders::{AudioEncoder, ContentEncoder, EncoderConfig, StyleEncoder};
use crate::error::{Error, Result};
use crate::losses::{ClassifierHead, ContrastiveHead};
use crate::nn::params::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vertices: usize,
    pub identities: usize,
    pub proj_dim: usize,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub fn new(vertices: usize, identities: usize) -> Self {
        Self {
            vertices,
            identities,
            proj_dim: 64,
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
        }
    }

    pub fn motion_dim(&self) -> usize {
        self.vertices * 3
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.vertices == 0 || self.proj_dim == 0 {
            return Err(Error::Config("vertex count and projection width must be positive".into()));
        }
        if self.identities < 2 {
            return Err(Error::Config(format!("need at least 2 training identities, got {}", self.identities)));
        }
        if self.encoder.content_dim != self.encoder.audio_dim {
            return Err(Error::Config(format!(
                "content width {} and audio width {} must match: the decoder shares one memory projection",
                self.encoder.content_dim, self.encoder.audio_dim
            )));
        }
        Ok(())
    }
}

pub struct MotionModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub style: StyleEncoder,
    pub content: ContentEncoder,
    pub audio: AudioEncoder,
    pub decoder: MotionDecoder,
    pub style_head: ClassifierHead,
    pub content_head: ClassifierHead,
    pub contrast: ContrastiveHead,
}

impl MotionModel {
    pub fn new(config: ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new(seed, dtype);
        let enc = &config.encoder;
        let md = config.motion_dim();
        let style = StyleEncoder::new(&mut p, "style", enc, md)?;
        let content = ContentEncoder::new(&mut p, "content", enc, md)?;
        let audio = AudioEncoder::new(&mut p, "audio", enc)?;
        let decoder = MotionDecoder::new(&mut p, "decoder", &config.decoder, enc.style_dim, enc.content_dim, md)?;
        let style_head = ClassifierHead::new(&mut p, "style_head", enc.style_dim, config.identities)?;
        let content_head = ClassifierHead::new(&mut p, "content_head", enc.content_dim, config.identities)?;
        let contrast = ContrastiveHead::new(&mut p, "contrast", enc.audio_dim, enc.content_dim, config.proj_dim)?;
        Ok(Self {
            config,
            params: p,
            style,
            content,
            audio,
            decoder,
            style_head,
            content_head,
            contrast,
        })
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    /// Stacks equal-length motions into `(B, T, V·3)`.
    pub fn motion_batch(&self, motions: &[&MotionSequence]) -> Result<Tensor> {
        let first = motions.first().ok_or_else(|| Error::Shape("empty motion batch".into()))?;
        let (t, v) = (first.len(), first.vertex_count());
        if v != self.config.vertices {
            return Err(Error::Shape(format!("motion has {v} vertices, model expects {}", self.config.vertices)));
        }
        let mut data = Vec::with_capacity(motions.len() * t * v * 3);
        for m in motions {
            if m.len() != t || m.vertex_count() != v {
                return Err(Error::Shape("motions in a batch must share one shape".into()));
            }
            data.extend(m.frames.iter().copied());
        }
        Ok(Tensor::from_vec(data, (motions.len(), t, v * 3), self.device())?.to_dtype(self.dtype())?)
    }

    /// Stacks equal-length waveforms into `(B, N)`.
    pub fn wave_batch(&self, waves: &[&Waveform]) -> Result<Tensor> {
        let first = waves.first().ok_or_else(|| Error::Shape("empty audio batch".into()))?;
        let n = first.samples.len();
        if first.sample_rate != self.config.encoder.audio_rate {
            return Err(Error::Config(format!(
                "audio is {} Hz, model expects {} Hz",
                first.sample_rate, self.config.encoder.audio_rate
            )));
        }
        let mut data = Vec::with_capacity(waves.len() * n);
        for w in waves {
            if w.samples.len() != n || w.sample_rate != first.sample_rate {
                return Err(Error::Shape("waveforms in a batch must share one length and rate".into()));
            }
            data.extend_from_slice(&w.samples);
        }
        Ok(Tensor::from_vec(data, (waves.len(), n), self.device())?.to_dtype(self.dtype())?)
    }

    /// Audio features trimmed to `frames` when they overshoot by one frame.
    pub fn audio_features(&self, wave: &Tensor, frames: Option<usize>) -> Result<Tensor> {
        let a = self.audio.forward(wave)?;
        let Some(t) = frames else { return Ok(a) };
        let ta = a.dims()[1];
        match ta.abs_diff(t) {
            0 => Ok(a),
            1 if ta > t => Ok(a.narrow(1, 0, t)?),
            1 => Err(Error::Shape(format!("audio yields {ta} frames, one short of the motion's {t}"))),
            _ => Err(Error::Shape(format!("audio yields {ta} frames but the motion has {t}"))),
        }
    }

    /// Speech-driven motion for a given style, `(B, T, V·3)`.
    pub fn animate_tensor(&self, wave: &Tensor, style: &Tensor) -> Result<Tensor> {
        let a = self.audio.forward(wave)?;
        self.decoder.decode_autoregressive(style, &a)
    }

    /// Content-driven motion for a given style, `(B, T, V·3)`.
    pub fn reenact_tensor(&self, motion: &Tensor, style: &Tensor) -> Result<Tensor> {
        let c = self.content.forward(motion)?;
        self.decoder.decode_autoregressive(style, &c)
    }
}

/// `(1, T, V·3)` or `(T, V·3)` tensor back to a motion sequence.
pub fn tensor_to_motion(t: &Tensor, vertices: usize, frame_rate: f64) -> Result<MotionSequence> {
    let data: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    let frames = data.len() / (vertices * 3);
    if frames * vertices * 3 != data.len() {
        return Err(Error::Shape(format!("{} values are not whole frames of {vertices} vertices", data.len())));
    }
    let arr = ndarray::Array3::from_shape_vec((frames, vertices, 3), data).expect("checked length");
    MotionSequence::new(arr, frame_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mismatched_widths_are_rejected() {
        let mut cfg = ModelConfig::new(10, 3);
        cfg.encoder.audio_dim = 32;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ModelConfig::new(10, 1);
        cfg.encoder.style_dim = 8;
        assert!(cfg.validate().is_err());
    }
}
