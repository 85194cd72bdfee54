//! Style, content and audio encoders.
//!
//! Style and content encoders share one layout (temporal convolutions, a
//! projection, a bidirectional transformer) and differ in the TCN norm:
//! layer norm for style, affine-free instance norm for content. The style
//! code is the temporal mean of the transformer output.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{conv_output_len, mean_over_time, Conv1d, LayerNorm, Linear, TransformerEncoder};
use crate::nn::ops::instance_norm;
use crate::nn::params::{join, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kernel, stride, padding }
    }

    /// True when `⌊(L + 2p − k)/s⌋ + 1 = L/s` for every `L` divisible by `s`.
    pub fn divides_exactly(&self) -> bool {
        self.stride > 0 && self.kernel >= self.stride && self.kernel <= 2 * self.padding + self.stride
            && 2 * self.padding < self.kernel
    }
}

/// Validates an audio-to-motion alignment convolution: the output length
/// must be exactly `(f_m / f_a) · T_a` for every supported input length
/// (multiples of `f_a / f_m`).
pub fn check_alignment(token_rate: f64, motion_rate: f64, align: ConvSpec) -> Result<usize> {
    if !(token_rate > 0.0) || !(motion_rate > 0.0) {
        return Err(Error::Config("rates must be positive".into()));
    }
    let ratio = token_rate / motion_rate;
    if ratio.fract() != 0.0 || ratio < 1.0 {
        return Err(Error::Config(format!(
            "token rate {token_rate} Hz is not an integer multiple of motion rate {motion_rate} Hz"
        )));
    }
    let ratio = ratio as usize;
    if align.stride != ratio || !align.divides_exactly() {
        return Err(Error::Config(format!(
            "alignment (k={}, s={}, p={}) does not downsample {token_rate} Hz to {motion_rate} Hz exactly; \
             need s = {ratio} and k − s ≤ 2p ≤ k − 1",
            align.kernel, align.stride, align.padding
        )));
    }
    Ok(ratio)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub style_dim: usize,
    pub content_dim: usize,
    pub audio_dim: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub tcn_channels: usize,
    pub tcn_layers: usize,
    pub tcn_kernel: usize,
    pub frontend_channels: usize,
    pub frontend: Vec<ConvSpec>,
    pub motion_rate: f64,
    pub audio_rate: u32,
    pub token_rate: f64,
    pub align: ConvSpec,
    pub norm_eps: f64,
    /// Where externally pretrained audio weights would be read from (a
    /// checkpoint container with `audio.*` entries). Unset means the audio
    /// encoder is trained from scratch.
    pub pretrained_audio: Option<String>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            style_dim: 64,
            content_dim: 64,
            audio_dim: 64,
            model_dim: 128,
            layers: 2,
            heads: 4,
            tcn_channels: 128,
            tcn_layers: 3,
            tcn_kernel: 3,
            frontend_channels: 128,
            frontend: vec![ConvSpec::new(16, 8, 4), ConvSpec::new(4, 2, 1), ConvSpec::new(4, 2, 1)],
            motion_rate: 25.0,
            audio_rate: 1600,
            token_rate: 50.0,
            align: ConvSpec::new(2, 2, 0),
            norm_eps: 1e-5,
            pretrained_audio: None,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.style_dim,
            self.content_dim,
            self.audio_dim,
            self.model_dim,
            self.tcn_channels,
            self.frontend_channels,
        ];
        if dims.contains(&0) || self.layers == 0 || self.tcn_layers == 0 {
            return Err(Error::Config("encoder widths and depths must be positive".into()));
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model width {} is not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if self.tcn_kernel % 2 == 0 {
            return Err(Error::Config("TCN kernel must be odd".into()));
        }
        if self.frontend.is_empty() {
            return Err(Error::Config("audio front-end needs at least one layer".into()));
        }
        for (i, spec) in self.frontend.iter().enumerate() {
            if !spec.divides_exactly() {
                return Err(Error::Config(format!(
                    "front-end layer {i} (k={}, s={}, p={}) does not divide lengths exactly",
                    spec.kernel, spec.stride, spec.padding
                )));
            }
        }
        let hop = self.frontend_hop();
        if (self.audio_rate as f64 / hop as f64 - self.token_rate).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "front-end hop {hop} maps {} Hz to {} Hz, not the configured token rate {}",
                self.audio_rate,
                self.audio_rate as f64 / hop as f64,
                self.token_rate
            )));
        }
        check_alignment(self.token_rate, self.motion_rate, self.align)?;
        Ok(())
    }

    /// Total stride of the audio front-end (samples per speech token).
    pub fn frontend_hop(&self) -> usize {
        self.frontend.iter().map(|s| s.stride).product()
    }

    /// Audio samples per motion frame.
    pub fn samples_per_frame(&self) -> usize {
        self.frontend_hop() * self.align.stride
    }

    pub fn motion_receptive_field(&self) -> usize {
        1 + self.tcn_layers * (self.tcn_kernel - 1)
    }

    /// Smallest waveform the front-end accepts.
    pub fn audio_receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for s in &self.frontend {
            rf += (s.kernel - 1) * jump;
            jump *= s.stride;
        }
        rf
    }

    /// Speech-token count for `samples` audio samples.
    pub fn token_len(&self, samples: usize) -> Option<usize> {
        self.frontend
            .iter()
            .try_fold(samples, |len, s| conv_output_len(len, s.kernel, s.stride, s.padding))
            .filter(|&n| n > 0)
    }

    /// Motion-frame count produced from `samples` audio samples.
    pub fn frame_len(&self, samples: usize) -> Option<usize> {
        self.token_len(samples)
            .and_then(|ta| conv_output_len(ta, self.align.kernel, self.align.stride, self.align.padding))
            .filter(|&n| n > 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TcnNorm {
    Layer,
    Instance,
}

#[derive(Debug, Clone)]
struct MotionEncoder {
    convs: Vec<Conv1d>,
    norms: Vec<Option<LayerNorm>>,
    norm_kind: TcnNorm,
    proj_in: Linear,
    transformer: TransformerEncoder,
    proj_out: Linear,
    receptive_field: usize,
    eps: f64,
}

impl MotionEncoder {
    fn new(
        p: &mut ParamStore,
        name: &str,
        cfg: &EncoderConfig,
        input: usize,
        output: usize,
        norm_kind: TcnNorm,
    ) -> Result<Self> {
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let pad = cfg.tcn_kernel / 2;
        for i in 0..cfg.tcn_layers {
            let cin = if i == 0 { input } else { cfg.tcn_channels };
            convs.push(Conv1d::new(
                p,
                &join(name, &format!("tcn{i}")),
                cin,
                cfg.tcn_channels,
                cfg.tcn_kernel,
                1,
                pad,
            )?);
            norms.push(match norm_kind {
                TcnNorm::Layer => Some(LayerNorm::new(
                    p,
                    &join(name, &format!("tcn{i}_norm")),
                    cfg.tcn_channels,
                    cfg.norm_eps,
                )?),
                TcnNorm::Instance => None,
            });
        }
        Ok(Self {
            convs,
            norms,
            norm_kind,
            proj_in: Linear::new(p, &join(name, "proj_in"), cfg.tcn_channels, cfg.model_dim)?,
            transformer: TransformerEncoder::new(
                p,
                &join(name, "transformer"),
                cfg.model_dim,
                cfg.heads,
                cfg.layers,
                cfg.norm_eps,
            )?,
            proj_out: Linear::new(p, &join(name, "proj_out"), cfg.model_dim, output)?,
            receptive_field: cfg.motion_receptive_field(),
            eps: cfg.norm_eps,
        })
    }

    /// `(B, T, V·3) -> (B, T, output)`
    fn forward(&self, motion: &Tensor) -> Result<Tensor> {
        let (_, t, _) = motion.dims3()?;
        let min = self.receptive_field.max(2);
        if t < min {
            return Err(Error::Range(format!(
                "motion has {t} frames; the encoder needs at least {min}"
            )));
        }
        let mut x = motion.clone();
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            x = conv.forward(&x)?;
            x = match (self.norm_kind, norm) {
                (TcnNorm::Layer, Some(ln)) => ln.forward(&x)?,
                _ => instance_norm(&x, self.eps)?,
            };
            x = x.gelu()?;
        }
        let x = self.proj_in.forward(&x)?;
        let x = self.transformer.forward(&x)?;
        Ok(self.proj_out.forward(&x)?)
    }
}

/// Motion → one style code per sequence.
#[derive(Debug, Clone)]
pub struct StyleEncoder(MotionEncoder);

impl StyleEncoder {
    pub fn new(p: &mut ParamStore, name: &str, cfg: &EncoderConfig, motion_dim: usize) -> Result<Self> {
        Ok(Self(MotionEncoder::new(p, name, cfg, motion_dim, cfg.style_dim, TcnNorm::Layer)?))
    }

    /// `(B, T, V·3) -> (B, d_s)`
    pub fn forward(&self, motion: &Tensor) -> Result<Tensor> {
        Ok(mean_over_time(&self.0.forward(motion)?)?)
    }

    /// Per-frame features before pooling, `(B, T, d_s)`.
    pub fn frame_features(&self, motion: &Tensor) -> Result<Tensor> {
        self.0.forward(motion)
    }
}

/// Motion → one content code per frame.
#[derive(Debug, Clone)]
pub struct ContentEncoder(MotionEncoder);

impl ContentEncoder {
    pub fn new(p: &mut ParamStore, name: &str, cfg: &EncoderConfig, motion_dim: usize) -> Result<Self> {
        Ok(Self(MotionEncoder::new(p, name, cfg, motion_dim, cfg.content_dim, TcnNorm::Instance)?))
    }

    /// `(B, T, V·3) -> (B, T, d_c)`
    pub fn forward(&self, motion: &Tensor) -> Result<Tensor> {
        self.0.forward(motion)
    }
}

/// Waveform → speech tokens → motion-rate features.
#[derive(Debug, Clone)]
pub struct AudioEncoder {
    frontend: Vec<(Conv1d, LayerNorm)>,
    align: Conv1d,
    transformer: TransformerEncoder,
    proj_out: Linear,
    receptive_field: usize,
}

impl AudioEncoder {
    pub fn new(p: &mut ParamStore, name: &str, cfg: &EncoderConfig) -> Result<Self> {
        let mut frontend = Vec::new();
        for (i, spec) in cfg.frontend.iter().enumerate() {
            let cin = if i == 0 { 1 } else { cfg.frontend_channels };
            frontend.push((
                Conv1d::new(
                    p,
                    &join(name, &format!("frontend{i}")),
                    cin,
                    cfg.frontend_channels,
                    spec.kernel,
                    spec.stride,
                    spec.padding,
                )?,
                LayerNorm::new(p, &join(name, &format!("frontend{i}_norm")), cfg.frontend_channels, cfg.norm_eps)?,
            ));
        }
        Ok(Self {
            frontend,
            align: Conv1d::new(
                p,
                &join(name, "align"),
                cfg.frontend_channels,
                cfg.model_dim,
                cfg.align.kernel,
                cfg.align.stride,
                cfg.align.padding,
            )?,
            transformer: TransformerEncoder::new(
                p,
                &join(name, "transformer"),
                cfg.model_dim,
                cfg.heads,
                cfg.layers,
                cfg.norm_eps,
            )?,
            proj_out: Linear::new(p, &join(name, "proj_out"), cfg.model_dim, cfg.audio_dim)?,
            receptive_field: cfg.audio_receptive_field(),
        })
    }

    /// `(B, N) -> (B, T_a, C)` speech tokens.
    pub fn frontend(&self, waveform: &Tensor) -> Result<Tensor> {
        let (b, n) = waveform.dims2()?;
        if n < self.receptive_field {
            return Err(Error::Range(format!(
                "waveform has {n} samples; the audio front-end needs at least {}",
                self.receptive_field
            )));
        }
        let mut x = waveform.reshape((b, n, 1))?;
        for (conv, norm) in &self.frontend {
            x = norm.forward(&conv.forward(&x)?)?.gelu()?;
        }
        Ok(x)
    }

    /// Temporal downsampling of speech tokens to the motion rate, `(B, T, d_h)`.
    pub fn align(&self, tokens: &Tensor) -> Result<Tensor> {
        let (_, ta, _) = tokens.dims3()?;
        if self.align.output_len(ta).is_none_or(|n| n == 0) {
            return Err(Error::Range(format!("{ta} speech tokens are too few to align")));
        }
        Ok(self.align.forward(tokens)?)
    }

    /// `(B, N) -> (B, T, d_a)`
    pub fn forward(&self, waveform: &Tensor) -> Result<Tensor> {
        let tokens = self.frontend(waveform)?;
        let x = self.align(&tokens)?;
        let x = self.transformer.forward(&x)?;
        Ok(self.proj_out.forward(&x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn small() -> EncoderConfig {
        EncoderConfig {
            style_dim: 8,
            content_dim: 8,
            audio_dim: 8,
            model_dim: 16,
            heads: 2,
            layers: 1,
            tcn_channels: 8,
            frontend_channels: 8,
            ..EncoderConfig::default()
        }
    }

    fn motion(b: usize, t: usize, d: usize, phase: f32) -> Tensor {
        let v: Vec<f32> = (0..b * t * d).map(|i| ((i as f32) * 0.1 + phase).sin()).collect();
        Tensor::from_vec(v, (b, t, d), &Device::Cpu).unwrap()
    }

    #[test]
    fn default_config_is_valid() {
        EncoderConfig::default().validate().unwrap();
        assert_eq!(EncoderConfig::default().frontend_hop(), 32);
        assert_eq!(EncoderConfig::default().token_len(9600), Some(300));
        assert_eq!(EncoderConfig::default().frame_len(9600), Some(150));
    }

    #[test]
    fn alignment_law() {
        assert_eq!(check_alignment(50.0, 25.0, ConvSpec::new(2, 2, 0)).unwrap(), 2);
        assert_eq!(check_alignment(50.0, 50.0, ConvSpec::new(1, 1, 0)).unwrap(), 1);
        assert!(check_alignment(50.0, 25.0, ConvSpec::new(3, 2, 0)).is_err());
        assert!(check_alignment(50.0, 30.0, ConvSpec::new(2, 2, 0)).is_err());
        // The literal relation (f_a − 1)s = f_m + 2p − k admits e.g. k=1, p=0, s=1 for
        // f_a = 27, f_m = 25, which is not a downsampling at all.
        assert!(check_alignment(27.0, 25.0, ConvSpec::new(1, 1, 0)).is_err());
        for ta in (2..400).step_by(2) {
            assert_eq!(conv_output_len(ta, 2, 2, 0), Some(ta / 2));
        }
    }

    #[test]
    fn encoder_shapes_and_purity() {
        let cfg = small();
        let mut p = ParamStore::new(0, DType::F32);
        let style = StyleEncoder::new(&mut p, "style", &cfg, 12).unwrap();
        let content = ContentEncoder::new(&mut p, "content", &cfg, 12).unwrap();
        for t in [100, 150] {
            let m = motion(2, t, 12, 0.0);
            assert_eq!(style.forward(&m).unwrap().dims(), &[2, 8]);
            assert_eq!(content.forward(&m).unwrap().dims(), &[2, t, 8]);
        }
        let m = motion(1, 30, 12, 0.3);
        let a: Vec<f32> = style.forward(&m).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = style.forward(&m).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
        assert!(style.forward(&motion(1, 5, 12, 0.0)).is_err());
    }

    #[test]
    fn audio_lengths() {
        let cfg = small();
        let mut p = ParamStore::new(0, DType::F32);
        let audio = AudioEncoder::new(&mut p, "audio", &cfg).unwrap();
        let w = Tensor::zeros((1, 9600), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(audio.frontend(&w).unwrap().dims(), &[1, 300, 8]);
        assert_eq!(audio.forward(&w).unwrap().dims(), &[1, 150, 8]);
        let w2 = Tensor::zeros((1, 19200), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(audio.frontend(&w2).unwrap().dims()[1], 600);
        let short = Tensor::zeros((1, 10), DType::F32, &Device::Cpu).unwrap();
        assert!(audio.forward(&short).is_err());
    }
}
