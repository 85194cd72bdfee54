//! Autoregressive motion decoder conditioned on a style code through
//! style-adaptive layer normalization.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{FeedForward, Linear, MultiHeadAttention};
use crate::nn::ops::{causal_mask, normalize_last, sinusoidal_positions};
use crate::nn::params::{join, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub norm_eps: f64,
    /// Init std of the style-to-gain/bias weights; gains start near 1.
    pub saln_init_std: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { layers: 2, heads: 4, model_dim: 128, norm_eps: 1e-5, saln_init_std: 0.02 }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.model_dim == 0 {
            return Err(Error::Config("decoder depth and width must be positive".into()));
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "decoder width {} is not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::Config("norm epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// `g(s) ⊙ (h − μ(h)) / sqrt(var(h) + ε) + b(s)`, statistics over the feature axis.
#[derive(Debug, Clone)]
pub struct Saln {
    pub gain: Linear,
    pub bias: Linear,
    pub eps: f64,
}

impl Saln {
    pub fn new(p: &mut ParamStore, name: &str, style_dim: usize, dim: usize, std: f64, eps: f64) -> Result<Self> {
        Ok(Self {
            gain: Linear::with_init(p, &join(name, "gain"), style_dim, dim, std, 1.0)?,
            bias: Linear::with_init(p, &join(name, "bias"), style_dim, dim, std, 0.0)?,
            eps,
        })
    }

    /// `h: (B, T, d_h)`, `s: (B, d_s)`.
    pub fn forward(&self, h: &Tensor, s: &Tensor) -> candle_core::Result<Tensor> {
        let g = self.gain.forward(s)?.unsqueeze(1)?;
        let b = self.bias.forward(s)?.unsqueeze(1)?;
        normalize_last(h, self.eps)?.broadcast_mul(&g)?.broadcast_add(&b)
    }
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    norm_self: Saln,
    self_attn: MultiHeadAttention,
    norm_cross: Saln,
    cross_attn: MultiHeadAttention,
    norm_ff: Saln,
    ff: FeedForward,
}

impl DecoderLayer {
    fn new(p: &mut ParamStore, name: &str, cfg: &DecoderConfig, style_dim: usize) -> Result<Self> {
        let d = cfg.model_dim;
        let saln = |p: &mut ParamStore, n: &str| Saln::new(p, &join(name, n), style_dim, d, cfg.saln_init_std, cfg.norm_eps);
        Ok(Self {
            norm_self: saln(p, "norm_self")?,
            self_attn: MultiHeadAttention::new(p, &join(name, "self_attn"), d, cfg.heads)?,
            norm_cross: saln(p, "norm_cross")?,
            cross_attn: MultiHeadAttention::new(p, &join(name, "cross_attn"), d, cfg.heads)?,
            norm_ff: saln(p, "norm_ff")?,
            ff: FeedForward::new(p, &join(name, "ff"), d, 4 * d)?,
        })
    }

    fn forward(&self, x: &Tensor, kv: &Tensor, s: &Tensor, mask: &Tensor) -> candle_core::Result<Tensor> {
        let h = self.norm_self.forward(x, s)?;
        let x = (x + self.self_attn.forward(&h, &h, Some(mask))?)?;
        let h = self.norm_cross.forward(&x, s)?;
        let x = (&x + self.cross_attn.forward(&h, kv, Some(mask))?)?;
        let h = self.norm_ff.forward(&x, s)?;
        &x + self.ff.forward(&h)?
    }
}

/// Token `t` of the decoder input carries ground-truth frame `t − 1` (or the
/// learned start token at `t = 0`) and may attend to tokens `≤ t` and to
/// memory positions `≤ t`, so output frame `t` depends only on frames `< t`.
#[derive(Debug, Clone)]
pub struct MotionDecoder {
    embed: Linear,
    start: Tensor,
    kv_proj: Linear,
    layers: Vec<DecoderLayer>,
    norm_out: Saln,
    head: Linear,
    motion_dim: usize,
    model_dim: usize,
}

impl MotionDecoder {
    pub fn new(
        p: &mut ParamStore,
        name: &str,
        cfg: &DecoderConfig,
        style_dim: usize,
        kv_dim: usize,
        motion_dim: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        Ok(Self {
            embed: Linear::new(p, &join(name, "embed"), motion_dim, d)?,
            start: p.normal(&join(name, "start"), &[1, 1, d], 0.02)?,
            kv_proj: Linear::new(p, &join(name, "kv_proj"), kv_dim, d)?,
            layers: (0..cfg.layers)
                .map(|i| DecoderLayer::new(p, &join(name, &format!("layer{i}")), cfg, style_dim))
                .collect::<Result<_>>()?,
            norm_out: Saln::new(p, &join(name, "norm_out"), style_dim, d, cfg.saln_init_std, cfg.norm_eps)?,
            head: Linear::new(p, &join(name, "head"), d, motion_dim)?,
            motion_dim,
            model_dim: d,
        })
    }

    pub fn motion_dim(&self) -> usize {
        self.motion_dim
    }

    /// Embeds a batch of flattened frames, `(B, T, V·3) -> (B, T, d_h)`.
    pub fn embed_motion(&self, frames: &Tensor) -> candle_core::Result<Tensor> {
        self.embed.forward(frames)
    }

    /// `s: (B, d_s)`, `kv: (B, T, d_kv)`, `gt: (B, T, V·3)` → `(B, T, V·3)`.
    pub fn decode_teacher_forced(&self, s: &Tensor, kv: &Tensor, gt: &Tensor) -> Result<Tensor> {
        let (b, t, _) = kv.dims3()?;
        let (gb, gt_len, gd) = gt.dims3()?;
        if gb != b || gt_len != t {
            return Err(Error::Shape(format!(
                "memory is {b}×{t} but ground truth is {gb}×{gt_len}"
            )));
        }
        if gd != self.motion_dim {
            return Err(Error::Shape(format!("frames have {gd} values, decoder expects {}", self.motion_dim)));
        }
        if s.dims2()?.0 != b {
            return Err(Error::Shape("style batch differs from memory batch".into()));
        }
        let dtype = kv.dtype();
        let dev = kv.device();
        let start = self.start.broadcast_as((b, 1, self.model_dim))?;
        let tokens = if t > 1 {
            let past = self.embed_motion(&gt.narrow(1, 0, t - 1)?)?;
            Tensor::cat(&[&start, &past], 1)?
        } else {
            start.contiguous()?
        };
        let pos = sinusoidal_positions(t, self.model_dim, dtype, dev)?;
        let mut x = tokens.broadcast_add(&pos)?;
        let memory = self.kv_proj.forward(kv)?.broadcast_add(&pos)?;
        let mask = causal_mask(t, dtype, dev)?;
        for layer in &self.layers {
            x = layer.forward(&x, &memory, s, &mask)?;
        }
        let x = self.norm_out.forward(&x, s)?;
        Ok(self.head.forward(&x)?)
    }

    /// Feeds predictions back one frame at a time. Each step reruns the full
    /// masked network on a zero-padded history, so the result is bitwise equal
    /// to teacher forcing on the returned frames.
    pub fn decode_autoregressive(&self, s: &Tensor, kv: &Tensor) -> Result<Tensor> {
        let (b, t, _) = kv.dims3()?;
        if t == 0 {
            return Err(Error::Shape("empty memory".into()));
        }
        let mut frames: Vec<Tensor> = Vec::with_capacity(t);
        for step in 0..t {
            let mut parts = frames.clone();
            parts.push(Tensor::zeros((b, t - step, self.motion_dim), kv.dtype(), kv.device())?);
            let history = Tensor::cat(&parts, 1)?;
            let out = self.decode_teacher_forced(s, kv, &history)?;
            frames.push(out.narrow(1, step, 1)?.detach());
        }
        Ok(Tensor::cat(&frames, 1)?)
    }
}

/// Flattens `(B, T, V, 3)` to `(B, T, V·3)`.
pub fn flatten_frames(x: &Tensor) -> candle_core::Result<Tensor> {
    x.flatten_from(D::Minus2)
}
