//! Training objectives: reconstruction, identity classification, adversarial
//! identity removal, audio/content contrastive alignment and the two cycle
//! terms.

use std::fmt;

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{mean_over_time, Linear};
use crate::nn::ops::{grad_reverse, l2_normalize_last, log_softmax_last};
use crate::nn::params::{join, ParamStore};

pub const COSINE_EPS: f64 = 1e-8;
pub const TAU_MIN: f64 = 0.01;
pub const TAU_MAX: f64 = 1.0;
pub const TAU_INIT: f64 = 0.07;

/// Linear identity classifier.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub lin: Linear,
}

impl ClassifierHead {
    pub fn new(p: &mut ParamStore, name: &str, input: usize, classes: usize) -> Result<Self> {
        Ok(Self { lin: Linear::new(p, name, input, classes)? })
    }

    pub fn classes(&self) -> usize {
        self.lin.output_dim()
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.lin.forward(x)
    }
}

/// Projections of audio features and content codes into a shared space plus a
/// learnable temperature stored as `ln τ`.
#[derive(Debug, Clone)]
pub struct ContrastiveHead {
    pub audio: Linear,
    pub content: Linear,
    pub log_tau: Tensor,
}

impl ContrastiveHead {
    pub fn new(p: &mut ParamStore, name: &str, audio_dim: usize, content_dim: usize, proj_dim: usize) -> Result<Self> {
        Ok(Self {
            audio: Linear::new(p, &join(name, "audio"), audio_dim, proj_dim)?,
            content: Linear::new(p, &join(name, "content"), content_dim, proj_dim)?,
            log_tau: p.constant(&join(name, "log_tau"), &[], TAU_INIT.ln())?,
        })
    }

    /// `τ = exp(clamp(ln τ, ln 0.01, 0))`.
    pub fn tau(&self) -> candle_core::Result<Tensor> {
        self.log_tau.clamp(TAU_MIN.ln(), TAU_MAX.ln())?.exp()
    }
}

/// Mean softmax cross-entropy of `logits: (B, N)` against class labels.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, n) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::Range(format!("label {bad} outside [0, {n})")));
    }
    let idx: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
    let idx = Tensor::from_vec(idx, (b, 1), logits.device())?;
    let picked = log_softmax_last(logits)?.gather(&idx, 1)?;
    Ok(picked.mean_all()?.neg()?)
}

/// Identity classification of style codes `s: (B, d_s)`.
pub fn style_cls_loss(s: &Tensor, labels: &[usize], head: &ClassifierHead) -> Result<Tensor> {
    cross_entropy(&head.forward(s)?, labels)
}

/// `(B, T, d) -> (B, d)`.
pub fn temporal_average(c: &Tensor) -> candle_core::Result<Tensor> {
    mean_over_time(c)
}

/// Identity classification of time-averaged content codes through a gradient
/// reversal: the head descends, the content encoder ascends.
pub fn inverse_cls_loss(c: &Tensor, labels: &[usize], head: &ClassifierHead, grl_scale: f64) -> Result<Tensor> {
    let pooled = grad_reverse(&temporal_average(c)?, grl_scale)?;
    cross_entropy(&head.forward(&pooled)?, labels)
}

/// Symmetric InfoNCE between two aligned embedding sequences `(B, T, d)`.
///
/// Frame `i` of `x` is the positive for frame `i` of `y`; the other frames of
/// the same sequence are negatives. `mix` weights the x→y direction, `1 − mix`
/// the y→x direction.
pub fn info_nce(x: &Tensor, y: &Tensor, tau: &Tensor, mix: f64) -> Result<Tensor> {
    let (b, t, d) = x.dims3()?;
    if y.dims() != [b, t, d] {
        return Err(Error::Shape(format!("contrastive inputs {:?} and {:?} differ", x.dims(), y.dims())));
    }
    let xn = l2_normalize_last(x, COSINE_EPS)?;
    let yn = l2_normalize_last(y, COSINE_EPS)?;
    let sim = xn.matmul(&yn.transpose(1, 2)?.contiguous()?)?.broadcast_div(tau)?;
    let eye = Tensor::eye(t, sim.dtype(), sim.device())?;
    // x→y: row-wise softmax; y→x: column-wise.
    let x_to_y = log_softmax_last(&sim)?.broadcast_mul(&eye)?.sum_all()?;
    let y_to_x = log_softmax_last(&sim.transpose(1, 2)?.contiguous()?)?
        .broadcast_mul(&eye)?
        .sum_all()?;
    let total = ((x_to_y * mix)? + (y_to_x * (1.0 - mix))?)?;
    Ok((total.neg()? / (b * t) as f64)?)
}

/// Audio/content alignment: `c: (B, T, d_c)`, `a: (B, T, d_a)`.
pub fn content_contrastive(c: &Tensor, a: &Tensor, head: &ContrastiveHead, mix: f64) -> Result<Tensor> {
    let (cb, ct, _) = c.dims3()?;
    let (ab, at, _) = a.dims3()?;
    if cb != ab || ct != at {
        return Err(Error::Shape(format!("content codes {cb}×{ct} vs audio features {ab}×{at}")));
    }
    let ea = head.audio.forward(a)?;
    let ec = head.content.forward(c)?;
    info_nce(&ea, &ec, &head.tau()?, mix)
}

/// Raw vs cyclic content codes, both through the content projection.
pub fn content_cycle_loss(c: &Tensor, c_cyclic: &Tensor, head: &ContrastiveHead, mix: f64) -> Result<Tensor> {
    if c.dims() != c_cyclic.dims() {
        return Err(Error::Shape(format!("content codes {:?} vs cyclic {:?}", c.dims(), c_cyclic.dims())));
    }
    let ec = head.content.forward(c)?;
    let ecc = head.content.forward(c_cyclic)?;
    info_nce(&ecc, &ec, &head.tau()?, mix)
}

/// Batch mean of `1 − cos(s, ŝ)`.
pub fn style_cycle_loss(s: &Tensor, s_cyclic: &Tensor) -> Result<Tensor> {
    if s.dims() != s_cyclic.dims() {
        return Err(Error::Shape(format!("style codes {:?} vs cyclic {:?}", s.dims(), s_cyclic.dims())));
    }
    let dot = (s * s_cyclic)?.sum(D::Minus1)?;
    let ns = s.sqr()?.sum(D::Minus1)?.sqrt()?;
    let nc = s_cyclic.sqr()?.sum(D::Minus1)?.sqrt()?;
    let cos = dot.div(&(ns * nc)?.maximum(COSINE_EPS)?)?;
    Ok(cos.neg()?.affine(1.0, 1.0)?.mean_all()?)
}

pub fn mse(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.dims(), target.dims())));
    }
    Ok((pred - target)?.sqr()?.mean_all()?)
}

/// Content-path plus audio-path mean squared vertex error.
pub fn regression_loss(mc: &Tensor, ma: &Tensor, m: &Tensor) -> Result<Tensor> {
    Ok((mse(mc, m)? + mse(ma, m)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    Desk,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected paper or desk)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub r: f64,
    pub s: f64,
    pub c: f64,
    pub con: f64,
    pub cycle_s: f64,
    pub cycle_c: f64,
    pub grl: f64,
    pub mix: f64,
}

impl LossWeights {
    pub const PAPER: Self = Self {
        r: 1.0,
        s: 2.5e-7,
        c: 5.0e-7,
        con: 5.0e-7,
        cycle_s: 2.5e-5,
        cycle_c: 5.0e-6,
        grl: 1.0,
        mix: 0.5,
    };

    pub const DESK: Self = Self {
        r: 1.0,
        s: 0.1,
        c: 0.2,
        con: 0.3,
        cycle_s: 0.05,
        cycle_c: 0.05,
        grl: 1.0,
        mix: 0.5,
    };

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::PAPER,
            Preset::Desk => Self::DESK,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.r, self.s, self.c, self.con, self.cycle_s, self.cycle_c, self.grl];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(Error::Config(format!("contrastive mix {} outside [0, 1]", self.mix)));
        }
        Ok(())
    }
}

/// The six loss terms, in a fixed order.
#[derive(Debug, Clone)]
pub struct LossTerms<T> {
    pub r: T,
    pub s: T,
    pub c: T,
    pub con: T,
    pub cycle_s: T,
    pub cycle_c: T,
}

pub const TERM_NAMES: [&str; 6] = ["r", "s", "c", "con", "cycle_s", "cycle_c"];

impl<T> LossTerms<T> {
    pub fn as_array(&self) -> [&T; 6] {
        [&self.r, &self.s, &self.c, &self.con, &self.cycle_s, &self.cycle_c]
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> LossTerms<U> {
        LossTerms {
            r: f(&self.r),
            s: f(&self.s),
            c: f(&self.c),
            con: f(&self.con),
            cycle_s: f(&self.cycle_s),
            cycle_c: f(&self.cycle_c),
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 6] {
        [self.r, self.s, self.c, self.con, self.cycle_s, self.cycle_c]
    }
}

/// Weighted sum of scalar terms. Any non-finite term is an error.
pub fn total_value(terms: &LossTerms<f64>, w: &LossWeights) -> Result<f64> {
    let mut total = 0.0;
    for ((name, v), wi) in TERM_NAMES.iter().zip(terms.as_array()).zip(w.as_array()) {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss term {name} is {v}")));
        }
        total += wi * v;
    }
    Ok(total)
}

/// Weighted sum of scalar loss tensors. Terms with zero weight are skipped
/// so they contribute no gradient at all.
pub fn total_loss(terms: &LossTerms<Tensor>, w: &LossWeights) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for ((name, t), wi) in TERM_NAMES.iter().zip(terms.as_array()).zip(w.as_array()) {
        let v = t.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss term {name} is {v}")));
        }
        if wi == 0.0 {
            continue;
        }
        let term = (t * wi)?;
        total = Some(match total {
            Some(acc) => (acc + term)?,
            None => term,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(terms.r.zeros_like()?),
    }
}
