//! Layers over `(batch, time, channels)` tensors.

use candle_core::{DType, Device, Tensor, D};

use super::ops::{normalize_last, softmax_last};
use super::params::{join, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Linear {
    /// `(in, out)`
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(p: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        Ok(Self {
            weight: p.uniform(&join(name, "weight"), &[input, output], bound)?,
            bias: Some(p.constant(&join(name, "bias"), &[output], 0.0)?),
        })
    }

    pub fn with_init(
        p: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        weight_std: f64,
        bias: f64,
    ) -> Result<Self> {
        Ok(Self {
            weight: p.normal(&join(name, "weight"), &[input, output], weight_std)?,
            bias: Some(p.constant(&join(name, "bias"), &[output], bias)?),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    /// Applies the map to the last dimension of `x`.
    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let dims = x.dims().to_vec();
        let (lead, last) = dims.split_at(dims.len() - 1);
        let rows: usize = lead.iter().product();
        let y = x.reshape((rows, last[0]))?.matmul(&self.weight)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out = lead.to_vec();
        out.push(self.output_dim());
        y.reshape(out)
    }
}

/// Output length of a 1-D convolution.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

/// 1-D convolution over time, lowered to a gather plus one matrix product.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub input: usize,
    lin: Linear,
}

impl Conv1d {
    pub fn new(
        p: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::Config(format!("{name}: kernel and stride must be positive")));
        }
        Ok(Self {
            kernel,
            stride,
            padding,
            input,
            lin: Linear::new(p, name, kernel * input, output)?,
        })
    }

    pub fn output_len(&self, input: usize) -> Option<usize> {
        conv_output_len(input, self.kernel, self.stride, self.padding)
    }

    /// `(B, L, C_in) -> (B, L_out, C_out)`
    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (b, len, c) = x.dims3()?;
        let out_len = self.output_len(len).ok_or_else(|| {
            candle_core::Error::Msg(format!(
                "conv input of length {len} is shorter than kernel {} with padding {}",
                self.kernel, self.padding
            ))
        })?;
        let x = if self.padding > 0 {
            x.pad_with_zeros(1, self.padding, self.padding)?
        } else {
            x.clone()
        };
        let cols = if self.kernel == self.stride {
            // Non-overlapping windows are a plain reshape.
            x.narrow(1, 0, out_len * self.kernel)?
                .reshape((b, out_len, self.kernel * c))?
        } else {
            let idx: Vec<u32> = (0..out_len)
                .flat_map(|t| (0..self.kernel).map(move |j| (t * self.stride + j) as u32))
                .collect();
            let idx = Tensor::from_vec(idx, out_len * self.kernel, x.device())?;
            x.index_select(&idx, 1)?.reshape((b, out_len, self.kernel * c))?
        };
        self.lin.forward(&cols)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(p: &mut ParamStore, name: &str, dim: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            gain: p.constant(&join(name, "gain"), &[dim], 1.0)?,
            bias: p.constant(&join(name, "bias"), &[dim], 0.0)?,
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        normalize_last(x, self.eps)?
            .broadcast_mul(&self.gain)?
            .broadcast_add(&self.bias)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(p: &mut ParamStore, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(p, &join(name, "up"), dim, hidden)?,
            down: Linear::new(p, &join(name, "down"), hidden, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu()?)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(p: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("width {dim} is not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(p, &join(name, "q"), dim, dim)?,
            k: Linear::new(p, &join(name, "k"), dim, dim)?,
            v: Linear::new(p, &join(name, "v"), dim, dim)?,
            o: Linear::new(p, &join(name, "o"), dim, dim)?,
            heads,
        })
    }

    fn split_heads(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        x.reshape((b, t, self.heads, d / self.heads))?
            .transpose(1, 2)?
            .contiguous()
    }

    /// `query: (B, Tq, D)`, `memory: (B, Tk, D)`, `mask: (Tq, Tk)` additive.
    pub fn forward(&self, query: &Tensor, memory: &Tensor, mask: Option<&Tensor>) -> candle_core::Result<Tensor> {
        let (b, tq, d) = query.dims3()?;
        let q = self.split_heads(&self.q.forward(query)?)?;
        let k = self.split_heads(&self.k.forward(memory)?)?;
        let v = self.split_heads(&self.v.forward(memory)?)?;
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let mut scores = (q.matmul(&k.t()?)? * scale)?;
        if let Some(mask) = mask {
            scores = scores.broadcast_add(mask)?;
        }
        let attn = softmax_last(&scores)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, tq, d))?;
        self.o.forward(&out)
    }
}

/// Pre-norm transformer encoder layer (bidirectional).
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    norm1: LayerNorm,
    attn: MultiHeadAttention,
    norm2: LayerNorm,
    ff: FeedForward,
}

impl EncoderLayer {
    pub fn new(p: &mut ParamStore, name: &str, dim: usize, heads: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(p, &join(name, "norm1"), dim, eps)?,
            attn: MultiHeadAttention::new(p, &join(name, "attn"), dim, heads)?,
            norm2: LayerNorm::new(p, &join(name, "norm2"), dim, eps)?,
            ff: FeedForward::new(p, &join(name, "ff"), dim, 4 * dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let h = self.norm1.forward(x)?;
        let x = (x + self.attn.forward(&h, &h, None)?)?;
        let h = self.norm2.forward(&x)?;
        x + self.ff.forward(&h)?
    }
}

/// Sinusoidal positions, a layer stack and a final norm.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    layers: Vec<EncoderLayer>,
    norm: LayerNorm,
    dim: usize,
}

impl TransformerEncoder {
    pub fn new(p: &mut ParamStore, name: &str, dim: usize, heads: usize, depth: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            layers: (0..depth)
                .map(|i| EncoderLayer::new(p, &join(name, &format!("layer{i}")), dim, heads, eps))
                .collect::<Result<_>>()?,
            norm: LayerNorm::new(p, &join(name, "norm"), dim, eps)?,
            dim,
        })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (_, t, _) = x.dims3()?;
        let pos = super::ops::sinusoidal_positions(t, self.dim, x.dtype(), x.device())?;
        let mut x = x.broadcast_add(&pos)?;
        for layer in &self.layers {
            x = layer.forward(&x)?;
        }
        self.norm.forward(&x)
    }
}

pub fn mean_over_time(x: &Tensor) -> candle_core::Result<Tensor> {
    x.mean(D::Minus2)
}

pub fn scalar(value: f64, dtype: DType, device: &Device) -> candle_core::Result<Tensor> {
    Tensor::new(value, device)?.to_dtype(dtype)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_length_law() {
        let mut p = ParamStore::new(0, DType::F32);
        let conv = Conv1d::new(&mut p, "c", 2, 3, 16, 8, 4).unwrap();
        let x = Tensor::zeros((1, 9600, 2), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(conv.forward(&x).unwrap().dims(), &[1, 1200, 3]);
        let down = Conv1d::new(&mut p, "d", 3, 3, 2, 2, 0).unwrap();
        let x = Tensor::zeros((2, 300, 3), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(down.forward(&x).unwrap().dims(), &[2, 150, 3]);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut p = ParamStore::new(3, DType::F64);
        let conv = Conv1d::new(&mut p, "c", 2, 1, 3, 2, 1).unwrap();
        let xs: Vec<f64> = (0..14).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = Tensor::from_vec(xs.clone(), (1, 7, 2), &Device::Cpu).unwrap();
        let y: Vec<f64> = conv.forward(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let w: Vec<f64> = conv.lin.weight.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(y.len(), 4);
        for (t, &yt) in y.iter().enumerate() {
            let mut acc = 0.0;
            for j in 0..3 {
                let src = (t * 2 + j) as isize - 1;
                if (0..7).contains(&src) {
                    for c in 0..2 {
                        acc += xs[src as usize * 2 + c] * w[j * 2 + c];
                    }
                }
            }
            assert!((acc - yt).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_handles_leading_dims() {
        let mut p = ParamStore::new(1, DType::F32);
        let lin = Linear::new(&mut p, "l", 4, 2).unwrap();
        let x = Tensor::ones((2, 3, 4), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(lin.forward(&x).unwrap().dims(), &[2, 3, 2]);
        let zero = Tensor::zeros((1, 4), DType::F32, &Device::Cpu).unwrap();
        let y: Vec<f32> = lin.forward(&zero).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }
}
