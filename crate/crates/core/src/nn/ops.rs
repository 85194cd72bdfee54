use candle_core::{CpuStorage, CustomOp1, DType, Device, Layout, Shape, Tensor, D};

/// Softmax over the last dimension. The max shift is detached: softmax is
/// shift-invariant, so the gradient is unchanged and masked `-inf` entries
/// never reach the max's backward pass.
pub fn softmax_last(x: &Tensor) -> candle_core::Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let num = x.broadcast_sub(&max)?.exp()?;
    let den = num.sum_keepdim(D::Minus1)?;
    num.broadcast_div(&den)
}

pub fn log_softmax_last(x: &Tensor) -> candle_core::Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    shifted.broadcast_sub(&lse)
}

/// `(x − mean) / sqrt(var + eps)` over the last dimension, population variance.
pub fn normalize_last(x: &Tensor, eps: f64) -> candle_core::Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    centered.broadcast_div(&(var + eps)?.sqrt()?)
}

/// Instance normalization without affine parameters: every channel of every
/// sequence is standardized over time. `x` is `(B, T, C)` or `(T, C)`.
pub fn instance_norm(x: &Tensor, eps: f64) -> candle_core::Result<Tensor> {
    let time = x.rank() - 2;
    let mean = x.mean_keepdim(time)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(time)?;
    centered.broadcast_div(&(var + eps)?.sqrt()?)
}

/// Cosine-normalizes rows: `x / max(‖x‖, eps)`.
pub fn l2_normalize_last(x: &Tensor, eps: f64) -> candle_core::Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?.maximum(eps)?;
    x.broadcast_div(&norm)
}

/// Gradient reversal: identity forward, `−scale · grad` backward.
#[derive(Debug, Clone, Copy)]
pub struct GradReverse {
    pub scale: f64,
}

impl CustomOp1 for GradReverse {
    fn name(&self) -> &'static str {
        "grad-reverse"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (start, end) = layout
            .contiguous_offsets()
            .ok_or_else(|| candle_core::Error::Msg("grad-reverse needs a contiguous input".into()))?;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(v[start..end].to_vec()),
            CpuStorage::F64(v) => CpuStorage::F64(v[start..end].to_vec()),
            _ => candle_core::bail!("grad-reverse: only f32 and f64 are supported"),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some((grad_res * (-self.scale))?))
    }
}

pub fn grad_reverse(x: &Tensor, scale: f64) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op1(GradReverse { scale })
}

/// Fixed sinusoidal position table, `(len, dim)`.
pub fn sinusoidal_positions(len: usize, dim: usize, dtype: DType, device: &Device) -> candle_core::Result<Tensor> {
    let mut table = vec![0f64; len * dim];
    for t in 0..len {
        for i in 0..dim {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = t as f64 * freq;
            table[t * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::from_vec(table, (len, dim), device)?.to_dtype(dtype)
}

/// Additive causal mask: row `t` may see columns `0..=t`.
pub fn causal_mask(len: usize, dtype: DType, device: &Device) -> candle_core::Result<Tensor> {
    let mut mask = vec![0f64; len * len];
    for t in 0..len {
        for j in t + 1..len {
            mask[t * len + j] = f64::NEG_INFINITY;
        }
    }
    Tensor::from_vec(mask, (len, len), device)?.to_dtype(dtype)
}
