//! Layers built on [`Scope`]. Everything here is composed from differentiable
//! candle primitives; the fused layer-norm and softmax kernels in candle-nn
//! have no backward pass and are avoided.

use candle_core::{Module, Tensor, Var, D};

use super::params::{Init, Scope};
use crate::error::{Error, Result};

pub fn quick_gelu(xs: &Tensor) -> candle_core::Result<Tensor> {
    xs * candle_nn::ops::sigmoid(&(xs * 1.702)?)?
}

pub fn softmax_last(xs: &Tensor) -> candle_core::Result<Tensor> {
    candle_nn::ops::softmax(xs, D::Minus1)
}

#[derive(Debug, Clone)]
pub struct Linear {
    inner: candle_nn::Linear,
}

impl Linear {
    pub fn new(scope: &Scope, in_dim: usize, out_dim: usize) -> Result<Self> {
        let weight = scope.param("weight", (out_dim, in_dim), Init::fan_in(in_dim))?;
        let bias = scope.param("bias", out_dim, Init::fan_in(in_dim))?;
        Ok(Self {
            inner: candle_nn::Linear::new(weight, Some(bias)),
        })
    }

    pub fn weight(&self) -> &Tensor {
        self.inner.weight()
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.inner.bias()
    }
}

impl Module for Linear {
    fn forward(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        self.inner.forward(xs)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    inner: candle_nn::Conv2d,
}

impl Conv2d {
    pub fn new(
        scope: &Scope,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = in_c * kernel * kernel;
        let weight = scope.param("weight", (out_c, in_c, kernel, kernel), Init::fan_in(fan_in))?;
        let bias = if bias {
            Some(scope.param("bias", out_c, Init::fan_in(fan_in))?)
        } else {
            None
        };
        let cfg = candle_nn::Conv2dConfig {
            padding,
            stride,
            dilation: 1,
            groups: 1,
            cudnn_fwd_algo: None,
        };
        Ok(Self {
            inner: candle_nn::Conv2d::new(weight, bias, cfg),
        })
    }
}

impl Module for Conv2d {
    fn forward(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        self.inner.forward(xs)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    inner: candle_nn::ConvTranspose2d,
}

impl ConvTranspose2d {
    pub fn new(scope: &Scope, in_c: usize, out_c: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let fan_in = out_c * kernel * kernel;
        let weight = scope.param("weight", (in_c, out_c, kernel, kernel), Init::fan_in(fan_in))?;
        let bias = scope.param("bias", out_c, Init::fan_in(fan_in))?;
        let cfg = candle_nn::ConvTranspose2dConfig {
            padding,
            output_padding: 0,
            stride,
            dilation: 1,
        };
        Ok(Self {
            inner: candle_nn::ConvTranspose2d::new(weight, Some(bias), cfg),
        })
    }
}

impl Module for ConvTranspose2d {
    fn forward(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        self.inner.forward(xs)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(scope: &Scope, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: scope.param("weight", dim, Init::Const(1.0))?,
            bias: scope.param("bias", dim, Init::Const(0.0))?,
            eps: 1e-5,
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        let mean = xs.mean_keepdim(D::Minus1)?;
        let centered = xs.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

/// Spatial batch normalization over `[N, C, H, W]` with running statistics
/// kept as checkpointed buffers.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    weight: Tensor,
    bias: Tensor,
    running_mean: Var,
    running_var: Var,
    eps: f64,
    momentum: f64,
}

impl BatchNorm2d {
    pub fn new(scope: &Scope, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: scope.param("weight", channels, Init::Const(1.0))?,
            bias: scope.param("bias", channels, Init::Const(0.0))?,
            running_mean: scope.buffer("running_mean", channels, Init::Const(0.0))?,
            running_var: scope.buffer("running_var", channels, Init::Const(1.0))?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward_t(&self, xs: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let c = xs.dim(1)?;
        let stat_shape = (1, c, 1, 1);
        let (mean, var) = if train {
            let count = xs.elem_count() / c;
            let mean = xs.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let centered = xs.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let m = self.momentum;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))? + (mean.detach().flatten_all()? * m)?)?;
            self.running_mean.set(&new_mean)?;
            if count > 1 {
                let unbiased = (var.detach().flatten_all()? * (count as f64 / (count - 1) as f64))?;
                let new_var = ((self.running_var.as_tensor() * (1.0 - m))? + (unbiased * m)?)?;
                self.running_var.set(&new_var)?;
            }
            (mean, var)
        } else {
            (
                self.running_mean.as_detached_tensor().reshape(stat_shape)?,
                self.running_var.as_detached_tensor().reshape(stat_shape)?,
            )
        };
        let normed = xs.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed
            .broadcast_mul(&self.weight.reshape(stat_shape)?)?
            .broadcast_add(&self.bias.reshape(stat_shape)?)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    q_proj: Linear,
    k_proj: Linear,
    v_proj: Linear,
    out_proj: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(scope: &Scope, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::ConfigInvalid(format!(
                "attention width {dim} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q_proj: Linear::new(&scope.pp("q_proj"), dim, dim)?,
            k_proj: Linear::new(&scope.pp("k_proj"), dim, dim)?,
            v_proj: Linear::new(&scope.pp("v_proj"), dim, dim)?,
            out_proj: Linear::new(&scope.pp("out_proj"), dim, dim)?,
            heads,
        })
    }

    pub fn v_proj(&self) -> &Linear {
        &self.v_proj
    }

    pub fn out_proj(&self) -> &Linear {
        &self.out_proj
    }

    /// `query: [B, Lq, D]`, `context: [B, Lk, D]`, optional additive `mask: [Lq, Lk]`.
    pub fn forward(&self, query: &Tensor, context: &Tensor, mask: Option<&Tensor>) -> candle_core::Result<Tensor> {
        let (b, lq, d) = query.dims3()?;
        let lk = context.dim(1)?;
        let hd = d / self.heads;
        let split = |t: Tensor, l: usize| -> candle_core::Result<Tensor> {
            t.reshape((b, l, self.heads, hd))?.transpose(1, 2)?.contiguous()
        };
        let q = split(self.q_proj.forward(query)?, lq)?;
        let k = split(self.k_proj.forward(context)?, lk)?;
        let v = split(self.v_proj.forward(context)?, lk)?;
        let mut scores = (q.matmul(&k.t()?)? / (hd as f64).sqrt())?;
        if let Some(mask) = mask {
            scores = scores.broadcast_add(mask)?;
        }
        let attn = softmax_last(&scores)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, lq, d))?;
        self.out_proj.forward(&out)
    }
}

/// Pre-norm transformer block with a QuickGELU MLP.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    ln_1: LayerNorm,
    attn: MultiHeadAttention,
    ln_2: LayerNorm,
    fc: Linear,
    proj: Linear,
}

impl TransformerBlock {
    pub fn new(scope: &Scope, width: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            ln_1: LayerNorm::new(&scope.pp("ln_1"), width)?,
            attn: MultiHeadAttention::new(&scope.pp("attn"), width, heads)?,
            ln_2: LayerNorm::new(&scope.pp("ln_2"), width)?,
            fc: Linear::new(&scope.pp("mlp.fc"), width, width * 4)?,
            proj: Linear::new(&scope.pp("mlp.proj"), width * 4, width)?,
        })
    }

    pub fn forward(&self, xs: &Tensor, mask: Option<&Tensor>) -> candle_core::Result<Tensor> {
        let h = self.ln_1.forward(xs)?;
        let xs = (xs + self.attn.forward(&h, &h, mask)?)?;
        let h = quick_gelu(&self.fc.forward(&self.ln_2.forward(&xs)?)?)?;
        &xs + self.proj.forward(&h)?
    }
}
