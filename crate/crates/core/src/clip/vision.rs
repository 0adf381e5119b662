//! Image towers. Both return a pooled embedding per image and one embedding
//! per spatial position, all in the joint embedding space.

use candle_core::{Module, Tensor, D};

use super::config::VisionConfig;
use crate::error::Result;
use crate::nn::{softmax_last, BatchNorm2d, Conv2d, Init, LayerNorm, Linear, Scope, TransformerBlock};

/// `pooled: [N, E]`, `positions: [N, P, E]`.
#[derive(Debug, Clone)]
pub struct VisualOutput {
    pub pooled: Tensor,
    pub positions: Tensor,
}

#[derive(Debug, Clone)]
pub enum VisionTower {
    Vit(VisionTransformer),
    ResNet(ModifiedResNet),
}

impl VisionTower {
    pub fn new(scope: &Scope, cfg: &VisionConfig, embed_dim: usize) -> Result<Self> {
        Ok(match cfg {
            VisionConfig::Vit {
                resolution,
                patch,
                width,
                layers,
                heads,
            } => VisionTower::Vit(VisionTransformer::new(
                scope,
                *resolution,
                *patch,
                *width,
                *layers,
                *heads,
                embed_dim,
            )?),
            VisionConfig::ResNet {
                resolution,
                layers,
                width,
                heads,
            } => VisionTower::ResNet(ModifiedResNet::new(
                scope,
                *resolution,
                *layers,
                *width,
                *heads,
                embed_dim,
            )?),
        })
    }

    pub fn forward_t(&self, images: &Tensor, train: bool) -> candle_core::Result<VisualOutput> {
        match self {
            VisionTower::Vit(m) => m.forward(images),
            VisionTower::ResNet(m) => m.forward_t(images, train),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VisionTransformer {
    patch_embed: Conv2d,
    class_embedding: Tensor,
    positional_embedding: Tensor,
    ln_pre: LayerNorm,
    blocks: Vec<TransformerBlock>,
    ln_post: LayerNorm,
    proj: Tensor,
}

impl VisionTransformer {
    pub fn new(
        scope: &Scope,
        resolution: usize,
        patch: usize,
        width: usize,
        layers: usize,
        heads: usize,
        embed_dim: usize,
    ) -> Result<Self> {
        let grid = resolution / patch;
        let scale = (width as f64).powf(-0.5);
        Ok(Self {
            patch_embed: Conv2d::new(&scope.pp("patch_embed"), 3, width, patch, patch, 0, false)?,
            class_embedding: scope.param("class_embedding", width, Init::Normal { std: scale })?,
            positional_embedding: scope.param(
                "positional_embedding",
                (grid * grid + 1, width),
                Init::Normal { std: scale },
            )?,
            ln_pre: LayerNorm::new(&scope.pp("ln_pre"), width)?,
            blocks: (0..layers)
                .map(|i| TransformerBlock::new(&scope.pp(format!("blocks.{i}")), width, heads))
                .collect::<Result<_>>()?,
            ln_post: LayerNorm::new(&scope.pp("ln_post"), width)?,
            proj: scope.param("proj", (width, embed_dim), Init::Normal { std: scale })?,
        })
    }

    fn forward(&self, images: &Tensor) -> candle_core::Result<VisualOutput> {
        let x = self.patch_embed.forward(images)?;
        let (n, w, _, _) = x.dims4()?;
        let x = x.flatten_from(2)?.transpose(1, 2)?;
        let cls = self.class_embedding.reshape((1, 1, w))?.broadcast_as((n, 1, w))?;
        let x = Tensor::cat(&[&cls, &x], 1)?.broadcast_add(&self.positional_embedding)?;
        let mut x = self.ln_pre.forward(&x)?;
        for block in &self.blocks {
            x = block.forward(&x, None)?;
        }
        let tokens = self.ln_post.forward(&x)?.broadcast_matmul(&self.proj)?;
        let p = tokens.dim(1)?;
        Ok(VisualOutput {
            pooled: tokens.narrow(1, 0, 1)?.squeeze(1)?,
            positions: tokens.narrow(1, 1, p - 1)?,
        })
    }
}

#[derive(Debug, Clone)]
struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    stride: usize,
    downsample: Option<(Conv2d, BatchNorm2d)>,
}

impl Bottleneck {
    const EXPANSION: usize = 4;

    fn new(scope: &Scope, inplanes: usize, planes: usize, stride: usize) -> Result<Self> {
        let out = planes * Self::EXPANSION;
        let downsample = if stride > 1 || inplanes != out {
            let s = scope.pp("downsample");
            Some((
                Conv2d::new(&s.pp("conv"), inplanes, out, 1, 1, 0, false)?,
                BatchNorm2d::new(&s.pp("bn"), out)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::new(&scope.pp("conv1"), inplanes, planes, 1, 1, 0, false)?,
            bn1: BatchNorm2d::new(&scope.pp("bn1"), planes)?,
            conv2: Conv2d::new(&scope.pp("conv2"), planes, planes, 3, 1, 1, false)?,
            bn2: BatchNorm2d::new(&scope.pp("bn2"), planes)?,
            conv3: Conv2d::new(&scope.pp("conv3"), planes, out, 1, 1, 0, false)?,
            bn3: BatchNorm2d::new(&scope.pp("bn3"), out)?,
            stride,
            downsample,
        })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let mut out = self.bn1.forward_t(&self.conv1.forward(x)?, train)?.relu()?;
        out = self.bn2.forward_t(&self.conv2.forward(&out)?, train)?.relu()?;
        if self.stride > 1 {
            out = out.avg_pool2d(self.stride)?;
        }
        out = self.bn3.forward_t(&self.conv3.forward(&out)?, train)?;
        let identity = match &self.downsample {
            Some((conv, bn)) => {
                let pooled = if self.stride > 1 {
                    x.avg_pool2d(self.stride)?
                } else {
                    x.clone()
                };
                bn.forward_t(&conv.forward(&pooled)?, train)?
            }
            None => x.clone(),
        };
        (out + identity)?.relu()
    }
}

/// Attention pooling over the final feature grid: the grid mean attends to
/// every position. Per-position outputs reuse the value and output
/// projections so they share the pooled vector's space.
#[derive(Debug, Clone)]
struct AttentionPool {
    positional_embedding: Tensor,
    q_proj: Linear,
    k_proj: Linear,
    v_proj: Linear,
    c_proj: Linear,
    heads: usize,
}

impl AttentionPool {
    fn new(scope: &Scope, spatial: usize, dim: usize, heads: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            positional_embedding: scope.param(
                "positional_embedding",
                (spatial * spatial + 1, dim),
                Init::Normal {
                    std: (dim as f64).powf(-0.5),
                },
            )?,
            q_proj: Linear::new(&scope.pp("q_proj"), dim, dim)?,
            k_proj: Linear::new(&scope.pp("k_proj"), dim, dim)?,
            v_proj: Linear::new(&scope.pp("v_proj"), dim, dim)?,
            c_proj: Linear::new(&scope.pp("c_proj"), dim, out_dim)?,
            heads,
        })
    }

    fn forward(&self, x: &Tensor) -> candle_core::Result<VisualOutput> {
        let (n, c, _, _) = x.dims4()?;
        let x = x.flatten_from(2)?.transpose(1, 2)?;
        let hw = x.dim(1)?;
        let mean = x.mean_keepdim(1)?;
        let x = Tensor::cat(&[&mean, &x], 1)?.broadcast_add(&self.positional_embedding)?;
        let hd = c / self.heads;
        let q = self
            .q_proj
            .forward(&x.narrow(1, 0, 1)?)?
            .reshape((n, 1, self.heads, hd))?
            .transpose(1, 2)?;
        let k = self
            .k_proj
            .forward(&x)?
            .reshape((n, hw + 1, self.heads, hd))?
            .transpose(1, 2)?;
        let v_all = self.v_proj.forward(&x)?;
        let v = v_all
            .reshape((n, hw + 1, self.heads, hd))?
            .transpose(1, 2)?
            .contiguous()?;
        let scores = (q.contiguous()?.matmul(&k.contiguous()?.t()?)? / (hd as f64).sqrt())?;
        let pooled = softmax_last(&scores)?.matmul(&v)?.transpose(1, 2)?.reshape((n, c))?;
        let pooled = self.c_proj.forward(&pooled)?;
        let positions = self.c_proj.forward(&v_all.narrow(1, 1, hw)?)?;
        Ok(VisualOutput { pooled, positions })
    }
}

#[derive(Debug, Clone)]
pub struct ModifiedResNet {
    stem: Vec<(Conv2d, BatchNorm2d)>,
    stages: Vec<Vec<Bottleneck>>,
    attnpool: AttentionPool,
}

impl ModifiedResNet {
    pub fn new(
        scope: &Scope,
        resolution: usize,
        layers: [usize; 4],
        width: usize,
        heads: usize,
        embed_dim: usize,
    ) -> Result<Self> {
        let half = width / 2;
        let stem_scope = scope.pp("stem");
        let stem = vec![
            (
                Conv2d::new(&stem_scope.pp("conv1"), 3, half, 3, 2, 1, false)?,
                BatchNorm2d::new(&stem_scope.pp("bn1"), half)?,
            ),
            (
                Conv2d::new(&stem_scope.pp("conv2"), half, half, 3, 1, 1, false)?,
                BatchNorm2d::new(&stem_scope.pp("bn2"), half)?,
            ),
            (
                Conv2d::new(&stem_scope.pp("conv3"), half, width, 3, 1, 1, false)?,
                BatchNorm2d::new(&stem_scope.pp("bn3"), width)?,
            ),
        ];
        let mut inplanes = width;
        let mut stages = Vec::with_capacity(4);
        for (i, &blocks) in layers.iter().enumerate() {
            let planes = width << i;
            let stride = if i == 0 { 1 } else { 2 };
            let s = scope.pp(format!("layer{}", i + 1));
            let mut stage = Vec::with_capacity(blocks);
            for b in 0..blocks {
                let block_stride = if b == 0 { stride } else { 1 };
                stage.push(Bottleneck::new(&s.pp(b), inplanes, planes, block_stride)?);
                inplanes = planes * Bottleneck::EXPANSION;
            }
            stages.push(stage);
        }
        let attnpool = AttentionPool::new(&scope.pp("attnpool"), resolution / 32, width * 32, heads, embed_dim)?;
        Ok(Self { stem, stages, attnpool })
    }

    fn forward_t(&self, images: &Tensor, train: bool) -> candle_core::Result<VisualOutput> {
        let mut x = images.clone();
        for (conv, bn) in &self.stem {
            x = bn.forward_t(&conv.forward(&x)?, train)?.relu()?;
        }
        x = x.avg_pool2d(2)?;
        for stage in &self.stages {
            for block in stage {
                x = block.forward_t(&x, train)?;
            }
        }
        self.attnpool.forward(&x)
    }
}

/// Row-wise L2 normalization.
pub fn l2_normalize(x: &Tensor) -> candle_core::Result<Tensor> {
    x.broadcast_div(&x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?)
}
