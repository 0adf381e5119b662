use candle_core::{DType, Device, Module, Tensor};

use super::config::TextConfig;
use crate::error::Result;
use crate::nn::{Init, LayerNorm, Scope, TransformerBlock};

/// Causal transformer over BPE ids. A caption's embedding is read at its last
/// real token, which under the causal mask has attended to the whole caption
/// and to none of the padding.
#[derive(Debug, Clone)]
pub struct TextTransformer {
    token_embedding: Tensor,
    positional_embedding: Tensor,
    blocks: Vec<TransformerBlock>,
    ln_final: LayerNorm,
    projection: Tensor,
    mask: Tensor,
    context_window: usize,
}

impl TextTransformer {
    pub fn new(scope: &Scope, cfg: &TextConfig, embed_dim: usize) -> Result<Self> {
        let n = cfg.context_window;
        let mask: Vec<f32> = (0..n)
            .flat_map(|i| (0..n).map(move |j| if j > i { f32::NEG_INFINITY } else { 0.0 }))
            .collect();
        Ok(Self {
            token_embedding: scope.param(
                "token_embedding",
                (cfg.vocab_size, cfg.width),
                Init::Normal { std: 0.02 },
            )?,
            positional_embedding: scope.param("positional_embedding", (n, cfg.width), Init::Normal { std: 0.01 })?,
            blocks: (0..cfg.layers)
                .map(|i| TransformerBlock::new(&scope.pp(format!("blocks.{i}")), cfg.width, cfg.heads))
                .collect::<Result<_>>()?,
            ln_final: LayerNorm::new(&scope.pp("ln_final"), cfg.width)?,
            projection: scope.param(
                "projection",
                (cfg.width, embed_dim),
                Init::Normal {
                    std: (cfg.width as f64).powf(-0.5),
                },
            )?,
            mask: Tensor::from_vec(mask, (n, n), scope.device())?,
            context_window: n,
        })
    }

    /// `ids: [N, context_window]` (u32); `lengths[i]` real tokens in row `i`.
    pub fn forward(&self, ids: &Tensor, lengths: &[usize]) -> candle_core::Result<Tensor> {
        let (n, ctx) = ids.dims2()?;
        let width = self.token_embedding.dim(1)?;
        let x = self
            .token_embedding
            .index_select(&ids.flatten_all()?, 0)?
            .reshape((n, ctx, width))?
            .broadcast_add(&self.positional_embedding)?;
        let mut x = x;
        for block in &self.blocks {
            x = block.forward(&x, Some(&self.mask))?;
        }
        let x = self.ln_final.forward(&x)?;
        let rows: Vec<u32> = lengths
            .iter()
            .enumerate()
            .map(|(i, &len)| (i * ctx + len.saturating_sub(1).min(ctx - 1)) as u32)
            .collect();
        let rows = Tensor::from_vec(rows, n, &Device::Cpu)?;
        x.reshape((n * ctx, width))?
            .index_select(&rows, 0)?
            .matmul(&self.projection)
    }

    pub fn context_window(&self) -> usize {
        self.context_window
    }

    pub fn vocab_size(&self) -> usize {
        self.token_embedding.dims()[0]
    }
}

pub(crate) fn ids_tensor(rows: &[&[u32]]) -> candle_core::Result<Tensor> {
    let n = rows.len();
    let ctx = rows.first().map(|r| r.len()).unwrap_or(0);
    let flat: Vec<u32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Tensor::from_vec(flat, (n, ctx), &Device::Cpu)?.to_dtype(DType::U32)
}
