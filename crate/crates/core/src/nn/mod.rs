//! Minimal neural-network building blocks on top of candle.

mod layers;
mod params;

pub use layers::{
    quick_gelu, softmax_last, BatchNorm2d, Conv2d, ConvTranspose2d, LayerNorm, Linear, MultiHeadAttention,
    TransformerBlock,
};
pub use params::{Init, ParamStore, Scope};
