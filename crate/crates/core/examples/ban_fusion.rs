// Bilinear attention fusion of visual positions with a question vector; each
// glimpse's attention map sums to one over the positions.

use candle_core::{DType, Device, Tensor};
use medvqa::nn::ParamStore;
use medvqa::vqa::{attention_row_sums, BanConfig, BanFusion};

pub fn run_example() -> medvqa::Result<()> {
    let store = ParamStore::new(7, &Device::Cpu);
    let (batch, positions, visual_dim, hidden) = (2, 5, 12, 8);
    let fusion = BanFusion::new(
        &store.root().pp("ban"),
        visual_dim,
        hidden,
        &BanConfig {
            glimpses: 2,
            joint_dim: 16,
        },
    )?;
    let visual = Tensor::randn(0f32, 1.0, (batch, positions, visual_dim), &Device::Cpu)?;
    let question = Tensor::randn(0f32, 1.0, (batch, hidden), &Device::Cpu)?;
    let (fused, attention) = fusion.forward(&visual, &question)?;
    println!("fused {:?}  attention {:?}", fused.dims(), attention.weights.dims());
    println!(
        "first map: {:?}",
        attention
            .weights
            .get(0)?
            .get(0)?
            .to_dtype(DType::F64)?
            .to_vec1::<f64>()?
    );
    for s in attention_row_sums(&attention)? {
        assert!((s - 1.0).abs() < 1e-5);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("ban_fusion failed");
}
