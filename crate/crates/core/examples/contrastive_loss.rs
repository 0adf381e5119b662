// Similarity logits and the symmetric contrastive loss on hand-built
// embeddings, plus its analytic gradient.

use candle_core::{Device, Tensor};
use medvqa::clip::{
    contrastive_loss_gradient, similarity_logits, symmetric_contrastive_loss, EmbeddingBatch, Modality,
};

pub fn run_example() -> medvqa::Result<()> {
    let dev = Device::Cpu;
    let images = Tensor::new(&[[1f32, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], &dev)?;
    // Each caption leans toward its own image.
    let texts = Tensor::new(&[[0.9f32, 0.1, 0.0], [0.2, 0.8, 0.1], [0.0, 0.3, 0.7]], &dev)?;
    let images = EmbeddingBatch::new(images, Modality::Image)?;
    let texts = EmbeddingBatch::new(texts, Modality::Text)?;

    for scale in [1.0, 10.0, 100.0] {
        let sim = similarity_logits(&images, &texts, scale)?;
        let loss = symmetric_contrastive_loss(&sim)?;
        println!(
            "scale {scale:>5}: i2t {:.4}  t2i {:.4}  total {:.4}",
            loss.image_to_text_loss, loss.text_to_image_loss, loss.total
        );
    }
    let grad = contrastive_loss_gradient(&similarity_logits(&images, &texts, 10.0)?)?;
    println!(
        "dL/dlogits diagonal: {:?}",
        (0..3).map(|i| grad[i][i]).collect::<Vec<_>>()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("contrastive_loss failed");
}
