//! Scaled cosine-similarity logits and the symmetric contrastive loss.
//!
//! For a batch of `N` matched pairs, row `i` of the logit matrix scores image
//! `i` against every caption and column `j` scores caption `j` against every
//! image. Matching pairs sit on the diagonal, so the image→text loss is the
//! mean row-wise cross-entropy with target `i`, the text→image loss is the
//! same over columns, and the reported loss is their average.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use super::vision::l2_normalize;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

/// `[N, D]` embeddings from one tower.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    pub vectors: Tensor,
    pub modality: Modality,
}

impl EmbeddingBatch {
    pub fn new(vectors: Tensor, modality: Modality) -> Result<Self> {
        if vectors.rank() != 2 {
            return Err(Error::shape(format!(
                "embeddings must be [N, D], got {:?}",
                vectors.dims()
            )));
        }
        Ok(Self { vectors, modality })
    }

    pub fn len(&self) -> usize {
        self.vectors.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.dims()[1]
    }

    /// Each row scaled to unit Euclidean norm.
    pub fn normalized(&self) -> Result<Self> {
        Ok(Self {
            vectors: l2_normalize(&self.vectors)?,
            modality: self.modality,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    /// `[N, N]`, rows indexed by image, columns by caption.
    pub logits: Tensor,
    pub logit_scale: f64,
}

impl SimilarityMatrix {
    pub fn from_rows(rows: &[Vec<f64>], logit_scale: f64) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged logit rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Ok(Self {
            logits: Tensor::from_vec(flat, (n, cols), &Device::Cpu)?,
            logit_scale,
        })
    }

    pub fn rows(&self) -> Result<Vec<Vec<f64>>> {
        Ok(self.logits.to_dtype(DType::F64)?.to_vec2::<f64>()?)
    }

    pub fn transposed(&self) -> Result<Self> {
        Ok(Self {
            logits: self.logits.t()?.contiguous()?,
            logit_scale: self.logit_scale,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveLossReport {
    pub image_to_text_loss: f64,
    pub text_to_image_loss: f64,
    pub total: f64,
}

fn check_pair(images: &EmbeddingBatch, texts: &EmbeddingBatch) -> Result<()> {
    if images.len() != texts.len() || images.dim() != texts.dim() {
        return Err(Error::shape(format!(
            "image batch {:?} vs text batch {:?}",
            images.vectors.dims(),
            texts.vectors.dims()
        )));
    }
    Ok(())
}

/// `logits[i][j] = scale * <image_i / |image_i|, text_j / |text_j|>`.
pub fn similarity_logits(
    images: &EmbeddingBatch,
    texts: &EmbeddingBatch,
    logit_scale: f64,
) -> Result<SimilarityMatrix> {
    if !(logit_scale > 0.0 && logit_scale.is_finite()) {
        return Err(Error::ConfigInvalid(format!(
            "logit scale must be positive, got {logit_scale}"
        )));
    }
    check_pair(images, texts)?;
    let i = l2_normalize(&images.vectors)?;
    let t = l2_normalize(&texts.vectors)?;
    let logits = (i.matmul(&t.t()?)? * logit_scale)?;
    Ok(SimilarityMatrix { logits, logit_scale })
}

/// Same as [`similarity_logits`] with the scale as a (learnable) scalar tensor.
pub fn similarity_logits_tensor(images: &EmbeddingBatch, texts: &EmbeddingBatch, scale: &Tensor) -> Result<Tensor> {
    check_pair(images, texts)?;
    let i = l2_normalize(&images.vectors)?;
    let t = l2_normalize(&texts.vectors)?;
    Ok(i.matmul(&t.t()?)?.broadcast_mul(scale)?)
}

fn square_rows(sim: &SimilarityMatrix) -> Result<Vec<Vec<f64>>> {
    let dims = sim.logits.dims();
    if dims.len() != 2 {
        return Err(Error::shape(format!("logits must be a matrix, got {dims:?}")));
    }
    if dims[0] != dims[1] {
        return Err(Error::NonSquare {
            rows: dims[0],
            cols: dims[1],
        });
    }
    if dims[0] == 0 {
        return Err(Error::shape("empty logit matrix"));
    }
    let rows = sim.rows()?;
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("similarity logits"));
    }
    Ok(rows)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Evaluates both directional cross-entropies in f64.
pub fn symmetric_contrastive_loss(sim: &SimilarityMatrix) -> Result<ContrastiveLossReport> {
    let rows = square_rows(sim)?;
    let n = rows.len();
    let image_to_text = (0..n)
        .map(|i| log_sum_exp(rows[i].iter().copied()) - rows[i][i])
        .sum::<f64>()
        / n as f64;
    let text_to_image = (0..n)
        .map(|j| log_sum_exp((0..n).map(|i| rows[i][j])) - rows[j][j])
        .sum::<f64>()
        / n as f64;
    Ok(ContrastiveLossReport {
        image_to_text_loss: image_to_text,
        text_to_image_loss: text_to_image,
        total: (image_to_text + text_to_image) / 2.0,
    })
}

/// Analytic `d total / d logits`:
/// `(softmax_rows(S) + softmax_cols(S) - 2I) / (2N)`.
pub fn contrastive_loss_gradient(sim: &SimilarityMatrix) -> Result<Vec<Vec<f64>>> {
    let rows = square_rows(sim)?;
    let n = rows.len();
    let row_lse: Vec<f64> = rows.iter().map(|r| log_sum_exp(r.iter().copied())).collect();
    let col_lse: Vec<f64> = (0..n).map(|j| log_sum_exp((0..n).map(|i| rows[i][j]))).collect();
    let scale = 1.0 / (2.0 * n as f64);
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let p_row = (rows[i][j] - row_lse[i]).exp();
                    let p_col = (rows[i][j] - col_lse[j]).exp();
                    let target = if i == j { 2.0 } else { 0.0 };
                    (p_row + p_col - target) * scale
                })
                .collect()
        })
        .collect())
}

fn diagonal_cross_entropy(logits: &Tensor) -> candle_core::Result<Tensor> {
    let n = logits.dim(0)?;
    let log_probs = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let eye = Tensor::eye(n, logits.dtype(), logits.device())?;
    (log_probs * eye)?.sum_all()?.affine(-1.0 / n as f64, 0.0)
}

/// Differentiable scalar loss for training; agrees with
/// [`symmetric_contrastive_loss`]'s `total`.
pub fn symmetric_contrastive_loss_tensor(logits: &Tensor) -> Result<Tensor> {
    let (r, c) = logits.dims2()?;
    if r != c {
        return Err(Error::NonSquare { rows: r, cols: c });
    }
    let a = diagonal_cross_entropy(logits)?;
    let b = diagonal_cross_entropy(&logits.t()?.contiguous()?)?;
    Ok(((a + b)? * 0.5)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Var;
    use proptest::prelude::*;

    fn report(rows: &[Vec<f64>]) -> ContrastiveLossReport {
        symmetric_contrastive_loss(&SimilarityMatrix::from_rows(rows, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn single_pair_has_zero_loss() {
        assert_eq!(report(&[vec![3.7]]).total, 0.0);
    }

    #[test]
    fn constant_logits_give_ln_n() {
        let r = report(&vec![vec![0.0; 4]; 4]);
        assert!((r.total - 4f64.ln()).abs() < 1e-12);
        assert!((r.total - 1.386_294_361_119_890_6).abs() < 1e-12);
    }

    #[test]
    fn confident_two_by_two() {
        let r = report(&[vec![10.0, -10.0], vec![-10.0, 10.0]]);
        // -ln(e^10 / (e^10 + e^-10)) = ln(1 + e^-20)
        let direct = (-20f64).exp().ln_1p();
        assert!((r.total - direct).abs() <= 1e-6 * direct);
        assert!((r.total - 2.061e-9).abs() < 1e-12);
    }

    #[test]
    fn non_square_rejected() {
        let sim = SimilarityMatrix::from_rows(&[vec![1.0, 2.0]], 1.0).unwrap();
        assert!(matches!(
            symmetric_contrastive_loss(&sim),
            Err(Error::NonSquare { rows: 1, cols: 2 })
        ));
        let t = Tensor::zeros((2, 3), DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(
            symmetric_contrastive_loss_tensor(&t),
            Err(Error::NonSquare { .. })
        ));
    }

    #[test]
    fn similarity_of_identical_and_orthogonal_vectors() {
        let v = Tensor::new(&[[3.0f64, 4.0]], &Device::Cpu).unwrap();
        let img = EmbeddingBatch::new(v.clone(), Modality::Image).unwrap();
        let txt = EmbeddingBatch::new(v, Modality::Text).unwrap();
        let s = similarity_logits(&img, &txt, 7.5).unwrap();
        assert!((s.rows().unwrap()[0][0] - 7.5).abs() < 1e-12);

        let e = Tensor::new(&[[1.0f64, 0.0], [0.0, 2.0]], &Device::Cpu).unwrap();
        let b = EmbeddingBatch::new(e, Modality::Image).unwrap();
        let s = similarity_logits(
            &b,
            &EmbeddingBatch {
                modality: Modality::Text,
                ..b.clone()
            },
            3.0,
        )
        .unwrap();
        let rows = s.rows().unwrap();
        assert_eq!(rows[0][1], 0.0);
        assert_eq!(rows[1][0], 0.0);
    }

    #[test]
    fn mismatched_batches_rejected() {
        let a = EmbeddingBatch::new(
            Tensor::zeros((2, 3), DType::F64, &Device::Cpu).unwrap(),
            Modality::Image,
        )
        .unwrap();
        let b = EmbeddingBatch::new(Tensor::zeros((2, 4), DType::F64, &Device::Cpu).unwrap(), Modality::Text).unwrap();
        assert!(matches!(similarity_logits(&a, &b, 1.0), Err(Error::ShapeMismatch(_))));
        assert!(matches!(similarity_logits(&a, &a, 0.0), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn tensor_loss_and_autograd_match_analytic() {
        let rows = vec![vec![0.3, -1.2, 0.8], vec![2.0, 0.1, -0.4], vec![-0.7, 0.9, 1.5]];
        let sim = SimilarityMatrix::from_rows(&rows, 1.0).unwrap();
        let expected = symmetric_contrastive_loss(&sim).unwrap().total;
        let var = Var::from_tensor(&sim.logits).unwrap();
        let loss = symmetric_contrastive_loss_tensor(var.as_tensor()).unwrap();
        assert!((loss.to_scalar::<f64>().unwrap() - expected).abs() < 1e-12);
        let grad = loss.backward().unwrap().get(&var).unwrap().to_vec2::<f64>().unwrap();
        let analytic = contrastive_loss_gradient(&sim).unwrap();
        for (g, a) in grad.iter().flatten().zip(analytic.iter().flatten()) {
            assert!((g - a).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn transpose_symmetry(vals in proptest::collection::vec(-20.0f64..20.0, 25)) {
            let rows: Vec<Vec<f64>> = vals.chunks(5).map(|c| c.to_vec()).collect();
            let sim = SimilarityMatrix::from_rows(&rows, 1.0).unwrap();
            let a = symmetric_contrastive_loss(&sim).unwrap();
            let b = symmetric_contrastive_loss(&sim.transposed().unwrap()).unwrap();
            prop_assert!((a.total - b.total).abs() <= 1e-9);
            prop_assert!(a.total >= 0.0);
            prop_assert!((a.total - (a.image_to_text_loss + a.text_to_image_loss) / 2.0).abs() <= 1e-9);
        }

        #[test]
        fn cosine_ignores_positive_scaling(
            vals in proptest::collection::vec(-3.0f64..3.0, 12),
            c in 0.01f64..100.0,
        ) {
            prop_assume!(vals.chunks(3).all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-3));
            let imgs = Tensor::from_vec(vals[..6].to_vec(), (2, 3), &Device::Cpu).unwrap();
            let txts = Tensor::from_vec(vals[6..].to_vec(), (2, 3), &Device::Cpu).unwrap();
            let i = EmbeddingBatch::new(imgs.clone(), Modality::Image).unwrap();
            let t = EmbeddingBatch::new(txts, Modality::Text).unwrap();
            let scaled = EmbeddingBatch::new((imgs * c).unwrap(), Modality::Image).unwrap();
            let a = similarity_logits(&i, &t, 5.0).unwrap().rows().unwrap();
            let b = similarity_logits(&scaled, &t, 5.0).unwrap().rows().unwrap();
            for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
                prop_assert!((x - y).abs() <= 1e-6);
                prop_assert!(x.abs() <= 5.0 + 1e-5);
            }
        }
    }

    #[test]
    fn loss_decreases_with_separation() {
        let mut prev = f64::INFINITY;
        for s in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
            let rows: Vec<Vec<f64>> = (0..4)
                .map(|i| (0..4).map(|j| if i == j { s } else { -s }).collect())
                .collect();
            let l = report(&rows).total;
            assert!(l < prev);
            prev = l;
        }
    }
}
