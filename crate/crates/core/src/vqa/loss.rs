//! Joint objective: multi-label answer classification plus reconstruction.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub cls_loss: f64,
    pub rec_loss: f64,
    pub vqa_loss: f64,
}

/// Differentiable total plus its decomposition.
#[derive(Debug, Clone)]
pub struct VqaLoss {
    pub total: Tensor,
    pub report: LossReport,
}

/// Sigmoid binary cross-entropy on raw scores, summed over classes and
/// averaged over the batch. Uses `max(x, 0) - x·t + ln(1 + e^{-|x|})`.
pub fn classification_loss(logits: &Tensor, targets: &Tensor) -> candle_core::Result<Tensor> {
    let n = logits.dim(0)?;
    let softplus = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    let per = ((logits.relu()? - (logits * targets)?)? + softplus)?;
    per.sum_all()?.affine(1.0 / n as f64, 0.0)
}

/// Mean squared error over every element.
pub fn reconstruction_loss(reconstruction: &Tensor, original: &Tensor) -> candle_core::Result<Tensor> {
    (reconstruction - original)?.sqr()?.mean_all()
}

fn finite(t: &Tensor, what: &'static str) -> Result<()> {
    let ok = t
        .to_dtype(DType::F64)?
        .flatten_all()?
        .to_vec1::<f64>()?
        .iter()
        .all(|v| v.is_finite());
    if ok {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// `logits, targets: [N, V]`; `reconstruction, original` of equal shape.
pub fn vqa_loss(logits: &Tensor, targets: &Tensor, reconstruction: &Tensor, original: &Tensor) -> Result<VqaLoss> {
    if logits.dims() != targets.dims() || logits.rank() != 2 {
        return Err(Error::shape(format!(
            "logits {:?} vs targets {:?}",
            logits.dims(),
            targets.dims()
        )));
    }
    if reconstruction.dims() != original.dims() {
        return Err(Error::shape(format!(
            "reconstruction {:?} vs original {:?}",
            reconstruction.dims(),
            original.dims()
        )));
    }
    finite(logits, "answer logits")?;
    finite(targets, "answer targets")?;
    finite(reconstruction, "reconstruction")?;
    finite(original, "original image")?;
    let cls = classification_loss(logits, targets)?;
    let rec = reconstruction_loss(reconstruction, original)?;
    let total = (&cls + &rec)?;
    let cls_loss = cls.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    let rec_loss = rec.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    Ok(VqaLoss {
        total,
        report: LossReport {
            cls_loss,
            rec_loss,
            vqa_loss: cls_loss + rec_loss,
        },
    })
}

/// One-hot rows for `indices` over `classes`; `None` rows stay all-zero.
pub fn one_hot(indices: &[Option<usize>], classes: usize) -> Result<Tensor> {
    let mut data = vec![0f32; indices.len() * classes];
    for (row, idx) in indices.iter().enumerate() {
        if let Some(i) = idx {
            if *i >= classes {
                return Err(Error::shape(format!("answer index {i} outside {classes} classes")));
            }
            data[row * classes + i] = 1.0;
        }
    }
    Ok(Tensor::from_vec(
        data,
        (indices.len(), classes),
        &candle_core::Device::Cpu,
    )?)
}
