//! Bilinear attention fusion of visual positions with a question vector.
//!
//! With `a = relu(A v_k)` and `b = relu(B q)`, glimpse `g` scores position `k`
//! as `h_g · (a ⊙ b) + c_g` and normalizes over `k`. Each glimpse then pools
//! `relu(V_g v_k) ⊙ relu(Q_g q)` under its attention and adds a projection of
//! the result to the running question vector. The attention is computed once
//! from the initial question vector.

use candle_core::{Module, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_last, Init, Linear, Scope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanConfig {
    pub glimpses: usize,
    pub joint_dim: usize,
}

impl Default for BanConfig {
    fn default() -> Self {
        Self {
            glimpses: 2,
            joint_dim: 1024,
        }
    }
}

/// `weights: [N, G, K]`; every `[n, g, :]` row is a distribution.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub weights: Tensor,
}

#[derive(Debug, Clone)]
pub struct Glimpse {
    pub v_net: Linear,
    pub q_net: Linear,
    pub proj: Linear,
}

#[derive(Debug, Clone)]
pub struct BanFusion {
    v_att: Linear,
    q_att: Linear,
    h_mat: Tensor,
    h_bias: Tensor,
    glimpses: Vec<Glimpse>,
    visual_dim: usize,
    question_dim: usize,
}

impl BanFusion {
    pub fn new(scope: &Scope, visual_dim: usize, question_dim: usize, cfg: &BanConfig) -> Result<Self> {
        if cfg.glimpses == 0 || cfg.joint_dim == 0 {
            return Err(Error::ConfigInvalid(
                "fusion needs at least one glimpse and a positive joint dim".into(),
            ));
        }
        let j = cfg.joint_dim;
        let glimpses = (0..cfg.glimpses)
            .map(|g| {
                let s = scope.pp(format!("glimpse.{g}"));
                Ok(Glimpse {
                    v_net: Linear::new(&s.pp("v_net"), visual_dim, j)?,
                    q_net: Linear::new(&s.pp("q_net"), question_dim, j)?,
                    proj: Linear::new(&s.pp("proj"), j, question_dim)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            v_att: Linear::new(&scope.pp("v_att"), visual_dim, j)?,
            q_att: Linear::new(&scope.pp("q_att"), question_dim, j)?,
            h_mat: scope.param(
                "h_mat",
                (cfg.glimpses, j),
                Init::Normal {
                    std: 1.0 / (j as f64).sqrt(),
                },
            )?,
            h_bias: scope.param("h_bias", cfg.glimpses, Init::Const(0.0))?,
            glimpses,
            visual_dim,
            question_dim,
        })
    }

    pub fn glimpse_count(&self) -> usize {
        self.glimpses.len()
    }

    pub fn output_dim(&self) -> usize {
        self.question_dim
    }

    pub fn attention_params(&self) -> (&Linear, &Linear, &Tensor, &Tensor) {
        (&self.v_att, &self.q_att, &self.h_mat, &self.h_bias)
    }

    pub fn glimpse(&self, g: usize) -> &Glimpse {
        &self.glimpses[g]
    }

    /// `visual: [N, K, D_v]`, `question: [N, H]` → (`[N, H]`, attention).
    pub fn forward(&self, visual: &Tensor, question: &Tensor) -> Result<(Tensor, AttentionMap)> {
        let (n, k, dv) = visual
            .dims3()
            .map_err(|_| Error::shape(format!("visual {:?}", visual.dims())))?;
        let (nq, dq) = question
            .dims2()
            .map_err(|_| Error::shape(format!("question {:?}", question.dims())))?;
        if k == 0 || n != nq || dv != self.visual_dim || dq != self.question_dim {
            return Err(Error::shape(format!(
                "visual {:?} / question {:?} against fusion dims ({}, {})",
                visual.dims(),
                question.dims(),
                self.visual_dim,
                self.question_dim
            )));
        }
        let a = self.v_att.forward(visual)?.relu()?; // [N, K, J]
        let b = self.q_att.forward(question)?.relu()?.unsqueeze(1)?; // [N, 1, J]
        let joint = a.broadcast_mul(&b)?; // [N, K, J]
        let logits = joint
            .broadcast_matmul(&self.h_mat.t()?)? // [N, K, G]
            .transpose(1, 2)?
            .broadcast_add(&self.h_bias.unsqueeze(1)?)?; // [N, G, K]
        let att = softmax_last(&logits.contiguous()?)?;

        let mut q = question.clone();
        for (g, gl) in self.glimpses.iter().enumerate() {
            let v = gl.v_net.forward(visual)?.relu()?; // [N, K, J]
            let pooled = att.narrow(1, g, 1)?.matmul(&v)?.squeeze(1)?; // [N, J]
            let qg = gl.q_net.forward(question)?.relu()?;
            q = (q + gl.proj.forward(&(pooled * qg)?)?)?;
        }
        Ok((q, AttentionMap { weights: att }))
    }
}

/// Row sums of every glimpse, for normalization checks.
pub fn attention_row_sums(map: &AttentionMap) -> Result<Vec<f64>> {
    Ok(map
        .weights
        .sum(D::Minus1)?
        .flatten_all()?
        .to_dtype(candle_core::DType::F64)?
        .to_vec1()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::Device;

    fn fusion(store: &ParamStore, g: usize) -> BanFusion {
        BanFusion::new(
            &store.root().pp("ban"),
            5,
            4,
            &BanConfig {
                glimpses: g,
                joint_dim: 6,
            },
        )
        .unwrap()
    }

    #[test]
    fn single_position_gets_all_attention() {
        let store = ParamStore::new(2, &Device::Cpu);
        let ban = fusion(&store, 2);
        let v = Tensor::randn(0f32, 1.0, (3, 1, 5), &Device::Cpu).unwrap();
        let q = Tensor::randn(0f32, 1.0, (3, 4), &Device::Cpu).unwrap();
        let (fused, att) = ban.forward(&v, &q).unwrap();
        assert_eq!(fused.dims(), &[3, 4]);
        for w in att.weights.flatten_all().unwrap().to_vec1::<f32>().unwrap() {
            assert_eq!(w, 1.0);
        }
    }

    #[test]
    fn glimpse_rows_are_distributions() {
        let store = ParamStore::new(2, &Device::Cpu);
        let ban = fusion(&store, 2);
        let v = Tensor::randn(0f32, 3.0, (2, 5, 5), &Device::Cpu).unwrap();
        let q = Tensor::randn(0f32, 3.0, (2, 4), &Device::Cpu).unwrap();
        let (_, att) = ban.forward(&v, &q).unwrap();
        assert_eq!(att.weights.dims(), &[2, 2, 5]);
        for s in attention_row_sums(&att).unwrap() {
            assert!((s - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn mismatched_dims() {
        let store = ParamStore::new(2, &Device::Cpu);
        let ban = fusion(&store, 1);
        let v = Tensor::zeros((1, 0, 5), candle_core::DType::F32, &Device::Cpu).unwrap();
        let q = Tensor::zeros((1, 4), candle_core::DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(ban.forward(&v, &q), Err(Error::ShapeMismatch(_))));
        let v = Tensor::zeros((1, 2, 3), candle_core::DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(ban.forward(&v, &q), Err(Error::ShapeMismatch(_))));
    }
}
