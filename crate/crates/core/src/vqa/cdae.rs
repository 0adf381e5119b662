//! Convolutional denoising autoencoder over a low-resolution grayscale view.

use candle_core::{Module, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvTranspose2d, Linear, Scope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdaeConfig {
    /// Side of the square single-channel input; divisible by 8.
    pub input_size: usize,
    pub channels: [usize; 3],
    pub code_dim: usize,
    pub noise_sigma: f64,
}

impl Default for CdaeConfig {
    fn default() -> Self {
        Self {
            input_size: 128,
            channels: [16, 32, 64],
            code_dim: 256,
            noise_sigma: 0.1,
        }
    }
}

impl CdaeConfig {
    pub fn tiny() -> Self {
        Self {
            input_size: 32,
            channels: [4, 8, 8],
            code_dim: 16,
            noise_sigma: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(8) {
            return Err(Error::ConfigInvalid(format!(
                "autoencoder input size {} must be a positive multiple of 8",
                self.input_size
            )));
        }
        if self.channels.contains(&0) || self.code_dim == 0 {
            return Err(Error::ConfigInvalid("autoencoder widths must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::ConfigInvalid("noise_sigma must be a finite value ≥ 0".into()));
        }
        Ok(())
    }
}

/// Clean input, the corrupted copy that was actually encoded, and the
/// decoder's reconstruction. In evaluation mode `noised_input` equals
/// `original`.
#[derive(Debug, Clone)]
pub struct ReconstructionPair {
    pub original: Tensor,
    pub noised_input: Tensor,
    pub reconstruction: Tensor,
}

#[derive(Debug, Clone)]
pub struct CdaeOutput {
    /// `[N, code_dim]`.
    pub encoding: Tensor,
    pub images: ReconstructionPair,
}

#[derive(Debug, Clone)]
pub struct Cdae {
    cfg: CdaeConfig,
    enc: [Conv2d; 3],
    enc_fc: Linear,
    dec_fc: Linear,
    dec: [ConvTranspose2d; 3],
}

impl Cdae {
    pub fn new(scope: &Scope, cfg: &CdaeConfig) -> Result<Self> {
        cfg.validate()?;
        let [c1, c2, c3] = cfg.channels;
        let side = cfg.input_size / 8;
        let flat = c3 * side * side;
        Ok(Self {
            cfg: cfg.clone(),
            enc: [
                Conv2d::new(&scope.pp("enc.0"), 1, c1, 4, 2, 1, true)?,
                Conv2d::new(&scope.pp("enc.1"), c1, c2, 4, 2, 1, true)?,
                Conv2d::new(&scope.pp("enc.2"), c2, c3, 4, 2, 1, true)?,
            ],
            enc_fc: Linear::new(&scope.pp("enc_fc"), flat, cfg.code_dim)?,
            dec_fc: Linear::new(&scope.pp("dec_fc"), cfg.code_dim, flat)?,
            dec: [
                ConvTranspose2d::new(&scope.pp("dec.0"), c3, c2, 4, 2, 1)?,
                ConvTranspose2d::new(&scope.pp("dec.1"), c2, c1, 4, 2, 1)?,
                ConvTranspose2d::new(&scope.pp("dec.2"), c1, 1, 4, 2, 1)?,
            ],
        })
    }

    pub fn config(&self) -> &CdaeConfig {
        &self.cfg
    }

    pub fn code_dim(&self) -> usize {
        self.cfg.code_dim
    }

    pub fn encode(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mut h = x.clone();
        for conv in &self.enc {
            h = conv.forward(&h)?.relu()?;
        }
        self.enc_fc.forward(&h.flatten_from(1)?)
    }

    pub fn decode(&self, code: &Tensor) -> candle_core::Result<Tensor> {
        let n = code.dim(0)?;
        let side = self.cfg.input_size / 8;
        let mut h = self
            .dec_fc
            .forward(code)?
            .relu()?
            .reshape((n, self.cfg.channels[2], side, side))?;
        for (i, deconv) in self.dec.iter().enumerate() {
            h = deconv.forward(&h)?;
            if i + 1 < self.dec.len() {
                h = h.relu()?;
            }
        }
        candle_nn::ops::sigmoid(&h)
    }

    /// Encodes `image: [N, 1, S, S]` and reconstructs it. Training mode adds
    /// `N(0, noise_sigma²)` noise drawn from `rng` before encoding; evaluation
    /// mode never touches `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        image: &Tensor,
        mode: Mode,
        noise_sigma: f64,
        rng: &mut R,
    ) -> Result<CdaeOutput> {
        let s = self.cfg.input_size;
        match image.dims() {
            [_, 1, h, w] if *h == s && *w == s => {}
            dims => {
                return Err(Error::shape(format!(
                    "autoencoder expects [N, 1, {s}, {s}], got {dims:?}"
                )))
            }
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::ConfigInvalid(format!("noise_sigma {noise_sigma} must be ≥ 0")));
        }
        let noised = match mode {
            Mode::Train if noise_sigma > 0.0 => {
                let dist = Normal::new(0.0f32, noise_sigma as f32).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
                let noise: Vec<f32> = (0..image.elem_count()).map(|_| dist.sample(rng)).collect();
                let noise = Tensor::from_vec(noise, image.shape(), image.device())?.to_dtype(image.dtype())?;
                (image + noise)?
            }
            _ => image.clone(),
        };
        let encoding = self.encode(&noised)?;
        let reconstruction = self.decode(&encoding)?;
        Ok(CdaeOutput {
            encoding,
            images: ReconstructionPair {
                original: image.clone(),
                noised_input: noised,
                reconstruction,
            },
        })
    }
}
