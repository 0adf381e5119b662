use std::path::Path;

use candle_core::{Device, Tensor};
use image::imageops::FilterType;
use image::{DynamicImage, GenericImageView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel normalization applied to pixels scaled into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    /// Statistics the pretrained dual-encoder backbones were trained with.
    pub const CLIP: Normalization = Normalization {
        mean: [0.481_454_66, 0.457_827_5, 0.408_210_73],
        std: [0.268_629_5, 0.261_302_6, 0.275_777_1],
    };

    pub const IDENTITY: Normalization = Normalization {
        mean: [0.0; 3],
        std: [1.0; 3],
    };
}

fn decode(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::DecodeFailure {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Decodes an image, resizes its shorter side to `resolution`, center-crops to
/// `resolution x resolution` and normalizes into a `[3, R, R]` tensor.
/// Grayscale inputs are replicated across the three channels.
pub fn load_and_preprocess_image(path: &Path, resolution: usize, norm: Normalization) -> Result<Tensor> {
    if resolution == 0 {
        return Err(Error::ConfigInvalid("target resolution must be positive".into()));
    }
    let img = decode(path)?;
    let (w, h) = img.dimensions();
    let r = resolution as u32;
    let (nw, nh) = if w <= h {
        (
            r,
            ((h as u64 * r as u64 + w as u64 / 2) / w as u64).max(r as u64) as u32,
        )
    } else {
        (
            ((w as u64 * r as u64 + h as u64 / 2) / h as u64).max(r as u64) as u32,
            r,
        )
    };
    let resized = if (nw, nh) == (w, h) {
        img.to_rgb8()
    } else {
        image::imageops::resize(&img.to_rgb8(), nw, nh, FilterType::CatmullRom)
    };
    let left = (nw - r) / 2;
    let top = (nh - r) / 2;
    let crop = image::imageops::crop_imm(&resized, left, top, r, r).to_image();

    let plane = resolution * resolution;
    let mut data = vec![0f32; 3 * plane];
    for (x, y, px) in crop.enumerate_pixels() {
        let offset = y as usize * resolution + x as usize;
        for c in 0..3 {
            let v = px.0[c] as f32 / 255.0;
            data[c * plane + offset] = (v - norm.mean[c]) / norm.std[c];
        }
    }
    Ok(Tensor::from_vec(data, (3, resolution, resolution), &Device::Cpu)?)
}

/// Single-channel `[1, R, R]` tensor in `[0, 1]`, resized without cropping.
/// This is the autoencoder branch input.
pub fn load_grayscale(path: &Path, resolution: usize) -> Result<Tensor> {
    if resolution == 0 {
        return Err(Error::ConfigInvalid("target resolution must be positive".into()));
    }
    let gray = decode(path)?.to_luma8();
    let r = resolution as u32;
    let gray = if gray.dimensions() == (r, r) {
        gray
    } else {
        image::imageops::resize(&gray, r, r, FilterType::Triangle)
    };
    let data: Vec<f32> = gray.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
    Ok(Tensor::from_vec(data, (1, resolution, resolution), &Device::Cpu)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb, RgbImage};

    #[test]
    fn grayscale_replicates_channels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        GrayImage::from_fn(512, 512, |x, y| Luma([((x * 7 + y * 3) % 256) as u8]))
            .save(&path)
            .unwrap();
        let t = load_and_preprocess_image(&path, 224, Normalization::IDENTITY).unwrap();
        assert_eq!(t.dims(), &[3, 224, 224]);
        let c0 = t.get(0).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let c2 = t.get(2).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(c0, c2);
    }

    #[test]
    fn mean_valued_image_normalizes_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        RgbImage::from_pixel(40, 30, Rgb([128, 64, 200])).save(&path).unwrap();
        let norm = Normalization {
            mean: [128.0 / 255.0, 64.0 / 255.0, 200.0 / 255.0],
            std: [0.2, 0.3, 0.4],
        };
        let t = load_and_preprocess_image(&path, 16, norm).unwrap();
        let v = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn repeated_loads_are_bitwise_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.png");
        RgbImage::from_fn(70, 50, |x, y| {
            Rgb([(x * 3) as u8, (y * 5) as u8, ((x * y) % 255) as u8])
        })
        .save(&path)
        .unwrap();
        let a = load_and_preprocess_image(&path, 32, Normalization::CLIP).unwrap();
        let b = load_and_preprocess_image(&path, 32, Normalization::CLIP).unwrap();
        let a: Vec<u32> = a
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap()
            .iter()
            .map(|f| f.to_bits())
            .collect();
        let b: Vec<u32> = b
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap()
            .iter()
            .map(|f| f.to_bits())
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn undecodable_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        std::fs::write(&path, b"not an image").unwrap();
        assert!(matches!(
            load_and_preprocess_image(&path, 8, Normalization::CLIP),
            Err(Error::DecodeFailure { .. })
        ));
        assert!(matches!(load_grayscale(&path, 8), Err(Error::DecodeFailure { .. })));
    }
}
