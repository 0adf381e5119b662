use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::DEFAULT_CONTEXT_WINDOW;

/// Visual back-end of the dual encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    #[serde(rename = "vit_b32")]
    VitB32,
    Rn50,
    Rn50x4,
}

impl Backbone {
    pub const ALL: [Backbone; 3] = [Backbone::VitB32, Backbone::Rn50, Backbone::Rn50x4];

    /// Native input resolution of the full-size backbone.
    pub fn native_resolution(self) -> usize {
        match self {
            Backbone::VitB32 | Backbone::Rn50 => 224,
            Backbone::Rn50x4 => 288,
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::VitB32 => "vit_b32",
            Backbone::Rn50 => "rn50",
            Backbone::Rn50x4 => "rn50x4",
        })
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vit_b32" => Ok(Backbone::VitB32),
            "rn50" => Ok(Backbone::Rn50),
            "rn50x4" => Ok(Backbone::Rn50x4),
            other => Err(Error::ConfigInvalid(format!("unknown backbone `{other}`"))),
        }
    }
}

/// Full-size architectures, or miniature ones with the same topology for
/// CPU-scale experiments and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelScale {
    #[default]
    Full,
    Tiny,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VisionConfig {
    Vit {
        resolution: usize,
        patch: usize,
        width: usize,
        layers: usize,
        heads: usize,
    },
    ResNet {
        resolution: usize,
        layers: [usize; 4],
        width: usize,
        heads: usize,
    },
}

impl VisionConfig {
    pub fn resolution(&self) -> usize {
        match self {
            VisionConfig::Vit { resolution, .. } | VisionConfig::ResNet { resolution, .. } => *resolution,
        }
    }

    /// Number of visual positions exposed to fusion, including the pooled one.
    pub fn positions(&self) -> usize {
        match self {
            VisionConfig::Vit { resolution, patch, .. } => (resolution / patch).pow(2) + 1,
            VisionConfig::ResNet { resolution, .. } => (resolution / 32).pow(2) + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextConfig {
    pub vocab_size: usize,
    pub context_window: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub backbone: Backbone,
    pub embed_dim: usize,
    pub vision: VisionConfig,
    pub text: TextConfig,
}

impl ClipConfig {
    pub fn new(backbone: Backbone, scale: ModelScale, vocab_size: usize, context_window: usize) -> Self {
        let (embed_dim, vision, text_width, text_heads, text_layers) = match (backbone, scale) {
            (Backbone::VitB32, ModelScale::Full) => (
                512,
                VisionConfig::Vit {
                    resolution: 224,
                    patch: 32,
                    width: 768,
                    layers: 12,
                    heads: 12,
                },
                512,
                8,
                12,
            ),
            (Backbone::Rn50, ModelScale::Full) => (
                1024,
                VisionConfig::ResNet {
                    resolution: 224,
                    layers: [3, 4, 6, 3],
                    width: 64,
                    heads: 32,
                },
                512,
                8,
                12,
            ),
            (Backbone::Rn50x4, ModelScale::Full) => (
                640,
                VisionConfig::ResNet {
                    resolution: 288,
                    layers: [4, 6, 10, 6],
                    width: 80,
                    heads: 40,
                },
                640,
                10,
                12,
            ),
            (Backbone::VitB32, ModelScale::Tiny) => (
                32,
                VisionConfig::Vit {
                    resolution: 64,
                    patch: 32,
                    width: 32,
                    layers: 1,
                    heads: 2,
                },
                32,
                2,
                1,
            ),
            (Backbone::Rn50, ModelScale::Tiny) => (
                32,
                VisionConfig::ResNet {
                    resolution: 64,
                    layers: [1, 1, 1, 1],
                    width: 8,
                    heads: 4,
                },
                32,
                2,
                1,
            ),
            (Backbone::Rn50x4, ModelScale::Tiny) => (
                24,
                VisionConfig::ResNet {
                    resolution: 96,
                    layers: [1, 1, 1, 1],
                    width: 8,
                    heads: 4,
                },
                24,
                2,
                1,
            ),
        };
        Self {
            backbone,
            embed_dim,
            vision,
            text: TextConfig {
                vocab_size,
                context_window,
                width: text_width,
                layers: text_layers,
                heads: text_heads,
            },
        }
    }

    pub fn with_default_window(backbone: Backbone, scale: ModelScale, vocab_size: usize) -> Self {
        Self::new(backbone, scale, vocab_size, DEFAULT_CONTEXT_WINDOW)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        match &self.vision {
            VisionConfig::Vit {
                resolution,
                patch,
                width,
                heads,
                ..
            } => {
                if *patch == 0 || resolution % patch != 0 {
                    return bad(format!("resolution {resolution} not divisible by patch {patch}"));
                }
                if *heads == 0 || width % heads != 0 {
                    return bad(format!("vision width {width} not divisible by {heads} heads"));
                }
            }
            VisionConfig::ResNet {
                resolution,
                width,
                heads,
                ..
            } => {
                if resolution % 32 != 0 {
                    return bad(format!("resolution {resolution} not divisible by 32"));
                }
                if *width % 2 != 0 || *heads == 0 || (width * 32) % heads != 0 {
                    return bad(format!("resnet width {width} incompatible with {heads} heads"));
                }
            }
        }
        if self.text.context_window == 0 || self.text.vocab_size == 0 {
            return bad("text tower needs a positive context window and vocabulary".into());
        }
        if self.text.heads == 0 || !self.text.width.is_multiple_of(self.text.heads) {
            return bad(format!(
                "text width {} not divisible by {} heads",
                self.text.width, self.text.heads
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for b in Backbone::ALL {
            for s in [ModelScale::Full, ModelScale::Tiny] {
                let c = ClipConfig::with_default_window(b, s, 49408);
                c.validate().unwrap();
                if s == ModelScale::Full {
                    assert_eq!(c.vision.resolution(), b.native_resolution());
                }
            }
        }
        assert_eq!(
            ClipConfig::with_default_window(Backbone::Rn50, ModelScale::Full, 10).embed_dim,
            1024
        );
        assert_eq!(
            ClipConfig::with_default_window(Backbone::VitB32, ModelScale::Full, 10)
                .vision
                .positions(),
            50
        );
    }

    #[test]
    fn backbone_names() {
        for b in Backbone::ALL {
            assert_eq!(b.to_string().parse::<Backbone>().unwrap(), b);
            assert_eq!(serde_json::to_string(&b).unwrap(), format!("\"{b}\""));
        }
    }
}
