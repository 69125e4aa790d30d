use serde::{Deserialize, Serialize};

use crate::attention::{AttentionKind, BlockWeights};
use crate::error::{Error, Result};
use crate::masking::MaskStrategy;
use crate::patches::PatchGridSpec;

/// Label count of the reference classifier used for parameter accounting.
pub const AUDIOSET_CLASSES: usize = 527;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub variant: String,
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
}

impl EncoderConfig {
    pub fn vit_s() -> Self {
        Self::custom("vit-s", 12, 384, 6)
    }

    pub fn vit_b() -> Self {
        Self::custom("vit-b", 12, 768, 12)
    }

    pub fn vit_l() -> Self {
        Self::custom("vit-l", 24, 1024, 16)
    }

    pub fn custom(variant: &str, depth: usize, dim: usize, heads: usize) -> Self {
        EncoderConfig {
            variant: variant.into(),
            depth,
            dim,
            heads,
        }
    }

    pub fn from_variant(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace('_', "-").as_str() {
            "vit-s" | "s" => Ok(Self::vit_s()),
            "vit-b" | "b" => Ok(Self::vit_b()),
            "vit-l" | "l" => Ok(Self::vit_l()),
            other => Err(Error::Config(format!("unknown encoder variant {other:?}"))),
        }
    }

    /// Trainable encoder scalars (patch projection, blocks, final norm) plus
    /// a linear classifier over `n_classes`.
    pub fn param_count(&self, patch_dim: usize, n_classes: usize) -> usize {
        let d = self.dim;
        (patch_dim * d + d)
            + self.depth * BlockWeights::param_count(d)
            + 2 * d
            + (d * n_classes + n_classes)
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::vit_b()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub attention: AttentionKind,
    /// Local window in tokens (time, frequency).
    pub window: (usize, usize),
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            depth: 16,
            dim: 512,
            heads: 16,
            attention: AttentionKind::Local,
            window: (4, 4),
        }
    }
}

impl DecoderConfig {
    pub fn layer_count(&self) -> usize {
        match self.attention {
            AttentionKind::Hybrid { local, global } => local + global,
            _ => self.depth,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Objective {
    /// Masked MSE only.
    Reconstruction,
    /// InfoNCE only.
    Contrastive,
    /// `l_r + alpha·l_c`.
    Combined { alpha: f64 },
}

impl Default for Objective {
    fn default() -> Self {
        Objective::Reconstruction
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskingDefaults {
    pub strategy: MaskStrategy,
    pub ratio: f64,
    pub ratio_t: f64,
    pub ratio_f: f64,
}

impl Default for MaskingDefaults {
    fn default() -> Self {
        MaskingDefaults {
            strategy: MaskStrategy::Unstructured,
            ratio: 0.8,
            ratio_t: 0.3,
            ratio_f: 0.3,
        }
    }
}

impl MaskingDefaults {
    /// `(ratio_t, ratio_f)` in the form `plan_for` expects.
    pub fn ratios(&self) -> (f64, f64) {
        match self.strategy {
            MaskStrategy::Unstructured => (self.ratio, 0.0),
            _ => (self.ratio_t, self.ratio_f),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Absent for fine-tuned classifiers, whose decoder is discarded.
    pub decoder: Option<DecoderConfig>,
    pub n_classes: Option<usize>,
    pub frames: usize,
    pub bins: usize,
    pub patch: (usize, usize),
    pub stride: (usize, usize),
    pub norm_pix_loss: bool,
    pub masking: MaskingDefaults,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::vit_b(),
            decoder: Some(DecoderConfig::default()),
            n_classes: None,
            frames: 1024,
            bins: 128,
            patch: (16, 16),
            stride: (16, 16),
            norm_pix_loss: true,
            masking: MaskingDefaults::default(),
        }
    }
}

impl ModelConfig {
    /// Small model for desk-scale runs: 64×32 input, 8×8 patches (8×4 grid),
    /// encoder 2×64, decoder 2×32 with 4×4 shifted windows.
    pub fn toy() -> Self {
        ModelConfig {
            encoder: EncoderConfig::custom("toy", 2, 64, 4),
            decoder: Some(DecoderConfig {
                depth: 2,
                dim: 32,
                heads: 4,
                attention: AttentionKind::Local,
                window: (4, 4),
            }),
            n_classes: None,
            frames: 64,
            bins: 32,
            patch: (8, 8),
            stride: (8, 8),
            norm_pix_loss: true,
            masking: MaskingDefaults::default(),
        }
    }

    pub fn grid(&self) -> Result<PatchGridSpec> {
        PatchGridSpec::new(self.frames, self.bins, self.patch, self.stride)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        let check = |what: &str, depth: usize, dim: usize, heads: usize| {
            if depth == 0 || dim == 0 || heads == 0 || dim % heads != 0 {
                return Err(Error::Config(format!(
                    "{what}: depth {depth}, width {dim}, {heads} heads (heads must divide width)"
                )));
            }
            if dim % 4 != 0 {
                return Err(Error::Config(format!(
                    "{what}: width {dim} must be divisible by 4"
                )));
            }
            Ok(())
        };
        let e = &self.encoder;
        check("encoder", e.depth, e.dim, e.heads)?;
        if let Some(d) = &self.decoder {
            check("decoder", d.layer_count(), d.dim, d.heads)?;
            if d.window.0 == 0 || d.window.1 == 0 {
                return Err(Error::Config(
                    "decoder window extents must be positive".into(),
                ));
            }
        }
        if self.n_classes == Some(0) {
            return Err(Error::Config("classifier needs at least one class".into()));
        }
        if grid.n_patches() < 2 && self.decoder.is_some() {
            return Err(Error::Config(
                "pre-training needs at least two patches".into(),
            ));
        }
        Ok(())
    }
}
