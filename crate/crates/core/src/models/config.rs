use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;

/// One residual stage of the image encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub width: usize,
    pub blocks: usize,
    pub stride: usize,
}

/// Residual convolutional encoder producing one embedding per image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Square network input side, px.
    pub input_size: usize,
    pub embed_dim: usize,
    pub stem_width: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stages: Vec<StageConfig>,
    /// Spatial grid kept by the final average pool before projection.
    pub pool_grid: usize,
}

/// RGB plus two normalized pixel-coordinate channels.
pub const INPUT_CHANNELS: usize = 5;

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            embed_dim: 256,
            stem_width: 16,
            stem_kernel: 3,
            stem_stride: 1,
            stages: vec![
                StageConfig { width: 16, blocks: 1, stride: 2 },
                StageConfig { width: 32, blocks: 1, stride: 2 },
                StageConfig { width: 64, blocks: 1, stride: 2 },
            ],
            pool_grid: 2,
        }
    }
}

impl EncoderConfig {
    /// ResNet-18-sized backbone at 224 px with a 256-dimensional embedding.
    pub fn full_scale() -> Self {
        let stage = |width, stride| StageConfig { width, blocks: 2, stride };
        Self {
            input_size: 224,
            embed_dim: 256,
            stem_width: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stages: vec![stage(64, 2), stage(128, 2), stage(256, 2), stage(512, 2)],
            pool_grid: 1,
        }
    }

    /// Multiplies every channel width by `factor`, keeping at least one channel.
    pub fn scaled(mut self, factor: f64) -> Self {
        let s = |w: usize| ((w as f64 * factor).round() as usize).max(1);
        self.stem_width = s(self.stem_width);
        for st in &mut self.stages {
            st.width = s(st.width);
        }
        self
    }

    /// Side of the feature map entering the pool.
    pub fn feature_side(&self) -> usize {
        let down = |n: usize, stride: usize| (n - 1) / stride + 1;
        self.stages
            .iter()
            .fold(down(self.input_size, self.stem_stride), |n, st| down(n, st.stride))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: &str| Err(Error::invalid("encoder", r));
        if self.embed_dim < 8 {
            return bad("embedding dim must be >= 8");
        }
        if self.input_size == 0 || self.stem_width == 0 || self.stem_kernel == 0 || self.stem_stride == 0 {
            return bad("sizes must be positive");
        }
        if self.stages.iter().any(|s| s.width == 0 || s.blocks == 0 || s.stride == 0) {
            return bad("stage widths, block counts and strides must be positive");
        }
        if self.pool_grid == 0 || self.pool_grid > self.feature_side() {
            return bad("pool grid larger than the final feature map");
        }
        Ok(())
    }

    pub fn final_width(&self) -> usize {
        self.stages.last().map_or(self.stem_width, |s| s.width)
    }
}

/// Self-attention encoder over per-frame embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub ff_width: usize,
    /// Longest window the learned positional embedding covers.
    pub max_len: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            layers: 1,
            heads: 8,
            ff_width: 512,
            max_len: 16,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self, embed_dim: usize) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.ff_width == 0 || self.max_len < 2 {
            return Err(Error::invalid("transformer", "layers, heads and ff width must be positive, max_len >= 2"));
        }
        if embed_dim % self.heads != 0 {
            return Err(Error::invalid(
                "transformer",
                format!("embedding dim {embed_dim} not divisible by {} heads", self.heads),
            ));
        }
        Ok(())
    }
}

/// Two MLP heads over the concatenated embeddings of the last two frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressorConfig {
    pub hidden: Vec<usize>,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![800, 400, 200],
        }
    }
}

impl RegressorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("regressor", "need at least one non-empty hidden layer"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    TwoFrame,
    MultiFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Frames per window; always 2 for the two-frame model.
    pub window: usize,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub transformer: TransformerConfig,
    #[serde(default)]
    pub regressor: RegressorConfig,
}

impl ModelConfig {
    pub fn two_frame() -> Self {
        Self {
            kind: ModelKind::TwoFrame,
            window: 2,
            encoder: EncoderConfig::default(),
            transformer: TransformerConfig::default(),
            regressor: RegressorConfig::default(),
        }
    }

    pub fn multi_frame(window: usize) -> Self {
        Self {
            kind: ModelKind::MultiFrame,
            window,
            ..Self::two_frame()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.regressor.validate()?;
        match self.kind {
            ModelKind::TwoFrame if self.window != 2 => {
                Err(Error::invalid("window", "the two-frame model uses exactly 2 frames"))
            }
            ModelKind::MultiFrame => {
                self.transformer.validate(self.encoder.embed_dim)?;
                if self.window < 2 || self.window > self.transformer.max_len {
                    return Err(Error::invalid(
                        "window",
                        format!("window {} outside [2, {}]", self.window, self.transformer.max_len),
                    ));
                }
                Ok(())
            }
            ModelKind::TwoFrame => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Weight of the depth term in the translation loss.
    pub lambda: f64,
    pub adam: AdamConfig,
    /// Learning rate at the last step as a fraction of `adam.lr`, reached by linear
    /// decay; 1 keeps it constant.
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            steps: 1000,
            seed: 0,
            lambda: 1.0,
            adam: AdamConfig::default(),
            final_lr_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size", "batch normalization needs at least 2 samples"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::invalid("lambda", "must be > 0"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::invalid("lr", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::invalid("final_lr_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let progress = step as f64 / self.steps.max(1) as f64;
        self.adam.lr * (1.0 - (1.0 - self.final_lr_fraction) * progress)
    }
}
