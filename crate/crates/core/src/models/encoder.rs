use rand::Rng;

use super::config::{EncoderConfig, INPUT_CHANNELS};
use crate::nn::{BatchNorm, Conv2d, Float, Init, Linear, Session, Var};

struct Block {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    shortcut: Option<(Conv2d, BatchNorm)>,
}

impl Block {
    fn forward<T: Float>(&self, s: &mut Session<'_, T>, x: Var) -> Var {
        let h = self.conv1.forward(s, x);
        let h = self.bn1.forward(s, h);
        let h = s.g.relu(h);
        let h = self.conv2.forward(s, h);
        let h = self.bn2.forward(s, h);
        let skip = match &self.shortcut {
            Some((conv, bn)) => {
                let y = conv.forward(s, x);
                bn.forward(s, y)
            }
            None => x,
        };
        let y = s.g.add(h, skip);
        s.g.relu(y)
    }
}

/// Image embedding: stem, residual stages, average pool to a small grid, linear projection.
pub struct Encoder {
    pub config: EncoderConfig,
    stem: Conv2d,
    stem_bn: BatchNorm,
    blocks: Vec<Block>,
    proj: Linear,
}

impl Encoder {
    pub fn new<T: Float, R: Rng>(init: &mut Init<'_, T, R>, config: &EncoderConfig) -> Self {
        let stem = Conv2d::new(init, "encoder.stem", INPUT_CHANNELS, config.stem_width, config.stem_kernel, config.stem_stride);
        let stem_bn = BatchNorm::new(init, "encoder.stem_bn", config.stem_width);
        let mut blocks = Vec::new();
        let mut in_ch = config.stem_width;
        for (si, st) in config.stages.iter().enumerate() {
            for bi in 0..st.blocks {
                let name = format!("encoder.stage{si}.block{bi}");
                let stride = if bi == 0 { st.stride } else { 1 };
                let conv1 = Conv2d::new(init, &format!("{name}.conv1"), in_ch, st.width, 3, stride);
                let bn1 = BatchNorm::new(init, &format!("{name}.bn1"), st.width);
                let conv2 = Conv2d::new(init, &format!("{name}.conv2"), st.width, st.width, 3, 1);
                let bn2 = BatchNorm::new(init, &format!("{name}.bn2"), st.width);
                let shortcut = (stride != 1 || in_ch != st.width).then(|| {
                    (
                        Conv2d::new(init, &format!("{name}.down"), in_ch, st.width, 1, stride),
                        BatchNorm::new(init, &format!("{name}.down_bn"), st.width),
                    )
                });
                blocks.push(Block { conv1, bn1, conv2, bn2, shortcut });
                in_ch = st.width;
            }
        }
        let flat = config.final_width() * config.pool_grid * config.pool_grid;
        let proj = Linear::with_std(init, "encoder.proj", flat, config.embed_dim, (1.0 / flat as f64).sqrt());
        Self {
            config: config.clone(),
            stem,
            stem_bn,
            blocks,
            proj,
        }
    }

    /// `x: [N, 5, S, S] -> [N, embed_dim]`.
    pub fn forward<T: Float>(&self, s: &mut Session<'_, T>, x: Var) -> Var {
        let n = s.g.shape(x)[0];
        let h = self.stem.forward(s, x);
        let h = self.stem_bn.forward(s, h);
        let mut h = s.g.relu(h);
        for b in &self.blocks {
            h = b.forward(s, h);
        }
        let h = s.g.adaptive_avg_pool(h, self.config.pool_grid);
        let flat = s.g.shape(h)[1..].iter().product();
        let h = s.g.reshape(h, vec![n, flat]);
        self.proj.forward(s, h)
    }
}
