use rand::Rng;

use super::config::TransformerConfig;
use crate::nn::{Float, Init, LayerNorm, Linear, ParamId, Session, Var};

struct EncoderLayer {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

/// Pre-norm self-attention encoder with learned positional embeddings. No dropout.
pub struct Transformer {
    pub config: TransformerConfig,
    pub dim: usize,
    pub pos: ParamId,
    layers: Vec<EncoderLayer>,
}

impl Transformer {
    pub fn new<T: Float, R: Rng>(init: &mut Init<'_, T, R>, config: &TransformerConfig, dim: usize) -> Self {
        let pos = init.normal("transformer.pos", vec![config.max_len, dim], 0.02);
        let xavier = (1.0 / dim as f64).sqrt();
        let layers = (0..config.layers)
            .map(|i| {
                let n = |p: &str| format!("transformer.layer{i}.{p}");
                EncoderLayer {
                    ln1: LayerNorm::new(init, &n("ln1"), dim),
                    q: Linear::with_std(init, &n("q"), dim, dim, xavier),
                    k: Linear::with_std(init, &n("k"), dim, dim, xavier),
                    v: Linear::with_std(init, &n("v"), dim, dim, xavier),
                    out: Linear::with_std(init, &n("out"), dim, dim, xavier),
                    ln2: LayerNorm::new(init, &n("ln2"), dim),
                    ff1: Linear::new(init, &n("ff1"), dim, config.ff_width),
                    ff2: Linear::with_std(init, &n("ff2"), config.ff_width, dim, (1.0 / config.ff_width as f64).sqrt()),
                }
            })
            .collect();
        Self {
            config: *config,
            dim,
            pos,
            layers,
        }
    }

    /// `x: [B, K, D] -> [B, K, D]`; panics if `K > max_len` (checked by the caller).
    pub fn forward<T: Float>(&self, s: &mut Session<'_, T>, x: Var) -> Var {
        let (b, k, d) = {
            let sh = s.g.shape(x);
            (sh[0], sh[1], sh[2])
        };
        let pos = s.p(self.pos);
        let pos = s.g.narrow_first(pos, 0, k);
        let mut h = s.g.add_trailing(x, pos);
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        for layer in &self.layers {
            let flat = s.g.reshape(h, vec![b * k, d]);
            let n1 = layer.ln1.forward(s, flat);
            let split = |s: &mut Session<'_, T>, lin: &Linear| {
                let y = lin.forward(s, n1);
                let y = s.g.reshape(y, vec![b, k, heads, dh]);
                let y = s.g.permute(y, &[0, 2, 1, 3]);
                s.g.reshape(y, vec![b * heads, k, dh])
            };
            let q = split(s, &layer.q);
            let kk = split(s, &layer.k);
            let v = split(s, &layer.v);
            let scores = s.g.bmm(q, kk, true);
            let scores = s.g.scale(scores, scale);
            let attn = s.g.softmax_last(scores);
            let ctx = s.g.bmm(attn, v, false);
            let ctx = s.g.reshape(ctx, vec![b, heads, k, dh]);
            let ctx = s.g.permute(ctx, &[0, 2, 1, 3]);
            let ctx = s.g.reshape(ctx, vec![b * k, d]);
            let a = layer.out.forward(s, ctx);
            let flat = s.g.add(flat, a);
            let n2 = layer.ln2.forward(s, flat);
            let m = layer.ff1.forward(s, n2);
            let m = s.g.relu(m);
            let m = layer.ff2.forward(s, m);
            let flat = s.g.add(flat, m);
            h = s.g.reshape(flat, vec![b, k, d]);
        }
        h
    }

    /// Zeroes every attention output and feed-forward output weight and bias.
    pub fn zero_residual_branches<T: Float>(&self, store: &mut crate::nn::ParamStore<T>) {
        for l in &self.layers {
            for id in [l.out.w, l.out.b, l.ff2.w, l.ff2.b] {
                store.param_mut(id).data.iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }
}
