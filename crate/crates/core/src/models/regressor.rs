use rand::Rng;

use super::config::RegressorConfig;
use crate::nn::{BatchNorm, Float, Init, Linear, Session, Var};

struct Mlp {
    hidden: Vec<(Linear, BatchNorm)>,
    head: Linear,
}

impl Mlp {
    fn new<T: Float, R: Rng>(init: &mut Init<'_, T, R>, name: &str, in_dim: usize, hidden: &[usize]) -> Self {
        let mut layers = Vec::new();
        let mut d = in_dim;
        for (i, &h) in hidden.iter().enumerate() {
            let lin = Linear::new(init, &format!("{name}.fc{i}"), d, h);
            let bn = BatchNorm::new(init, &format!("{name}.bn{i}"), h);
            layers.push((lin, bn));
            d = h;
        }
        let head = Linear::with_std(init, &format!("{name}.out"), d, 3, 0.1 / (d as f64).sqrt());
        Self { hidden: layers, head }
    }

    fn forward<T: Float>(&self, s: &mut Session<'_, T>, x: Var) -> Var {
        let mut h = x;
        for (lin, bn) in &self.hidden {
            h = lin.forward(s, h);
            h = bn.forward(s, h);
            h = s.g.relu(h);
        }
        self.head.forward(s, h)
    }
}

/// Rotation and translation heads over `[f_prev, f_cur]`.
pub struct Regressor {
    rotation: Mlp,
    translation: Mlp,
    pub in_dim: usize,
}

impl Regressor {
    pub fn new<T: Float, R: Rng>(init: &mut Init<'_, T, R>, config: &RegressorConfig, embed_dim: usize) -> Self {
        Self {
            rotation: Mlp::new(init, "regressor.rotation", 2 * embed_dim, &config.hidden),
            translation: Mlp::new(init, "regressor.translation", 2 * embed_dim, &config.hidden),
            in_dim: 2 * embed_dim,
        }
    }

    /// `f_prev, f_cur: [B, D]` to `(omega [B, 3], (du, dv, s) [B, 3])`.
    pub fn forward<T: Float>(&self, s: &mut Session<'_, T>, f_prev: Var, f_cur: Var) -> (Var, Var) {
        let x = s.g.concat_last(&[f_prev, f_cur]);
        let r = self.rotation.forward(s, x);
        let t = self.translation.forward(s, x);
        (r, t)
    }
}
