use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, ModelKind, INPUT_CHANNELS};
use super::encoder::Encoder;
use super::regressor::Regressor;
use super::transformer::Transformer;
use crate::error::{Error, Result};
use crate::geometry::MotionCode;
use crate::nn::{Float, Init, ParamStore, Session, Tensor, Var};

/// Two-frame or multi-frame relative-motion predictor.
pub struct MotionModel<T> {
    pub config: ModelConfig,
    pub seed: u64,
    pub store: ParamStore<T>,
    encoder: Encoder,
    transformer: Option<Transformer>,
    regressor: Regressor,
}

/// Losses of one batch; `total = rotation + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub rotation: f64,
    pub translation: f64,
}

/// Appends two coordinate channels (`x`, `y` in `[-1, 1]`) to a planar RGB crop.
pub fn with_coords<T: Float>(rgb: &[f32], size: usize, out: &mut Vec<T>) {
    assert_eq!(rgb.len(), 3 * size * size, "crop must be 3 x size x size");
    out.extend(rgb.iter().map(|&v| T::of(v as f64)));
    let c = |i: usize| T::of((i as f64 + 0.5) / size as f64 * 2.0 - 1.0);
    for _ in 0..size {
        for j in 0..size {
            out.push(c(j));
        }
    }
    for i in 0..size {
        for _ in 0..size {
            out.push(c(i));
        }
    }
}

/// Stacks windows of planar RGB crops into `[B, K, 5, S, S]`.
pub fn batch_tensor<T: Float>(windows: &[&[Vec<f32>]], size: usize) -> Tensor<T> {
    let k = windows.first().map_or(0, |w| w.len());
    let mut data = Vec::with_capacity(windows.len() * k * INPUT_CHANNELS * size * size);
    for w in windows {
        assert_eq!(w.len(), k, "windows must share one length");
        for crop in w.iter() {
            with_coords(crop, size, &mut data);
        }
    }
    Tensor::new(vec![windows.len(), k, INPUT_CHANNELS, size, size], data)
}

impl<T: Float> MotionModel<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };
        let encoder = Encoder::new(&mut init, &config.encoder);
        let transformer = match config.kind {
            ModelKind::MultiFrame => Some(Transformer::new(&mut init, &config.transformer, config.encoder.embed_dim)),
            ModelKind::TwoFrame => None,
        };
        let regressor = Regressor::new(&mut init, &config.regressor, config.encoder.embed_dim);
        Ok(Self {
            config: config.clone(),
            seed,
            store,
            encoder,
            transformer,
            regressor,
        })
    }

    pub fn transformer(&self) -> Option<&Transformer> {
        self.transformer.as_ref()
    }

    /// Largest window the model accepts.
    pub fn capacity(&self) -> usize {
        match self.config.kind {
            ModelKind::TwoFrame => 2,
            ModelKind::MultiFrame => self.config.transformer.max_len,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        let s = self.config.encoder.input_size;
        if x.ndim() != 5 || x.shape[2..] != [INPUT_CHANNELS, s, s] {
            return Err(Error::domain(format!(
                "expected input [B, K, {INPUT_CHANNELS}, {s}, {s}], got {:?}",
                x.shape
            )));
        }
        let (b, k) = (x.shape[0], x.shape[1]);
        if b == 0 {
            return Err(Error::domain("empty batch"));
        }
        if k < 2 || k > self.capacity() {
            return Err(Error::domain(format!("window of {k} frames outside [2, {}]", self.capacity())));
        }
        Ok((b, k))
    }

    fn embed(encoder: &Encoder, s: &mut Session<'_, T>, x: Var, b: usize, k: usize) -> Var {
        let sz = encoder.config.input_size;
        let flat = s.g.reshape(x, vec![b * k, INPUT_CHANNELS, sz, sz]);
        let f = encoder.forward(s, flat);
        s.g.reshape(f, vec![b, k, encoder.config.embed_dim])
    }

    /// Full forward pass; returns `(omega, translation)` nodes of shape `[B, 3]`.
    fn forward(&mut self, train: bool, x: &Tensor<T>) -> Result<(Session<'_, T>, Var, Var)> {
        let (b, k) = self.check_input(x)?;
        if train && b < 2 {
            return Err(Error::domain("training batches need at least 2 windows"));
        }
        let Self {
            store,
            encoder,
            transformer,
            regressor,
            ..
        } = self;
        let mut s = store.session(train);
        let input = s.g.constant(x.clone());
        let mut f = Self::embed(encoder, &mut s, input, b, k);
        if let Some(tr) = transformer {
            f = tr.forward(&mut s, f);
        }
        let f_prev = s.g.select_axis1(f, k - 2);
        let f_cur = s.g.select_axis1(f, k - 1);
        let (r, t) = regressor.forward(&mut s, f_prev, f_cur);
        Ok((s, r, t))
    }

    /// Evaluation-mode prediction, one code per window.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Vec<MotionCode>> {
        let (s, r, t) = self.forward(false, x)?;
        let (rv, tv) = (&s.g.value(r).data, &s.g.value(t).data);
        let codes = rv
            .chunks(3)
            .zip(tv.chunks(3))
            .map(|(r, t)| MotionCode {
                omega: [r[0].f64(), r[1].f64(), r[2].f64()],
                du: t[0].f64(),
                dv: t[1].f64(),
                s: t[2].f64(),
            })
            .collect();
        Ok(codes)
    }

    /// Per-frame embeddings of `[K, 5, S, S]` images, evaluation mode.
    pub fn embed_frames(&mut self, images: &Tensor<T>) -> Result<Vec<Vec<T>>> {
        let s_ = self.config.encoder.input_size;
        if images.ndim() != 4 || images.shape[1..] != [INPUT_CHANNELS, s_, s_] {
            return Err(Error::domain(format!("expected [K, {INPUT_CHANNELS}, {s_}, {s_}], got {:?}", images.shape)));
        }
        let k = images.shape[0];
        let d = self.config.encoder.embed_dim;
        let Self { store, encoder, .. } = self;
        let mut s = store.session(false);
        let x = s.g.constant(images.clone());
        let f = encoder.forward(&mut s, x);
        let out: Vec<Vec<T>> = s.g.value(f).data.chunks(d).map(|c| c.to_vec()).collect();
        debug_assert_eq!(out.len(), k);
        Ok(out)
    }

    /// Applies the temporal encoder to `K` feature vectors.
    pub fn transformer_encode(&mut self, features: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        let d = self.config.encoder.embed_dim;
        let k = features.len();
        let Self { store, transformer, .. } = self;
        let tr = transformer
            .as_ref()
            .ok_or_else(|| Error::domain("the two-frame model has no temporal encoder"))?;
        if k < 2 || k > tr.config.max_len {
            return Err(Error::domain(format!("{k} frames outside [2, {}]", tr.config.max_len)));
        }
        if features.iter().any(|f| f.len() != d) {
            return Err(Error::domain(format!("features must have dimension {d}")));
        }
        let mut s = store.session(false);
        let x = s.g.constant(Tensor::new(vec![1, k, d], features.concat()));
        let y = tr.forward(&mut s, x);
        Ok(s.g.value(y).data.chunks(d).map(|c| c.to_vec()).collect())
    }

    /// Regresses a motion code from the features of the last two frames.
    pub fn regress_pose(&mut self, f_prev: &[T], f_cur: &[T]) -> Result<MotionCode> {
        let d = self.config.encoder.embed_dim;
        if f_prev.len() != d || f_cur.len() != d {
            return Err(Error::domain(format!("features must have dimension {d}")));
        }
        let Self { store, regressor, .. } = self;
        let mut s = store.session(false);
        let a = s.g.constant(Tensor::new(vec![1, d], f_prev.to_vec()));
        let b = s.g.constant(Tensor::new(vec![1, d], f_cur.to_vec()));
        let (r, t) = regressor.forward(&mut s, a, b);
        let (r, t) = (&s.g.value(r).data, &s.g.value(t).data);
        Ok(MotionCode {
            omega: [r[0].f64(), r[1].f64(), r[2].f64()],
            du: t[0].f64(),
            dv: t[1].f64(),
            s: t[2].f64(),
        })
    }

    /// Training-mode loss over a batch and the gradient of every parameter.
    pub fn loss_and_grads(&mut self, x: &Tensor<T>, targets: &[MotionCode], lambda: f64) -> Result<(LossParts, Vec<Vec<T>>)> {
        let b = x.shape.first().copied().unwrap_or(0);
        if targets.len() != b {
            return Err(Error::domain(format!("{} targets for a batch of {b}", targets.len())));
        }
        let (mut s, r, t) = self.forward(true, x)?;
        let rot_target: Vec<T> = targets.iter().flat_map(|c| c.omega.map(T::of)).collect();
        let tr_target: Vec<T> = targets.iter().flat_map(|c| [c.du, c.dv, c.s].map(T::of)).collect();
        let lr = s.g.squared_error_loss(r, &rot_target);
        let lt = s.g.smooth_l1_loss(t, &tr_target, &[T::one(), T::one(), T::of(lambda)]);
        let total = s.g.add(lr, lt);
        let parts = LossParts {
            total: s.g.value(total).item().f64(),
            rotation: s.g.value(lr).item().f64(),
            translation: s.g.value(lt).item().f64(),
        };
        let grads = s.param_grads(total);
        Ok((parts, grads))
    }

    /// Loss only, training-mode statistics, without touching running averages.
    pub fn loss(&mut self, x: &Tensor<T>, targets: &[MotionCode], lambda: f64) -> Result<LossParts> {
        let saved = self.store.buffers.clone();
        let out = self.loss_and_grads(x, targets, lambda).map(|(p, _)| p);
        self.store.buffers = saved;
        out
    }

    /// Same architecture with parameters cast to another float type.
    pub fn cast<U: Float>(&self) -> Result<MotionModel<U>> {
        let mut m = MotionModel::<U>::new(&self.config, self.seed)?;
        m.store = self.store.cast();
        Ok(m)
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use crate::models::config::{EncoderConfig, ModelConfig, ModelKind, RegressorConfig, StageConfig, TransformerConfig};

    pub(crate) fn tiny(kind: ModelKind, window: usize) -> ModelConfig {
        ModelConfig {
            kind,
            window,
            encoder: EncoderConfig {
                input_size: 8,
                embed_dim: 8,
                stem_width: 3,
                stem_kernel: 3,
                stem_stride: 1,
                stages: vec![StageConfig { width: 4, blocks: 1, stride: 2 }],
                pool_grid: 2,
            },
            transformer: TransformerConfig {
                layers: 1,
                heads: 2,
                ff_width: 6,
                max_len: 16,
            },
            regressor: RegressorConfig { hidden: vec![6, 5, 4] },
        }
    }

}

#[cfg(test)]
mod tests {
    use super::tests_support::tiny;
    use super::*;
    use rand::Rng;

    fn random_input(b: usize, k: usize, s: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = b * k * INPUT_CHANNELS * s * s;
        Tensor::new(vec![b, k, INPUT_CHANNELS, s, s], (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
    }

    #[test]
    fn embed_shapes_and_determinism() {
        let mut m = MotionModel::<f64>::new(&tiny(ModelKind::MultiFrame, 8), 1).unwrap();
        for k in [2, 5, 8] {
            let x = random_input(1, k, 8, 3);
            let imgs = Tensor::new(vec![k, INPUT_CHANNELS, 8, 8], x.data.clone());
            let f = m.embed_frames(&imgs).unwrap();
            assert_eq!(f.len(), k);
            assert!(f.iter().all(|v| v.len() == 8));
            let n: f64 = f[0].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n.is_finite() && n > 0.0);
        }
        let one = random_input(1, 1, 8, 4).data;
        let same = Tensor::new(vec![3, INPUT_CHANNELS, 8, 8], [one.clone(), one.clone(), one].concat());
        let f = m.embed_frames(&same).unwrap();
        assert_eq!(f[0], f[1]);
        assert_eq!(f[1], f[2]);
    }

    #[test]
    fn transformer_shape_identity_and_order() {
        let mut m = MotionModel::<f64>::new(&tiny(ModelKind::MultiFrame, 16), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let feats = |k: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..k).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        };
        for k in [2, 8, 16] {
            let f = feats(k, &mut rng);
            let y = m.transformer_encode(&f).unwrap();
            assert_eq!(y.len(), k);
            assert!(y.iter().all(|v| v.len() == 8));
        }
        assert!(m.transformer_encode(&feats(17, &mut rng)).is_err());

        let f = feats(4, &mut rng);
        let y = m.transformer_encode(&f).unwrap();
        let mut swapped = f.clone();
        swapped.swap(0, 1);
        let ys = m.transformer_encode(&swapped).unwrap();
        assert!(y[0].iter().zip(&ys[1]).any(|(a, b)| (a - b).abs() > 1e-9));

        let tr = m.transformer.take().unwrap();
        tr.zero_residual_branches(&mut m.store);
        let pos = m.store.param(tr.pos).data.clone();
        m.transformer = Some(tr);
        let y = m.transformer_encode(&f).unwrap();
        for (i, row) in y.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((v - (f[i][j] + pos[i * 8 + j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn predict_one_code_per_window() {
        let mut m = MotionModel::<f64>::new(&tiny(ModelKind::MultiFrame, 6), 3).unwrap();
        for k in 2..=6 {
            let codes = m.predict(&random_input(3, k, 8, k as u64)).unwrap();
            assert_eq!(codes.len(), 3);
        }
        let mut two = MotionModel::<f64>::new(&tiny(ModelKind::TwoFrame, 2), 3).unwrap();
        assert!(two.predict(&random_input(1, 3, 8, 0)).is_err());
        let x = random_input(2, 2, 8, 9);
        assert_eq!(two.predict(&x).unwrap(), two.predict(&x).unwrap());
    }

    #[test]
    fn regress_pose_input_gradients() {
        // eval-mode regressor, gradient of each output wrt each input coordinate
        let mut m = MotionModel::<f64>::new(&tiny(ModelKind::TwoFrame, 2), 4).unwrap();
        for b in m.store.buffers.iter_mut() {
            if b.name.ends_with("running_var") {
                b.tensor.data.iter_mut().for_each(|v| *v = 0.7);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let fp: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fc: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let MotionModel { store, regressor, .. } = &mut m;
        for out in 0..6 {
            let mut s = store.session(false);
            let a = s.g.leaf(Tensor::new(vec![1, 8], fp.clone()), true);
            let b = s.g.leaf(Tensor::new(vec![1, 8], fc.clone()), true);
            let (r, t) = regressor.forward(&mut s, a, b);
            let y = s.g.concat_last(&[r, t]);
            let sel = s.g.reshape(y, vec![1, 6, 1]);
            let pick = s.g.select_axis1(sel, out);
            let pick = s.g.reshape(pick, vec![1]);
            let grads = s.g.backward(pick);
            let (ga, gb) = (grads.get(a).unwrap().to_vec(), grads.get(b).unwrap().to_vec());
            drop(s);
            for i in 0..16 {
                let eval = |delta: f64, store: &mut ParamStore<f64>| {
                    let (mut p, mut c) = (fp.clone(), fc.clone());
                    if i < 8 { p[i] += delta } else { c[i - 8] += delta }
                    let mut s = store.session(false);
                    let a = s.g.constant(Tensor::new(vec![1, 8], p));
                    let b = s.g.constant(Tensor::new(vec![1, 8], c));
                    let (r, t) = regressor.forward(&mut s, a, b);
                    let y = s.g.concat_last(&[r, t]);
                    s.g.value(y).data[out]
                };
                let h = 1e-6;
                let fd = (eval(h, store) - eval(-h, store)) / (2.0 * h);
                let an = if i < 8 { ga[i] } else { gb[i - 8] };
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-6), "out {out} in {i}: {fd} vs {an}");
            }
        }
    }
}
