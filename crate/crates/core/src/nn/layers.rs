//! Parameter storage and the handful of layers the motion models are built from.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Conv2dParams, Graph, Gradients, Var};
use super::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Trainable parameters plus non-trainable buffers (batch-norm running statistics).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    pub params: Vec<NamedTensor<T>>,
    pub buffers: Vec<NamedTensor<T>>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn add_param(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.params.push(NamedTensor {
            name: name.into(),
            tensor,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> BufferId {
        self.buffers.push(NamedTensor {
            name: name.into(),
            tensor,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Opens a forward pass: every parameter becomes a graph leaf.
    pub fn session(&mut self, train: bool) -> Session<'_, T> {
        let mut g = Graph::new();
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.tensor.clone(), train))
            .collect();
        Session {
            g,
            vars,
            buffers: &mut self.buffers,
            train,
        }
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        let conv = |v: &Vec<NamedTensor<T>>| {
            v.iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect()
        };
        ParamStore {
            params: conv(&self.params),
            buffers: conv(&self.buffers),
        }
    }
}

/// A single forward (and optionally backward) pass over a [`ParamStore`].
pub struct Session<'a, T> {
    pub g: Graph<T>,
    vars: Vec<Var>,
    buffers: &'a mut [NamedTensor<T>],
    pub train: bool,
}

impl<T: Float> Session<'_, T> {
    pub fn p(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    /// Backward from `loss`, returning one gradient per parameter (zeros where unused).
    pub fn param_grads(&self, loss: Var) -> Vec<Vec<T>> {
        let mut grads: Gradients<T> = self.g.backward(loss);
        self.vars
            .iter()
            .map(|&v| {
                grads
                    .take(v)
                    .unwrap_or_else(|| vec![T::zero(); self.g.value(v).len()])
            })
            .collect()
    }
}

/// Parameter factory with a name prefix and a seeded initializer.
pub struct Init<'a, T, R> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
}

impl<T: Float, R: Rng> Init<'_, T, R> {
    pub fn normal(&mut self, name: &str, shape: Vec<usize>, std: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let data = (0..n).map(|_| T::of(dist.sample(self.rng))).collect();
        self.store.add_param(name, Tensor::new(shape, data))
    }

    pub fn constant(&mut self, name: &str, shape: Vec<usize>, v: f64) -> ParamId {
        self.store.add_param(name, Tensor::full(shape, T::of(v)))
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// He-normal weights, zero bias.
    pub fn new<T: Float, R: Rng>(init: &mut Init<'_, T, R>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self::with_std(init, name, in_dim, out_dim, (2.0 / in_dim as f64).sqrt())
    }

    pub fn with_std<T: Float, R: Rng>(
        init: &mut Init<'_, T, R>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        std: f64,
    ) -> Self {
        let w = init.normal(&format!("{name}.weight"), vec![in_dim, out_dim], std);
        let b = init.constant(&format!("{name}.bias"), vec![out_dim], 0.0);
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    /// `x: [N, in] -> [N, out]`.
    pub fn forward<T: Float>(&self, s: &mut Session<'_, T>, x: Var) -> Var {
        let (w, b) = (s.p(self.w), s.p(self.b));
        let y = s.g.matmul(x, w);
        s.g.add_trailing(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub params: Conv2dParams,
}

impl Conv2d {
    pub fn new<T: Float, R: Rng>(
        init: &mut Init<'_, T, R>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let std = (2.0 / (in_ch * kernel * kernel) as f64).sqrt();
        let w = init.normal(&format!("{name}.weight"), vec![out_ch, in_ch, kernel, kernel], std);
        Self {
            w,
            params: Conv2dParams {
                stride,
                pad: kernel / 2,
            },
        }
    }

    pub fn forward<T: Float>(&self, s: &mut Session<'_, T>, x: Var) -> Var {
        let w = s.p(self.w);
        s.g.conv2d(x, w, self.params)
    }
}

/// Batch normalization over axis 1, for `[N, C]` or `[N, C, H, W]`.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm {
    pub fn new<T: Float, R: Rng>(init: &mut Init<'_, T, R>, name: &str, channels: usize) -> Self {
        let gamma = init.constant(&format!("{name}.weight"), vec![channels], 1.0);
        let beta = init.constant(&format!("{name}.bias"), vec![channels], 0.0);
        let running_mean = init
            .store
            .add_buffer(format!("{name}.running_mean"), Tensor::zeros(vec![channels]));
        let running_var = init
            .store
            .add_buffer(format!("{name}.running_var"), Tensor::full(vec![channels], T::one()));
        Self {
            gamma,
            beta,
            running_mean,
            running_var,
        }
    }

    pub fn forward<T: Float>(&self, s: &mut Session<'_, T>, x: Var) -> Var {
        let (gamma, beta) = (s.p(self.gamma), s.p(self.beta));
        if s.train {
            let shape = s.g.shape(x).to_vec();
            let count = shape[0] * shape[2..].iter().product::<usize>();
            let (y, stats) = s.g.batch_norm(x, gamma, beta, BN_EPS, None);
            if let Some((mean, var)) = stats {
                let m = T::of(BN_MOMENTUM);
                let unbias = if count > 1 {
                    T::of(count as f64 / (count - 1) as f64)
                } else {
                    T::one()
                };
                let rm = &mut s.buffers[self.running_mean.0].tensor.data;
                for (r, &v) in rm.iter_mut().zip(&mean) {
                    *r = (T::one() - m) * *r + m * v;
                }
                let rv = &mut s.buffers[self.running_var.0].tensor.data;
                for (r, &v) in rv.iter_mut().zip(&var) {
                    *r = (T::one() - m) * *r + m * v * unbias;
                }
            }
            y
        } else {
            let mean = s.buffers[self.running_mean.0].tensor.data.clone();
            let var = s.buffers[self.running_var.0].tensor.data.clone();
            s.g.batch_norm(x, gamma, beta, BN_EPS, Some((&mean, &var))).0
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Float, R: Rng>(init: &mut Init<'_, T, R>, name: &str, dim: usize) -> Self {
        Self {
            gamma: init.constant(&format!("{name}.weight"), vec![dim], 1.0),
            beta: init.constant(&format!("{name}.bias"), vec![dim], 0.0),
        }
    }

    pub fn forward<T: Float>(&self, s: &mut Session<'_, T>, x: Var) -> Var {
        let (g, b) = (s.p(self.gamma), s.p(self.beta));
        s.g.layer_norm(x, g, b, LN_EPS)
    }
}
