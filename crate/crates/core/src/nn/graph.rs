//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value; [`Graph::backward`] walks the tape
//! in reverse. Ops save whatever their backward pass needs at construction time.

use super::tensor::{gemm, Float, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy)]
pub struct Conv2dParams {
    pub stride: usize,
    pub pad: usize,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    /// `x + b` with `b` matching the trailing dims of `x`.
    AddTrailing(Var, Var),
    Scale(Var, T),
    Relu(Var),
    MatMul(Var, Var),
    Bmm {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Conv2d {
        x: Var,
        w: Var,
        p: Conv2dParams,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    AdaptiveAvgPool {
        x: Var,
        grid: usize,
    },
    Reshape(Var),
    ConcatLast(Vec<Var>),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    SoftmaxLast(Var),
    SelectAxis1 {
        x: Var,
        index: usize,
    },
    NarrowFirst {
        x: Var,
        start: usize,
    },
    SmoothL1 {
        pred: Var,
        target: Vec<T>,
        weights: Vec<T>,
    },
    SquaredError {
        pred: Var,
        target: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Collected gradients, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn smooth_l1<T: Float>(x: T) -> T {
    let a = x.abs();
    if a < T::one() {
        T::of(0.5) * x * x
    } else {
        a - T::of(0.5)
    }
}

fn smooth_l1_grad<T: Float>(x: T) -> T {
    if x.abs() < T::one() {
        x
    } else {
        x.signum()
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn pool_range(i: usize, out: usize, size: usize) -> (usize, usize) {
    let start = i * size / out;
    let end = ((i + 1) * size).div_ceil(out);
    (start, end)
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Float>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    p: Conv2dParams,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let hw = ho * wo;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * p.stride + ki) as isize - p.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * p.stride + kj) as isize - p.pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Float>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    p: Conv2dParams,
    ho: usize,
    wo: usize,
    dx: &mut [T],
) {
    let hw = ho * wo;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * p.stride + ki) as isize - p.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * p.stride + kj) as isize - p.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_out(size: usize, k: usize, p: Conv2dParams) -> usize {
    (size + 2 * p.pad - k) / p.stride + 1
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape, vb.shape, "add: shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape.clone(), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// Adds `b` broadcast over the leading dims of `x`.
    pub fn add_trailing(&mut self, x: Var, b: Var) -> Var {
        let (vx, vb) = (self.value(x), self.value(b));
        let nd = vb.ndim();
        assert!(
            vx.ndim() >= nd && vx.shape[vx.ndim() - nd..] == vb.shape[..],
            "add_trailing: {:?} vs {:?}",
            vx.shape,
            vb.shape
        );
        let m = vb.len();
        let data = vx
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v + vb.data[i % m])
            .collect();
        let out = Tensor::new(vx.shape.clone(), data);
        let rg = self.rg(x) || self.rg(b);
        self.push(out, Op::AddTrailing(x, b), rg)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let vx = self.value(x);
        let out = Tensor::new(vx.shape.clone(), vx.data.iter().map(|&v| v * c).collect());
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let out = Tensor::new(
            vx.shape.clone(),
            vx.data.iter().map(|&v| v.max(T::zero())).collect(),
        );
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.ndim() == 2 && vb.ndim() == 2, "matmul needs 2D operands");
        let (m, k, n) = (va.shape[0], va.shape[1], vb.shape[1]);
        assert_eq!(k, vb.shape[0], "matmul: inner dims {:?} {:?}", va.shape, vb.shape);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, &va.data, false, &vb.data, false, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![m, n], out), Op::MatMul(a, b), rg)
    }

    /// Batched `[B, m, k] x [B, k, n]`, or `[B, m, k] x [B, n, k]^T` with `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.ndim() == 3 && vb.ndim() == 3, "bmm needs 3D operands");
        let (bs, m, k) = (va.shape[0], va.shape[1], va.shape[2]);
        let n = if trans_b { vb.shape[1] } else { vb.shape[2] };
        let kb = if trans_b { vb.shape[2] } else { vb.shape[1] };
        assert!(vb.shape[0] == bs && kb == k, "bmm: {:?} x {:?}", va.shape, vb.shape);
        let mut out = vec![T::zero(); bs * m * n];
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                &va.data[i * m * k..(i + 1) * m * k],
                false,
                &vb.data[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(vec![bs, m, n], out), Op::Bmm { a, b, trans_b }, rg)
    }

    /// Square-kernel convolution, `x: [N, C, H, W]`, `w: [O, C, k, k]`, no bias.
    pub fn conv2d(&mut self, x: Var, w: Var, p: Conv2dParams) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        assert_eq!(vx.ndim(), 4, "conv2d input must be NCHW");
        let (n, c, h, wd) = (vx.shape[0], vx.shape[1], vx.shape[2], vx.shape[3]);
        let (o, k) = (vw.shape[0], vw.shape[2]);
        assert!(vw.shape[1] == c && vw.shape[3] == k, "conv2d: weight {:?}", vw.shape);
        let (ho, wo) = (conv_out(h, k, p), conv_out(wd, k, p));
        let ckk = c * k * k;
        let mut cols = vec![T::zero(); ckk * ho * wo];
        let mut out = vec![T::zero(); n * o * ho * wo];
        for i in 0..n {
            im2col(&vx.data[i * c * h * wd..(i + 1) * c * h * wd], c, h, wd, k, p, ho, wo, &mut cols);
            gemm(
                o,
                ckk,
                ho * wo,
                &vw.data,
                false,
                &cols,
                false,
                &mut out[i * o * ho * wo..(i + 1) * o * ho * wo],
                false,
            );
        }
        let rg = self.rg(x) || self.rg(w);
        self.push(Tensor::new(vec![n, o, ho, wo], out), Op::Conv2d { x, w, p }, rg)
    }

    /// Batch normalization over axis 1 of `[N, C, ...]`.
    ///
    /// In training mode the batch statistics are used and returned as `(mean, biased var)`
    /// so the caller can update running averages; in eval mode `running` is applied.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        running: Option<(&[T], &[T])>,
    ) -> (Var, Option<(Vec<T>, Vec<T>)>) {
        let vx = self.value(x);
        let (n, c) = (vx.shape[0], vx.shape[1]);
        let sp: usize = vx.shape[2..].iter().product();
        let cnt = T::of((n * sp) as f64);
        let (mean, var, train) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec(), false),
            None => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for i in 0..n {
                    for ch in 0..c {
                        let s = &vx.data[(i * c + ch) * sp..(i * c + ch + 1) * sp];
                        mean[ch] += s.iter().copied().sum::<T>();
                    }
                }
                for m in &mut mean {
                    *m = *m / cnt;
                }
                for i in 0..n {
                    for ch in 0..c {
                        let s = &vx.data[(i * c + ch) * sp..(i * c + ch + 1) * sp];
                        var[ch] += s.iter().map(|&v| (v - mean[ch]) * (v - mean[ch])).sum::<T>();
                    }
                }
                for v in &mut var {
                    *v = *v / cnt;
                }
                (mean, var, true)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let mut xhat = vec![T::zero(); vx.len()];
        let mut out = vec![T::zero(); vx.len()];
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * sp;
                for j in off..off + sp {
                    let xh = (vx.data[j] - mean[ch]) * inv_std[ch];
                    xhat[j] = xh;
                    out[j] = g[ch] * xh + b[ch];
                }
            }
        }
        let shape = vx.shape.clone();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let stats = train.then_some((mean, var));
        let v = self.push(
            Tensor::new(shape, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        );
        (v, stats)
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let vx = self.value(x);
        let d = *vx.shape.last().expect("layer_norm on scalar");
        let rows = vx.len() / d;
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let mut xhat = vec![T::zero(); vx.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); vx.len()];
        let dn = T::of(d as f64);
        for r in 0..rows {
            let s = &vx.data[r * d..(r + 1) * d];
            let mean = s.iter().copied().sum::<T>() / dn;
            let var = s.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + T::of(eps)).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (s[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = g[j] * xh + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let shape = vx.shape.clone();
        self.push(
            Tensor::new(shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Adaptive average pooling of `[N, C, H, W]` to `[N, C, grid, grid]`.
    pub fn adaptive_avg_pool(&mut self, x: Var, grid: usize) -> Var {
        let vx = self.value(x);
        let (n, c, h, w) = (vx.shape[0], vx.shape[1], vx.shape[2], vx.shape[3]);
        assert!(grid >= 1 && grid <= h && grid <= w, "pool grid {grid} for {h}x{w}");
        let mut out = vec![T::zero(); n * c * grid * grid];
        for nc in 0..n * c {
            let src = &vx.data[nc * h * w..(nc + 1) * h * w];
            for gy in 0..grid {
                let (y0, y1) = pool_range(gy, grid, h);
                for gx in 0..grid {
                    let (x0, x1) = pool_range(gx, grid, w);
                    let mut s = T::zero();
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            s += src[y * w + xx];
                        }
                    }
                    out[(nc * grid + gy) * grid + gx] = s / T::of(((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor::new(vec![n, c, grid, grid], out),
            Op::AdaptiveAvgPool { x, grid },
            rg,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let vx = self.value(x);
        let out = Tensor::new(shape, vx.data.clone());
        let rg = self.rg(x);
        self.push(out, Op::Reshape(x), rg)
    }

    /// Concatenates along the last axis; leading dims must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "concat of nothing");
        let lead = self.value(xs[0]).shape[..self.value(xs[0]).ndim() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = xs
            .iter()
            .map(|&v| {
                let s = &self.value(v).shape;
                assert_eq!(&s[..s.len() - 1], &lead[..], "concat: leading dims differ");
                s[s.len() - 1]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![T::zero(); rows * total];
        let mut off = 0;
        for (&v, &wd) in xs.iter().zip(&widths) {
            let d = &self.value(v).data;
            for r in 0..rows {
                out[r * total + off..r * total + off + wd].copy_from_slice(&d[r * wd..(r + 1) * wd]);
            }
            off += wd;
        }
        let mut shape = lead;
        shape.push(total);
        let rg = xs.iter().any(|&v| self.rg(v));
        self.push(Tensor::new(shape, out), Op::ConcatLast(xs.to_vec()), rg)
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let vx = self.value(x);
        assert_eq!(perm.len(), vx.ndim(), "permute rank");
        let in_strides = strides(&vx.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| vx.shape[p]).collect();
        let out = permute_data(&vx.data, &out_shape, perm, &in_strides);
        let rg = self.rg(x);
        self.push(
            Tensor::new(out_shape, out),
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            rg,
        )
    }

    pub fn softmax_last(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let d = *vx.shape.last().expect("softmax on scalar");
        let mut out = vx.data.clone();
        for row in out.chunks_mut(d) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        let rg = self.rg(x);
        let shape = vx.shape.clone();
        self.push(Tensor::new(shape, out), Op::SoftmaxLast(x), rg)
    }

    /// `x[:, index, ...]` for `x` of rank >= 2.
    pub fn select_axis1(&mut self, x: Var, index: usize) -> Var {
        let vx = self.value(x);
        let (n, k) = (vx.shape[0], vx.shape[1]);
        assert!(index < k, "select index {index} out of {k}");
        let inner: usize = vx.shape[2..].iter().product();
        let mut out = Vec::with_capacity(n * inner);
        for i in 0..n {
            let off = (i * k + index) * inner;
            out.extend_from_slice(&vx.data[off..off + inner]);
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&vx.shape[2..]);
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out), Op::SelectAxis1 { x, index }, rg)
    }

    /// Rows `start..start + len` along the first axis.
    pub fn narrow_first(&mut self, x: Var, start: usize, len: usize) -> Var {
        let vx = self.value(x);
        assert!(start + len <= vx.shape[0], "narrow past end");
        let inner: usize = vx.shape[1..].iter().product();
        let out = vx.data[start * inner..(start + len) * inner].to_vec();
        let mut shape = vx.shape.clone();
        shape[0] = len;
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out), Op::NarrowFirst { x, start }, rg)
    }

    /// `(1/N) * sum_n sum_c weights[c] * smoothL1(pred[n,c] - target[n,c])` for `pred: [N, C]`.
    pub fn smooth_l1_loss(&mut self, pred: Var, target: &[T], weights: &[T]) -> Var {
        let vp = self.value(pred);
        assert_eq!(vp.ndim(), 2, "smooth_l1_loss expects [N, C]");
        let (n, c) = (vp.shape[0], vp.shape[1]);
        assert!(target.len() == n * c && weights.len() == c, "smooth_l1_loss sizes");
        let mut s = T::zero();
        for (i, (&p, &t)) in vp.data.iter().zip(target).enumerate() {
            s += weights[i % c] * smooth_l1(p - t);
        }
        let out = Tensor::scalar(s / T::of(n as f64));
        let rg = self.rg(pred);
        self.push(
            out,
            Op::SmoothL1 {
                pred,
                target: target.to_vec(),
                weights: weights.to_vec(),
            },
            rg,
        )
    }

    /// `(1/N) * sum_n ||pred[n] - target[n]||^2`.
    pub fn squared_error_loss(&mut self, pred: Var, target: &[T]) -> Var {
        let vp = self.value(pred);
        let n = vp.shape[0];
        assert_eq!(target.len(), vp.len(), "squared_error_loss sizes");
        let s: T = vp.data.iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum();
        let out = Tensor::scalar(s / T::of(n as f64));
        let rg = self.rg(pred);
        self.push(
            out,
            Op::SquaredError {
                pred,
                target: target.to_vec(),
            },
            rg,
        )
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).len(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.backprop_node(node, &gy, &mut grads);
            }
            grads[i] = Some(gy);
        }
        Gradients { grads }
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut [T]> {
        if !self.rg(v) {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]).as_mut_slice())
    }

    fn backprop_node(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(g) = self.acc(grads, v) {
                        g.iter_mut().zip(gy).for_each(|(g, &d)| *g += d);
                    }
                }
            }
            Op::AddTrailing(x, b) => {
                if let Some(g) = self.acc(grads, *x) {
                    g.iter_mut().zip(gy).for_each(|(g, &d)| *g += d);
                }
                if let Some(g) = self.acc(grads, *b) {
                    let m = g.len();
                    for (i, &d) in gy.iter().enumerate() {
                        g[i % m] += d;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(g) = self.acc(grads, *x) {
                    g.iter_mut().zip(gy).for_each(|(g, &d)| *g += d * *c);
                }
            }
            Op::Relu(x) => {
                let vy = &node.value.data;
                if let Some(g) = self.acc(grads, *x) {
                    for ((g, &d), &y) in g.iter_mut().zip(gy).zip(vy) {
                        if y > T::zero() {
                            *g += d;
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape[0], va.shape[1], vb.shape[1]);
                if let Some(g) = self.acc(grads, *a) {
                    gemm(m, n, k, gy, false, &vb.data, true, g, true);
                }
                if let Some(g) = self.acc(grads, *b) {
                    gemm(k, m, n, &va.data, true, gy, false, g, true);
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (bs, m, k) = (va.shape[0], va.shape[1], va.shape[2]);
                let n = node.value.shape[2];
                if let Some(g) = self.acc(grads, *a) {
                    for i in 0..bs {
                        // dA = dC * B^T  (B stored [k,n]) or dC * B (B stored [n,k])
                        gemm(
                            m,
                            n,
                            k,
                            &gy[i * m * n..(i + 1) * m * n],
                            false,
                            &vb.data[i * k * n..(i + 1) * k * n],
                            !*trans_b,
                            &mut g[i * m * k..(i + 1) * m * k],
                            true,
                        );
                    }
                }
                if let Some(g) = self.acc(grads, *b) {
                    for i in 0..bs {
                        let da = &va.data[i * m * k..(i + 1) * m * k];
                        let dc = &gy[i * m * n..(i + 1) * m * n];
                        let gb = &mut g[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            // B stored [n, k]: dB = dC^T * A
                            gemm(n, m, k, dc, true, da, false, gb, true);
                        } else {
                            gemm(k, m, n, da, true, dc, false, gb, true);
                        }
                    }
                }
            }
            Op::Conv2d { x, w, p } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (n, c, h, wd) = (vx.shape[0], vx.shape[1], vx.shape[2], vx.shape[3]);
                let (o, k) = (vw.shape[0], vw.shape[2]);
                let (ho, wo) = (node.value.shape[2], node.value.shape[3]);
                let ckk = c * k * k;
                let hw = ho * wo;
                let need_x = self.rg(*x);
                let need_w = self.rg(*w);
                let mut cols = vec![T::zero(); ckk * hw];
                let mut dcols = vec![T::zero(); if need_x { ckk * hw } else { 0 }];
                let mut gw_local = vec![T::zero(); if need_w { vw.len() } else { 0 }];
                let mut gx_local = vec![T::zero(); if need_x { vx.len() } else { 0 }];
                for i in 0..n {
                    let dy = &gy[i * o * hw..(i + 1) * o * hw];
                    if need_w {
                        im2col(&vx.data[i * c * h * wd..(i + 1) * c * h * wd], c, h, wd, k, *p, ho, wo, &mut cols);
                        gemm(o, hw, ckk, dy, false, &cols, true, &mut gw_local, true);
                    }
                    if need_x {
                        gemm(ckk, o, hw, &vw.data, true, dy, false, &mut dcols, false);
                        col2im(
                            &dcols,
                            c,
                            h,
                            wd,
                            k,
                            *p,
                            ho,
                            wo,
                            &mut gx_local[i * c * h * wd..(i + 1) * c * h * wd],
                        );
                    }
                }
                if let Some(g) = self.acc(grads, *w) {
                    g.iter_mut().zip(&gw_local).for_each(|(g, &d)| *g += d);
                }
                if let Some(g) = self.acc(grads, *x) {
                    g.iter_mut().zip(&gx_local).for_each(|(g, &d)| *g += d);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = &node.value.shape;
                let (n, c) = (shape[0], shape[1]);
                let sp: usize = shape[2..].iter().product();
                let gam = &self.value(*gamma).data;
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                for i in 0..n {
                    for ch in 0..c {
                        let off = (i * c + ch) * sp;
                        for j in off..off + sp {
                            dg[ch] += gy[j] * xhat[j];
                            db[ch] += gy[j];
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *x) {
                    let m = T::of((n * sp) as f64);
                    for i in 0..n {
                        for ch in 0..c {
                            let off = (i * c + ch) * sp;
                            let scale = gam[ch] * inv_std[ch];
                            for j in off..off + sp {
                                g[j] += if *train {
                                    scale * (gy[j] - db[ch] / m - xhat[j] * dg[ch] / m)
                                } else {
                                    scale * gy[j]
                                };
                            }
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *gamma) {
                    g.iter_mut().zip(&dg).for_each(|(g, &d)| *g += d);
                }
                if let Some(g) = self.acc(grads, *beta) {
                    g.iter_mut().zip(&db).for_each(|(g, &d)| *g += d);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = *node.value.shape.last().unwrap_or(&1);
                let rows = node.value.len() / d;
                let gam = &self.value(*gamma).data;
                if let Some(g) = self.acc(grads, *x) {
                    let dn = T::of(d as f64);
                    for r in 0..rows {
                        let dy = &gy[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..d {
                            let dxh = dy[j] * gam[j];
                            s1 += dxh;
                            s2 += dxh * xh[j];
                        }
                        for j in 0..d {
                            let dxh = dy[j] * gam[j];
                            g[r * d + j] += inv_std[r] * (dxh - s1 / dn - xh[j] * s2 / dn);
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *gamma) {
                    for r in 0..rows {
                        for j in 0..d {
                            g[j] += gy[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *beta) {
                    for r in 0..rows {
                        for j in 0..d {
                            g[j] += gy[r * d + j];
                        }
                    }
                }
            }
            Op::AdaptiveAvgPool { x, grid } => {
                let grid = *grid;
                let vx = self.value(*x);
                let (n, c, h, w) = (vx.shape[0], vx.shape[1], vx.shape[2], vx.shape[3]);
                if let Some(g) = self.acc(grads, *x) {
                    for nc in 0..n * c {
                        for gy_ in 0..grid {
                            let (y0, y1) = pool_range(gy_, grid, h);
                            for gx in 0..grid {
                                let (x0, x1) = pool_range(gx, grid, w);
                                let d = gy[(nc * grid + gy_) * grid + gx]
                                    / T::of(((y1 - y0) * (x1 - x0)) as f64);
                                for y in y0..y1 {
                                    for xx in x0..x1 {
                                        g[nc * h * w + y * w + xx] += d;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(g) = self.acc(grads, *x) {
                    g.iter_mut().zip(gy).for_each(|(g, &d)| *g += d);
                }
            }
            Op::ConcatLast(xs) => {
                let total = *node.value.shape.last().unwrap_or(&1);
                let rows = node.value.len() / total;
                let mut off = 0;
                for &v in xs {
                    let wd = *self.value(v).shape.last().unwrap_or(&1);
                    if let Some(g) = self.acc(grads, v) {
                        for r in 0..rows {
                            for j in 0..wd {
                                g[r * wd + j] += gy[r * total + off + j];
                            }
                        }
                    }
                    off += wd;
                }
            }
            Op::Permute { x, perm } => {
                if let Some(g) = self.acc(grads, *x) {
                    let mut inv = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i;
                    }
                    let in_shape = &self.value(*x).shape;
                    let back = permute_data(gy, in_shape, &inv, &strides(&node.value.shape));
                    g.iter_mut().zip(&back).for_each(|(g, &d)| *g += d);
                }
            }
            Op::SoftmaxLast(x) => {
                if let Some(g) = self.acc(grads, *x) {
                    let d = *node.value.shape.last().unwrap_or(&1);
                    for (r, y) in node.value.data.chunks(d).enumerate() {
                        let dy = &gy[r * d..(r + 1) * d];
                        let dot: T = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
                        for j in 0..d {
                            g[r * d + j] += y[j] * (dy[j] - dot);
                        }
                    }
                }
            }
            Op::SelectAxis1 { x, index } => {
                let vx = self.value(*x);
                let (n, k) = (vx.shape[0], vx.shape[1]);
                let inner: usize = vx.shape[2..].iter().product();
                if let Some(g) = self.acc(grads, *x) {
                    for i in 0..n {
                        let off = (i * k + index) * inner;
                        for j in 0..inner {
                            g[off + j] += gy[i * inner + j];
                        }
                    }
                }
            }
            Op::NarrowFirst { x, start } => {
                let inner: usize = node.value.shape[1..].iter().product();
                if let Some(g) = self.acc(grads, *x) {
                    for (j, &d) in gy.iter().enumerate() {
                        g[start * inner + j] += d;
                    }
                }
            }
            Op::SmoothL1 {
                pred,
                target,
                weights,
            } => {
                let vp = self.value(*pred);
                let (n, c) = (vp.shape[0], vp.shape[1]);
                let scale = gy[0] / T::of(n as f64);
                if let Some(g) = self.acc(grads, *pred) {
                    for (i, (&p, &t)) in vp.data.iter().zip(target).enumerate() {
                        g[i] += scale * weights[i % c] * smooth_l1_grad(p - t);
                    }
                }
            }
            Op::SquaredError { pred, target } => {
                let vp = self.value(*pred);
                let n = vp.shape[0];
                let scale = gy[0] * T::of(2.0) / T::of(n as f64);
                if let Some(g) = self.acc(grads, *pred) {
                    for (i, (&p, &t)) in vp.data.iter().zip(target).enumerate() {
                        g[i] += scale * (p - t);
                    }
                }
            }
        }
    }
}

fn permute_data<T: Float>(src: &[T], out_shape: &[usize], perm: &[usize], in_strides: &[usize]) -> Vec<T> {
    let total: usize = out_shape.iter().product();
    let mut out = Vec::with_capacity(total);
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    for _ in 0..total {
        let off: usize = (0..nd).map(|d| idx[d] * in_strides[perm[d]]).sum();
        out.push(src[off]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Central differences of `f` w.r.t. every input, compared against the tape.
    fn check(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = f(&mut g, &vars);
        let grads = g.backward(out);
        let eps = 1e-6;
        for (k, t) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).expect("missing grad").to_vec();
            for i in 0..t.len() {
                let eval = |delta: f64| {
                    let mut g = Graph::new();
                    let vars: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, t)| {
                            let mut t = t.clone();
                            if j == k {
                                t.data[i] += delta;
                            }
                            g.leaf(t, true)
                        })
                        .collect();
                    let o = f(&mut g, &vars);
                    g.value(o).item()
                };
                let num = (eval(eps) - eval(-eps)) / (2.0 * eps);
                let err = (num - analytic[i]).abs() / num.abs().max(analytic[i].abs()).max(1e-3);
                assert!(err < 1e-5, "input {k} elem {i}: analytic {} numeric {num}", analytic[i]);
            }
        }
    }

    fn weighted_sum(g: &mut Graph<f64>, x: Var, seed: u64) -> Var {
        // Contract against fixed random weights to get a scalar with generic upstream grads.
        let n = g.value(x).len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let flat = g.reshape(x, vec![n, 1]);
        let wv = g.constant(Tensor::new(vec![1, n], w));
        let y = g.matmul(wv, flat);
        g.reshape(y, vec![])
    }

    #[test]
    fn conv_and_pool_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, vec![2, 3, 7, 6]);
        let w = rand_tensor(&mut rng, vec![4, 3, 3, 3]);
        check(vec![x, w], |g, v| {
            let y = g.conv2d(v[0], v[1], Conv2dParams { stride: 2, pad: 1 });
            let p = g.adaptive_avg_pool(y, 2);
            weighted_sum(g, p, 7)
        });
    }

    #[test]
    fn norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, vec![4, 3, 2, 2]);
        let gm = rand_tensor(&mut rng, vec![3]);
        let bt = rand_tensor(&mut rng, vec![3]);
        check(vec![x, gm, bt], |g, v| {
            let (y, _) = g.batch_norm(v[0], v[1], v[2], 1e-5, None);
            weighted_sum(g, y, 3)
        });
        let x = rand_tensor(&mut rng, vec![3, 5]);
        let gm = rand_tensor(&mut rng, vec![5]);
        let bt = rand_tensor(&mut rng, vec![5]);
        check(vec![x, gm, bt], |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5);
            weighted_sum(g, y, 4)
        });
    }

    #[test]
    fn attention_block_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = rand_tensor(&mut rng, vec![2, 3, 4]);
        let k = rand_tensor(&mut rng, vec![2, 3, 4]);
        let vv = rand_tensor(&mut rng, vec![2, 3, 4]);
        check(vec![q, k, vv], |g, v| {
            let s = g.bmm(v[0], v[1], true);
            let s = g.scale(s, 0.5);
            let a = g.softmax_last(s);
            let c = g.bmm(a, v[2], false);
            let p = g.permute(c, &[1, 0, 2]);
            let r = g.reshape(p, vec![3, 8]);
            weighted_sum(g, r, 5)
        });
    }

    #[test]
    fn misc_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, vec![2, 3, 4]);
        let pos = rand_tensor(&mut rng, vec![5, 4]);
        let w = rand_tensor(&mut rng, vec![8, 3]);
        check(vec![x, pos, w], |g, v| {
            let p = g.narrow_first(v[1], 0, 3);
            let y = g.add_trailing(v[0], p);
            let a = g.select_axis1(y, 1);
            let b = g.select_axis1(y, 2);
            let c = g.concat_last(&[a, b]);
            let h = g.matmul(c, v[2]);
            let h = g.relu(h);
            let t = vec![0.3; 6];
            let l1 = g.smooth_l1_loss(h, &t, &[1.0, 2.0, 0.5]);
            let l2 = g.squared_error_loss(h, &t);
            g.add(l1, l2)
        });
    }

    #[test]
    fn permute_round_trip() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![2, 3, 4], (0..24).map(f64::from).collect()), false);
        let p = g.permute(x, &[2, 0, 1]);
        assert_eq!(g.shape(p), &[4, 2, 3]);
        let q = g.permute(p, &[1, 2, 0]);
        assert_eq!(g.value(q), g.value(x));
    }
}
