use rand::Rng;

use crate::kernels::{self, GroupNormStats};
use crate::params::{ParamId, ParamStore};
use crate::{NnError, Result, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if v > 0.0 {
                    v
                } else {
                    s * v
                }
            }
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Activation::Tanh => v.tanh(),
        }
    }
}

/// Reconstruction criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    Mse,
    Bce,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Bce => "bce",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mse" => Some(LossKind::Mse),
            "bce" => Some(LossKind::Bce),
            _ => None,
        }
    }
}

/// Probability clamp applied to predictions before the BCE logarithms.
pub const BCE_CLAMP: f64 = 1e-7;

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        stats: GroupNormStats<T>,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Mask {
        x: Var,
        mask: Vec<T>,
        plane: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Concat {
        parts: Vec<Var>,
    },
    Slice {
        x: Var,
        start: usize,
        end: usize,
    },
    Mean {
        x: Var,
    },
    Loss {
        pred: Var,
        target: Var,
        kind: LossKind,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Record of one forward computation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and the backward pass is a single reverse sweep.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: Vec<(ParamId, Var)>,
    param_lookup: Vec<Option<Var>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass, indexed by tape node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn acc<T: Scalar>(slot: &mut Option<Tensor<T>>, shape: &[usize], f: impl FnOnce(&mut [T])) {
    let g = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(g.data_mut());
}

fn add_into<T: Scalar>(slot: &mut Option<Tensor<T>>, t: Tensor<T>) {
    match slot {
        Some(g) => g
            .data_mut()
            .iter_mut()
            .zip(t.data())
            .for_each(|(a, &b)| *a += b),
        None => *slot = Some(t),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            param_lookup: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn checked(&mut self, value: Tensor<T>, op: Op<T>, name: &str) -> Result<Var> {
        value.check_finite(name)?;
        Ok(self.push(value, op))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Records a constant input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records (once per tape) the current value of a trainable parameter.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_lookup.get(id.index()) {
            return *v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Leaf);
        if self.param_lookup.len() <= id.index() {
            self.param_lookup.resize(id.index() + 1, None);
        }
        self.param_lookup[id.index()] = Some(v);
        self.params.push((id, v));
        v
    }

    /// Parameters referenced by this tape, with their leaf handles.
    pub fn param_vars(&self) -> &[(ParamId, Var)] {
        &self.params
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let out = kernels::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        self.checked(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            "conv2d",
        )
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let out = kernels::conv_transpose2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        self.checked(
            out,
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            "conv_transpose2d",
        )
    }

    pub fn group_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        eps: f64,
    ) -> Result<Var> {
        let (y, stats) = kernels::group_norm_forward(
            self.value(x),
            groups,
            self.value(gamma),
            self.value(beta),
            eps,
        )?;
        self.checked(
            y,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            },
            "group_norm",
        )
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let y = match kind {
            Activation::LeakyRelu(s) => {
                let s = T::of(s);
                self.value(x).map(|v| if v > T::zero() { v } else { s * v })
            }
            Activation::Relu => self.value(x).map(|v| v.max(T::zero())),
            Activation::Sigmoid => self.value(x).map(|v| T::one() / (T::one() + (-v).exp())),
            Activation::Tanh => self.value(x).map(|v| v.tanh()),
        };
        self.checked(y, Op::Act { x, kind }, "activation")
    }

    /// Channel dropout: each `(sample, channel)` plane is zeroed with
    /// probability `p`, survivors are scaled by `1/(1-p)`.
    pub fn dropout2d<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NnError::InvalidParameter(format!(
                "dropout probability {p} not in [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let (n, c, h, w) = self.value(x).dims4()?;
        let plane = h * w;
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..n * c)
            .map(|_| {
                if rng.gen::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mut y = self.value(x).clone();
        for (chunk, &m) in y.data_mut().chunks_mut(plane).zip(&mask) {
            chunk.iter_mut().for_each(|v| *v *= m);
        }
        Ok(self.push(y, Op::Mask { x, mask, plane }))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NnError::Shape(format!(
                "{op}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let mut out = self.value(a).clone();
        out.data_mut()
            .iter_mut()
            .zip(self.value(b).data())
            .for_each(|(x, &y)| *x = f(*x, y));
        out
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = self.zip_with(a, b, |x, y| x + y);
        self.checked(y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let y = self.zip_with(a, b, |x, y| x - y);
        self.checked(y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = self.zip_with(a, b, |x, y| x * y);
        self.checked(y, Op::Mul(a, b), "mul")
    }

    /// Concatenates `[N, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::Shape("concat of zero tensors".into()))?;
        let (n, _, h, w) = self.value(*first).dims4()?;
        let mut total_c = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(NnError::Shape(format!(
                    "concat: [{pn},{pc},{ph},{pw}] incompatible with batch {n} size {h}x{w}"
                )));
            }
            total_c += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total_c * plane);
        for b in 0..n {
            for &p in parts {
                let pc = self.value(p).shape()[1];
                data.extend_from_slice(&self.value(p).data()[b * pc * plane..(b + 1) * pc * plane]);
            }
        }
        let y = Tensor::from_vec(&[n, total_c, h, w], data)?;
        Ok(self.push(
            y,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Channels `start..end` of a `[N, C, H, W]` tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if start >= end || end > c {
            return Err(NnError::Shape(format!(
                "channel slice {start}..{end} of {c}"
            )));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (end - start) * plane);
        for b in 0..n {
            data.extend_from_slice(
                &self.value(x).data()[(b * c + start) * plane..(b * c + end) * plane],
            );
        }
        let y = Tensor::from_vec(&[n, end - start, h, w], data)?;
        Ok(self.push(y, Op::Slice { x, start, end }))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(NnError::Shape("mean of an empty tensor".into()));
        }
        let m = t.sum() / T::of(t.numel() as f64);
        self.checked(Tensor::scalar(m), Op::Mean { x }, "mean")
    }

    /// Scalar reconstruction loss averaged over every element.
    pub fn loss(&mut self, pred: Var, target: Var, kind: LossKind) -> Result<Var> {
        self.same_shape(pred, target, "loss")?;
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let count = T::of(p.len() as f64);
        let v = match kind {
            LossKind::Mse => p.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() / count,
            LossKind::Bce => {
                let lo = T::of(BCE_CLAMP);
                let hi = T::one() - lo;
                -p.iter()
                    .zip(t)
                    .map(|(&a, &b)| {
                        let a = a.max(lo).min(hi);
                        b * a.ln() + (T::one() - b) * (T::one() - a).ln()
                    })
                    .sum::<T>()
                    / count
            }
        };
        self.checked(Tensor::scalar(v), Op::Loss { pred, target, kind }, "loss")
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).numel() != 1 {
            return Err(NnError::InvalidParameter(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), T::one()));
        for idx in (0..=root.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (_, _, h, wd) = xv.dims4()?;
                    let (_, _, kh, kw) = wv.dims4()?;
                    add_into(
                        &mut grads[x.0],
                        kernels::conv2d_backward_input(&gy, wv, (h, wd), *stride, *pad)?,
                    );
                    add_into(
                        &mut grads[w.0],
                        kernels::conv2d_backward_weight(xv, &gy, (kh, kw), *stride, *pad)?,
                    );
                    if let Some(b) = b {
                        add_into(&mut grads[b.0], kernels::channel_sum(&gy)?);
                    }
                }
                Op::ConvTranspose2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (_, _, kh, kw) = wv.dims4()?;
                    add_into(
                        &mut grads[x.0],
                        kernels::conv2d_forward(&gy, wv, None, *stride, *pad)?,
                    );
                    add_into(
                        &mut grads[w.0],
                        kernels::conv2d_backward_weight(&gy, xv, (kh, kw), *stride, *pad)?,
                    );
                    if let Some(b) = b {
                        add_into(&mut grads[b.0], kernels::channel_sum(&gy)?);
                    }
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    stats,
                } => {
                    let (n, c, h, w) = gy.dims4()?;
                    let plane = h * w;
                    let cpg = c / groups;
                    let span = cpg * plane;
                    let m = T::of(span as f64);
                    let gam = self.value(*gamma).data();
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    let mut dx = Tensor::zeros(gy.shape());
                    let mut dxhat = vec![T::zero(); span];
                    for b in 0..n {
                        for g in 0..*groups {
                            let off = (b * c + g * cpg) * plane;
                            let gys = &gy.data()[off..off + span];
                            let xh = &stats.xhat.data()[off..off + span];
                            for k in 0..cpg {
                                let ch = g * cpg + k;
                                let r = k * plane..(k + 1) * plane;
                                for i in r {
                                    dgamma[ch] += gys[i] * xh[i];
                                    dbeta[ch] += gys[i];
                                    dxhat[i] = gys[i] * gam[ch];
                                }
                            }
                            let s1: T = dxhat.iter().copied().sum();
                            let s2: T = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                            let is = stats.inv_std[b * groups + g];
                            let dxs = &mut dx.data_mut()[off..off + span];
                            for i in 0..span {
                                dxs[i] = is / m * (m * dxhat[i] - s1 - xh[i] * s2);
                            }
                        }
                    }
                    add_into(&mut grads[x.0], dx);
                    add_into(&mut grads[gamma.0], Tensor::from_vec(&[c], dgamma)?);
                    add_into(&mut grads[beta.0], Tensor::from_vec(&[c], dbeta)?);
                }
                Op::Act { x, kind } => {
                    let xv = self.value(*x).data();
                    let yv = node.value.data();
                    let shape = xv.len();
                    debug_assert_eq!(shape, gy.numel());
                    acc(&mut grads[x.0], self.value(*x).shape(), |g| match *kind {
                        Activation::LeakyRelu(s) => {
                            let s = T::of(s);
                            for ((gi, &d), &xi) in g.iter_mut().zip(gy.data()).zip(xv) {
                                *gi += if xi > T::zero() { d } else { s * d };
                            }
                        }
                        Activation::Relu => {
                            for ((gi, &d), &xi) in g.iter_mut().zip(gy.data()).zip(xv) {
                                if xi > T::zero() {
                                    *gi += d;
                                }
                            }
                        }
                        Activation::Sigmoid => {
                            for ((gi, &d), &y) in g.iter_mut().zip(gy.data()).zip(yv) {
                                *gi += d * y * (T::one() - y);
                            }
                        }
                        Activation::Tanh => {
                            for ((gi, &d), &y) in g.iter_mut().zip(gy.data()).zip(yv) {
                                *gi += d * (T::one() - y * y);
                            }
                        }
                    });
                }
                Op::Mask { x, mask, plane } => {
                    acc(&mut grads[x.0], node.value.shape(), |g| {
                        for ((gc, dc), &m) in
                            g.chunks_mut(*plane).zip(gy.data().chunks(*plane)).zip(mask)
                        {
                            gc.iter_mut().zip(dc).for_each(|(a, &d)| *a += d * m);
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc(&mut grads[a.0], gy.shape(), |g| {
                        g.iter_mut().zip(gy.data()).for_each(|(x, &d)| *x += d)
                    });
                    acc(&mut grads[b.0], gy.shape(), |g| {
                        g.iter_mut().zip(gy.data()).for_each(|(x, &d)| *x += d)
                    });
                }
                Op::Sub(a, b) => {
                    acc(&mut grads[a.0], gy.shape(), |g| {
                        g.iter_mut().zip(gy.data()).for_each(|(x, &d)| *x += d)
                    });
                    acc(&mut grads[b.0], gy.shape(), |g| {
                        g.iter_mut().zip(gy.data()).for_each(|(x, &d)| *x -= d)
                    });
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    acc(&mut grads[a.0], gy.shape(), |g| {
                        for ((x, &d), &o) in g.iter_mut().zip(gy.data()).zip(bv) {
                            *x += d * o;
                        }
                    });
                    acc(&mut grads[b.0], gy.shape(), |g| {
                        for ((x, &d), &o) in g.iter_mut().zip(gy.data()).zip(av) {
                            *x += d * o;
                        }
                    });
                }
                Op::Concat { parts } => {
                    let (n, _, h, w) = gy.dims4()?;
                    let plane = h * w;
                    let total_c = gy.shape()[1];
                    let mut c0 = 0;
                    for p in parts {
                        let pshape = self.value(*p).shape().to_vec();
                        let pc = pshape[1];
                        acc(&mut grads[p.0], &pshape, |g| {
                            for b in 0..n {
                                let src = &gy.data()
                                    [(b * total_c + c0) * plane..(b * total_c + c0 + pc) * plane];
                                let dst = &mut g[b * pc * plane..(b + 1) * pc * plane];
                                dst.iter_mut().zip(src).for_each(|(x, &d)| *x += d);
                            }
                        });
                        c0 += pc;
                    }
                }
                Op::Slice { x, start, end } => {
                    let xshape = self.value(*x).shape().to_vec();
                    let (n, c, h, w) = (xshape[0], xshape[1], xshape[2], xshape[3]);
                    let plane = h * w;
                    let width = (end - start) * plane;
                    acc(&mut grads[x.0], &xshape, |g| {
                        for b in 0..n {
                            let dst = &mut g[(b * c + start) * plane..][..width];
                            let src = &gy.data()[b * width..(b + 1) * width];
                            dst.iter_mut().zip(src).for_each(|(x, &d)| *x += d);
                        }
                    });
                }
                Op::Mean { x } => {
                    let xv = self.value(*x);
                    let d = gy.data()[0] / T::of(xv.numel() as f64);
                    acc(&mut grads[x.0], xv.shape(), |g| {
                        g.iter_mut().for_each(|v| *v += d)
                    });
                }
                Op::Loss { pred, target, kind } => {
                    let p = self.value(*pred).data();
                    let t = self.value(*target).data();
                    let scale = gy.data()[0] / T::of(p.len() as f64);
                    let two = T::of(2.0);
                    match kind {
                        LossKind::Mse => {
                            acc(&mut grads[pred.0], self.value(*pred).shape(), |g| {
                                for ((gi, &a), &b) in g.iter_mut().zip(p).zip(t) {
                                    *gi += scale * two * (a - b);
                                }
                            });
                            acc(&mut grads[target.0], self.value(*target).shape(), |g| {
                                for ((gi, &a), &b) in g.iter_mut().zip(p).zip(t) {
                                    *gi -= scale * two * (a - b);
                                }
                            });
                        }
                        LossKind::Bce => {
                            let lo = T::of(BCE_CLAMP);
                            let hi = T::one() - lo;
                            acc(&mut grads[pred.0], self.value(*pred).shape(), |g| {
                                for ((gi, &a), &b) in g.iter_mut().zip(p).zip(t) {
                                    if a > lo && a < hi {
                                        *gi += scale * (a - b) / (a * (T::one() - a));
                                    }
                                }
                            });
                            acc(&mut grads[target.0], self.value(*target).shape(), |g| {
                                for ((gi, &a), _) in g.iter_mut().zip(p).zip(t) {
                                    let a = a.max(lo).min(hi);
                                    *gi -= scale * (a.ln() - (T::one() - a).ln());
                                }
                            });
                        }
                    }
                }
            }
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }
}
