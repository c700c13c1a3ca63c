//! Define-by-run tape: every primitive evaluates eagerly and records itself
//! so that [`Graph::backward`] can replay the chain rule in reverse.

use crate::error::{arg_err, shape_err, Error, Result};
use crate::kernels::{self, AttnGeom, Conv1dGeom, Patch2d};
use crate::real::{gemm, Real, Strides};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// 2-D cross-correlation settings; time is the first spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub stride: (usize, usize),
    /// (front, back) padding along the first spatial axis.
    pub pad_t: (usize, usize),
    /// (front, back) padding along the second spatial axis.
    pub pad_f: (usize, usize),
}

/// Transposed 2-D convolution producing the full (uncropped) output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvT2d {
    pub stride: (usize, usize),
    /// Extra trailing rows/columns appended to the output.
    pub out_pad: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1d {
    pub pad: (usize, usize),
    pub groups: usize,
}

#[derive(Debug)]
struct LstmCache<S> {
    /// Post-activation gates `[b, t, 4h]` in order i, f, g, o.
    gates: Vec<S>,
    cell: Vec<S>,
    tanh_cell: Vec<S>,
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Tanh(Var),
    Sigmoid(Var),
    Elu(Var),
    Silu(Var),
    Sqrt(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Narrow { x: Var, axis: usize, start: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Expand { x: Var, axis: usize },
    Sum(Var),
    Mean(Var),
    MeanAxis { x: Var, axis: usize },
    GroupLinear { x: Var, w: Var, b: Option<Var>, groups: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: Patch2d },
    ConvT2d { x: Var, w: Var, b: Option<Var>, geom: Patch2d },
    Conv1d { x: Var, w: Var, b: Option<Var>, geom: Conv1dGeom },
    Lstm { x: Var, wih: Var, whh: Var, b: Var, cache: LstmCache<S> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, rstd: Vec<S> },
    Softmax(Var),
    Attention { q: Var, k: Var, v: Var, geom: AttnGeom, probs: Vec<S> },
    Mse(Var, Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<S> },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Real> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Debug, Default)]
pub struct Graph<S: Real> {
    nodes: Vec<Node<S>>,
    params: Vec<(String, Var)>,
}

/// (outer, dim, inner) split around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<S: Real> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf; its gradient is reported by name.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<S>) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push((name.into(), v));
        v
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[S] {
        self.nodes[v.0].value.data()
    }

    // ---- elementwise -------------------------------------------------

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err(op, sa, sb);
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(sa.to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        let g = self.grad_of(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        let g = self.grad_of(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        let g = self.grad_of(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), g))
    }

    pub fn scale(&mut self, a: Var, s: S) -> Var {
        let t = self.value(a).map(|x| x * s);
        let g = self.grad_of(&[a]);
        self.push(t, Op::Scale(a, s), g)
    }

    pub fn identity(&mut self, a: Var) -> Var {
        self.scale(a, S::one())
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.tanh());
        let g = self.grad_of(&[a]);
        self.push(t, Op::Tanh(a), g)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(kernels::sigmoid);
        let g = self.grad_of(&[a]);
        self.push(t, Op::Sigmoid(a), g)
    }

    /// ELU with unit slope parameter.
    pub fn elu(&mut self, a: Var) -> Var {
        let t = self
            .value(a)
            .map(|x| if x > S::zero() { x } else { x.exp_m1() });
        let g = self.grad_of(&[a]);
        self.push(t, Op::Elu(a), g)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x * kernels::sigmoid(x));
        let g = self.grad_of(&[a]);
        self.push(t, Op::Silu(a), g)
    }

    /// `sqrt(x + eps)`; `eps > 0` keeps the gradient finite at zero.
    pub fn sqrt(&mut self, a: Var, eps: S) -> Var {
        let t = self.value(a).map(|x| (x + eps).sqrt());
        let g = self.grad_of(&[a]);
        self.push(t, Op::Sqrt(a), g)
    }

    // ---- shape -------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape.to_vec())?;
        let g = self.grad_of(&[a]);
        Ok(self.push(t, Op::Reshape(a), g))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a);
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return arg_err("permute", format!("{perm:?} is not a permutation of rank {}", shape.len()));
        }
        let (out_shape, data) = kernels::permute(self.data(a), shape, perm);
        let t = Tensor::new(out_shape, data)?;
        let g = self.grad_of(&[a]);
        Ok(self.push(t, Op::Permute(a, perm.to_vec()), g))
    }

    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return arg_err("narrow", format!("range {start}..{} on axis {axis} of {shape:?}", start + len));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = self.data(a);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = Tensor::new(out_shape, data)?;
        let g = self.grad_of(&[a]);
        Ok(self.push(t, Op::Narrow { x: a, axis, start }, g))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return arg_err("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return arg_err("concat", format!("axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return shape_err("concat", &base, s);
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let d = self.shape(x)[axis];
                let src = self.data(x);
                data.extend_from_slice(&src[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        let t = Tensor::new(out_shape, data)?;
        let g = self.grad_of(xs);
        Ok(self.push(t, Op::Concat { xs: xs.to_vec(), axis }, g))
    }

    /// Broadcast a size-1 axis to `n`.
    pub fn expand(&mut self, a: Var, axis: usize, n: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || shape[axis] != 1 {
            return arg_err("expand", format!("axis {axis} of {shape:?} is not a singleton"));
        }
        let (outer, _, inner) = split_axis(&shape, axis);
        let src = self.data(a);
        let mut data = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            for _ in 0..n {
                data.extend_from_slice(&src[o * inner..(o + 1) * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = n;
        let t = Tensor::new(out_shape, data)?;
        let g = self.grad_of(&[a]);
        Ok(self.push(t, Op::Expand { x: a, axis }, g))
    }

    // ---- reductions --------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        let g = self.grad_of(&[a]);
        self.push(t, Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let t = Tensor::scalar(v.sum() / S::c(v.numel().max(1) as f64));
        let g = self.grad_of(&[a]);
        self.push(t, Op::Mean(a), g)
    }

    /// Mean over one axis, keeping it as size 1.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return arg_err("mean_axis", format!("axis {axis} of {shape:?}"));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = self.data(a);
        let inv = S::one() / S::c(dim as f64);
        let mut data = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                let row = &src[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                for (acc, &x) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += x;
                }
            }
        }
        for x in &mut data {
            *x *= inv;
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let t = Tensor::new(out_shape, data)?;
        let g = self.grad_of(&[a]);
        Ok(self.push(t, Op::MeanAxis { x: a, axis }, g))
    }

    // ---- dense layers ------------------------------------------------

    /// `y = x W^T + b` on the last axis; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.last() != Some(&ws[1]) {
            return shape_err("linear", &xs, &ws);
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return shape_err("linear(bias)", self.shape(b), &ws[..1]);
            }
        }
        let y = self.group_linear_eval(x, w, b, 1, 1, ws[0], ws[1]);
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = ws[0];
        let t = Tensor::new(out_shape, y)?;
        let g = self.grad_of(&[x, w]) || b.is_some_and(|b| self.grad_of(&[b]));
        Ok(self.push(t, Op::GroupLinear { x, w, b, groups: 1 }, g))
    }

    /// Independent linear maps over the last axis of `[..., groups, in]`.
    /// `w` is `[groups, out, in]` or `[1, out, in]` (one map shared by all groups).
    pub fn group_linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() < 2 || ws.len() != 3 {
            return shape_err("group_linear", &xs, &ws);
        }
        let groups = xs[xs.len() - 2];
        let (wg, out, inp) = (ws[0], ws[1], ws[2]);
        if xs[xs.len() - 1] != inp || (wg != 1 && wg != groups) {
            return shape_err("group_linear", &xs, &ws);
        }
        if let Some(b) = b {
            if self.shape(b) != [wg, out] {
                return shape_err("group_linear(bias)", self.shape(b), &[wg, out]);
            }
        }
        let y = self.group_linear_eval(x, w, b, groups, wg, out, inp);
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = out;
        let t = Tensor::new(out_shape, y)?;
        let g = self.grad_of(&[x, w]) || b.is_some_and(|b| self.grad_of(&[b]));
        Ok(self.push(t, Op::GroupLinear { x, w, b, groups }, g))
    }

    #[allow(clippy::too_many_arguments)]
    fn group_linear_eval(&self, x: Var, w: Var, b: Option<Var>, groups: usize, wg: usize, out: usize, inp: usize) -> Vec<S> {
        let xd = self.data(x);
        let wd = self.data(w);
        let m = xd.len() / (groups * inp).max(1);
        let mut y = vec![S::zero(); m * groups * out];
        for g in 0..groups {
            let gw = if wg == 1 { 0 } else { g };
            gemm(
                m,
                inp,
                out,
                &xd[g * inp..],
                Strides { rs: groups * inp, cs: 1 },
                &wd[gw * out * inp..],
                Strides::tr(inp),
                S::zero(),
                &mut y[g * out..],
                Strides { rs: groups * out, cs: 1 },
            );
            if let Some(b) = b {
                let bd = &self.data(b)[gw * out..(gw + 1) * out];
                for r in 0..m {
                    let base = (r * groups + g) * out;
                    for (v, &bb) in y[base..base + out].iter_mut().zip(bd) {
                        *v += bb;
                    }
                }
            }
        }
        y
    }

    // ---- convolutions ------------------------------------------------

    /// `x: [b, c, t, f]`, `w: [co, c, kt, kf]`, `b: [co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2d) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return shape_err("conv2d", &xs, &ws);
        }
        let (batch, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, kh, kw) = (ws[0], ws[2], ws[3]);
        let (sh, sw) = spec.stride;
        let hp = h + spec.pad_t.0 + spec.pad_t.1;
        let wp = wd + spec.pad_f.0 + spec.pad_f.1;
        if sh == 0 || sw == 0 || hp < kh || wp < kw {
            return shape_err("conv2d", &xs, &ws);
        }
        if let Some(b) = b {
            if self.shape(b) != [co] {
                return shape_err("conv2d(bias)", self.shape(b), &[co]);
            }
        }
        let geom = Patch2d {
            c,
            h,
            w: wd,
            kh,
            kw,
            sh,
            sw,
            ph: spec.pad_t.0,
            pw: spec.pad_f.0,
            oh: (hp - kh) / sh + 1,
            ow: (wp - kw) / sw + 1,
        };
        let mut y = kernels::conv2d_forward(self.data(x), self.data(w), &geom, co, batch);
        if let Some(b) = b {
            kernels::add_channel_bias(&mut y, self.data(b), geom.cols());
        }
        let t = Tensor::new(vec![batch, co, geom.oh, geom.ow], y)?;
        let g = self.grad_of(&[x, w]) || b.is_some_and(|b| self.grad_of(&[b]));
        Ok(self.push(t, Op::Conv2d { x, w, b, geom }, g))
    }

    /// `x: [b, ci, t, f]`, `w: [ci, co, kt, kf]`, `b: [co]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvT2d) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[0] || spec.stride.0 == 0 || spec.stride.1 == 0 {
            return shape_err("conv_transpose2d", &xs, &ws);
        }
        let (batch, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, kh, kw) = (ws[1], ws[2], ws[3]);
        if h == 0 || wd == 0 {
            return shape_err("conv_transpose2d", &xs, &ws);
        }
        if let Some(b) = b {
            if self.shape(b) != [co] {
                return shape_err("conv_transpose2d(bias)", self.shape(b), &[co]);
            }
        }
        let geom = Patch2d {
            c: co,
            h: (h - 1) * spec.stride.0 + kh + spec.out_pad.0,
            w: (wd - 1) * spec.stride.1 + kw + spec.out_pad.1,
            kh,
            kw,
            sh: spec.stride.0,
            sw: spec.stride.1,
            ph: 0,
            pw: 0,
            oh: h,
            ow: wd,
        };
        let mut y = kernels::conv_t2d_forward(self.data(x), self.data(w), &geom, ci, batch);
        if let Some(b) = b {
            kernels::add_channel_bias(&mut y, self.data(b), geom.h * geom.w);
        }
        let t = Tensor::new(vec![batch, co, geom.h, geom.w], y)?;
        let g = self.grad_of(&[x, w]) || b.is_some_and(|b| self.grad_of(&[b]));
        Ok(self.push(t, Op::ConvT2d { x, w, b, geom }, g))
    }

    /// Grouped 1-D convolution: `x: [n, c, l]`, `w: [co, c/groups, k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv1d) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let groups = spec.groups;
        if xs.len() != 3 || ws.len() != 3 || groups == 0 || xs[1] % groups != 0 || ws[0] % groups != 0 || ws[1] * groups != xs[1] {
            return shape_err("conv1d", &xs, &ws);
        }
        let lp = xs[2] + spec.pad.0 + spec.pad.1;
        if lp < ws[2] {
            return shape_err("conv1d", &xs, &ws);
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return shape_err("conv1d(bias)", self.shape(b), &ws[..1]);
            }
        }
        let geom = Conv1dGeom {
            n: xs[0],
            c: xs[1],
            l: xs[2],
            co: ws[0],
            k: ws[2],
            groups,
            p0: spec.pad.0,
            lo: lp - ws[2] + 1,
        };
        let y = kernels::conv1d_forward(self.data(x), self.data(w), b.map(|b| self.data(b)), &geom);
        let t = Tensor::new(vec![geom.n, geom.co, geom.lo], y)?;
        let g = self.grad_of(&[x, w]) || b.is_some_and(|b| self.grad_of(&[b]));
        Ok(self.push(t, Op::Conv1d { x, w, b, geom }, g))
    }

    // ---- recurrent ---------------------------------------------------

    /// Single-layer LSTM over `x: [b, t, in]`, zero initial state.
    /// `wih: [4h, in]`, `whh: [4h, h]`, `b: [4h]`, gate order i, f, g, o.
    pub fn lstm(&mut self, x: Var, wih: Var, whh: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let wis = self.shape(wih).to_vec();
        let whs = self.shape(whh).to_vec();
        if xs.len() != 3 || wis.len() != 2 || whs.len() != 2 || wis[1] != xs[2] || wis[0] % 4 != 0 {
            return shape_err("lstm", &xs, &wis);
        }
        let hid = wis[0] / 4;
        if whs != [4 * hid, hid] {
            return shape_err("lstm(recurrent)", &whs, &[4 * hid, hid]);
        }
        if self.shape(b) != [4 * hid] {
            return shape_err("lstm(bias)", self.shape(b), &[4 * hid]);
        }
        let (batch, steps, inp) = (xs[0], xs[1], xs[2]);
        let g4 = 4 * hid;
        let mut pre = vec![S::zero(); batch * steps * g4];
        gemm(batch * steps, inp, g4, self.data(x), Strides::rm(inp), self.data(wih), Strides::tr(inp), S::zero(), &mut pre, Strides::rm(g4));
        let bd = self.data(b);
        for row in pre.chunks_mut(g4) {
            for (v, &bb) in row.iter_mut().zip(bd) {
                *v += bb;
            }
        }
        let whd = self.data(whh);
        let mut h_out = vec![S::zero(); batch * steps * hid];
        let mut cell = vec![S::zero(); batch * steps * hid];
        let mut tanh_cell = vec![S::zero(); batch * steps * hid];
        for bi in 0..batch {
            for t in 0..steps {
                let gi = (bi * steps + t) * g4;
                if t > 0 {
                    let hp = (bi * steps + t - 1) * hid;
                    let (prev, _) = h_out.split_at(hp + hid);
                    gemm(1, hid, g4, &prev[hp..], Strides::rm(hid), whd, Strides::tr(hid), S::one(), &mut pre[gi..gi + g4], Strides::rm(g4));
                }
                let hi = (bi * steps + t) * hid;
                for j in 0..hid {
                    let i = kernels::sigmoid(pre[gi + j]);
                    let f = kernels::sigmoid(pre[gi + hid + j]);
                    let gg = pre[gi + 2 * hid + j].tanh();
                    let o = kernels::sigmoid(pre[gi + 3 * hid + j]);
                    let c_prev = if t > 0 { cell[hi - hid + j] } else { S::zero() };
                    let c = f * c_prev + i * gg;
                    let tc = c.tanh();
                    pre[gi + j] = i;
                    pre[gi + hid + j] = f;
                    pre[gi + 2 * hid + j] = gg;
                    pre[gi + 3 * hid + j] = o;
                    cell[hi + j] = c;
                    tanh_cell[hi + j] = tc;
                    h_out[hi + j] = o * tc;
                }
            }
        }
        let t = Tensor::new(vec![batch, steps, hid], h_out)?;
        let g = self.grad_of(&[x, wih, whh, b]);
        let cache = LstmCache {
            gates: pre,
            cell,
            tanh_cell,
        };
        Ok(self.push(t, Op::Lstm { x, wih, whh, b, cache }, g))
    }

    // ---- normalization / attention ----------------------------------

    /// Layer normalization over the last axis, eps = 1e-5.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().unwrap_or(&0);
        if d == 0 || self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return shape_err("layer_norm", &xs, self.shape(gamma));
        }
        let eps = S::c(1e-5);
        let inv_d = S::one() / S::c(d as f64);
        let src = self.data(x);
        let (gd, bd) = (self.data(gamma), self.data(beta));
        let rows = src.len() / d;
        let mut xhat = vec![S::zero(); src.len()];
        let mut rstd = vec![S::zero(); rows];
        let mut y = vec![S::zero(); src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<S>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_d;
            let rs = S::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                y[r * d + j] = xh * gd[j] + bd[j];
            }
        }
        let t = Tensor::new(xs, y)?;
        let g = self.grad_of(&[x, gamma, beta]);
        Ok(self.push(t, Op::LayerNorm { x, gamma, beta, xhat, rstd }, g))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().unwrap_or(&0);
        if d == 0 {
            return arg_err("softmax", format!("empty last axis in {xs:?}"));
        }
        let mut y = self.data(x).to_vec();
        for row in y.chunks_mut(d) {
            softmax_in_place(row);
        }
        let t = Tensor::new(xs, y)?;
        let g = self.grad_of(&[x]);
        Ok(self.push(t, Op::Softmax(x), g))
    }

    /// Scaled dot-product attention over `[n, l, e]` with `heads` splitting `e`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
        let qs = self.shape(q).to_vec();
        if qs.len() != 3 || self.shape(k) != qs.as_slice() || self.shape(v) != qs.as_slice() {
            return shape_err("attention", &qs, self.shape(k));
        }
        if heads == 0 || qs[2] % heads != 0 {
            return arg_err("attention", format!("{} channels do not split into {heads} heads", qs[2]));
        }
        let geom = AttnGeom {
            n: qs[0],
            l: qs[1],
            e: qs[2],
            heads,
            causal,
        };
        let (y, probs) = kernels::attention_forward(self.data(q), self.data(k), self.data(v), &geom);
        let t = Tensor::new(qs, y)?;
        let g = self.grad_of(&[q, k, v]);
        Ok(self.push(t, Op::Attention { q, k, v, geom, probs }, g))
    }

    // ---- losses ------------------------------------------------------

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err("mse", sa, sb);
        }
        let n = S::c(self.value(a).numel().max(1) as f64);
        let s: S = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let g = self.grad_of(&[a, b]);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, b), g))
    }

    /// Mean over rows of `-log softmax(logits)[label]`; `logits: [m, classes]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || ls[0] != labels.len() {
            return shape_err("cross_entropy", &ls, &[labels.len()]);
        }
        let classes = ls[1];
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return arg_err("cross_entropy", format!("label {bad} out of range for {classes} classes"));
        }
        let mut probs = self.data(logits).to_vec();
        let mut total = S::zero();
        for (row, &label) in probs.chunks_mut(classes).zip(labels) {
            let mx = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().map(|&v| (v - mx).exp()).sum::<S>().ln() + mx;
            total += lse - row[label];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let m = S::c(labels.len().max(1) as f64);
        let g = self.grad_of(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / m),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            g,
        ))
    }

    // ---- reverse pass ------------------------------------------------

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let ls = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(ls.to_vec()));
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &gout, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(gout);
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Zero gradient buffer for `v`, or `None` if it needs no gradient.
    fn zeros_for(&self, v: Var) -> Option<Vec<S>> {
        self.wants(v).then(|| vec![S::zero(); self.value(v).numel()])
    }

    fn backprop_node(&self, node: &Node<S>, gout: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let go = gout.data();
        let y = node.value.data();
        let mut acc = |v: Var, data: Vec<S>| {
            if !self.wants(v) {
                return;
            }
            let shape = self.shape(v).to_vec();
            match &mut grads[v.0] {
                Some(t) => {
                    for (a, b) in t.data_mut().iter_mut().zip(data) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(Tensor::new(shape, data).expect("gradient shape")),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, go.to_vec());
                acc(*b, go.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, go.to_vec());
                acc(*b, go.iter().map(|&g| -g).collect());
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                if self.wants(*a) {
                    acc(*a, go.iter().zip(bd).map(|(&g, &x)| g * x).collect());
                }
                if self.wants(*b) {
                    acc(*b, go.iter().zip(ad).map(|(&g, &x)| g * x).collect());
                }
            }
            Op::Scale(a, s) => acc(*a, go.iter().map(|&g| g * *s).collect()),
            Op::Tanh(a) => acc(*a, go.iter().zip(y).map(|(&g, &t)| g * (S::one() - t * t)).collect()),
            Op::Sigmoid(a) => acc(*a, go.iter().zip(y).map(|(&g, &s)| g * s * (S::one() - s)).collect()),
            Op::Elu(a) => {
                let xd = self.data(*a);
                acc(
                    *a,
                    go.iter()
                        .zip(xd.iter().zip(y))
                        .map(|(&g, (&x, &yy))| if x > S::zero() { g } else { g * (yy + S::one()) })
                        .collect(),
                );
            }
            Op::Silu(a) => {
                let xd = self.data(*a);
                acc(
                    *a,
                    go.iter()
                        .zip(xd)
                        .map(|(&g, &x)| {
                            let s = kernels::sigmoid(x);
                            g * s * (S::one() + x * (S::one() - s))
                        })
                        .collect(),
                );
            }
            Op::Sqrt(a) => acc(*a, go.iter().zip(y).map(|(&g, &r)| g / (r + r)).collect()),
            Op::Reshape(a) => acc(*a, go.to_vec()),
            Op::Permute(a, perm) => {
                let inv = kernels::inverse_perm(perm);
                let (_, data) = kernels::permute(go, gout.shape(), &inv);
                acc(*a, data);
            }
            Op::Narrow { x, axis, start } => {
                let shape = self.shape(*x);
                let (outer, dim, inner) = split_axis(shape, *axis);
                let len = gout.shape()[*axis];
                let mut d = vec![S::zero(); outer * dim * inner];
                for o in 0..outer {
                    let dst = (o * dim + start) * inner;
                    d[dst..dst + len * inner].copy_from_slice(&go[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*x, d);
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(gout.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let dim = self.shape(x)[*axis];
                    if self.wants(x) {
                        let mut d = Vec::with_capacity(outer * dim * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&go[base..base + dim * inner]);
                        }
                        acc(x, d);
                    }
                    offset += dim;
                }
            }
            Op::Expand { x, axis } => {
                let (outer, n, inner) = split_axis(gout.shape(), *axis);
                let mut d = vec![S::zero(); outer * inner];
                for o in 0..outer {
                    for r in 0..n {
                        let src = &go[(o * n + r) * inner..(o * n + r + 1) * inner];
                        for (a, &b) in d[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *a += b;
                        }
                    }
                }
                acc(*x, d);
            }
            Op::Sum(a) => acc(*a, vec![go[0]; self.value(*a).numel()]),
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                acc(*a, vec![go[0] / S::c(n.max(1) as f64); n]);
            }
            Op::MeanAxis { x, axis } => {
                let (outer, dim, inner) = split_axis(self.shape(*x), *axis);
                let inv = S::one() / S::c(dim as f64);
                let mut d = Vec::with_capacity(outer * dim * inner);
                for o in 0..outer {
                    for _ in 0..dim {
                        d.extend(go[o * inner..(o + 1) * inner].iter().map(|&g| g * inv));
                    }
                }
                acc(*x, d);
            }
            Op::GroupLinear { x, w, b, groups } => {
                let groups = *groups;
                let ws = self.shape(*w);
                let (wg, out, inp) = if ws.len() == 3 { (ws[0], ws[1], ws[2]) } else { (1, ws[0], ws[1]) };
                let xd = self.data(*x);
                let wd = self.data(*w);
                let m = xd.len() / (groups * inp).max(1);
                let mut dx = self.zeros_for(*x);
                let mut dw = self.zeros_for(*w);
                let mut db = b.and_then(|b| self.zeros_for(b));
                for g in 0..groups {
                    let gw = if wg == 1 { 0 } else { g };
                    let gs = Strides { rs: groups * out, cs: 1 };
                    if let Some(dx) = dx.as_mut() {
                        gemm(m, out, inp, &go[g * out..], gs, &wd[gw * out * inp..], Strides::rm(inp), S::one(), &mut dx[g * inp..], Strides { rs: groups * inp, cs: 1 });
                    }
                    if let Some(dw) = dw.as_mut() {
                        gemm(out, m, inp, &go[g * out..], Strides { rs: 1, cs: groups * out }, &xd[g * inp..], Strides { rs: groups * inp, cs: 1 }, S::one(), &mut dw[gw * out * inp..], Strides::rm(inp));
                    }
                    if let Some(db) = db.as_mut() {
                        for r in 0..m {
                            let base = (r * groups + g) * out;
                            for (a, &v) in db[gw * out..(gw + 1) * out].iter_mut().zip(&go[base..base + out]) {
                                *a += v;
                            }
                        }
                    }
                }
                if let Some(d) = dx {
                    acc(*x, d);
                }
                if let Some(d) = dw {
                    acc(*w, d);
                }
                if let (Some(b), Some(d)) = (b, db) {
                    acc(*b, d);
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let batch = self.shape(*x)[0];
                let co = self.shape(*w)[0];
                let mut dx = self.zeros_for(*x);
                let mut dw = self.zeros_for(*w);
                kernels::conv2d_backward(self.data(*x), self.data(*w), go, geom, co, batch, dx.as_deref_mut(), dw.as_deref_mut());
                if let Some(b) = b {
                    if let Some(mut db) = self.zeros_for(*b) {
                        kernels::channel_bias_grad(go, &mut db, geom.cols());
                        acc(*b, db);
                    }
                }
                if let Some(d) = dx {
                    acc(*x, d);
                }
                if let Some(d) = dw {
                    acc(*w, d);
                }
            }
            Op::ConvT2d { x, w, b, geom } => {
                let xs = self.shape(*x);
                let (batch, ci) = (xs[0], xs[1]);
                let mut dx = self.zeros_for(*x);
                let mut dw = self.zeros_for(*w);
                kernels::conv_t2d_backward(self.data(*x), self.data(*w), go, geom, ci, batch, dx.as_deref_mut(), dw.as_deref_mut());
                if let Some(b) = b {
                    if let Some(mut db) = self.zeros_for(*b) {
                        kernels::channel_bias_grad(go, &mut db, geom.h * geom.w);
                        acc(*b, db);
                    }
                }
                if let Some(d) = dx {
                    acc(*x, d);
                }
                if let Some(d) = dw {
                    acc(*w, d);
                }
            }
            Op::Conv1d { x, w, b, geom } => {
                let mut dx = self.zeros_for(*x);
                let mut dw = self.zeros_for(*w);
                let mut db = b.and_then(|b| self.zeros_for(b));
                kernels::conv1d_backward(self.data(*x), self.data(*w), go, geom, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                if let Some(d) = dx {
                    acc(*x, d);
                }
                if let Some(d) = dw {
                    acc(*w, d);
                }
                if let (Some(b), Some(d)) = (b, db) {
                    acc(*b, d);
                }
            }
            Op::Lstm { x, wih, whh, b, cache } => {
                let xs = self.shape(*x);
                let (batch, steps, inp) = (xs[0], xs[1], xs[2]);
                let hid = self.shape(*whh)[1];
                let g4 = 4 * hid;
                let whd = self.data(*whh);
                let mut da = vec![S::zero(); batch * steps * g4];
                let mut dwhh = vec![S::zero(); g4 * hid];
                let mut dh_next = vec![S::zero(); hid];
                let mut dc_next = vec![S::zero(); hid];
                for bi in 0..batch {
                    dh_next.fill(S::zero());
                    dc_next.fill(S::zero());
                    for t in (0..steps).rev() {
                        let hi = (bi * steps + t) * hid;
                        let gi = (bi * steps + t) * g4;
                        for j in 0..hid {
                            let i = cache.gates[gi + j];
                            let f = cache.gates[gi + hid + j];
                            let gg = cache.gates[gi + 2 * hid + j];
                            let o = cache.gates[gi + 3 * hid + j];
                            let tc = cache.tanh_cell[hi + j];
                            let c_prev = if t > 0 { cache.cell[hi - hid + j] } else { S::zero() };
                            let dh = go[hi + j] + dh_next[j];
                            let d_o = dh * tc;
                            let dc = dh * o * (S::one() - tc * tc) + dc_next[j];
                            da[gi + j] = dc * gg * i * (S::one() - i);
                            da[gi + hid + j] = dc * c_prev * f * (S::one() - f);
                            da[gi + 2 * hid + j] = dc * i * (S::one() - gg * gg);
                            da[gi + 3 * hid + j] = d_o * o * (S::one() - o);
                            dc_next[j] = dc * f;
                        }
                        // dh_{t-1} = da_t W_hh
                        gemm(1, g4, hid, &da[gi..gi + g4], Strides::rm(g4), whd, Strides::rm(hid), S::zero(), &mut dh_next, Strides::rm(hid));
                        if t > 0 {
                            let hp = hi - hid;
                            gemm(g4, 1, hid, &da[gi..gi + g4], Strides::tr(g4), &y[hp..hp + hid], Strides::rm(hid), S::one(), &mut dwhh, Strides::rm(hid));
                        }
                    }
                }
                let rows = batch * steps;
                if self.wants(*x) {
                    let mut dx = vec![S::zero(); rows * inp];
                    gemm(rows, g4, inp, &da, Strides::rm(g4), self.data(*wih), Strides::rm(inp), S::zero(), &mut dx, Strides::rm(inp));
                    acc(*x, dx);
                }
                if self.wants(*wih) {
                    let mut dwih = vec![S::zero(); g4 * inp];
                    gemm(g4, rows, inp, &da, Strides::tr(g4), self.data(*x), Strides::rm(inp), S::zero(), &mut dwih, Strides::rm(inp));
                    acc(*wih, dwih);
                }
                if self.wants(*b) {
                    let mut dbias = vec![S::zero(); g4];
                    for row in da.chunks(g4) {
                        for (a, &v) in dbias.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    acc(*b, dbias);
                }
                acc(*whh, dwhh);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = self.shape(*gamma)[0];
                let gd = self.data(*gamma);
                let mut dgamma = vec![S::zero(); d];
                let mut dbeta = vec![S::zero(); d];
                let mut dx = vec![S::zero(); go.len()];
                let inv_d = S::one() / S::c(d as f64);
                let mut dxhat = vec![S::zero(); d];
                for (r, &rs) in rstd.iter().enumerate() {
                    let gr = &go[r * d..(r + 1) * d];
                    let xr = &xhat[r * d..(r + 1) * d];
                    let mut m1 = S::zero();
                    let mut m2 = S::zero();
                    for j in 0..d {
                        dgamma[j] += gr[j] * xr[j];
                        dbeta[j] += gr[j];
                        dxhat[j] = gr[j] * gd[j];
                        m1 += dxhat[j];
                        m2 += dxhat[j] * xr[j];
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    for j in 0..d {
                        dx[r * d + j] = rs * (dxhat[j] - m1 - xr[j] * m2);
                    }
                }
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::Softmax(x) => {
                let d = *gout.shape().last().unwrap();
                let mut dx = vec![S::zero(); go.len()];
                for ((dr, gr), yr) in dx.chunks_mut(d).zip(go.chunks(d)).zip(y.chunks(d)) {
                    let dot: S = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for j in 0..d {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::Attention { q, k, v, geom, probs } => {
                let n = go.len();
                let (mut dq, mut dk, mut dv) = (vec![S::zero(); n], vec![S::zero(); n], vec![S::zero(); n]);
                kernels::attention_backward(self.data(*q), self.data(*k), self.data(*v), probs, go, geom, &mut dq, &mut dk, &mut dv);
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
            Op::Mse(a, b) => {
                let n = S::c(self.value(*a).numel().max(1) as f64);
                let scale = go[0] * S::c(2.0) / n;
                let diff: Vec<S> = self.data(*a).iter().zip(self.data(*b)).map(|(&x, &y)| (x - y) * scale).collect();
                if self.wants(*b) {
                    acc(*b, diff.iter().map(|&d| -d).collect());
                }
                acc(*a, diff);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let classes = self.shape(*logits)[1];
                let scale = go[0] / S::c(labels.len().max(1) as f64);
                let mut d: Vec<S> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * classes + l] -= scale;
                }
                acc(*logits, d);
            }
        }
    }
}

pub(crate) fn softmax_in_place<S: Real>(row: &mut [S]) {
    let mx = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
    let mut z = S::zero();
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}
