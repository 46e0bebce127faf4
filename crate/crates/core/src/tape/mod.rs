//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Every backward rule is written in terms of other tape operations, so the
//! gradient returned by [`Tape::grad`] is itself a differentiable node. Taking
//! the gradient of an expression that already contains a gradient (the
//! critic's gradient penalty) needs no special handling.
//!
//! ```
//! use precip_downscale::tape::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::new(vec![2], vec![3.0, -1.0]));
//! let y = tape.mul(x, x);
//! let s = tape.sum_all(y);
//! let g = tape.grad(s, &[x])[0];
//! assert_eq!(tape.value(g).data, vec![6.0, -2.0]);
//! // second derivative of sum(x^2) along a unit direction is 2
//! let gs = tape.sum_all(g);
//! let h = tape.grad(gs, &[x])[0];
//! assert_eq!(tape.value(h).data, vec![2.0, 2.0]);
//! ```

mod kernels;
mod tensor;

pub use tensor::{Scalar, Tensor};

use kernels::axis_split;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddChannelBias(Var, Var),
    SumToChannel(Var),
    BroadcastChannel(Var),
    Conv2d(Var, Var),
    ConvWeightGrad(Var, Var),
    FlipTranspose(Var),
    LeakyRelu(Var, f64),
    Upsample(Var, usize),
    SumPool(Var, usize),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    SumAll(Var),
    BroadcastAll(Var),
    SumPerSample(Var),
    BroadcastPerSample(Var),
    SumSpatial(Var),
    BroadcastSpatial(Var),
    MatMul(Var, Var, bool, bool),
    Sqrt(Var),
    HalfRecipSafe(Var),
    GroupSum(Var, usize),
    GroupRepeat(Var, usize),
    Reshape(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b)
            | Sub(a, b)
            | Mul(a, b)
            | AddChannelBias(a, b)
            | Conv2d(a, b)
            | ConvWeightGrad(a, b)
            | MatMul(a, b, _, _) => vec![*a, *b],
            Concat(xs) => xs.clone(),
            Scale(a, _)
            | AddScalar(a)
            | SumToChannel(a)
            | BroadcastChannel(a)
            | FlipTranspose(a)
            | LeakyRelu(a, _)
            | Upsample(a, _)
            | SumPool(a, _)
            | Slice(a, _, _)
            | SumAll(a)
            | BroadcastAll(a)
            | SumPerSample(a)
            | BroadcastPerSample(a)
            | SumSpatial(a)
            | BroadcastSpatial(a)
            | Sqrt(a)
            | HalfRecipSafe(a)
            | GroupSum(a, _)
            | GroupRepeat(a, _)
            | Reshape(a) => vec![*a],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    // slice axis lives here to keep `Op` small
    axis: usize,
}

/// Append-only computation graph.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.push_axis(value, op, 0)
    }

    fn push_axis(&mut self, value: Tensor<T>, op: Op, axis: usize) -> Var {
        self.nodes.push(Node { value, op, axis });
        Var(self.nodes.len() - 1)
    }

    /// Inputs, parameters and constants are all leaves; which of them are
    /// differentiated is decided by the `wrt` list passed to [`Tape::grad`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape, vb.shape, "elementwise shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(va.shape.clone(), data);
        self.push(t, op)
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op) -> Var {
        let va = &self.nodes[a.0].value;
        let t = Tensor::new(va.shape.clone(), va.data.iter().map(|&x| f(x)).collect());
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let k = T::of(c);
        self.map(a, |x| x * k, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let k = T::of(c);
        self.map(a, |x| x + k, Op::AddScalar(a))
    }

    /// `x[n, c, ...] + b[c]`.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let vb = &self.nodes[b.0].value;
        let (outer, c, inner) = axis_split(&vx.shape, 1);
        assert_eq!(vb.data.len(), c, "bias length mismatch");
        let mut data = vx.data.clone();
        for o in 0..outer {
            for ch in 0..c {
                let bias = vb.data[ch];
                for v in &mut data[(o * c + ch) * inner..][..inner] {
                    *v = *v + bias;
                }
            }
        }
        let t = Tensor::new(vx.shape.clone(), data);
        self.push(t, Op::AddChannelBias(x, b))
    }

    pub fn sum_to_channel(&mut self, x: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let (outer, c, inner) = axis_split(&vx.shape, 1);
        let mut data = vec![T::zero(); c];
        for o in 0..outer {
            for (ch, acc) in data.iter_mut().enumerate() {
                let s: T = vx.data[(o * c + ch) * inner..][..inner].iter().copied().sum();
                *acc = *acc + s;
            }
        }
        self.push(Tensor::new(vec![c], data), Op::SumToChannel(x))
    }

    pub fn broadcast_channel(&mut self, b: Var, shape: &[usize]) -> Var {
        let vb = &self.nodes[b.0].value;
        let (outer, c, inner) = axis_split(shape, 1);
        assert_eq!(vb.data.len(), c);
        let mut data = Vec::with_capacity(outer * c * inner);
        for _ in 0..outer {
            for ch in 0..c {
                data.extend(std::iter::repeat_n(vb.data[ch], inner));
            }
        }
        self.push(Tensor::new(shape.to_vec(), data), Op::BroadcastChannel(b))
    }

    /// Same-padded, stride-1 2-D correlation.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Var {
        let (vx, vw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        let data = kernels::conv2d(&vx.data, &vx.shape, &vw.data, &vw.shape);
        let shape = vec![vx.shape[0], vw.shape[0], vx.shape[2], vx.shape[3]];
        self.push(Tensor::new(shape, data), Op::Conv2d(x, w))
    }

    pub fn conv_weight_grad(&mut self, x: Var, g: Var, k: usize) -> Var {
        let (vx, vg) = (&self.nodes[x.0].value, &self.nodes[g.0].value);
        let data = kernels::conv_weight_grad(&vx.data, &vx.shape, &vg.data, &vg.shape, k);
        let shape = vec![vg.shape[1], vx.shape[1], k, k];
        self.push(Tensor::new(shape, data), Op::ConvWeightGrad(x, g))
    }

    pub fn flip_transpose(&mut self, w: Var) -> Var {
        let vw = &self.nodes[w.0].value;
        let (data, shape) = kernels::flip_transpose(&vw.data, &vw.shape);
        self.push(Tensor::new(shape, data), Op::FlipTranspose(w))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        let a = T::of(alpha);
        self.map(x, |v| if v > T::zero() { v } else { v * a }, Op::LeakyRelu(x, alpha))
    }

    pub fn upsample(&mut self, x: Var, f: usize) -> Var {
        let vx = &self.nodes[x.0].value;
        let (data, shape) = kernels::upsample(&vx.data, &vx.shape, f);
        self.push(Tensor::new(shape, data), Op::Upsample(x, f))
    }

    pub fn sum_pool(&mut self, x: Var, f: usize) -> Var {
        let vx = &self.nodes[x.0].value;
        let (data, shape) = kernels::sum_pool(&vx.data, &vx.shape, f);
        self.push(Tensor::new(shape, data), Op::SumPool(x, f))
    }

    pub fn avg_pool(&mut self, x: Var, f: usize) -> Var {
        let s = self.sum_pool(x, f);
        self.scale(s, 1.0 / (f * f) as f64)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        assert!(!xs.is_empty());
        let first = self.nodes[xs[0].0].value.shape.clone();
        let (outer, _, inner) = axis_split(&first, axis);
        let mut total = 0;
        for v in xs {
            let s = &self.nodes[v.0].value.shape;
            assert_eq!(s.len(), first.len());
            assert_eq!(axis_split(s, axis).0, outer, "concat outer mismatch");
            assert_eq!(axis_split(s, axis).2, inner, "concat inner mismatch");
            total += s[axis];
        }
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in xs {
                let t = &self.nodes[v.0].value;
                let len = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push_axis(Tensor::new(shape, data), Op::Concat(xs.to_vec()), axis)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let vx = &self.nodes[x.0].value;
        let (outer, n, inner) = axis_split(&vx.shape, axis);
        assert!(start + len <= n, "slice out of range");
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&vx.data[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut shape = vx.shape.clone();
        shape[axis] = len;
        self.push_axis(Tensor::new(shape, data), Op::Slice(x, start, len), axis)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: T = self.nodes[x.0].value.data.iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.numel();
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn broadcast_all(&mut self, s: Var, shape: &[usize]) -> Var {
        let v = self.nodes[s.0].value.item();
        self.push(Tensor::full(shape, v), Op::BroadcastAll(s))
    }

    /// `[n, ...] -> [n]`.
    pub fn sum_per_sample(&mut self, x: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let n = vx.shape[0];
        let inner = vx.numel() / n.max(1);
        let data = (0..n)
            .map(|i| vx.data[i * inner..(i + 1) * inner].iter().copied().sum())
            .collect();
        self.push(Tensor::new(vec![n], data), Op::SumPerSample(x))
    }

    pub fn broadcast_per_sample(&mut self, s: Var, shape: &[usize]) -> Var {
        let vs = &self.nodes[s.0].value;
        let inner: usize = shape[1..].iter().product();
        assert_eq!(vs.data.len(), shape[0]);
        let data = vs.data.iter().flat_map(|&v| std::iter::repeat_n(v, inner)).collect();
        self.push(Tensor::new(shape.to_vec(), data), Op::BroadcastPerSample(s))
    }

    /// `[n, c, h, w] -> [n, c]`.
    pub fn sum_spatial(&mut self, x: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let (n, c) = (vx.shape[0], vx.shape[1]);
        let inner: usize = vx.shape[2..].iter().product();
        let data = (0..n * c)
            .map(|i| vx.data[i * inner..(i + 1) * inner].iter().copied().sum())
            .collect();
        self.push(Tensor::new(vec![n, c], data), Op::SumSpatial(x))
    }

    pub fn mean_spatial(&mut self, x: Var) -> Var {
        let inner: usize = self.nodes[x.0].value.shape[2..].iter().product();
        let s = self.sum_spatial(x);
        self.scale(s, 1.0 / inner as f64)
    }

    pub fn broadcast_spatial(&mut self, s: Var, shape: &[usize]) -> Var {
        let vs = &self.nodes[s.0].value;
        let inner: usize = shape[2..].iter().product();
        assert_eq!(vs.data.len(), shape[0] * shape[1]);
        let data = vs.data.iter().flat_map(|&v| std::iter::repeat_n(v, inner)).collect();
        self.push(Tensor::new(shape.to_vec(), data), Op::BroadcastSpatial(s))
    }

    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (data, shape) = kernels::matmul(&va.data, &va.shape, &vb.data, &vb.shape, ta, tb);
        self.push(Tensor::new(shape, data), Op::MatMul(a, b, ta, tb))
    }

    /// Dense layer `x w^T + b` with `x: [n, in]`, `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w, false, true);
        self.add_channel_bias(y, b)
    }

    /// Square root; its derivative is taken as zero at the origin.
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(T::zero()).sqrt(), Op::Sqrt(x))
    }

    fn half_recip_safe(&mut self, x: Var) -> Var {
        let half = T::of(0.5);
        self.map(
            x,
            |v| if v > T::zero() { half / v } else { T::zero() },
            Op::HalfRecipSafe(x),
        )
    }

    /// Sums consecutive groups of `n` along axis 0.
    pub fn group_sum(&mut self, x: Var, n: usize) -> Var {
        let vx = &self.nodes[x.0].value;
        let rows = vx.shape[0];
        assert!(
            n > 0 && rows.is_multiple_of(n),
            "group_sum: {rows} rows not divisible by {n}"
        );
        let inner = vx.numel() / rows.max(1);
        let groups = rows / n;
        let mut data = vec![T::zero(); groups * inner];
        for g in 0..groups {
            let dst = &mut data[g * inner..(g + 1) * inner];
            for k in 0..n {
                let src = &vx.data[(g * n + k) * inner..(g * n + k + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + s;
                }
            }
        }
        let mut shape = vx.shape.clone();
        shape[0] = groups;
        self.push(Tensor::new(shape, data), Op::GroupSum(x, n))
    }

    /// Repeats each row of axis 0 `n` times consecutively.
    pub fn group_repeat(&mut self, x: Var, n: usize) -> Var {
        let vx = &self.nodes[x.0].value;
        let rows = vx.shape[0];
        let inner = vx.numel() / rows.max(1);
        let mut data = Vec::with_capacity(vx.numel() * n);
        for r in 0..rows {
            for _ in 0..n {
                data.extend_from_slice(&vx.data[r * inner..(r + 1) * inner]);
            }
        }
        let mut shape = vx.shape.clone();
        shape[0] = rows * n;
        self.push(Tensor::new(shape, data), Op::GroupRepeat(x, n))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let vx = &self.nodes[x.0].value;
        let t = Tensor::new(shape.to_vec(), vx.data.clone());
        self.push(t, Op::Reshape(x))
    }

    /// Gradients of the scalar `y` with respect to each of `wrt`.
    ///
    /// The returned nodes live on this tape and can be differentiated again.
    /// Nodes in `wrt` that `y` does not depend on get a zero gradient.
    pub fn grad(&mut self, y: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.nodes[y.0].value.numel(), 1, "grad needs a scalar output");
        let n = y.0 + 1;
        let mut depends = vec![false; n];
        for w in wrt {
            if w.0 < n {
                depends[w.0] = true;
            }
        }
        for i in 0..n {
            if !depends[i] {
                depends[i] = self.nodes[i].op.inputs().iter().any(|v| depends[v.0]);
            }
        }
        let mut needed = vec![false; n];
        needed[y.0] = depends[y.0];
        for i in (0..n).rev() {
            if needed[i] {
                for v in self.nodes[i].op.inputs() {
                    if depends[v.0] {
                        needed[v.0] = true;
                    }
                }
            }
        }

        let mut grads: Vec<Option<Var>> = vec![None; n];
        let shape = self.nodes[y.0].value.shape.clone();
        grads[y.0] = Some(self.leaf(Tensor::full(&shape, T::one())));
        for i in (0..n).rev() {
            if !needed[i] {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            for (input, contrib) in self.backward(Var(i), g, &needed) {
                grads[input.0] = Some(match grads[input.0] {
                    Some(prev) => self.add(prev, contrib),
                    None => contrib,
                });
            }
        }
        wrt.iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let s = self.nodes[w.0].value.shape.clone();
                    self.leaf(Tensor::zeros(&s))
                }
            })
            .collect()
    }

    fn backward(&mut self, out: Var, g: Var, needed: &[bool]) -> Vec<(Var, Var)> {
        let op = self.nodes[out.0].op.clone();
        let need = |v: &Var| needed[v.0];
        let mut res = Vec::with_capacity(2);
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if need(&a) {
                    res.push((a, g));
                }
                if need(&b) {
                    res.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if need(&a) {
                    res.push((a, g));
                }
                if need(&b) {
                    let n = self.scale(g, -1.0);
                    res.push((b, n));
                }
            }
            Op::Mul(a, b) => {
                if need(&a) {
                    let d = self.mul(g, b);
                    res.push((a, d));
                }
                if need(&b) {
                    let d = self.mul(g, a);
                    res.push((b, d));
                }
            }
            Op::Scale(a, c) => {
                let d = self.scale(g, c);
                res.push((a, d));
            }
            Op::AddScalar(a) => res.push((a, g)),
            Op::AddChannelBias(x, b) => {
                if need(&x) {
                    res.push((x, g));
                }
                if need(&b) {
                    let d = self.sum_to_channel(g);
                    res.push((b, d));
                }
            }
            Op::SumToChannel(x) => {
                let s = self.shape(x).to_vec();
                let d = self.broadcast_channel(g, &s);
                res.push((x, d));
            }
            Op::BroadcastChannel(b) => {
                let d = self.sum_to_channel(g);
                res.push((b, d));
            }
            Op::Conv2d(x, w) => {
                if need(&x) {
                    let ft = self.flip_transpose(w);
                    let d = self.conv2d(g, ft);
                    res.push((x, d));
                }
                if need(&w) {
                    let k = self.shape(w)[2];
                    let d = self.conv_weight_grad(x, g, k);
                    res.push((w, d));
                }
            }
            Op::ConvWeightGrad(x, gy) => {
                // out = dW(x, gy); the upstream `g` has kernel shape
                if need(&x) {
                    let ft = self.flip_transpose(g);
                    let d = self.conv2d(gy, ft);
                    res.push((x, d));
                }
                if need(&gy) {
                    let d = self.conv2d(x, g);
                    res.push((gy, d));
                }
            }
            Op::FlipTranspose(w) => {
                let d = self.flip_transpose(g);
                res.push((w, d));
            }
            Op::LeakyRelu(x, alpha) => {
                let a = T::of(alpha);
                let vx = &self.nodes[x.0].value;
                let slope = Tensor::new(
                    vx.shape.clone(),
                    vx.data
                        .iter()
                        .map(|&v| if v > T::zero() { T::one() } else { a })
                        .collect(),
                );
                let s = self.leaf(slope);
                let d = self.mul(g, s);
                res.push((x, d));
            }
            Op::Upsample(x, f) => {
                let d = self.sum_pool(g, f);
                res.push((x, d));
            }
            Op::SumPool(x, f) => {
                let d = self.upsample(g, f);
                res.push((x, d));
            }
            Op::Concat(xs) => {
                let axis = self.nodes[out.0].axis;
                let mut offset = 0;
                for x in xs {
                    let len = self.shape(x)[axis];
                    if need(&x) {
                        let d = self.slice(g, axis, offset, len);
                        res.push((x, d));
                    }
                    offset += len;
                }
            }
            Op::Slice(x, start, len) => {
                let axis = self.nodes[out.0].axis;
                let full = self.shape(x).to_vec();
                let mut parts = Vec::with_capacity(3);
                if start > 0 {
                    let mut s = full.clone();
                    s[axis] = start;
                    parts.push(self.leaf(Tensor::zeros(&s)));
                }
                parts.push(g);
                let tail = full[axis] - start - len;
                if tail > 0 {
                    let mut s = full.clone();
                    s[axis] = tail;
                    parts.push(self.leaf(Tensor::zeros(&s)));
                }
                let d = if parts.len() == 1 { g } else { self.concat(&parts, axis) };
                res.push((x, d));
            }
            Op::SumAll(x) => {
                let s = self.shape(x).to_vec();
                let d = self.broadcast_all(g, &s);
                res.push((x, d));
            }
            Op::BroadcastAll(s) => {
                let d = self.sum_all(g);
                res.push((s, d));
            }
            Op::SumPerSample(x) => {
                let s = self.shape(x).to_vec();
                let d = self.broadcast_per_sample(g, &s);
                res.push((x, d));
            }
            Op::BroadcastPerSample(s) => {
                let d = self.sum_per_sample(g);
                res.push((s, d));
            }
            Op::SumSpatial(x) => {
                let s = self.shape(x).to_vec();
                let d = self.broadcast_spatial(g, &s);
                res.push((x, d));
            }
            Op::BroadcastSpatial(s) => {
                let d = self.sum_spatial(g);
                res.push((s, d));
            }
            Op::MatMul(a, b, ta, tb) => {
                if need(&a) {
                    let d = if ta {
                        self.matmul(b, g, tb, true)
                    } else {
                        self.matmul(g, b, false, !tb)
                    };
                    res.push((a, d));
                }
                if need(&b) {
                    let d = if tb {
                        self.matmul(g, a, true, ta)
                    } else {
                        self.matmul(a, g, !ta, false)
                    };
                    res.push((b, d));
                }
            }
            Op::Sqrt(x) => {
                let r = self.half_recip_safe(out);
                let d = self.mul(g, r);
                res.push((x, d));
            }
            Op::HalfRecipSafe(x) => {
                // d(0.5/x)/dx = -0.5/x^2 = -2 r^2
                let r2 = self.square(out);
                let k = self.scale(r2, -2.0);
                let d = self.mul(g, k);
                res.push((x, d));
            }
            Op::GroupSum(x, n) => {
                let d = self.group_repeat(g, n);
                res.push((x, d));
            }
            Op::GroupRepeat(x, n) => {
                let d = self.group_sum(g, n);
                res.push((x, d));
            }
            Op::Reshape(x) => {
                let s = self.shape(x).to_vec();
                let d = self.reshape(g, &s);
                res.push((x, d));
            }
        }
        res
    }
}
