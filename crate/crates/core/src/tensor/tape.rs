use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{
    broadcast_shape, broadcast_strides, depthwise_backward, depthwise_forward, for_each_broadcast,
    temporal_conv_backward, temporal_conv_forward, ConvGeom,
};
use super::{gemm, Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearities offered by the search space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Relu6,
    Hardswish,
    Swish,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Relu,
        Activation::Relu6,
        Activation::Hardswish,
        Activation::Swish,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "Relu" => Ok(Self::Relu),
            "Relu6" => Ok(Self::Relu6),
            "Hardswish" => Ok(Self::Hardswish),
            "Swish" => Ok(Self::Swish),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Relu => "Relu",
            Self::Relu6 => "Relu6",
            Self::Hardswish => "Hardswish",
            Self::Swish => "Swish",
        }
    }

    pub fn apply<F: Float>(self, x: F) -> F {
        let zero = F::zero();
        let six = F::from_f64_lossy(6.0);
        let three = F::from_f64_lossy(3.0);
        match self {
            Self::Relu => x.max(zero),
            Self::Relu6 => x.max(zero).min(six),
            Self::Hardswish => x * (x + three).max(zero).min(six) / six,
            Self::Swish => x / (F::one() + (-x).exp()),
        }
    }

    pub fn derivative<F: Float>(self, x: F) -> F {
        let zero = F::zero();
        let one = F::one();
        let three = F::from_f64_lossy(3.0);
        let six = F::from_f64_lossy(6.0);
        match self {
            Self::Relu => {
                if x > zero {
                    one
                } else {
                    zero
                }
            }
            Self::Relu6 => {
                if x > zero && x < six {
                    one
                } else {
                    zero
                }
            }
            Self::Hardswish => {
                if x <= -three {
                    zero
                } else if x >= three {
                    one
                } else {
                    (x + x + three) / six
                }
            }
            Self::Swish => {
                let s = one / (one + (-x).exp());
                s + x * s * (one - s)
            }
        }
    }
}

/// Normalization statistics source for [`Tape::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a, F> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with stored running mean and variance.
    Eval { mean: &'a [F], var: &'a [F] },
}

/// Batch statistics reported by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    /// Unbiased variance, as accumulated into running statistics.
    pub var: Vec<F>,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var, shared_b: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: F },
    AddScalar { a: Var },
    Act { a: Var, kind: Activation },
    Sigmoid { a: Var },
    TemporalConv { x: Var, w: Var, geom: ConvGeom },
    Depthwise { x: Var, w: Var, geom: ConvGeom },
    GraphConv { x: Var, w: Var, adj: Var, mixed: Vec<F>, adj_cat: Vec<F>, dims: GraphDims },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<F>, inv_std: Vec<F>, train: bool },
    Sum { a: Var },
    MeanAxes { a: Var },
    MaxAxis { a: Var, argmax: Vec<usize> },
    Softmax { a: Var },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<F> },
    Dropout { a: Var, mask: Vec<F> },
    Concat { parts: Vec<Var>, axis: usize },
    IndexSelect { a: Var, axis: usize, indices: Vec<usize> },
    Reshape { a: Var },
}

#[derive(Clone, Copy, Debug)]
struct GraphDims {
    n: usize,
    c: usize,
    t: usize,
    v: usize,
    s: usize,
    co: usize,
}

impl GraphDims {
    /// Copy between the `[N, C, T, S, V]` and `[N, S, C, T, V]` layouts.
    fn reorder<F: Float>(&self, src: &[F], dst: &mut [F], to_subset_major: bool) {
        let v = self.v;
        for n in 0..self.n {
            for c in 0..self.c {
                for t in 0..self.t {
                    for s in 0..self.s {
                        let a = (((n * self.c + c) * self.t + t) * self.s + s) * v;
                        let b = (((n * self.s + s) * self.c + c) * self.t + t) * v;
                        if to_subset_major {
                            dst[b..b + v].copy_from_slice(&src[a..a + v]);
                        } else {
                            dst[a..a + v].copy_from_slice(&src[b..b + v]);
                        }
                    }
                }
            }
        }
    }
}

/// Reverse-mode recording of tensor operations.
///
/// Values are appended in execution order, so the record list is always
/// topologically sorted and [`Tape::backward`] walks it once in reverse.
#[derive(Debug)]
pub struct Tape<F: Float> {
    values: Vec<Tensor<F>>,
    grads: Vec<Option<Vec<F>>>,
    requires: Vec<bool>,
    ops: Vec<Op<F>>,
    backward_done: bool,
    macs: u64,
}

impl<F: Float> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            grads: Vec::new(),
            requires: Vec::new(),
            ops: Vec::new(),
            backward_done: false,
            macs: 0,
        }
    }

    /// Drop every record so the tape can be reused.
    pub fn reset(&mut self) {
        *self = Self::new();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Multiply-accumulate operations performed by recorded products and convolutions.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    /// Constant input.
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable input whose gradient is kept after [`Tape::backward`].
    pub fn param(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Gradient of the last backward pass with respect to `v`, if any reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<F>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.values[v.0].shape(), g.clone()).expect("grad shape"))
    }

    /// Gradient buffer, zero-filled when nothing flowed into `v`.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<F> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| vec![F::zero(); self.values[v.0].numel()])
    }

    fn any_requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires[v.0])
    }

    // ---- forward ops ------------------------------------------------------

    /// Batched matrix product `[..., m, k] x [..., k, n]`; a rank-2 `b` is shared
    /// across every leading index of `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::Shape(format!(
                "matmul needs rank >= 2 operands: {sa:?} x {sb:?}"
            )));
        }
        let k = sa[sa.len() - 1];
        let m = sa[sa.len() - 2];
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(shape_err("matmul inner extents differ", &sa, &sb));
        }
        let shared_b = sb.len() == 2;
        let batch: usize = sa[..sa.len() - 2].iter().product();
        if !shared_b && sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(shape_err("matmul batch extents differ", &sa, &sb));
        }
        let mut out_shape = sa.clone();
        *out_shape.last_mut().unwrap() = n;
        let mut out = vec![F::zero(); batch * m * n];
        {
            let (av, bv) = (self.values[a.0].data(), self.values[b.0].data());
            if shared_b {
                gemm(batch * m, k, n, av, false, bv, false, &mut out, false);
            } else {
                for i in 0..batch {
                    gemm(
                        m,
                        k,
                        n,
                        &av[i * m * k..],
                        false,
                        &bv[i * k * n..],
                        false,
                        &mut out[i * m * n..(i + 1) * m * n],
                        false,
                    );
                }
            }
        }
        self.macs += (batch * m * k * n) as u64;
        let req = self.any_requires(&[a, b]);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::MatMul { a, b, shared_b },
            req,
        ))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(F, F) -> F, what: &str) -> Result<(Tensor<F>, bool)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| shape_err(what, sa, sb))?;
        let (av, bv) = (self.values[a.0].data(), self.values[b.0].data());
        let data = if sa == sb {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ta = broadcast_strides(sa, &out_shape);
            let tb = broadcast_strides(sb, &out_shape);
            let mut out = vec![F::zero(); out_shape.iter().product()];
            for_each_broadcast(&out_shape, &ta, &tb, |o, i, j| out[o] = f(av[i], bv[j]));
            out
        };
        Ok((Tensor::new(&out_shape, data)?, self.any_requires(&[a, b])))
    }

    /// Elementwise sum with broadcasting over size-1 axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, req) = self.binary(a, b, |x, y| x + y, "add")?;
        Ok(self.push(t, Op::Add { a, b }, req))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, req) = self.binary(a, b, |x, y| x - y, "sub")?;
        Ok(self.push(t, Op::Sub { a, b }, req))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, req) = self.binary(a, b, |x, y| x * y, "mul")?;
        Ok(self.push(t, Op::Mul { a, b }, req))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let t = self.values[a.0].map(|x| x * s);
        let req = self.requires[a.0];
        self.push(t, Op::Scale { a, s }, req)
    }

    pub fn add_scalar(&mut self, a: Var, s: F) -> Var {
        let t = self.values[a.0].map(|x| x + s);
        let req = self.requires[a.0];
        self.push(t, Op::AddScalar { a }, req)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let t = self.values[a.0].map(|x| kind.apply(x));
        let req = self.requires[a.0];
        self.push(t, Op::Act { a, kind }, req)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.values[a.0].map(|x| F::one() / (F::one() + (-x).exp()));
        let req = self.requires[a.0];
        self.push(t, Op::Sigmoid { a }, req)
    }

    fn conv_geom(&self, x: Var, w: Var, stride: usize, padding: usize, depthwise: bool) -> Result<ConvGeom> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 4 || sw.len() != 4 || sw[3] != 1 {
            return Err(shape_err("temporal conv expects [N,C,T,V] and [Cout,C,K,1]", sx, sw));
        }
        let (n, c, t, v) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, cw, k) = (sw[0], sw[1], sw[2]);
        if depthwise {
            if co != c || cw != 1 {
                return Err(shape_err("depthwise conv expects kernel [C,1,K,1]", sx, sw));
            }
        } else if cw != c {
            return Err(shape_err("temporal conv channel mismatch", sx, sw));
        }
        if k % 2 == 0 {
            return Err(Error::InvalidKernel(format!("temporal kernel must be odd, got {k}")));
        }
        if stride == 0 {
            return Err(Error::InvalidKernel("stride must be >= 1".into()));
        }
        if k > t + 2 * padding {
            return Err(Error::InvalidKernel(format!(
                "kernel {k} exceeds padded extent {} (T={t}, padding={padding})",
                t + 2 * padding
            )));
        }
        let t_out = (t + 2 * padding - k) / stride + 1;
        Ok(ConvGeom { n, c, t, v, co, k, stride, pad: padding, t_out })
    }

    /// Convolution along the frame axis applied independently at every vertex.
    pub fn temporal_conv(&mut self, x: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = self.conv_geom(x, kernel, stride, padding, false)?;
        let out = temporal_conv_forward(self.values[x.0].data(), self.values[kernel.0].data(), &geom);
        self.macs += (geom.n * geom.co * geom.c * geom.k * geom.t_out * geom.v) as u64;
        let req = self.any_requires(&[x, kernel]);
        let t = Tensor::new(&[geom.n, geom.co, geom.t_out, geom.v], out)?;
        Ok(self.push(t, Op::TemporalConv { x, w: kernel, geom }, req))
    }

    /// Per-channel temporal convolution with kernel `[C,1,K,1]`.
    pub fn depthwise_temporal_conv(&mut self, x: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = self.conv_geom(x, kernel, stride, padding, true)?;
        let out = depthwise_forward(self.values[x.0].data(), self.values[kernel.0].data(), &geom);
        self.macs += (geom.n * geom.c * geom.k * geom.t_out * geom.v) as u64;
        let req = self.any_requires(&[x, kernel]);
        let t = Tensor::new(&[geom.n, geom.c, geom.t_out, geom.v], out)?;
        Ok(self.push(t, Op::Depthwise { x, w: kernel, geom }, req))
    }

    /// Spatial graph convolution `sum_s W_s (x A_s)`.
    ///
    /// `x` is `[N, C, T, V]`, `adj` stacks the subsets as `[S, V, V]` and `w` is
    /// `[Cout, S*C]` with the subset index major.
    pub fn graph_conv(&mut self, x: Var, w: Var, adj: Var) -> Result<Var> {
        let (sx, sw, sa) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(adj).to_vec());
        if sx.len() != 4 || sa.len() != 3 || sa[1] != sx[3] || sa[2] != sx[3] {
            return Err(shape_err("graph conv expects x [N,C,T,V] and adjacency [S,V,V]", &sx, &sa));
        }
        let d = GraphDims { n: sx[0], c: sx[1], t: sx[2], v: sx[3], s: sa[0], co: sw.first().copied().unwrap_or(0) };
        if sw.len() != 2 || sw[1] != d.s * d.c {
            return Err(shape_err("graph conv weight must be [Cout, S*C]", &sw, &[d.s * d.c]));
        }
        let (v, sv, ctv) = (d.v, d.s * d.v, d.c * d.t * d.v);
        let mut adj_cat = vec![F::zero(); v * sv];
        for (i, &a) in self.values[adj.0].data().iter().enumerate() {
            let (s, u, w) = (i / (v * v), (i / v) % v, i % v);
            adj_cat[u * sv + s * v + w] = a;
        }
        // [N*C*T, V] x [V, S*V], then reorder to [N, S, C, T, V]
        let rows = d.n * d.c * d.t;
        let mut z0 = vec![F::zero(); rows * sv];
        gemm(rows, v, sv, self.values[x.0].data(), false, &adj_cat, false, &mut z0, false);
        let mut mixed = vec![F::zero(); z0.len()];
        d.reorder(&z0, &mut mixed, true);
        let mut out = vec![F::zero(); d.n * d.co * d.t * v];
        let (k, tv) = (d.s * d.c, d.t * v);
        let wv = self.values[w.0].data();
        for n in 0..d.n {
            gemm(d.co, k, tv, wv, false, &mixed[n * d.s * ctv..], false, &mut out[n * d.co * tv..(n + 1) * d.co * tv], false);
        }
        self.macs += (rows * v * sv + d.n * d.co * k * tv) as u64;
        let req = self.any_requires(&[x, w, adj]);
        let t = Tensor::new(&[d.n, d.co, d.t, v], out)?;
        Ok(self.push(t, Op::GraphConv { x, w, adj, mixed, adj_cat, dims: d }, req))
    }

    /// Per-channel normalization over every axis except axis 1, followed by an
    /// affine `gamma * xhat + beta`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, F>,
        eps: F,
    ) -> Result<(Var, Option<BatchStats<F>>)> {
        let sx = self.shape(x).to_vec();
        if sx.len() < 2 {
            return Err(Error::Shape(format!("batch norm needs rank >= 2, got {sx:?}")));
        }
        let c = sx[1];
        if self.values[gamma.0].numel() != c || self.values[beta.0].numel() != c {
            return Err(shape_err("batch norm affine extent", &sx, self.shape(gamma)));
        }
        let n = sx[0];
        let inner: usize = sx[2..].iter().product();
        let count = n * inner;
        let xv = self.values[x.0].data();
        let (mean, var_b, stats) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![F::zero(); c];
                let mut var = vec![F::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let s = &xv[(b * c + ch) * inner..(b * c + ch + 1) * inner];
                        mean[ch] += s.iter().copied().sum::<F>();
                    }
                }
                let cnt = F::from_usize(count).unwrap();
                for m in mean.iter_mut() {
                    *m /= cnt;
                }
                for b in 0..n {
                    for ch in 0..c {
                        let s = &xv[(b * c + ch) * inner..(b * c + ch + 1) * inner];
                        let mu = mean[ch];
                        var[ch] += s.iter().map(|&v| (v - mu) * (v - mu)).sum::<F>();
                    }
                }
                let unbiased: Vec<F> = var
                    .iter()
                    .map(|&v| if count > 1 { v / F::from_usize(count - 1).unwrap() } else { v })
                    .collect();
                for v in var.iter_mut() {
                    *v /= cnt;
                }
                let stats = BatchStats { mean: mean.clone(), var: unbiased };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::Shape(format!(
                        "running statistics have {} channels, input has {c}",
                        mean.len()
                    )));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<F> = var_b.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let (g, bt) = (self.values[gamma.0].data(), self.values[beta.0].data());
        let mut xhat = vec![F::zero(); xv.len()];
        let mut out = vec![F::zero(); xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let range = (b * c + ch) * inner..(b * c + ch + 1) * inner;
                let (mu, is) = (mean[ch], inv_std[ch]);
                for i in range {
                    let h = (xv[i] - mu) * is;
                    xhat[i] = h;
                    out[i] = g[ch] * h + bt[ch];
                }
            }
        }
        let req = self.any_requires(&[x, gamma, beta]);
        let train = stats.is_some();
        let t = Tensor::new(&sx, out)?;
        let v = self.push(t, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train }, req);
        Ok((v, stats))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.values[a.0].sum();
        let req = self.requires[a.0];
        self.push(Tensor::scalar(s), Op::Sum { a }, req)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.values[a.0].numel();
        let s = self.sum(a);
        self.scale(s, F::one() / F::from_usize(n).unwrap())
    }

    /// Mean over the listed axes, keeping them as size-1 axes.
    pub fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if axes.iter().any(|&ax| ax >= sa.len()) {
            return Err(Error::Shape(format!("mean axes {axes:?} out of range for {sa:?}")));
        }
        let mut out_shape = sa.clone();
        for &ax in axes {
            out_shape[ax] = 1;
        }
        let count: usize = axes.iter().map(|&ax| sa[ax]).product::<usize>().max(1);
        let so = broadcast_strides(&out_shape, &sa);
        let si = broadcast_strides(&sa, &sa);
        let mut out = vec![F::zero(); out_shape.iter().product()];
        let av = self.values[a.0].data();
        for_each_broadcast(&sa, &si, &so, |_, i, o| out[o] += av[i]);
        let inv = F::one() / F::from_usize(count).unwrap();
        for o in out.iter_mut() {
            *o *= inv;
        }
        let req = self.requires[a.0];
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::MeanAxes { a }, req))
    }

    /// Maximum along one axis, kept as a size-1 axis.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(Error::Shape(format!("max axis {axis} out of range for {sa:?}")));
        }
        let outer: usize = sa[..axis].iter().product();
        let len = sa[axis];
        let inner: usize = sa[axis + 1..].iter().product();
        let av = self.values[a.0].data();
        let mut out = vec![F::zero(); outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                for l in 1..len {
                    let idx = (o * len + l) * inner + i;
                    if av[idx] > av[best] {
                        best = idx;
                    }
                }
                out[o * inner + i] = av[best];
                argmax[o * inner + i] = best;
            }
        }
        let mut out_shape = sa;
        out_shape[axis] = 1;
        let req = self.requires[a.0];
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::MaxAxis { a, argmax }, req))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let k = *sa.last().ok_or_else(|| Error::Rank("softmax needs rank >= 1".into()))?;
        let mut out = self.values[a.0].data().to_vec();
        for row in out.chunks_mut(k.max(1)) {
            softmax_in_place(row);
        }
        let req = self.requires[a.0];
        Ok(self.push(Tensor::new(&sa, out)?, Op::Softmax { a }, req))
    }

    /// Mean cross-entropy of `[N,K]` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || sl[0] != labels.len() {
            return Err(Error::Shape(format!(
                "cross entropy expects [N,K] logits with N labels: {sl:?}, {} labels",
                labels.len()
            )));
        }
        let k = sl[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = self.values[logits.0].data().to_vec();
        let mut loss = F::zero();
        for (row, &l) in probs.chunks_mut(k).zip(labels) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<F>().ln();
            loss += lse - row[l];
            softmax_in_place(row);
        }
        loss /= F::from_usize(labels.len().max(1)).unwrap();
        let req = self.requires[logits.0];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
            req,
        ))
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout probability {p} outside [0, 1)")));
        }
        let keep = F::from_f64_lossy(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..self.values[a.0].numel())
            .map(|_| if rng.random::<f64>() >= p { keep } else { F::zero() })
            .collect();
        let t = Tensor::new(
            self.shape(a),
            self.values[a.0].data().iter().zip(&mask).map(|(&x, &m)| x * m).collect(),
        )?;
        let req = self.requires[a.0];
        Ok(self.push(t, Op::Dropout { a, mask }, req))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(shape_err("concat extents differ", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis] * inner;
                out.extend_from_slice(&self.values[p.0].data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let req = self.any_requires(parts);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Concat { parts: parts.to_vec(), axis }, req))
    }

    /// Gather slices `indices` along `axis` (repeats allowed).
    pub fn index_select(&mut self, a: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() {
            return Err(Error::Shape(format!("select axis {axis} out of range for {sa:?}")));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= sa[axis]) {
            return Err(Error::Index(format!("index {bad} out of range for axis extent {}", sa[axis])));
        }
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let av = self.values[a.0].data();
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let start = (o * sa[axis] + i) * inner;
                out.extend_from_slice(&av[start..start + inner]);
            }
        }
        let mut shape = sa;
        shape[axis] = indices.len();
        let req = self.requires[a.0];
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::IndexSelect { a, axis, indices: indices.to_vec() },
            req,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.values[a.0].clone().reshape(shape)?;
        let req = self.requires[a.0];
        Ok(self.push(t, Op::Reshape { a }, req))
    }

    // ---- backward ---------------------------------------------------------

    fn accumulate(&mut self, v: Var, g: &[F]) {
        if !self.requires[v.0] {
            return;
        }
        match &mut self.grads[v.0] {
            Some(buf) => {
                for (b, &x) in buf.iter_mut().zip(g) {
                    *b += x;
                }
            }
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// Accumulate `g` (shaped like `out_shape`) into `v`, summing over axes `v` broadcast along.
    fn accumulate_reduced(&mut self, v: Var, out_shape: &[usize], g: &[F]) {
        if !self.requires[v.0] {
            return;
        }
        let sv = self.values[v.0].shape().to_vec();
        if sv == out_shape {
            self.accumulate(v, g);
            return;
        }
        let mut red = vec![F::zero(); self.values[v.0].numel()];
        let so = broadcast_strides(out_shape, out_shape);
        let st = broadcast_strides(&sv, out_shape);
        for_each_broadcast(out_shape, &so, &st, |_, o, t| red[t] += g[o]);
        self.accumulate(v, &red);
    }

    fn buffer_for(&mut self, v: Var) -> Option<&mut Vec<F>> {
        if !self.requires[v.0] {
            return None;
        }
        let n = self.values[v.0].numel();
        Some(self.grads[v.0].get_or_insert_with(|| vec![F::zero(); n]))
    }

    /// Propagate d`loss`/d(every recorded value that requires a gradient).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let numel = self.values[loss.0].numel();
        if numel != 1 || self.values[loss.0].rank() > 1 {
            return Err(Error::Rank(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        self.backward_done = true;
        if !self.requires[loss.0] {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![F::one()]);
        for id in (0..=loss.0).rev() {
            if !self.requires[id] {
                continue;
            }
            let Some(g) = self.grads[id].take() else { continue };
            let op = std::mem::replace(&mut self.ops[id], Op::Leaf);
            self.backward_op(id, &op, &g);
            self.ops[id] = op;
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn backward_op(&mut self, id: usize, op: &Op<F>, g: &[F]) {
        let out_shape = self.values[id].shape().to_vec();
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b, shared_b } => {
                let sa = self.values[a.0].shape().to_vec();
                let sb = self.values[b.0].shape().to_vec();
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let batch: usize = sa[..sa.len() - 2].iter().product();
                if self.requires[a.0] {
                    let mut da = vec![F::zero(); batch * m * k];
                    let bv = self.values[b.0].data();
                    if *shared_b {
                        gemm(batch * m, n, k, g, false, bv, true, &mut da, false);
                    } else {
                        for i in 0..batch {
                            gemm(m, n, k, &g[i * m * n..], false, &bv[i * k * n..], true,
                                &mut da[i * m * k..(i + 1) * m * k], false);
                        }
                    }
                    self.accumulate(*a, &da);
                }
                if self.requires[b.0] {
                    let av = self.values[a.0].data();
                    let mut db = vec![F::zero(); self.values[b.0].numel()];
                    if *shared_b {
                        gemm(k, batch * m, n, av, true, g, false, &mut db, false);
                    } else {
                        for i in 0..batch {
                            gemm(k, m, n, &av[i * m * k..], true, &g[i * m * n..], false,
                                &mut db[i * k * n..(i + 1) * k * n], false);
                        }
                    }
                    self.accumulate(*b, &db);
                }
            }
            Op::Add { a, b } => {
                self.accumulate_reduced(*a, &out_shape, g);
                self.accumulate_reduced(*b, &out_shape, g);
            }
            Op::Sub { a, b } => {
                self.accumulate_reduced(*a, &out_shape, g);
                let neg: Vec<F> = g.iter().map(|&x| -x).collect();
                self.accumulate_reduced(*b, &out_shape, &neg);
            }
            Op::Mul { a, b } => {
                let sa = self.values[a.0].shape().to_vec();
                let sb = self.values[b.0].shape().to_vec();
                let ta = broadcast_strides(&sa, &out_shape);
                let tb = broadcast_strides(&sb, &out_shape);
                let (av, bv) = (self.values[a.0].data(), self.values[b.0].data());
                let total = g.len();
                let (ra, rb) = (self.requires[a.0], self.requires[b.0]);
                let mut ga = if ra { vec![F::zero(); total] } else { Vec::new() };
                let mut gb = if rb { vec![F::zero(); total] } else { Vec::new() };
                for_each_broadcast(&out_shape, &ta, &tb, |o, i, j| {
                    if ra {
                        ga[o] = g[o] * bv[j];
                    }
                    if rb {
                        gb[o] = g[o] * av[i];
                    }
                });
                if ra {
                    self.accumulate_reduced(*a, &out_shape, &ga);
                }
                if rb {
                    self.accumulate_reduced(*b, &out_shape, &gb);
                }
            }
            Op::Scale { a, s } => {
                let d: Vec<F> = g.iter().map(|&x| x * *s).collect();
                self.accumulate(*a, &d);
            }
            Op::AddScalar { a } | Op::Reshape { a } => self.accumulate(*a, g),
            Op::Act { a, kind } => {
                let d: Vec<F> = self.values[a.0]
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gg)| gg * kind.derivative(x))
                    .collect();
                self.accumulate(*a, &d);
            }
            Op::Sigmoid { a } => {
                let d: Vec<F> = self.values[id]
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gg)| gg * y * (F::one() - y))
                    .collect();
                self.accumulate(*a, &d);
            }
            Op::TemporalConv { x, w, geom } | Op::Depthwise { x, w, geom } => {
                let depthwise = matches!(op, Op::Depthwise { .. });
                let mut dx = self.requires[x.0].then(|| vec![F::zero(); self.values[x.0].numel()]);
                let mut dw = self.requires[w.0].then(|| vec![F::zero(); self.values[w.0].numel()]);
                let (xv, wv) = (self.values[x.0].data(), self.values[w.0].data());
                if depthwise {
                    depthwise_backward(xv, wv, g, geom, dx.as_deref_mut(), dw.as_deref_mut());
                } else {
                    temporal_conv_backward(xv, wv, g, geom, dx.as_deref_mut(), dw.as_deref_mut());
                }
                if let Some(dx) = dx {
                    self.accumulate(*x, &dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(*w, &dw);
                }
            }
            Op::GraphConv { x, w, adj, mixed, adj_cat, dims: d } => {
                let (v, sv, tv) = (d.v, d.s * d.v, d.t * d.v);
                let k = d.s * d.c;
                let per = k * tv;
                if self.requires[w.0] {
                    let mut dw = vec![F::zero(); d.co * k];
                    for n in 0..d.n {
                        gemm(d.co, tv, k, &g[n * d.co * tv..], false, &mixed[n * per..], true, &mut dw, true);
                    }
                    self.accumulate(*w, &dw);
                }
                if self.requires[x.0] || self.requires[adj.0] {
                    let wv = self.values[w.0].data();
                    let mut dmixed = vec![F::zero(); d.n * per];
                    for n in 0..d.n {
                        gemm(k, d.co, tv, wv, true, &g[n * d.co * tv..], false, &mut dmixed[n * per..(n + 1) * per], false);
                    }
                    let mut dz0 = vec![F::zero(); dmixed.len()];
                    d.reorder(&dmixed, &mut dz0, false);
                    drop(dmixed);
                    let rows = d.n * d.c * d.t;
                    if self.requires[x.0] {
                        let mut dx = vec![F::zero(); rows * v];
                        gemm(rows, sv, v, &dz0, false, adj_cat, true, &mut dx, false);
                        self.accumulate(*x, &dx);
                    }
                    if self.requires[adj.0] {
                        let mut dcat = vec![F::zero(); v * sv];
                        gemm(v, rows, sv, self.values[x.0].data(), true, &dz0, false, &mut dcat, false);
                        let mut da = vec![F::zero(); d.s * v * v];
                        for (i, slot) in da.iter_mut().enumerate() {
                            let (s, u, w) = (i / (v * v), (i / v) % v, i % v);
                            *slot = dcat[u * sv + s * v + w];
                        }
                        self.accumulate(*adj, &da);
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let n = out_shape[0];
                let c = out_shape[1];
                let inner: usize = out_shape[2..].iter().product();
                let mut sum_g = vec![F::zero(); c];
                let mut sum_gx = vec![F::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let r = (b * c + ch) * inner..(b * c + ch + 1) * inner;
                        for i in r {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * xhat[i];
                        }
                    }
                }
                if self.requires[x.0] {
                    let gam = self.values[gamma.0].data();
                    let m = F::from_usize(n * inner).unwrap();
                    let mut dx = vec![F::zero(); g.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let scale = gam[ch] * inv_std[ch];
                            let r = (b * c + ch) * inner..(b * c + ch + 1) * inner;
                            for i in r {
                                dx[i] = if *train {
                                    scale * (g[i] - sum_g[ch] / m - xhat[i] * sum_gx[ch] / m)
                                } else {
                                    scale * g[i]
                                };
                            }
                        }
                    }
                    self.accumulate(*x, &dx);
                }
                self.accumulate(*gamma, &sum_gx);
                self.accumulate(*beta, &sum_g);
            }
            Op::Sum { a } => {
                let d = vec![g[0]; self.values[a.0].numel()];
                self.accumulate(*a, &d);
            }
            Op::MeanAxes { a } => {
                let sa = self.values[a.0].shape().to_vec();
                let count = (self.values[a.0].numel() / g.len().max(1)).max(1);
                let inv = F::one() / F::from_usize(count).unwrap();
                let so = broadcast_strides(&out_shape, &sa);
                let si = broadcast_strides(&sa, &sa);
                let mut d = vec![F::zero(); self.values[a.0].numel()];
                for_each_broadcast(&sa, &si, &so, |_, i, o| d[i] = g[o] * inv);
                self.accumulate(*a, &d);
            }
            Op::MaxAxis { a, argmax } => {
                if let Some(buf) = self.buffer_for(*a) {
                    for (&src, &gg) in argmax.iter().zip(g) {
                        buf[src] += gg;
                    }
                }
            }
            Op::Softmax { a } => {
                let k = *out_shape.last().unwrap();
                let y = self.values[id].data();
                let mut d = vec![F::zero(); g.len()];
                for ((dr, yr), gr) in d.chunks_mut(k).zip(y.chunks(k)).zip(g.chunks(k)) {
                    let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((dd, &yy), &gg) in dr.iter_mut().zip(yr).zip(gr) {
                        *dd = yy * (gg - dot);
                    }
                }
                self.accumulate(*a, &d);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = probs.len() / labels.len().max(1);
                let scale = g[0] / F::from_usize(labels.len().max(1)).unwrap();
                let mut d: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                for (row, &l) in d.chunks_mut(k).zip(labels) {
                    row[l] -= scale;
                }
                self.accumulate(*logits, &d);
            }
            Op::Dropout { a, mask } => {
                let d: Vec<F> = g.iter().zip(mask).map(|(&x, &m)| x * m).collect();
                self.accumulate(*a, &d);
            }
            Op::Concat { parts, axis } => {
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[*axis];
                let mut offset = 0;
                for p in parts {
                    let len = self.values[p.0].shape()[*axis];
                    if self.requires[p.0] {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            d.extend_from_slice(&g[start..start + len * inner]);
                        }
                        self.accumulate(*p, &d);
                    }
                    offset += len;
                }
            }
            Op::IndexSelect { a, axis, indices } => {
                let sa = self.values[a.0].shape().to_vec();
                let outer: usize = sa[..*axis].iter().product();
                let inner: usize = sa[axis + 1..].iter().product();
                let extent = sa[*axis];
                if let Some(buf) = self.buffer_for(*a) {
                    for o in 0..outer {
                        for (j, &i) in indices.iter().enumerate() {
                            let src = (o * indices.len() + j) * inner;
                            let dst = (o * extent + i) * inner;
                            for q in 0..inner {
                                buf[dst + q] += g[src + q];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn softmax_in_place<F: Float>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut z = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}
