use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Activation, BatchNormMode, BatchStats, Float, Tape, Tensor, Var};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.9;

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

impl<F: Float> RunningStats<F> {
    fn new(c: usize) -> Self {
        Self {
            mean: vec![F::zero(); c],
            var: vec![F::one(); c],
        }
    }

    pub(crate) fn absorb(&mut self, batch: &BatchStats<F>) {
        let m = F::from_f64_lossy(BN_MOMENTUM);
        let one_m = F::one() - m;
        for (r, &b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = m * *r + one_m * b;
        }
        for (r, &b) in self.var.iter_mut().zip(&batch.var) {
            *r = m * *r + one_m * b;
        }
    }
}

/// Collects parameters and batch-norm slots while a model is assembled.
pub(crate) struct Builder<'r, F: Float> {
    pub names: Vec<String>,
    pub params: Vec<Tensor<F>>,
    pub running: Vec<RunningStats<F>>,
    rng: &'r mut dyn RngCore,
}

impl<'r, F: Float> Builder<'r, F> {
    pub fn new(rng: &'r mut dyn RngCore) -> Self {
        Self {
            names: Vec::new(),
            params: Vec::new(),
            running: Vec::new(),
            rng,
        }
    }

    pub fn add(&mut self, name: String, t: Tensor<F>) -> usize {
        self.names.push(name);
        self.params.push(t);
        self.params.len() - 1
    }

    /// Fan-in scaled uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| F::from_f64_lossy(self.rng.random_range(-bound..bound)))
            .collect();
        self.add(name, Tensor::new(shape, data).expect("shape"))
    }

    pub fn constant(&mut self, name: String, shape: &[usize], v: f64) -> usize {
        self.add(name, Tensor::full(shape, F::from_f64_lossy(v)))
    }

    pub fn batch_norm(&mut self, name: &str, c: usize) -> BatchNorm {
        let gamma = self.constant(format!("{name}.gamma"), &[c], 1.0);
        let beta = self.constant(format!("{name}.beta"), &[c], 0.0);
        self.running.push(RunningStats::new(c));
        BatchNorm {
            gamma,
            beta,
            slot: self.running.len() - 1,
        }
    }
}

/// Forward-pass context: parameter handles on the tape plus mode and statistics.
pub(crate) struct Fwd<'a, F: Float> {
    pub tape: &'a mut Tape<F>,
    pub vars: &'a [Var],
    pub running: &'a [RunningStats<F>],
    pub train: bool,
    pub stats: Vec<Option<BatchStats<F>>>,
    pub rng: Option<&'a mut dyn RngCore>,
    /// Stacked adjacency subsets recorded as constants, one per hop distance in use.
    pub adj: Vec<Var>,
}

impl<'a, F: Float> Fwd<'a, F> {
    pub fn new(
        tape: &'a mut Tape<F>,
        vars: &'a [Var],
        running: &'a [RunningStats<F>],
        train: bool,
        rng: Option<&'a mut dyn RngCore>,
    ) -> Self {
        Self {
            tape,
            vars,
            running,
            train,
            stats: vec![None; running.len()],
            rng,
            adj: Vec::new(),
        }
    }

    pub fn p(&self, id: usize) -> Var {
        self.vars[id]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct BatchNorm {
    gamma: usize,
    beta: usize,
    slot: usize,
}

impl BatchNorm {
    pub fn forward<F: Float>(&self, f: &mut Fwd<'_, F>, x: Var) -> Result<Var> {
        let (g, b) = (f.p(self.gamma), f.p(self.beta));
        let eps = F::from_f64_lossy(BN_EPS);
        if f.train {
            let (y, stats) = f.tape.batch_norm(x, g, b, BatchNormMode::Train, eps)?;
            f.stats[self.slot] = stats;
            Ok(y)
        } else {
            let r = &f.running[self.slot];
            let mode = BatchNormMode::Eval {
                mean: &r.mean,
                var: &r.var,
            };
            Ok(f.tape.batch_norm(x, g, b, mode, eps)?.0)
        }
    }
}

/// Temporal convolution `[Cout, Cin, K, 1]` with same-padding and a stride.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct TemporalConv {
    pub w: usize,
    pub k: usize,
    pub stride: usize,
}

impl TemporalConv {
    pub fn new<F: Float>(b: &mut Builder<'_, F>, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        let w = b.uniform(format!("{name}.w"), &[cout, cin, k, 1], cin * k);
        Self { w, k, stride }
    }

    pub fn pointwise<F: Float>(b: &mut Builder<'_, F>, name: &str, cin: usize, cout: usize) -> Self {
        Self::new(b, name, cin, cout, 1, 1)
    }

    pub fn forward<F: Float>(&self, f: &mut Fwd<'_, F>, x: Var) -> Result<Var> {
        let w = f.p(self.w);
        f.tape.temporal_conv(x, w, self.stride, (self.k - 1) / 2)
    }
}

/// Per-channel temporal convolution `[C, 1, K, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct DepthwiseConv {
    w: usize,
    k: usize,
    stride: usize,
}

impl DepthwiseConv {
    pub fn new<F: Float>(b: &mut Builder<'_, F>, name: &str, c: usize, k: usize, stride: usize) -> Self {
        let w = b.uniform(format!("{name}.w"), &[c, 1, k, 1], k);
        Self { w, k, stride }
    }

    pub fn forward<F: Float>(&self, f: &mut Fwd<'_, F>, x: Var) -> Result<Var> {
        let w = f.p(self.w);
        f.tape.depthwise_temporal_conv(x, w, self.stride, (self.k - 1) / 2)
    }
}

/// Stack distance subsets into one `[S, V, V]` tensor.
pub(crate) fn stack_subsets<F: Float>(subsets: &[Tensor<f64>]) -> Tensor<F> {
    let v = subsets.first().map_or(0, |a| a.shape()[0]);
    let data = subsets.iter().flat_map(|a| a.data().iter().map(|&x| F::from_f64_lossy(x))).collect();
    Tensor::new(&[subsets.len(), v, v], data).expect("square subsets")
}

/// `sum_s W_s x (A_s * M_s)`: vertex mixing by each subset, then 1x1 channel mixing.
///
/// `x` is `[N, C, T, V]`, `adjacency` and `mask` are `[S, V, V]`, `weight` is
/// `[Cout, S*C]` with the subset index major.
pub fn graph_conv_forward<F: Float>(
    tape: &mut Tape<F>,
    x: Var,
    weight: Var,
    adjacency: Var,
    mask: Option<Var>,
) -> Result<Var> {
    let adj = match mask {
        Some(m) => {
            if tape.shape(m) != tape.shape(adjacency) {
                return Err(Error::Shape(format!(
                    "mask {:?} does not match adjacency {:?}",
                    tape.shape(m),
                    tape.shape(adjacency)
                )));
            }
            tape.mul(adjacency, m)?
        }
        None => adjacency,
    };
    tape.graph_conv(x, weight, adj)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct GraphConv {
    weight: usize,
    mask: Option<usize>,
    /// Index into the model's constant adjacency sets.
    pub adjacency: usize,
}

impl GraphConv {
    pub fn new<F: Float>(
        b: &mut Builder<'_, F>,
        name: &str,
        cin: usize,
        cout: usize,
        adjacency: usize,
        n_subsets: usize,
        v: usize,
        adaptive: bool,
    ) -> Self {
        let weight = b.uniform(format!("{name}.w"), &[cout, n_subsets * cin], cin * n_subsets);
        let mask = adaptive.then(|| b.constant(format!("{name}.mask"), &[n_subsets, v, v], 1.0));
        Self {
            weight,
            mask,
            adjacency,
        }
    }

    pub fn forward<F: Float>(&self, f: &mut Fwd<'_, F>, x: Var) -> Result<Var> {
        let (w, a) = (f.p(self.weight), f.adj[self.adjacency]);
        let m = self.mask.map(|i| f.p(i));
        graph_conv_forward(f.tape, x, w, a, m)
    }
}

/// Dense classifier head `[N, C] x [C, K] + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct Linear {
    w: usize,
    b: usize,
}

impl Linear {
    pub fn new<F: Float>(b: &mut Builder<'_, F>, name: &str, cin: usize, cout: usize) -> Self {
        let w = b.uniform(format!("{name}.w"), &[cin, cout], cin);
        let bias = b.constant(format!("{name}.b"), &[1, cout], 0.0);
        Self { w, b: bias }
    }

    pub fn forward<F: Float>(&self, f: &mut Fwd<'_, F>, x: Var) -> Result<Var> {
        let y = f.tape.matmul(x, f.p(self.w))?;
        let b = f.p(self.b);
        f.tape.add(y, b)
    }
}

pub(crate) fn act<F: Float>(f: &mut Fwd<'_, F>, x: Var, kind: Activation) -> Var {
    f.tape.activation(x, kind)
}

/// Reorder channels of a two-group concatenation as `a0, b0, a1, b1, ...`.
pub(crate) fn interleave_order(c1: usize, c2: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(c1 + c2);
    for i in 0..c1.max(c2) {
        if i < c1 {
            order.push(i);
        }
        if i < c2 {
            order.push(c1 + i);
        }
    }
    order
}
