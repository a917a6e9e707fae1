//! Student networks materialized from a sampled architecture: per-branch
//! stems and input streams, channel concatenation, a main stream of searched
//! blocks with attention, and a pooled linear classifier.

mod blocks;
mod layers;

use std::io::Write;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureBundle, BRANCH_CHANNELS};
use crate::graph::{GraphSpec, NormalizedAdjacency, PartitionStrategy};
use crate::searchspace::{names, CandidateConfig, SearchSpaceDef, Value};
use crate::tensor::{Activation, BatchStats, Float, Tape, Tensor, Var};

pub use blocks::{bottleneck_width, channel_width, AttentionKind, ConvKind};
pub use layers::{graph_conv_forward, RunningStats};

use blocks::{Attention, ConvLayer, LayerGeom};
use layers::{act, stack_subsets, BatchNorm, Builder, Fwd, Linear, TemporalConv};

/// Temporal kernel of every main-stream layer.
pub const MAIN_WINDOW: usize = 9;

/// The architecture slice of a candidate, resolved to typed values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub activation: Activation,
    pub attention: AttentionKind,
    pub conv: ConvKind,
    pub dropout: f64,
    pub init_size: usize,
    pub blocks_in: usize,
    pub depth_in: usize,
    pub stride_in: usize,
    pub scaling: f64,
    pub window: usize,
    pub dist_in: usize,
    pub reduction: f64,
    pub blocks_main: usize,
    pub depth_main: usize,
    pub dist_main: usize,
    pub shrinkage: usize,
    pub residual: bool,
    pub adaptive: bool,
}

fn typed<T>(v: Value, name: &str, f: impl FnOnce(&Value) -> Option<T>) -> Result<T> {
    f(&v).ok_or_else(|| Error::Schema(format!("'{name}' has unexpected value {v}")))
}

impl ArchitectureConfig {
    pub fn from_candidate(space: &SearchSpaceDef, config: &CandidateConfig) -> Result<Self> {
        let get = |n: &str| space.value_of(config, n);
        let text = |n: &str| typed(get(n)?, n, |v| v.as_str().map(str::to_string));
        let int = |n: &str| typed(get(n)?, n, Value::as_usize);
        let float = |n: &str| typed(get(n)?, n, Value::as_f64);
        let flag = |n: &str| typed(get(n)?, n, Value::as_bool);
        let cfg = Self {
            activation: Activation::parse(&text(names::ACTIVATION)?)?,
            attention: AttentionKind::parse(&text(names::ATTENTION)?)?,
            conv: ConvKind::parse(&text(names::CONV)?)?,
            dropout: float(names::DROPOUT)?,
            init_size: int(names::INIT_SIZE)?,
            blocks_in: int(names::BLOCKS_IN)?,
            depth_in: int(names::DEPTH_IN)?,
            stride_in: int(names::STRIDE_IN)?,
            scaling: float(names::SCALING)?,
            window: int(names::WINDOW)?,
            dist_in: int(names::DIST_IN)?,
            reduction: float(names::REDUCTION)?,
            blocks_main: int(names::BLOCKS_MAIN)?,
            depth_main: int(names::DEPTH_MAIN)?,
            dist_main: int(names::DIST_MAIN)?,
            shrinkage: int(names::SHRINKAGE)?,
            residual: flag(names::RESIDUAL)?,
            adaptive: flag(names::ADAPTIVE)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.window % 2 == 0 || self.window == 0 {
            return bad(format!("temporal window must be odd, got {}", self.window));
        }
        for (n, v) in [
            ("init size", self.init_size),
            ("blocks in", self.blocks_in),
            ("depth in", self.depth_in),
            ("stride in", self.stride_in),
            ("graph distance (in)", self.dist_in),
            ("blocks main", self.blocks_main),
            ("depth main", self.depth_main),
            ("graph distance (main)", self.dist_main),
            ("shrinkage", self.shrinkage),
        ] {
            if v == 0 {
                return bad(format!("{n} must be positive"));
            }
        }
        if self.scaling <= 0.0 || self.reduction <= 0.0 {
            return bad("scaling and reduction factors must be positive".into());
        }
        Ok(())
    }

    /// Stem width `floor(init_size * scaling)`, at least 4.
    pub fn stem_width(&self) -> usize {
        ((self.init_size as f64 * self.scaling).floor() as usize).max(4)
    }

    /// Output width of input block `b` (zero-based).
    pub fn input_block_width(&self, b: usize) -> usize {
        channel_width(self.stem_width() as f64 * self.reduction.powi(b as i32 + 1))
    }
}

/// Which feature branches feed the network and the sequence geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    /// Indices into [`FeatureBundle::branches`].
    pub branches: Vec<usize>,
    pub frames: usize,
    pub persons: usize,
}

impl InputSpec {
    /// All four branches.
    pub fn full(frames: usize, persons: usize) -> Self {
        Self {
            branches: vec![0, 1, 2, 3],
            frames,
            persons,
        }
    }

    pub fn channels(&self) -> Vec<usize> {
        self.branches.iter().map(|&b| BRANCH_CHANNELS[b]).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.branches.is_empty() || self.branches.iter().any(|&b| b >= BRANCH_CHANNELS.len()) {
            return Err(Error::Config(format!("invalid input branches {:?}", self.branches)));
        }
        if self.frames == 0 || self.persons == 0 {
            return Err(Error::Config("input needs at least one frame and one person".into()));
        }
        Ok(())
    }
}

/// Shape summary of one block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub kind: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub frames_in: usize,
    pub frames_out: usize,
    /// Temporal receptive field in input frames at the block output.
    pub receptive_field: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Stem {
    bn_in: BatchNorm,
    lift: TemporalConv,
    bn: BatchNorm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct InputBlock {
    layers: Vec<ConvLayer>,
    /// `None` with `residual` set means an identity skip.
    shortcut: Option<(TemporalConv, BatchNorm)>,
    residual: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MainBlock {
    layers: Vec<ConvLayer>,
    attention: Attention,
    residual: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Layout {
    stems: Vec<Stem>,
    input: Vec<Vec<InputBlock>>,
    fuse: TemporalConv,
    fuse_bn: BatchNorm,
    main: Vec<MainBlock>,
    head: Linear,
}

/// A trainable network plus its running normalization statistics.
#[derive(Clone, Debug)]
pub struct StudentModel<F: Float> {
    config: ArchitectureConfig,
    num_classes: usize,
    input: InputSpec,
    graph: GraphSpec,
    seed: u64,
    adjacency: Vec<Vec<Tensor<f64>>>,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Tensor<F>>,
    running: Vec<RunningStats<F>>,
    blocks: Vec<BlockInfo>,
}

/// Tape handles produced by one forward pass.
pub struct ForwardPass<F> {
    pub logits: Var,
    /// One handle per model parameter, in [`StudentModel::params`] order.
    pub params: Vec<Var>,
    /// Batch statistics per normalization layer (training mode only).
    pub stats: Vec<Option<BatchStats<F>>>,
}

struct Frames {
    t: usize,
    rf: usize,
    jump: usize,
}

impl Frames {
    fn layer(&mut self, k: usize, stride: usize) -> Result<()> {
        if self.t < stride {
            return Err(Error::Infeasible(format!(
                "temporal extent {} is smaller than stride {stride}",
                self.t
            )));
        }
        self.rf += (k - 1) * self.jump;
        self.jump *= stride;
        self.t = (self.t - 1) / stride + 1;
        Ok(())
    }
}

/// Build a student for `graph`; initialization is a pure function of `seed`.
pub fn build_student<F: Float>(
    cfg: &ArchitectureConfig,
    graph: &GraphSpec,
    num_classes: usize,
    input: &InputSpec,
    seed: u64,
) -> Result<StudentModel<F>> {
    cfg.validate()?;
    input.validate()?;
    if num_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
    }
    let v = graph.n_vertices();
    let adjacency: Vec<Vec<Tensor<f64>>> = [cfg.dist_in, cfg.dist_main]
        .iter()
        .map(|&k| NormalizedAdjacency::build(graph, PartitionStrategy::Distance, k).map(|a| a.matrices))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::<F>::new(&mut rng);
    let mut blocks = Vec::new();
    let geom = |cin, cout, k, stride, adj: usize| LayerGeom {
        cin,
        cout,
        k,
        stride,
        adjacency: adj,
        n_subsets: adjacency[adj].len(),
        v,
        adaptive: cfg.adaptive,
        act: cfg.activation,
        shrinkage: cfg.shrinkage,
    };

    let stem_w = cfg.stem_width();
    let mut stems = Vec::new();
    let mut streams = Vec::new();
    let mut frames = Frames { t: input.frames, rf: 1, jump: 1 };
    for (bi, &cin) in input.channels().iter().enumerate() {
        let name = format!("branch{bi}");
        stems.push(Stem {
            bn_in: b.batch_norm(&format!("{name}.bn_in"), cin),
            lift: TemporalConv::pointwise(&mut b, &format!("{name}.lift"), cin, stem_w),
            bn: b.batch_norm(&format!("{name}.bn"), stem_w),
        });
        let mut f = Frames { t: input.frames, rf: 1, jump: 1 };
        let mut c = stem_w;
        let mut stream = Vec::new();
        for blk in 0..cfg.blocks_in {
            let cout = cfg.input_block_width(blk);
            let (t_in, c_in) = (f.t, c);
            let mut layers = Vec::new();
            for d in 0..cfg.depth_in {
                let stride = if d == 0 { cfg.stride_in } else { 1 };
                f.layer(cfg.window, stride)?;
                let g = geom(c, cout, cfg.window, stride, 0);
                layers.push(ConvLayer::new(&mut b, &format!("{name}.in{blk}.l{d}"), ConvKind::Basic, g));
                c = cout;
            }
            let shortcut = (cfg.residual && (c_in != cout || cfg.stride_in != 1)).then(|| {
                let mut proj = TemporalConv::pointwise(&mut b, &format!("{name}.in{blk}.skip"), c_in, cout);
                proj.stride = cfg.stride_in;
                (proj, b.batch_norm(&format!("{name}.in{blk}.skip_bn"), cout))
            });
            stream.push(InputBlock {
                layers,
                shortcut,
                residual: cfg.residual,
            });
            if bi == 0 {
                blocks.push(BlockInfo {
                    name: format!("input{blk}"),
                    kind: ConvKind::Basic.name().into(),
                    in_channels: c_in,
                    out_channels: cout,
                    stride: cfg.stride_in,
                    frames_in: t_in,
                    frames_out: f.t,
                    receptive_field: f.rf,
                });
            }
        }
        streams.push(stream);
        frames = f;
    }

    let width = if cfg.blocks_in > 0 { cfg.input_block_width(cfg.blocks_in - 1) } else { stem_w };
    let n_branches = input.branches.len();
    let fuse = TemporalConv::pointwise(&mut b, "fuse", n_branches * width, width);
    let fuse_bn = b.batch_norm("fuse.bn", width);
    let mut main = Vec::new();
    for blk in 0..cfg.blocks_main {
        let t_in = frames.t;
        let mut layers = Vec::new();
        for d in 0..cfg.depth_main {
            frames.layer(MAIN_WINDOW, 1)?;
            let g = geom(width, width, MAIN_WINDOW, 1, 1);
            layers.push(ConvLayer::new(&mut b, &format!("main{blk}.l{d}"), cfg.conv, g));
        }
        let attention = Attention::new(&mut b, &format!("main{blk}"), cfg.attention, width, graph.parts())?;
        main.push(MainBlock {
            layers,
            attention,
            residual: cfg.residual,
        });
        blocks.push(BlockInfo {
            name: format!("main{blk}"),
            kind: format!("{}+{}", cfg.conv.name(), cfg.attention.name()),
            in_channels: width,
            out_channels: width,
            stride: 1,
            frames_in: t_in,
            frames_out: frames.t,
            receptive_field: frames.rf,
        });
    }
    let head = Linear::new(&mut b, "head", width, num_classes);
    let Builder {
        names, params, running, ..
    } = b;
    Ok(StudentModel {
        config: cfg.clone(),
        num_classes,
        input: input.clone(),
        graph: graph.clone(),
        seed,
        adjacency,
        layout: Layout {
            stems,
            input: streams,
            fuse,
            fuse_bn,
            main,
            head,
        },
        names,
        params,
        running,
        blocks,
    })
}

impl InputBlock {
    fn forward<F: Float>(&self, f: &mut Fwd<'_, F>, x: Var) -> Result<Var> {
        let mut y = x;
        for l in &self.layers {
            y = l.forward(f, y)?;
        }
        if !self.residual {
            return Ok(y);
        }
        let skip = match &self.shortcut {
            Some((proj, bn)) => {
                let s = proj.forward(f, x)?;
                bn.forward(f, s)?
            }
            None => x,
        };
        f.tape.add(skip, y)
    }
}

impl MainBlock {
    fn forward<F: Float>(&self, f: &mut Fwd<'_, F>, x: Var) -> Result<Var> {
        let mut y = x;
        for l in &self.layers {
            y = l.forward(f, y)?;
        }
        let y = self.attention.forward(f, y)?;
        if self.residual {
            f.tape.add(x, y)
        } else {
            Ok(y)
        }
    }
}

impl<F: Float> StudentModel<F> {
    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_spec(&self) -> &InputSpec {
        &self.input
    }

    pub fn graph(&self) -> &GraphSpec {
        &self.graph
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn blocks(&self) -> &[BlockInfo] {
        &self.blocks
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats<F>] {
        &self.running
    }

    /// Width entering the classifier.
    pub fn feature_width(&self) -> usize {
        self.blocks.last().map_or(self.config.stem_width(), |b| b.out_channels)
    }

    /// Fold batch statistics of a training pass into the running estimates.
    pub fn absorb_stats(&mut self, stats: &[Option<BatchStats<F>>]) {
        for (r, s) in self.running.iter_mut().zip(stats) {
            if let Some(s) = s {
                r.absorb(s);
            }
        }
    }

    /// Replace the running statistics, keeping the per-layer widths.
    pub fn set_running_stats(&mut self, stats: Vec<RunningStats<F>>) -> Result<()> {
        let same = stats.len() == self.running.len()
            && stats.iter().zip(&self.running).all(|(a, b)| a.mean.len() == b.mean.len() && a.var.len() == b.var.len());
        if !same {
            return Err(Error::Shape("running statistics do not match the model layout".into()));
        }
        self.running = stats;
        Ok(())
    }

    /// Convert every parameter and statistic to another precision.
    pub fn cast<G: Float>(&self) -> StudentModel<G> {
        let conv = |v: &[F]| v.iter().map(|x| G::from_f64_lossy(x.to_f64_lossy())).collect();
        StudentModel {
            config: self.config.clone(),
            num_classes: self.num_classes,
            input: self.input.clone(),
            graph: self.graph.clone(),
            seed: self.seed,
            adjacency: self.adjacency.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            running: self
                .running
                .iter()
                .map(|r| RunningStats {
                    mean: conv(&r.mean),
                    var: conv(&r.var),
                })
                .collect(),
            blocks: self.blocks.clone(),
        }
    }

    /// Record a forward pass. `inputs[i]` is `[N*M, C_i, T, V]` with persons
    /// folded into the batch (person-minor). Training mode needs `rng` for dropout.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        inputs: &[Tensor<F>],
        train: bool,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardPass<F>> {
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| if train { tape.param(p.clone()) } else { tape.leaf(p.clone()) })
            .collect();
        self.forward_vars(tape, &params, inputs, train, rng)
    }

    /// [`forward`](Self::forward) with parameters already recorded on `tape`,
    /// one handle per entry of [`params`](Self::params) with matching shape.
    pub fn forward_vars(
        &self,
        tape: &mut Tape<F>,
        params: &[Var],
        inputs: &[Tensor<F>],
        train: bool,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardPass<F>> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!("model has {} parameters, got {}", self.params.len(), params.len())));
        }
        for (p, &v) in self.params.iter().zip(params) {
            if tape.shape(v) != p.shape() {
                return Err(Error::Shape(format!("parameter {:?} recorded as {:?}", p.shape(), tape.shape(v))));
            }
        }
        if inputs.len() != self.layout.stems.len() {
            return Err(Error::Shape(format!(
                "model has {} branches, got {} inputs",
                self.layout.stems.len(),
                inputs.len()
            )));
        }
        if train && rng.is_none() {
            return Err(Error::Contract("training-mode forward needs a dropout generator".into()));
        }
        let m = self.input.persons;
        let v = self.graph.n_vertices();
        for (x, c) in inputs.iter().zip(self.input.channels()) {
            let s = x.shape();
            if s.len() != 4 || s[1] != c || s[3] != v || s[0] % m != 0 || s[0] == 0 {
                return Err(Error::Shape(format!(
                    "branch input {s:?} does not match [N*{m}, {c}, T, {v}]"
                )));
            }
            if s[0] != inputs[0].shape()[0] || s[2] != inputs[0].shape()[2] {
                return Err(Error::Shape("branch inputs disagree on batch or frames".into()));
            }
        }
        let n = inputs[0].shape()[0] / m;
        let rng: Option<&mut dyn RngCore> = match rng {
            Some(r) => Some(r),
            None => None,
        };
        let mut f = Fwd::new(tape, params, &self.running, train, rng);
        f.adj = self.adjacency.iter().map(|set| f.tape.leaf(stack_subsets(set))).collect();
        let cfg = &self.config;
        let mut outs = Vec::with_capacity(inputs.len());
        for ((x, stem), stream) in inputs.iter().zip(&self.layout.stems).zip(&self.layout.input) {
            let x = f.tape.leaf(x.clone());
            let y = stem.bn_in.forward(&mut f, x)?;
            let y = stem.lift.forward(&mut f, y)?;
            let y = stem.bn.forward(&mut f, y)?;
            let mut y = act(&mut f, y, cfg.activation);
            for blk in stream {
                y = blk.forward(&mut f, y)?;
            }
            outs.push(y);
        }
        let y = f.tape.concat(&outs, 1)?;
        let y = self.layout.fuse.forward(&mut f, y)?;
        let y = self.layout.fuse_bn.forward(&mut f, y)?;
        let mut y = act(&mut f, y, cfg.activation);
        for blk in &self.layout.main {
            y = blk.forward(&mut f, y)?;
        }
        let c = f.tape.shape(y)[1];
        let pooled = f.tape.mean_axes(y, &[2, 3])?;
        let pooled = f.tape.reshape(pooled, &[n, m, c])?;
        let pooled = f.tape.max_axis(pooled, 1)?;
        let mut h = f.tape.reshape(pooled, &[n, c])?;
        if train && cfg.dropout > 0.0 {
            let rng = f.rng.as_deref_mut().expect("checked above");
            h = f.tape.dropout(h, cfg.dropout, rng)?;
        }
        let logits = self.layout.head.forward(&mut f, h)?;
        let stats = std::mem::take(&mut f.stats);
        Ok(ForwardPass {
            logits,
            params: params.to_vec(),
            stats,
        })
    }

    /// Evaluation-mode logits `[N, num_classes]`.
    pub fn predict(&self, inputs: &[Tensor<F>]) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, inputs, false, None)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Forward one sample's features in evaluation mode.
    pub fn predict_bundle(&self, bundle: &FeatureBundle) -> Result<Tensor<F>> {
        let inputs = batch_inputs(&[sample_input(bundle, &self.input)?], &self.input, self.graph.n_vertices())?;
        self.predict(&inputs)
    }
}

/// Exact count of trainable scalars.
pub fn count_parameters<F: Float>(m: &StudentModel<F>) -> usize {
    m.params.iter().map(Tensor::numel).sum()
}

/// Floating-point operations (two per multiply-accumulate) of one evaluation
/// forward pass over a single sample of `frames` frames.
pub fn count_flops<F: Float>(m: &StudentModel<F>, frames: usize) -> Result<u64> {
    let v = m.graph.n_vertices();
    let inputs: Vec<Tensor<F>> = m
        .input
        .channels()
        .iter()
        .map(|&c| Tensor::zeros(&[m.input.persons, c, frames, v]))
        .collect();
    let mut tape = Tape::new();
    m.forward(&mut tape, &inputs, false, None)?;
    Ok(2 * tape.macs())
}

/// One sample's branch tensors in the model layout `[M, C, T, V]`, flattened.
pub fn sample_input<F: Float>(bundle: &FeatureBundle, spec: &InputSpec) -> Result<Vec<Vec<F>>> {
    let all = bundle.branches();
    spec.branches
        .iter()
        .map(|&b| {
            let t = all.get(b).ok_or_else(|| Error::Config(format!("no feature branch {b}")))?;
            let s = t.shape();
            let (c, tt, v, m) = (s[0], s[1], s[2], s[3]);
            if m != spec.persons || tt != spec.frames {
                return Err(Error::Shape(format!(
                    "features {s:?} do not match {} frames, {} persons",
                    spec.frames, spec.persons
                )));
            }
            let src = t.data();
            let mut out = vec![F::zero(); src.len()];
            for ci in 0..c {
                for ti in 0..tt {
                    for vi in 0..v {
                        for mi in 0..m {
                            out[((mi * c + ci) * tt + ti) * v + vi] = F::from_f64_lossy(src[((ci * tt + ti) * v + vi) * m + mi]);
                        }
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

/// Stack per-sample inputs into one `[N*M, C, T, V]` tensor per branch.
pub fn batch_inputs<F: Float>(samples: &[Vec<Vec<F>>], spec: &InputSpec, v: usize) -> Result<Vec<Tensor<F>>> {
    let n = samples.len();
    spec.channels()
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let mut data = Vec::with_capacity(n * spec.persons * c * spec.frames * v);
            for s in samples {
                data.extend_from_slice(&s[i]);
            }
            Tensor::new(&[n * spec.persons, c, spec.frames, v], data)
        })
        .collect()
}

const MODEL_MAGIC: &[u8; 4] = b"SKNM";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config: ArchitectureConfig,
    num_classes: usize,
    input: InputSpec,
    graph: GraphSpec,
    seed: u64,
    params: Vec<(String, Vec<usize>)>,
    stats: Vec<usize>,
}

impl<F: Float> StudentModel<F> {
    /// Magic, version, JSON header with the configuration, then every
    /// parameter and running statistic as little-endian `f64`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ModelHeader {
            config: self.config.clone(),
            num_classes: self.num_classes,
            input: self.input.clone(),
            graph: self.graph.clone(),
            seed: self.seed,
            params: self.names.iter().cloned().zip(self.params.iter().map(|p| p.shape().to_vec())).collect(),
            stats: self.running.iter().map(|r| r.mean.len()).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.write_all(MODEL_MAGIC)?;
        out.write_all(&MODEL_VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        let mut put = |x: F| out.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
        for p in &self.params {
            p.data().iter().for_each(|&x| put(x));
        }
        for r in &self.running {
            r.mean.iter().chain(&r.var).for_each(|&x| put(x));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, message: String| Error::Format {
            offset: offset as u64,
            message,
        };
        if bytes.len() < 16 || &bytes[..4] != MODEL_MAGIC {
            return Err(fail(0, "not a model checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != MODEL_VERSION {
            return Err(fail(4, format!("unsupported model version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| fail(16, "truncated header".into()))?;
        let header: ModelHeader = serde_json::from_slice(body).map_err(|e| fail(16, e.to_string()))?;
        let mut model = build_student::<F>(&header.config, &header.graph, header.num_classes, &header.input, header.seed)?;
        let layout: Vec<(String, Vec<usize>)> =
            model.names.iter().cloned().zip(model.params.iter().map(|p| p.shape().to_vec())).collect();
        if layout != header.params {
            return Err(fail(16, "parameter layout does not match the rebuilt model".into()));
        }
        let mut pos = 16 + len;
        let total: usize = model.params.iter().map(Tensor::numel).sum::<usize>()
            + model.running.iter().map(|r| 2 * r.mean.len()).sum::<usize>();
        if bytes.len() - pos != 8 * total {
            return Err(fail(pos, format!("expected {} value bytes, found {}", 8 * total, bytes.len() - pos)));
        }
        let mut next = || {
            let v = f64::from_le_bytes(bytes[pos..pos + 8].try_into().expect("8 bytes"));
            pos += 8;
            F::from_f64_lossy(v)
        };
        for p in model.params.iter_mut() {
            p.data_mut().iter_mut().for_each(|x| *x = next());
        }
        for r in model.running.iter_mut() {
            r.mean.iter_mut().for_each(|x| *x = next());
            r.var.iter_mut().for_each(|x| *x = next());
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
