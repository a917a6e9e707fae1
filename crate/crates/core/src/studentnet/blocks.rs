use serde::{Deserialize, Serialize};

use super::layers::{act, interleave_order, BatchNorm, Builder, DepthwiseConv, Fwd, GraphConv, TemporalConv};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Float, Tensor, Var};

/// Convolution layer families of the search space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConvKind {
    Basic,
    Bottleneck,
    Sep,
    SG,
    V3,
    Shuffle,
}

impl ConvKind {
    pub const ALL: [ConvKind; 6] = [
        ConvKind::Basic,
        ConvKind::Bottleneck,
        ConvKind::Sep,
        ConvKind::SG,
        ConvKind::V3,
        ConvKind::Shuffle,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown conv layer type '{name}'")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Basic => "Basic",
            Self::Bottleneck => "Bottleneck",
            Self::Sep => "Sep",
            Self::SG => "SG",
            Self::V3 => "V3",
            Self::Shuffle => "Shuffle",
        }
    }
}

/// Attention gates of the search space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionKind {
    Stja,
    Ca,
    Fa,
    Ja,
    Pa,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 5] = [
        AttentionKind::Stja,
        AttentionKind::Ca,
        AttentionKind::Fa,
        AttentionKind::Ja,
        AttentionKind::Pa,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown attention layer '{name}'")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Stja => "Stja",
            Self::Ca => "Ca",
            Self::Fa => "Fa",
            Self::Ja => "Ja",
            Self::Pa => "Pa",
        }
    }
}

/// Round to the nearest integer width, never below 4.
pub fn channel_width(x: f64) -> usize {
    (x.round() as usize).max(4)
}

/// Shared geometry of a convolution layer being built.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub adjacency: usize,
    pub n_subsets: usize,
    pub v: usize,
    pub adaptive: bool,
    pub act: Activation,
    pub shrinkage: usize,
}

impl LayerGeom {
    fn with(self, cin: usize, cout: usize, stride: usize) -> Self {
        Self { cin, cout, stride, ..self }
    }
}

/// Graph conv, norm, activation, temporal conv, norm, activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct BasicCore {
    gcn: GraphConv,
    bn1: BatchNorm,
    tcn: TemporalConv,
    bn2: BatchNorm,
    act: Activation,
}

impl BasicCore {
    fn new<F: Float>(b: &mut Builder<'_, F>, name: &str, g: LayerGeom) -> Self {
        Self {
            gcn: GraphConv::new(b, &format!("{name}.gcn"), g.cin, g.cout, g.adjacency, g.n_subsets, g.v, g.adaptive),
            bn1: b.batch_norm(&format!("{name}.bn1"), g.cout),
            tcn: TemporalConv::new(b, &format!("{name}.tcn"), g.cout, g.cout, g.k, g.stride),
            bn2: b.batch_norm(&format!("{name}.bn2"), g.cout),
            act: g.act,
        }
    }

    fn forward<F: Float>(&self, f: &mut Fwd<'_, F>, x: Var) -> Result<Var> {
        let y = self.gcn.forward(f, x)?;
        let y = self.bn1.forward(f, y)?;
        let y = act(f, y, self.act);
        let y = self.tcn.forward(f, y)?;
        let y = self.bn2.forward(f, y)?;
        Ok(act(f, y, self.act))
    }
}

/// Graph conv, then depthwise temporal conv and pointwise channel mixing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct SepCore {
    gcn: GraphConv,
    bn1: BatchNorm,
    dw: DepthwiseConv,
    bn2: BatchNorm,
    pw: TemporalConv,
    bn3: BatchNorm,
    act: Activation,
}

impl SepCore {
    fn new<F: Float>(b: &mut Builder<'_, F>, name: &str, g: LayerGeom) -> Self {
        Self {
            gcn: GraphConv::new(b, &format!("{name}.gcn"), g.cin, g.cout, g.adjacency, g.n_subsets, g.v, g.adaptive),
            bn1: b.batch_norm(&format!("{name}.bn1"), g.cout),
            dw: DepthwiseConv::new(b, &format!("{name}.dw"), g.cout, g.k, g.stride),
            bn2: b.batch_norm(&format!("{name}.bn2"), g.cout),
            pw: TemporalConv::pointwise(b, &format!("{name}.pw"), g.cout, g.cout),
            bn3: b.batch_norm(&format!("{name}.bn3"), g.cout),
            act: g.act,
        }
    }

    fn forward<F: Float>(&self, f: &mut Fwd<'_, F>, x: Var) -> Result<Var> {
        let y = self.gcn.forward(f, x)?;
        let y = self.bn1.forward(f, y)?;
        let y = act(f, y, self.act);
        let y = self.dw.forward(f, y)?;
        let y = self.bn2.forward(f, y)?;
        let y = self.pw.forward(f, y)?;
        let y = self.bn3.forward(f, y)?;
        Ok(act(f, y, self.act))
    }
}

/// Channel squeeze: mean over frames and joints, two 1x1 layers, sigmoid gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct Squeeze {
    fc1: TemporalConv,
    fc2: TemporalConv,
    bias: usize,
}

impl Squeeze {
    fn new<F: Float>(b: &mut Builder<'_, F>, name: &str, c: usize, reduction: usize) -> Self {
        let hidden = (c / reduction).max(1);
        Self {
            fc1: TemporalConv::pointwise(b, &format!("{name}.fc1"), c, hidden),
            fc2: TemporalConv::pointwise(b, &format!("{name}.fc2"), hidden, c),
            bias: b.constant(format!("{name}.bias"), &[1, c, 1, 1], 0.0),
        }
    }

    fn gate<F: Float>(&self, f: &mut Fwd<'_, F>, x: Var) -> Result<Var> {
        let s = f.tape.mean_axes(x, &[2, 3])?;
        let h = self.fc1.forward(f, s)?;
        let h = f.tape.activation(h, Activation::Relu);
        let h = self.fc2.forward(f, h)?;
        let h = f.tape.add(h, f.p(self.bias))?;
        Ok(f.tape.sigmoid(h))
    }
}

/// One searched convolution layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) enum ConvLayer {
    Basic(BasicCore),
    Bottleneck {
        reduce: TemporalConv,
        bn_r: BatchNorm,
        core: BasicCore,
        expand: TemporalConv,
        bn_e: BatchNorm,
        act: Activation,
        squeeze: Option<Squeeze>,
    },
    Sep(SepCore),
    SG {
        core: SepCore,
        gate: TemporalConv,
        bn_g: BatchNorm,
    },
    Shuffle {
        /// Channels passed through untouched; `None` when both halves are convolved.
        keep: Option<usize>,
        left: Option<SepCore>,
        right: SepCore,
        right_from: usize,
        order: Vec<usize>,
    },
}

/// Inner width of a bottleneck: `C / shrinkage`, at least 4.
pub fn bottleneck_width(c: usize, shrinkage: usize) -> usize {
    channel_width(c as f64 / shrinkage.max(1) as f64)
}

impl ConvLayer {
    pub(crate) fn new<F: Float>(b: &mut Builder<'_, F>, name: &str, kind: ConvKind, g: LayerGeom) -> Self {
        match kind {
            ConvKind::Basic => Self::Basic(BasicCore::new(b, name, g)),
            ConvKind::Bottleneck | ConvKind::V3 => {
                let v3 = kind == ConvKind::V3;
                let g = if v3 { LayerGeom { act: Activation::Hardswish, ..g } } else { g };
                let mid = bottleneck_width(g.cout, g.shrinkage);
                Self::Bottleneck {
                    reduce: TemporalConv::pointwise(b, &format!("{name}.reduce"), g.cin, mid),
                    bn_r: b.batch_norm(&format!("{name}.bn_r"), mid),
                    core: BasicCore::new(b, &format!("{name}.core"), g.with(mid, mid, g.stride)),
                    expand: TemporalConv::pointwise(b, &format!("{name}.expand"), mid, g.cout),
                    bn_e: b.batch_norm(&format!("{name}.bn_e"), g.cout),
                    act: g.act,
                    squeeze: v3.then(|| Squeeze::new(b, &format!("{name}.se"), g.cout, 4)),
                }
            }
            ConvKind::Sep => Self::Sep(SepCore::new(b, name, g)),
            ConvKind::SG => Self::SG {
                core: SepCore::new(b, &format!("{name}.core"), g),
                gate: TemporalConv::pointwise(b, &format!("{name}.gate"), g.cout, g.cout),
                bn_g: b.batch_norm(&format!("{name}.bn_g"), g.cout),
            },
            ConvKind::Shuffle => {
                if g.cin == g.cout && g.stride == 1 {
                    let c1 = g.cin / 2;
                    let c2 = g.cin - c1;
                    Self::Shuffle {
                        keep: Some(c1),
                        left: None,
                        right: SepCore::new(b, &format!("{name}.right"), g.with(c2, c2, 1)),
                        right_from: c1,
                        order: interleave_order(c1, c2),
                    }
                } else {
                    let c1 = g.cout / 2;
                    let c2 = g.cout - c1;
                    Self::Shuffle {
                        keep: None,
                        left: Some(SepCore::new(b, &format!("{name}.left"), g.with(g.cin, c1, g.stride))),
                        right: SepCore::new(b, &format!("{name}.right"), g.with(g.cin, c2, g.stride)),
                        right_from: 0,
                        order: interleave_order(c1, c2),
                    }
                }
            }
        }
    }

    pub(crate) fn forward<F: Float>(&self, f: &mut Fwd<'_, F>, x: Var) -> Result<Var> {
        match self {
            Self::Basic(core) => core.forward(f, x),
            Self::Bottleneck {
                reduce,
                bn_r,
                core,
                expand,
                bn_e,
                act: a,
                squeeze,
            } => {
                let y = reduce.forward(f, x)?;
                let y = bn_r.forward(f, y)?;
                let y = act(f, y, *a);
                let y = core.forward(f, y)?;
                let y = expand.forward(f, y)?;
                let mut y = bn_e.forward(f, y)?;
                if let Some(se) = squeeze {
                    let g = se.gate(f, y)?;
                    y = f.tape.mul(y, g)?;
                }
                Ok(act(f, y, *a))
            }
            Self::Sep(core) => core.forward(f, x),
            Self::SG { core, gate, bn_g } => {
                let y = core.forward(f, x)?;
                let g = gate.forward(f, y)?;
                let g = bn_g.forward(f, g)?;
                let g = f.tape.sigmoid(g);
                f.tape.mul(y, g)
            }
            Self::Shuffle {
                keep,
                left,
                right,
                right_from,
                order,
            } => {
                let c = f.tape.shape(x)[1];
                let (a, r_in) = match (keep, left) {
                    (Some(c1), _) => {
                        let a = f.tape.index_select(x, 1, &(0..*c1).collect::<Vec<_>>())?;
                        let r = f.tape.index_select(x, 1, &(*right_from..c).collect::<Vec<_>>())?;
                        (a, r)
                    }
                    (None, Some(l)) => (l.forward(f, x)?, x),
                    (None, None) => return Err(Error::Config("shuffle layer without a left group".into())),
                };
                let r = right.forward(f, r_in)?;
                let cat = f.tape.concat(&[a, r], 1)?;
                f.tape.index_select(cat, 1, order)
            }
        }
    }
}

/// Gate over the feature map `[N, C, T, V]`; every kind ends in a sigmoid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) enum Attention {
    Ca(Squeeze),
    Fa {
        conv: TemporalConv,
        bias: usize,
    },
    Ja {
        scale: usize,
        bias: usize,
    },
    Pa {
        scale: usize,
        bias: usize,
        /// `[V, P]` averaging matrix and `[P, V]` membership matrix.
        pool: Vec<f64>,
        spread: Vec<f64>,
        parts: usize,
    },
    Stja {
        frame: Box<Attention>,
        joint: Box<Attention>,
    },
}

impl Attention {
    pub(crate) fn new<F: Float>(b: &mut Builder<'_, F>, name: &str, kind: AttentionKind, c: usize, parts: &[usize]) -> Result<Self> {
        let v = parts.len();
        Ok(match kind {
            AttentionKind::Ca => Self::Ca(Squeeze::new(b, &format!("{name}.ca"), c, 4)),
            AttentionKind::Fa => Self::Fa {
                conv: TemporalConv::new(b, &format!("{name}.fa"), 1, 1, 3, 1),
                bias: b.constant(format!("{name}.fa.bias"), &[1, 1, 1, 1], 0.0),
            },
            AttentionKind::Ja => Self::Ja {
                scale: b.constant(format!("{name}.ja.scale"), &[1, 1, 1, v], 1.0),
                bias: b.constant(format!("{name}.ja.bias"), &[1, 1, 1, v], 0.0),
            },
            AttentionKind::Pa => {
                let p = parts.iter().max().map_or(0, |m| m + 1);
                if p == 0 {
                    return Err(Error::Config("part attention needs a body-part grouping".into()));
                }
                let mut sizes = vec![0usize; p];
                for &q in parts {
                    sizes[q] += 1;
                }
                let mut pool = vec![0.0; v * p];
                let mut spread = vec![0.0; p * v];
                for (j, &q) in parts.iter().enumerate() {
                    pool[j * p + q] = 1.0 / sizes[q] as f64;
                    spread[q * v + j] = 1.0;
                }
                Self::Pa {
                    scale: b.constant(format!("{name}.pa.scale"), &[1, 1, 1, p], 1.0),
                    bias: b.constant(format!("{name}.pa.bias"), &[1, 1, 1, p], 0.0),
                    pool,
                    spread,
                    parts: p,
                }
            }
            AttentionKind::Stja => Self::Stja {
                frame: Box::new(Self::new(b, name, AttentionKind::Fa, c, parts)?),
                joint: Box::new(Self::new(b, name, AttentionKind::Ja, c, parts)?),
            },
        })
    }

    /// The multiplicative gate, broadcastable against the input.
    pub(crate) fn gate<F: Float>(&self, f: &mut Fwd<'_, F>, x: Var) -> Result<Var> {
        match self {
            Self::Ca(se) => se.gate(f, x),
            Self::Fa { conv, bias } => {
                let s = f.tape.mean_axes(x, &[1, 3])?;
                let h = conv.forward(f, s)?;
                let h = f.tape.add(h, f.p(*bias))?;
                Ok(f.tape.sigmoid(h))
            }
            Self::Ja { scale, bias } => {
                let s = f.tape.mean_axes(x, &[1, 2])?;
                let h = f.tape.mul(s, f.p(*scale))?;
                let h = f.tape.add(h, f.p(*bias))?;
                Ok(f.tape.sigmoid(h))
            }
            Self::Pa {
                scale,
                bias,
                pool,
                spread,
                parts,
            } => {
                let v = pool.len() / parts;
                let pool = f.tape.leaf(cast(&[v, *parts], pool));
                let spread = f.tape.leaf(cast(&[*parts, v], spread));
                let s = f.tape.mean_axes(x, &[1, 2])?;
                let s = f.tape.matmul(s, pool)?;
                let h = f.tape.mul(s, f.p(*scale))?;
                let h = f.tape.add(h, f.p(*bias))?;
                let g = f.tape.sigmoid(h);
                f.tape.matmul(g, spread)
            }
            Self::Stja { frame, joint } => {
                let a = frame.gate(f, x)?;
                let b = joint.gate(f, x)?;
                f.tape.mul(a, b)
            }
        }
    }

    pub(crate) fn forward<F: Float>(&self, f: &mut Fwd<'_, F>, x: Var) -> Result<Var> {
        let g = self.gate(f, x)?;
        f.tape.mul(x, g)
    }
}

fn cast<F: Float>(shape: &[usize], v: &[f64]) -> Tensor<F> {
    Tensor::new(shape, v.iter().map(|&x| F::from_f64_lossy(x)).collect()).expect("shape")
}
