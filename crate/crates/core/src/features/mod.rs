//! Kinematic preprocessing: relative positions, velocities, filtered
//! accelerations and bone vectors with their direction angles.

mod butterworth;

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::GraphSpec;
use crate::tensor::Tensor;

pub use butterworth::{butterworth_lowpass, Butterworth, FilterSpec, Section};

/// Raw motion tensor of shape `[3, T, V, M]` in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    data: Tensor<f64>,
    graph: Arc<GraphSpec>,
    label: Option<usize>,
}

/// Minimum frame count of a sequence.
pub const MIN_FRAMES: usize = 5;

impl SkeletonSequence {
    pub fn new(data: Tensor<f64>, graph: Arc<GraphSpec>, label: Option<usize>) -> Result<Self> {
        let s = data.shape();
        if s.len() != 4 || s[0] != 3 {
            return Err(Error::Shape(format!("skeleton data must be [3, T, V, M], got {s:?}")));
        }
        if s[1] < MIN_FRAMES {
            return Err(Error::SequenceLength(format!(
                "sequence has {} frames, at least {MIN_FRAMES} required",
                s[1]
            )));
        }
        if s[2] != graph.n_vertices() {
            return Err(Error::Shape(format!(
                "data has {} joints but the graph has {}",
                s[2],
                graph.n_vertices()
            )));
        }
        if s[3] == 0 {
            return Err(Error::Shape("sequence needs at least one person".into()));
        }
        if !data.is_finite() {
            return Err(Error::Contract("skeleton data contains non-finite values".into()));
        }
        Ok(Self { data, graph, label })
    }

    pub fn data(&self) -> &Tensor<f64> {
        &self.data
    }

    pub fn graph(&self) -> &GraphSpec {
        &self.graph
    }

    pub fn graph_arc(&self) -> &Arc<GraphSpec> {
        &self.graph
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn joints(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn persons(&self) -> usize {
        self.data.shape()[3]
    }
}

/// The four input branches, each `[C, T, V, M]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub p: Tensor<f64>,
    pub v: Tensor<f64>,
    pub b: Tensor<f64>,
    pub a: Tensor<f64>,
}

impl FeatureBundle {
    pub fn branches(&self) -> [&Tensor<f64>; 4] {
        [&self.p, &self.v, &self.b, &self.a]
    }
}

/// Channel counts of the P, V, B and A branches.
pub const BRANCH_CHANNELS: [usize; 4] = [3, 6, 6, 3];

#[inline]
fn idx(s: &[usize], c: usize, t: usize, v: usize, m: usize) -> usize {
    ((c * s[1] + t) * s[2] + v) * s[3] + m
}

pub fn relative_position(x: &SkeletonSequence) -> Tensor<f64> {
    let src = x.data.data();
    let s = x.data.shape();
    let center = x.graph.center();
    let mut out = Tensor::zeros(s);
    let o = out.data_mut();
    for c in 0..s[0] {
        for t in 0..s[1] {
            for v in 0..s[2] {
                for m in 0..s[3] {
                    o[idx(s, c, t, v, m)] = src[idx(s, c, t, v, m)] - src[idx(s, c, t, center, m)];
                }
            }
        }
    }
    out
}

fn check_span(d: usize) -> Result<()> {
    if d == 1 || d == 2 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("difference span d must be 1 or 2, got {d}")))
    }
}

/// `(x[t+d] - x[t]) / d` over the first `valid` frames; remaining frames are zero.
fn forward_difference(x: &Tensor<f64>, d: usize, valid: usize) -> Tensor<f64> {
    let s = x.shape();
    let src = x.data();
    let mut out = Tensor::zeros(s);
    let o = out.data_mut();
    let inv = 1.0 / d as f64;
    for c in 0..s[0] {
        for t in 0..valid.min(s[1].saturating_sub(d)) {
            for v in 0..s[2] {
                for m in 0..s[3] {
                    o[idx(s, c, t, v, m)] = (src[idx(s, c, t + d, v, m)] - src[idx(s, c, t, v, m)]) * inv;
                }
            }
        }
    }
    out
}

pub fn velocity(x: &SkeletonSequence, d: usize) -> Result<Tensor<f64>> {
    check_span(d)?;
    Ok(forward_difference(&x.data, d, x.frames()))
}

/// Unfiltered second difference of a velocity tensor `[C, T, V, M]`.
///
/// The first `T - 2d` frames hold `(v[t+d] - v[t]) / d`; the rest are zero.
pub fn raw_acceleration(v: &Tensor<f64>, d: usize) -> Result<Tensor<f64>> {
    check_span(d)?;
    if v.rank() != 4 {
        return Err(Error::Shape(format!("velocity must be [C, T, V, M], got {:?}", v.shape())));
    }
    let t = v.shape()[1];
    Ok(forward_difference(v, d, t.saturating_sub(2 * d)))
}

/// Second difference low-passed along time over its valid support.
pub fn acceleration(v: &Tensor<f64>, d: usize, filter: &FilterSpec) -> Result<Tensor<f64>> {
    let design = Butterworth::from_spec(filter)?;
    let mut raw = raw_acceleration(v, d)?;
    let s = raw.shape().to_vec();
    let valid = s[1].saturating_sub(2 * d);
    if valid < design.min_length() {
        return Err(Error::SequenceLength(format!(
            "{} frames leave {valid} valid acceleration samples, the order-{} filter needs {}",
            s[1],
            design.order(),
            design.min_length()
        )));
    }
    let data = raw.data_mut();
    let mut series = vec![0.0; valid];
    for c in 0..s[0] {
        for v in 0..s[2] {
            for m in 0..s[3] {
                for (t, x) in series.iter_mut().enumerate() {
                    *x = data[idx(&s, c, t, v, m)];
                }
                let y = design.filtfilt(&series)?;
                for (t, y) in y.into_iter().enumerate() {
                    data[idx(&s, c, t, v, m)] = y;
                }
            }
        }
    }
    Ok(raw)
}

/// Bone vectors `L` followed by their direction angles `beta`, shape `[6, T, V, M]`.
pub fn bone_features(x: &SkeletonSequence) -> Tensor<f64> {
    let s = x.data.shape();
    let (t_len, n_v, n_m) = (s[1], s[2], s[3]);
    let src = x.data.data();
    let parent = x.graph.parent_of();
    let out_shape = [6, t_len, n_v, n_m];
    let mut out = Tensor::zeros(&out_shape);
    let o = out.data_mut();
    for t in 0..t_len {
        for v in 0..n_v {
            for m in 0..n_m {
                let mut l = [0.0; 3];
                for (c, lc) in l.iter_mut().enumerate() {
                    *lc = src[idx(s, c, t, v, m)] - src[idx(s, c, t, parent[v], m)];
                }
                let norm = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
                for c in 0..3 {
                    o[idx(&out_shape, c, t, v, m)] = l[c];
                    o[idx(&out_shape, c + 3, t, v, m)] = if norm > 0.0 {
                        (l[c] / norm).clamp(-1.0, 1.0).acos()
                    } else {
                        FRAC_PI_2
                    };
                }
            }
        }
    }
    out
}

fn concat_channels(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let mut shape = a.shape().to_vec();
    shape[0] += b.shape()[0];
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(&shape, data).expect("channel concat")
}

pub fn build_feature_bundle(x: &SkeletonSequence, spec: &FilterSpec) -> Result<FeatureBundle> {
    let v1 = velocity(x, 1)?;
    let v2 = velocity(x, 2)?;
    let a = acceleration(&v1, 1, spec)?;
    Ok(FeatureBundle {
        p: relative_position(x),
        v: concat_channels(&v1, &v2),
        b: bone_features(x),
        a,
    })
}
