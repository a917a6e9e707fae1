//! Synthetic skeleton actions on a 15-joint tree, the SKL1 file format and
//! evaluation split protocols.

mod motion;
mod skl;
mod split;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SkeletonSequence;
use crate::graph::{build_graph, GraphSpec};

pub use motion::{render_motion, MotionClass, SubjectStyle, JOINT_NAMES, PART_NAMES};
pub use skl::{load_skl, read_skl, save_skl, write_skl, SKL_MAGIC, SKL_VERSION};
pub use split::{split, DatasetSplit, Protocol, SplitRatios};

/// One labeled recording together with the metadata used by split protocols.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub sequence: SkeletonSequence,
    pub subject: u32,
    /// Camera-view analog, numbered from 1.
    pub view: u32,
}

impl Sample {
    pub fn label(&self) -> usize {
        self.sequence.label().expect("dataset samples are labeled")
    }
}

/// A labeled collection sharing one topology.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub graph: Arc<GraphSpec>,
    pub num_classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `[C, T, V, M]` shared by every sample, if any.
    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.sequence.data().shape())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label()] += 1;
        }
        counts
    }
}

/// The fixed 15-joint tree with its five body parts, centered on the spine.
pub fn synthetic_skeleton() -> GraphSpec {
    let edges = [
        (0, 1),
        (1, 2),
        (1, 3),
        (3, 4),
        (4, 5),
        (1, 6),
        (6, 7),
        (7, 8),
        (0, 9),
        (9, 10),
        (10, 11),
        (0, 12),
        (12, 13),
        (13, 14),
    ];
    let parts = vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4];
    build_graph(15, &edges, 1)
        .and_then(|g| g.with_parts(parts))
        .expect("built-in skeleton is valid")
}

/// Generator settings for the synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub joints: usize,
    pub frames: usize,
    pub persons: usize,
    pub samples_per_subject: usize,
    pub subjects: usize,
    pub views: usize,
    /// Standard deviation of per-coordinate joint noise, meters.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 6,
            joints: 15,
            frames: 64,
            persons: 1,
            samples_per_subject: 100,
            subjects: 10,
            views: 3,
            noise_std: 0.01,
            seed: 1234,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_classes", self.num_classes),
            ("persons", self.persons),
            ("samples_per_subject", self.samples_per_subject),
            ("subjects", self.subjects),
            ("views", self.views),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Parameter(format!("{name} must be at least 1")));
        }
        if self.num_classes > MotionClass::ALL.len() {
            return Err(Error::Parameter(format!(
                "at most {} motion classes are available, asked for {}",
                MotionClass::ALL.len(),
                self.num_classes
            )));
        }
        if self.joints != 15 {
            return Err(Error::Parameter(format!(
                "the synthetic skeleton has 15 joints, asked for {}",
                self.joints
            )));
        }
        if self.views > 3 {
            return Err(Error::Parameter(format!("at most 3 views are available, asked for {}", self.views)));
        }
        if self.frames < crate::features::MIN_FRAMES {
            return Err(Error::SequenceLength(format!(
                "{} frames requested, at least {} required",
                self.frames,
                crate::features::MIN_FRAMES
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Parameter(format!("noise_std must be finite and non-negative, got {}", self.noise_std)));
        }
        Ok(())
    }
}

/// Subject-major generation: sample `k` of subject `s` has class `(k + s) % classes`
/// and view `(k / classes) % views + 1`, so every class is seen from every view.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let graph = Arc::new(synthetic_skeleton());
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = Vec::with_capacity(spec.subjects * spec.samples_per_subject);
    for s in 0..spec.subjects {
        let style = SubjectStyle::draw(&mut rng);
        for k in 0..spec.samples_per_subject {
            let class = MotionClass::ALL[(k + s) % spec.num_classes];
            let view = ((k / spec.num_classes) % spec.views) as u32 + 1;
            let phase = rng.random_range(-0.5..0.5);
            let mut data = render_motion(class, &style, phase, view, spec.frames, spec.persons);
            if spec.noise_std > 0.0 {
                for v in data.data_mut() {
                    *v += noise.sample(&mut rng);
                }
            }
            // stored as 32-bit on disk; keep values representable so round trips are exact
            let data = data.map(|v| v as f32 as f64);
            let id = samples.len();
            samples.push(Sample {
                id,
                sequence: SkeletonSequence::new(data, graph.clone(), Some(class as usize))?,
                subject: s as u32,
                view,
            });
        }
    }
    Ok(Dataset {
        graph,
        num_classes: spec.num_classes,
        samples,
    })
}

/// Accuracy of a nearest-class-mean classifier on flattened sequences.
pub fn nearest_centroid_accuracy(train: &[Sample], test: &[Sample], num_classes: usize) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let dim = train.first().map_or(0, |s| s.sequence.data().numel());
    let mut centroids = vec![vec![0.0; dim]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for s in train {
        let l = s.label();
        counts[l] += 1;
        for (c, v) in centroids[l].iter_mut().zip(s.sequence.data().data()) {
            *c += v;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        if n > 0 {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    let correct = test
        .iter()
        .filter(|s| {
            let x = s.sequence.data().data();
            let best = (0..num_classes)
                .filter(|&k| counts[k] > 0)
                .map(|k| {
                    let d: f64 = centroids[k].iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                    (k, d)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(k, _)| k);
            best == Some(s.label())
        })
        .count();
    correct as f64 / test.len() as f64
}

#[cfg(test)]
mod tests;
