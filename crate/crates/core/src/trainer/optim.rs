use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::searchspace::{names, CandidateConfig, SearchSpaceDef};
use crate::tensor::{Float, Tensor};

pub(crate) const ADAM_BETA2: f64 = 0.999;
pub(crate) const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "SGD")]
    Sgd,
    Adam,
    AdamW,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [Self::Sgd, Self::Adam, Self::AdamW];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "SGD" => Ok(Self::Sgd),
            "Adam" => Ok(Self::Adam),
            "AdamW" => Ok(Self::AdamW),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sgd => "SGD",
            Self::Adam => "Adam",
            Self::AdamW => "AdamW",
        }
    }
}

/// Optimizer hyperparameters. For Adam and AdamW `momentum` is the first-moment decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0001,
            batch_size: 16,
        }
    }
}

impl OptimizerConfig {
    pub fn from_candidate(space: &SearchSpaceDef, config: &CandidateConfig) -> Result<Self> {
        let num = |name: &str| -> Result<f64> {
            space
                .value_of(config, name)?
                .as_f64()
                .ok_or_else(|| Error::Config(format!("'{name}' is not numeric")))
        };
        let kind = space.value_of(config, names::OPTIMIZER)?;
        let kind = OptimizerKind::parse(kind.as_str().ok_or_else(|| Error::Config("optimizer is not a name".into()))?)?;
        let batch_size = space
            .value_of(config, names::BATCH_SIZE)?
            .as_usize()
            .ok_or_else(|| Error::Config("batch size is not a count".into()))?;
        let out = Self {
            kind,
            lr: num(names::LR)?,
            momentum: num(names::MOMENTUM)?,
            weight_decay: num(names::WEIGHT_DECAY)?,
            batch_size,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Optimizer with per-parameter state.
///
/// SGD applies weight decay as an L2 term on the gradient, AdamW decays the
/// weights directly, and Adam ignores weight decay.
#[derive(Clone, Debug)]
pub struct Optimizer<F> {
    config: OptimizerConfig,
    steps: u64,
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
}

impl<F: Float> Optimizer<F> {
    pub fn new(config: OptimizerConfig, params: &[Tensor<F>]) -> Self {
        let zeros = || params.iter().map(|p| vec![F::zero(); p.numel()]).collect();
        let second = match config.kind {
            OptimizerKind::Sgd => Vec::new(),
            _ => zeros(),
        };
        Self {
            config,
            steps: 0,
            first: zeros(),
            second,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update at learning rate `lr` in place.
    pub fn step(&mut self, params: &mut [Tensor<F>], grads: &[Vec<F>], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer holds {} tensors, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.numel() != g.len() || p.numel() != self.first[i].len() {
                return Err(Error::Contract(format!(
                    "parameter {i} has {} elements, gradient {}",
                    p.numel(),
                    g.len()
                )));
            }
        }
        self.steps += 1;
        let c = &self.config;
        let f = F::from_f64_lossy;
        let (lr_f, mu, wd) = (f(lr), f(c.momentum), f(c.weight_decay));
        match c.kind {
            OptimizerKind::Sgd => {
                for ((p, g), buf) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((w, &g), b) in p.data_mut().iter_mut().zip(g).zip(buf.iter_mut()) {
                        let g = g + wd * *w;
                        *b = mu * *b + g;
                        *w -= lr_f * *b;
                    }
                }
            }
            OptimizerKind::Adam | OptimizerKind::AdamW => {
                let t = self.steps as i32;
                let (b1, b2) = (c.momentum, ADAM_BETA2);
                let corr1 = 1.0 - b1.powi(t);
                let corr2 = 1.0 - b2.powi(t);
                let step_size = f(lr / corr1);
                let (b1f, b2f, corr2_sqrt, eps) = (f(b1), f(b2), f(corr2.sqrt()), f(ADAM_EPS));
                let shrink = match c.kind {
                    OptimizerKind::AdamW => F::one() - lr_f * wd,
                    _ => F::one(),
                };
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1f * *m + (F::one() - b1f) * g;
                        *v = b2f * *v + (F::one() - b2f) * g * g;
                        *w = *w * shrink - step_size * *m / ((*v).sqrt() / corr2_sqrt + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
