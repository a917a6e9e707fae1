//! REINFORCE over per-parameter categorical policies with a replay reservoir
//! of high-reward rollouts.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::searchspace::{default_search_space, init_policies, names, CandidateConfig, PolicySet, SearchSpaceDef, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub config: CandidateConfig,
    /// Validation accuracy in `[0, 1]`.
    pub reward: f64,
    pub epochs_run: usize,
    pub early_stopped: bool,
    /// The student could not be built or trained; it never enters replay memory.
    #[serde(default)]
    pub failed: bool,
}

impl RolloutResult {
    pub fn new(config: CandidateConfig, reward: f64) -> Self {
        Self {
            config,
            reward,
            epochs_run: 0,
            early_stopped: false,
            failed: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub config: CandidateConfig,
    pub reward: f64,
    /// Admission counter value, increasing across the memory's lifetime.
    pub serial: u64,
}

/// Bounded FIFO store of rollouts whose reward exceeded the admission threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayMemory {
    entries: VecDeque<ReplayEntry>,
    capacity: usize,
    threshold: f64,
    admitted: u64,
}

impl ReplayMemory {
    pub fn new(capacity: usize, threshold: f64) -> Self {
        Self {
            entries: VecDeque::new(),
            capacity,
            threshold,
            admitted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn entries(&self) -> impl Iterator<Item = &ReplayEntry> {
        self.entries.iter()
    }

    /// Store the rollout iff `reward > threshold`, evicting the oldest entry when full.
    pub fn admit(&mut self, config: &CandidateConfig, reward: f64) -> bool {
        if reward <= self.threshold || self.capacity == 0 {
            return false;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(ReplayEntry {
            config: config.clone(),
            reward,
            serial: self.admitted,
        });
        self.admitted += 1;
        true
    }

    fn admitted(&self) -> u64 {
        self.admitted
    }

    /// `min(n, len)` entries admitted before `before_serial`, uniformly without replacement.
    fn draw(&self, n: usize, before_serial: u64, rng: &mut impl Rng) -> Vec<(CandidateConfig, f64)> {
        let pool: Vec<&ReplayEntry> = self.entries.iter().filter(|e| e.serial < before_serial).collect();
        let k = n.min(pool.len());
        rand::seq::index::sample(rng, pool.len(), k)
            .into_iter()
            .map(|i| (pool[i].config.clone(), pool[i].reward))
            .collect()
    }

    /// `min(n, len)` entries drawn uniformly without replacement.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<(CandidateConfig, f64)> {
        self.draw(n, u64::MAX, rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Mean reward of the augmented batch.
    BatchMean,
    Fixed(f64),
    /// Exponential moving average with the given decay, seeded by the first batch mean.
    Ema(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub replay_capacity: usize,
    pub admission_threshold: f64,
    /// Replay entries mixed into each update; `None` draws as many as fresh rollouts.
    pub replay_draw: Option<usize>,
    pub baseline: Baseline,
    /// Stop early once every parameter's top probability reaches this.
    pub convergence_probability: f64,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            replay_capacity: 64,
            admission_threshold: 0.80,
            replay_draw: None,
            baseline: Baseline::BatchMean,
            convergence_probability: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateSummary {
    pub update_index: usize,
    pub fresh: usize,
    pub replayed: usize,
    pub baseline: f64,
    pub mean_reward: f64,
}

pub const CONTROLLER_FORMAT: &str = "skelnas-controller/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub format: String,
    pub settings: ControllerSettings,
    pub policies: PolicySet,
    pub memory: ReplayMemory,
    pub update_count: usize,
    adam_m: Vec<Vec<f64>>,
    adam_v: Vec<Vec<f64>>,
    adam_t: u64,
    ema: Option<f64>,
    pending: Vec<RolloutResult>,
    batch_start_serial: u64,
}

impl ControllerState {
    pub fn new(space: &SearchSpaceDef, settings: ControllerSettings) -> Self {
        let policies = init_policies(space);
        let zeros: Vec<Vec<f64>> = policies.logits.iter().map(|l| vec![0.0; l.len()]).collect();
        Self {
            format: CONTROLLER_FORMAT.to_string(),
            memory: ReplayMemory::new(settings.replay_capacity, settings.admission_threshold),
            settings,
            policies,
            update_count: 0,
            adam_m: zeros.clone(),
            adam_v: zeros,
            adam_t: 0,
            ema: None,
            pending: Vec::new(),
            batch_start_serial: 0,
        }
    }

    pub fn pending(&self) -> &[RolloutResult] {
        &self.pending
    }

    /// Queue a finished rollout and offer it to the replay memory unless it failed.
    pub fn record_rollout(&mut self, result: RolloutResult) -> Result<()> {
        if !(0.0..=1.0).contains(&result.reward) {
            return Err(Error::Contract(format!("reward {} outside [0, 1]", result.reward)));
        }
        if result.config.indices.len() != self.policies.logits.len() {
            return Err(Error::Contract(format!(
                "rollout config has {} entries for {} policies",
                result.config.indices.len(),
                self.policies.logits.len()
            )));
        }
        if !result.failed {
            self.memory.admit(&result.config, result.reward);
        }
        self.pending.push(result);
        Ok(())
    }

    pub fn sample_replay(&self, n: usize, rng: &mut impl Rng) -> Vec<(CandidateConfig, f64)> {
        self.memory.sample(n, rng)
    }

    /// One REINFORCE step over the pending rollouts plus a replay draw taken
    /// from entries admitted before this batch.
    pub fn reinforce_update(&mut self, rng: &mut impl Rng) -> Result<UpdateSummary> {
        if self.pending.is_empty() {
            return Err(Error::Contract("reinforce update needs at least one pending rollout".into()));
        }
        let fresh: Vec<(CandidateConfig, f64)> = self.pending.iter().map(|r| (r.config.clone(), r.reward)).collect();
        let n_replay = self.settings.replay_draw.unwrap_or(fresh.len());
        let replayed = self.memory.draw(n_replay, self.batch_start_serial, rng);
        let batch: Vec<(CandidateConfig, f64)> = fresh.iter().cloned().chain(replayed.iter().cloned()).collect();
        let mean_reward = batch.iter().map(|(_, r)| r).sum::<f64>() / batch.len() as f64;
        let baseline = match self.settings.baseline {
            Baseline::BatchMean => mean_reward,
            Baseline::Fixed(b) => b,
            Baseline::Ema(decay) => {
                let b = self.ema.map_or(mean_reward, |e| decay * e + (1.0 - decay) * mean_reward);
                self.ema = Some(b);
                b
            }
        };
        let probs = self.policies.all_probabilities();
        let mut grads: Vec<Vec<f64>> = probs.iter().map(|p| vec![0.0; p.len()]).collect();
        let mut any = false;
        for (config, reward) in &batch {
            let adv = reward - baseline;
            if adv != 0.0 {
                any = true;
            }
            for ((g, p), &chosen) in grads.iter_mut().zip(&probs).zip(&config.indices) {
                for (j, (gj, pj)) in g.iter_mut().zip(p).enumerate() {
                    let indicator = if j == chosen { 1.0 } else { 0.0 };
                    *gj += adv * (indicator - pj) / batch.len() as f64;
                }
            }
        }
        if any {
            self.adam_ascent(&grads);
        }
        self.update_count += 1;
        self.pending.clear();
        self.batch_start_serial = self.memory.admitted();
        Ok(UpdateSummary {
            update_index: self.update_count,
            fresh: fresh.len(),
            replayed: replayed.len(),
            baseline,
            mean_reward,
        })
    }

    fn adam_ascent(&mut self, grads: &[Vec<f64>]) {
        let s = &self.settings;
        self.adam_t += 1;
        let t = self.adam_t as i32;
        let (c1, c2) = (1.0 - s.beta1.powi(t), 1.0 - s.beta2.powi(t));
        for (p, g) in grads.iter().enumerate() {
            for (j, &gj) in g.iter().enumerate() {
                let m = &mut self.adam_m[p][j];
                let v = &mut self.adam_v[p][j];
                *m = s.beta1 * *m + (1.0 - s.beta1) * gj;
                *v = s.beta2 * *v + (1.0 - s.beta2) * gj * gj;
                self.policies.logits[p][j] += s.lr * (*m / c1) / ((*v / c2).sqrt() + s.eps);
            }
        }
    }

    /// Every parameter's most likely value has probability at least the configured level.
    pub fn is_converged(&self) -> bool {
        self.policies
            .all_probabilities()
            .iter()
            .all(|p| p.iter().copied().fold(0.0, f64::max) >= self.settings.convergence_probability)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        if s.format != CONTROLLER_FORMAT {
            return Err(Error::Schema(format!("unsupported controller checkpoint '{}'", s.format)));
        }
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl ControllerSettings {
    /// Aggressive steps tuned for the planted-optimum benchmark's short budget.
    pub fn planted() -> Self {
        Self {
            lr: 16.0,
            beta1: 0.0,
            eps: 0.3,
            ..Self::default()
        }
    }
}

/// The five-parameter space of the planted-optimum benchmark and its planted configuration.
pub fn planted_benchmark() -> (SearchSpaceDef, CandidateConfig) {
    let full = default_search_space();
    let want = [
        (names::ACTIVATION, Value::text("Hardswish")),
        (names::ATTENTION, Value::text("Fa")),
        (names::CONV, Value::text("Bottleneck")),
        (names::OPTIMIZER, Value::text("SGD")),
        (names::LR, Value::Float(0.05)),
    ];
    let params: Vec<_> = want.iter().map(|(n, _)| full.parameter(n).expect("built-in parameter").clone()).collect();
    let indices = params.iter().zip(&want).map(|(p, (_, v))| p.index_of(v).expect("built-in value")).collect();
    let space = SearchSpaceDef::new(params, vec![]).expect("valid reduced space");
    (space, CandidateConfig { indices })
}

/// Deterministic reward: 0.95 for the planted config, otherwise half the matched fraction.
pub fn planted_reward(config: &CandidateConfig, planted: &CandidateConfig) -> f64 {
    if config == planted {
        return 0.95;
    }
    let n = planted.indices.len().max(1);
    let matches = config.indices.iter().zip(&planted.indices).filter(|(a, b)| a == b).count();
    0.5 * matches as f64 / n as f64
}
