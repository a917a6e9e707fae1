//! The outer search loop, the random-search baseline, bootstrap evaluation,
//! experiment harnesses and run persistence.

mod experiments;
mod random;
pub mod report;
mod stats;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerSettings, ControllerState, RolloutResult, UpdateSummary};
use crate::datasets::{load_skl, split, Protocol, SplitRatios};
use crate::error::{Error, Result};
use crate::features::FilterSpec;
use crate::graph::GraphSpec;
use crate::searchspace::{
    argmax_config, encode_config, presets, sample, CandidateConfig, PolicySet, SearchSpaceDef,
};
use crate::studentnet::{build_student, count_flops, count_parameters, ArchitectureConfig, StudentModel};
use crate::trainer::{evaluate, train_student, EarlyStop, OptimizerConfig, PreparedSet, TrainOptions, TrainReport};

pub use experiments::{
    run_ablation, run_ablation_acceleration, run_size_sweep, AblationReport, AblationRow, SizeSweepRow, ACCEL_BUNDLES,
};
pub use random::{run_random_search, RandomSearchResult};
pub use stats::{bootstrap_ci, percentile, two_proportion_z_test, ConfidenceInterval};

pub const SEARCH_FORMAT: &str = "skelnas-search/1";
pub const STATE_FILE: &str = "state.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const HISTORY_FILE: &str = "policy_history.csv";
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const BOOTSTRAP_PERCENTILES: [f64; 2] = [2.5, 97.5];

/// Where rollout rewards come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    /// Build and train each candidate; the reward is its best validation accuracy.
    Train,
    /// Score candidates with the deterministic planted-optimum oracle instead of training.
    Planted(CandidateConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRunConfig {
    /// Rollouts sampled per controller update.
    pub rollouts: usize,
    pub max_cycles: usize,
    pub student_epochs: usize,
    pub argmax_epochs: usize,
    pub seed: u64,
    /// SKL1 corpus; required unless rewards are planted.
    pub dataset: Option<PathBuf>,
    /// Search-space TOML; the built-in default space when absent.
    pub space: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub protocol: Protocol,
    /// Concurrent student trainings within one cycle.
    pub workers: usize,
    pub controller: ControllerSettings,
    pub reward: RewardMode,
    /// Continue from the checkpoint in `output_dir` when one exists.
    pub resume: bool,
}

impl Default for SearchRunConfig {
    fn default() -> Self {
        Self {
            rollouts: 20,
            max_cycles: 3,
            student_epochs: 25,
            argmax_epochs: 80,
            seed: 1234,
            dataset: None,
            space: None,
            output_dir: PathBuf::from("runs"),
            protocol: Protocol::Subject,
            workers: 1,
            controller: ControllerSettings::default(),
            reward: RewardMode::Train,
            resume: false,
        }
    }
}

impl SearchRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts == 0 || self.max_cycles == 0 {
            return Err(Error::Config("rollouts and cycles must be at least 1".into()));
        }
        if self.student_epochs == 0 || self.argmax_epochs == 0 {
            return Err(Error::Config("epoch budgets must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("need at least one worker".into()));
        }
        Ok(())
    }

    /// Settings that must agree between a checkpoint and the run resuming it.
    fn same_run(&self, other: &Self) -> bool {
        let strip = |c: &Self| Self {
            max_cycles: 0,
            workers: 1,
            resume: false,
            output_dir: PathBuf::new(),
            ..c.clone()
        };
        strip(self) == strip(other)
    }
}

/// Deterministic seed for a named sub-stream of a run.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(root), |h, &k| mix(h ^ mix(k)))
}

pub(crate) mod stream {
    pub const SAMPLE: u64 = 1;
    pub const UPDATE: u64 = 2;
    pub const ROLLOUT: u64 = 3;
    pub const ARGMAX: u64 = 4;
    pub const RANDOM: u64 = 5;
    pub const BOOTSTRAP: u64 = 6;
}

/// Train, validation and test inputs prepared once per run.
pub struct PreparedData {
    pub graph: Arc<GraphSpec>,
    pub num_classes: usize,
    pub train: PreparedSet<f32>,
    pub val: PreparedSet<f32>,
    pub test: PreparedSet<f32>,
}

impl PreparedData {
    pub fn load(path: &Path, protocol: Protocol) -> Result<Self> {
        let dataset = load_skl(path).map_err(|e| Error::Startup(format!("dataset {}: {e}", path.display())))?;
        let parts = split(&dataset, protocol, &SplitRatios::default())?;
        let filter = FilterSpec::default();
        Ok(Self {
            graph: dataset.graph.clone(),
            num_classes: dataset.num_classes,
            train: PreparedSet::new(&parts.train, &filter)?,
            val: PreparedSet::new(&parts.val, &filter)?,
            test: PreparedSet::new(&parts.test, &filter)?,
        })
    }
}

/// Everything a run reads but never mutates.
pub struct SearchContext {
    pub space: SearchSpaceDef,
    pub data: Option<PreparedData>,
}

impl SearchContext {
    pub fn load(cfg: &SearchRunConfig) -> Result<Self> {
        let space = load_space(cfg.space.as_deref())?;
        let data = match (&cfg.dataset, &cfg.reward) {
            (Some(path), _) => Some(PreparedData::load(path, cfg.protocol)?),
            (None, RewardMode::Planted(_)) => None,
            (None, RewardMode::Train) => return Err(Error::Startup("training rewards need a dataset".into())),
        };
        if let RewardMode::Planted(p) = &cfg.reward {
            encode_config(&space, p).map_err(|e| Error::Startup(format!("planted config: {e}")))?;
        }
        Ok(Self { space, data })
    }

    fn data(&self) -> Result<&PreparedData> {
        self.data
            .as_ref()
            .ok_or_else(|| Error::Contract("this run has no dataset".into()))
    }
}

pub fn load_space(path: Option<&Path>) -> Result<SearchSpaceDef> {
    match path {
        Some(p) => SearchSpaceDef::load(p).map_err(|e| Error::Startup(format!("search space {}: {e}", p.display()))),
        None => SearchSpaceDef::from_toml_str(presets::DEFAULT_SPACE),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainStatus {
    Trained,
    Infeasible,
    NonFinite,
    Planted,
}

/// Outcome of training (or scoring) one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub config: CandidateConfig,
    pub status: TrainStatus,
    /// Best validation accuracy, 0 for failures.
    pub accuracy: f64,
    pub epochs_run: usize,
    pub early_stopped: bool,
    pub message: Option<String>,
    pub parameters: Option<usize>,
    pub flops: Option<u64>,
    pub seconds: f64,
}

impl StudentRecord {
    fn failed(config: &CandidateConfig, status: TrainStatus, message: String, seconds: f64) -> Self {
        Self {
            config: config.clone(),
            status,
            accuracy: 0.0,
            epochs_run: 0,
            early_stopped: false,
            message: Some(message),
            parameters: None,
            flops: None,
            seconds,
        }
    }

    fn planted(config: &CandidateConfig, reward: f64) -> Self {
        Self {
            config: config.clone(),
            status: TrainStatus::Planted,
            accuracy: reward,
            epochs_run: 0,
            early_stopped: false,
            message: None,
            parameters: None,
            flops: None,
            seconds: 0.0,
        }
    }
}

/// A trained configuration together with its model, when training succeeded.
pub struct Fitted {
    pub record: StudentRecord,
    pub model: Option<StudentModel<f32>>,
    pub report: Option<TrainReport>,
}

/// How long to train and whether the student early-stop rule applies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Budget {
    pub epochs: usize,
    pub early_stop: bool,
}

/// Build and train `config`; infeasible builds and non-finite losses become reward-0 records.
pub fn fit_config(
    space: &SearchSpaceDef,
    data: &PreparedData,
    config: &CandidateConfig,
    branches: &[usize],
    budget: Budget,
    seed: u64,
) -> Result<Fitted> {
    let start = Instant::now();
    let fail = |status, e: Error| Fitted {
        record: StudentRecord::failed(config, status, e.to_string(), start.elapsed().as_secs_f64()),
        model: None,
        report: None,
    };
    let arch = ArchitectureConfig::from_candidate(space, config)?;
    let opt = OptimizerConfig::from_candidate(space, config)?;
    let spec = data.train.input_spec(branches);
    let mut model = match build_student::<f32>(&arch, &data.graph, data.num_classes, &spec, derive_seed(seed, &[0])) {
        Ok(m) => m,
        Err(e @ Error::Infeasible(_)) => return Ok(fail(TrainStatus::Infeasible, e)),
        Err(e) => return Err(e),
    };
    let options = TrainOptions {
        early_stop: budget.early_stop.then(EarlyStop::default),
        ..TrainOptions::new(budget.epochs, derive_seed(seed, &[1]))
    };
    let report = match train_student(&mut model, &data.train, &data.val, &opt, &options) {
        Ok(r) => r,
        Err(e @ Error::NonFinite { .. }) => return Ok(fail(TrainStatus::NonFinite, e)),
        Err(e) => return Err(e),
    };
    let record = StudentRecord {
        config: config.clone(),
        status: TrainStatus::Trained,
        accuracy: report.best_val_accuracy,
        epochs_run: report.epochs_run,
        early_stopped: report.early_stopped,
        message: None,
        parameters: Some(count_parameters(&model)),
        flops: Some(count_flops(&model, data.train.frames())?),
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(Fitted {
        record,
        model: Some(model),
        report: Some(report),
    })
}

/// Test-set accuracy with its bootstrap interval.
pub fn test_interval(model: &StudentModel<f32>, set: &PreparedSet<f32>, seed: u64) -> Result<ConfidenceInterval> {
    let eval = evaluate(model, set, 64)?;
    bootstrap_ci(&eval.predictions, &eval.labels, BOOTSTRAP_RESAMPLES, BOOTSTRAP_PERCENTILES, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub cycle: usize,
    pub index: usize,
    pub student: StudentRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArgmaxRecord {
    pub student: StudentRecord,
    /// Test accuracy and interval; the oracle reward in planted mode.
    pub test: ConfidenceInterval,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    /// Numbered from 1.
    pub cycle: usize,
    pub update: UpdateSummary,
    /// Mean reward of this cycle's fresh rollouts.
    pub mean_rollout_accuracy: f64,
    pub argmax: ArgmaxRecord,
    /// Policies right after this cycle's update.
    pub policies: PolicySet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub cycle: usize,
    pub config: CandidateConfig,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub format: String,
    pub config: SearchRunConfig,
    pub space: SearchSpaceDef,
    pub controller: ControllerState,
    pub history: Vec<RolloutRecord>,
    pub cycles: Vec<CycleRecord>,
    pub best: Option<BestRecord>,
    pub converged: bool,
}

impl SearchState {
    fn new(cfg: &SearchRunConfig, space: &SearchSpaceDef) -> Self {
        Self {
            format: SEARCH_FORMAT.to_string(),
            config: cfg.clone(),
            space: space.clone(),
            controller: ControllerState::new(space, cfg.controller.clone()),
            history: Vec::new(),
            cycles: Vec::new(),
            best: None,
            converged: false,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let state: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if state.format != SEARCH_FORMAT {
            return Err(Error::Schema(format!("unsupported search checkpoint '{}'", state.format)));
        }
        Ok(state)
    }

    /// The best argmax configuration found so far, or the current argmax before any cycle.
    pub fn best_config(&self) -> CandidateConfig {
        self.best
            .as_ref()
            .map_or_else(|| argmax_config(&self.controller.policies), |b| b.config.clone())
    }

    /// Student trainings performed before the cycle that produced the best argmax.
    pub fn iterations_to_best(&self) -> usize {
        self.best.as_ref().map_or(0, |b| b.cycle * self.config.rollouts)
    }
}

/// One line of the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum LogEvent {
    Start { seed: u64, rollouts: usize, max_cycles: usize, resumed_at: usize },
    Rollout(RolloutRecord),
    Update { cycle: usize, summary: UpdateSummary },
    Argmax { cycle: usize, record: ArgmaxRecord },
    Finish { cycles: usize, converged: bool },
}

impl LogEvent {
    fn cycle(&self) -> Option<usize> {
        match self {
            Self::Rollout(r) => Some(r.cycle),
            Self::Update { cycle, .. } | Self::Argmax { cycle, .. } => Some(*cycle),
            Self::Start { .. } | Self::Finish { .. } => None,
        }
    }
}

/// Append-only line-delimited JSON log.
struct RunLog {
    path: PathBuf,
}

impl RunLog {
    /// Open the log, dropping records of cycles the checkpoint does not cover.
    fn open(dir: &Path, keep_cycles: usize) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOG_FILE);
        let kept = if keep_cycles > 0 && path.exists() {
            fs::read_to_string(&path)?
                .lines()
                .filter(|l| {
                    serde_json::from_str::<LogEvent>(l)
                        .ok()
                        .is_some_and(|e| e.cycle().is_none_or(|c| c <= keep_cycles))
                })
                .map(|l| format!("{l}\n"))
                .collect()
        } else {
            String::new()
        };
        crate::io::write_atomic(&path, kept.as_bytes())?;
        Ok(Self { path })
    }

    fn write(&self, event: &LogEvent) -> Result<()> {
        let mut f = OpenOptions::new().append(true).open(&self.path)?;
        writeln!(f, "{}", serde_json::to_string(event)?)?;
        Ok(())
    }
}

/// Read every record of a run log.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogEvent>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

pub fn run_search(cfg: &SearchRunConfig) -> Result<SearchState> {
    run_search_observed(cfg, &mut |_| {})
}

/// The controller loop; `observe` sees every log record as it is written.
pub fn run_search_observed(cfg: &SearchRunConfig, observe: &mut dyn FnMut(&LogEvent)) -> Result<SearchState> {
    cfg.validate()?;
    let ctx = SearchContext::load(cfg)?;
    let dir = &cfg.output_dir;
    let state_path = dir.join(STATE_FILE);
    let mut state = if cfg.resume && state_path.exists() {
        let s = SearchState::load(&state_path)?;
        if !s.config.same_run(cfg) || s.space != ctx.space {
            return Err(Error::Startup(format!(
                "checkpoint {} belongs to a different run configuration",
                state_path.display()
            )));
        }
        s
    } else {
        SearchState::new(cfg, &ctx.space)
    };
    state.config = cfg.clone();
    let log = RunLog::open(dir, state.cycles.len())?;
    let mut emit = |e: LogEvent| -> Result<()> {
        log.write(&e)?;
        observe(&e);
        Ok(())
    };
    emit(LogEvent::Start {
        seed: cfg.seed,
        rollouts: cfg.rollouts,
        max_cycles: cfg.max_cycles,
        resumed_at: state.cycles.len(),
    })?;

    while state.cycles.len() < cfg.max_cycles && !state.converged {
        let cycle = state.cycles.len() + 1;
        let c = cycle as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[stream::SAMPLE, c]));
        let configs: Vec<CandidateConfig> = (0..cfg.rollouts).map(|_| sample(&state.controller.policies, &mut rng)).collect();
        let seeds: Vec<u64> = (0..cfg.rollouts)
            .map(|i| derive_seed(cfg.seed, &[stream::ROLLOUT, c, i as u64]))
            .collect();
        let students = score_all(&ctx, cfg, &configs, &seeds)?;
        let mut rewards = Vec::with_capacity(students.len());
        for (index, student) in students.into_iter().enumerate() {
            let record = RolloutRecord { cycle, index, student };
            rewards.push(record.student.accuracy);
            state.controller.record_rollout(RolloutResult {
                config: record.student.config.clone(),
                reward: record.student.accuracy,
                epochs_run: record.student.epochs_run,
                early_stopped: record.student.early_stopped,
                failed: matches!(record.student.status, TrainStatus::Infeasible | TrainStatus::NonFinite),
            })?;
            emit(LogEvent::Rollout(record.clone()))?;
            state.history.push(record);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[stream::UPDATE, c]));
        let summary = state.controller.reinforce_update(&mut rng)?;
        emit(LogEvent::Update {
            cycle,
            summary: summary.clone(),
        })?;

        let argmax = argmax_config(&state.controller.policies);
        let seed = derive_seed(cfg.seed, &[stream::ARGMAX, c]);
        let record = train_argmax(&ctx, cfg, &argmax, seed, &format!("argmax_cycle{cycle}.skm"))?;
        emit(LogEvent::Argmax {
            cycle,
            record: record.clone(),
        })?;
        if state.best.as_ref().is_none_or(|b| record.test.point > b.accuracy) {
            state.best = Some(BestRecord {
                cycle,
                config: argmax,
                accuracy: record.test.point,
            });
        }
        state.cycles.push(CycleRecord {
            cycle,
            update: summary,
            mean_rollout_accuracy: rewards.iter().sum::<f64>() / rewards.len() as f64,
            argmax: record,
            policies: state.controller.policies.clone(),
        });
        state.converged = state.controller.is_converged();
        state.save(&state_path)?;
    }

    emit(LogEvent::Finish {
        cycles: state.cycles.len(),
        converged: state.converged,
    })?;
    export_policy_history(&state, dir.join(HISTORY_FILE))?;
    let best = state.best_config();
    crate::io::write_atomic(dir.join("best_config.toml"), encode_config(&ctx.space, &best)?.as_bytes())?;
    crate::io::write_atomic(dir.join("search_table.txt"), report::search_table(&[&state]).as_bytes())?;
    Ok(state)
}

/// Score rollouts, training up to `cfg.workers` students at a time.
fn score_all(
    ctx: &SearchContext,
    cfg: &SearchRunConfig,
    configs: &[CandidateConfig],
    seeds: &[u64],
) -> Result<Vec<StudentRecord>> {
    let score = |i: usize| -> Result<StudentRecord> {
        match &cfg.reward {
            RewardMode::Planted(p) => Ok(StudentRecord::planted(&configs[i], crate::controller::planted_reward(&configs[i], p))),
            RewardMode::Train => {
                let budget = Budget {
                    epochs: cfg.student_epochs,
                    early_stop: true,
                };
                Ok(fit_config(&ctx.space, ctx.data()?, &configs[i], &[0, 1, 2, 3], budget, seeds[i])?.record)
            }
        }
    };
    if cfg.workers <= 1 || configs.len() <= 1 {
        return (0..configs.len()).map(score).collect();
    }
    let mut out: Vec<Option<Result<StudentRecord>>> = (0..configs.len()).map(|_| None).collect();
    for chunk in (0..configs.len()).collect::<Vec<_>>().chunks(cfg.workers) {
        let done: Vec<(usize, Result<StudentRecord>)> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&i| (i, s.spawn(move || score(i)))).collect();
            handles
                .into_iter()
                .map(|(i, h)| (i, h.join().unwrap_or_else(|_| Err(Error::Contract("student worker panicked".into())))))
                .collect()
        });
        for (i, r) in done {
            out[i] = Some(r);
        }
    }
    out.into_iter().map(|r| r.expect("every rollout scored")).collect()
}

fn train_argmax(
    ctx: &SearchContext,
    cfg: &SearchRunConfig,
    config: &CandidateConfig,
    seed: u64,
    checkpoint: &str,
) -> Result<ArgmaxRecord> {
    if let RewardMode::Planted(p) = &cfg.reward {
        let reward = crate::controller::planted_reward(config, p);
        return Ok(ArgmaxRecord {
            student: StudentRecord::planted(config, reward),
            test: ConfidenceInterval {
                point: reward,
                lo: reward,
                hi: reward,
            },
            checkpoint: None,
        });
    }
    let data = ctx.data()?;
    let budget = Budget {
        epochs: cfg.argmax_epochs,
        early_stop: false,
    };
    let fitted = fit_config(&ctx.space, data, config, &[0, 1, 2, 3], budget, seed)?;
    let Some(model) = fitted.model else {
        return Ok(ArgmaxRecord {
            student: fitted.record,
            test: ConfidenceInterval {
                point: 0.0,
                lo: 0.0,
                hi: 0.0,
            },
            checkpoint: None,
        });
    };
    let test = test_interval(&model, &data.test, derive_seed(seed, &[stream::BOOTSTRAP]))?;
    let path = cfg.output_dir.join(checkpoint);
    model.save(&path)?;
    Ok(ArgmaxRecord {
        student: fitted.record,
        test,
        checkpoint: Some(path),
    })
}

/// One probability of one value after one update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub update: usize,
    pub group: String,
    pub parameter: String,
    pub value: String,
    pub probability: f64,
}

/// Write the per-update policy probabilities as CSV, grouped by parameter group.
pub fn export_policy_history(state: &SearchState, path: impl AsRef<Path>) -> Result<Vec<PolicyRecord>> {
    if state.cycles.is_empty() {
        return Err(Error::Contract("policy history needs at least one completed update".into()));
    }
    let mut records = Vec::new();
    for cycle in &state.cycles {
        for group in crate::searchspace::Group::ALL {
            for (pi, p) in state.space.parameters().iter().enumerate().filter(|(_, p)| p.group == group) {
                for (v, prob) in p.values.iter().zip(cycle.policies.probabilities(pi)) {
                    records.push(PolicyRecord {
                        update: cycle.update.update_index,
                        group: group.name().to_string(),
                        parameter: p.name.clone(),
                        value: v.to_string(),
                        probability: prob,
                    });
                }
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::io::write_atomic(path, &bytes)?;
    Ok(records)
}
