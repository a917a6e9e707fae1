use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use skelnas::controller::ControllerSettings;
use skelnas::datasets::{generate_synthetic, save_skl, Protocol, SyntheticSpec};
use skelnas::orchestrator::{
    bootstrap_ci, export_policy_history, fit_config, load_space, report, run_ablation_acceleration,
    run_random_search, run_search_observed, run_size_sweep, Budget, PreparedData, RewardMode, SearchRunConfig,
    SearchState, BOOTSTRAP_PERCENTILES, BOOTSTRAP_RESAMPLES, STATE_FILE,
};
use skelnas::searchspace::{decode_config, presets, SearchSpaceDef};
use skelnas::studentnet::StudentModel;
use skelnas::trainer::evaluate;
use skelnas::{Error, Result};

#[derive(Parser)]
#[command(name = "skelnas", version, about = "Architecture search for skeleton graph convolution networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic skeleton-action corpus as an SKL1 file.
    GenData(GenDataArgs),
    /// Run the controller search.
    Search(RunArgs),
    /// Train uniformly sampled students and retrain the best.
    RandomSearch(RunArgs),
    /// Train one configuration at the argmax budget and save its checkpoint.
    TrainArgmax {
        #[command(flatten)]
        run: RunArgs,
        /// Configuration file with one `"name" = value` line per searched parameter.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test accuracy of a checkpoint with a bootstrap interval.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "subject", value_parser = parse_protocol)]
        protocol: Protocol,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
    },
    /// Retrain a configuration with and without the acceleration branch.
    AblateAccel {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        config: PathBuf,
    },
    /// Search the given space and the enlarged space and compare the winners.
    SizeSweep {
        #[command(flatten)]
        run: RunArgs,
        /// Enlarged space; the built-in large space when absent.
        #[arg(long)]
        large_space: Option<PathBuf>,
    },
    /// Write the per-update policy probabilities of a finished run as CSV.
    ExportHistory {
        /// Run directory or its state file.
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 15)]
    joints: usize,
    #[arg(long, default_value_t = 64)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    persons: usize,
    #[arg(long, default_value_t = 100)]
    samples_per_subject: usize,
    #[arg(long, default_value_t = 10)]
    subjects: usize,
    #[arg(long, default_value_t = 3)]
    views: usize,
    /// Joint noise standard deviation in meters.
    #[arg(long, default_value_t = 0.01)]
    noise_std: f64,
    #[arg(long, default_value_t = 1234)]
    seed: u64,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Rollouts per controller update.
    #[arg(long, default_value_t = 20)]
    rollouts: usize,
    #[arg(long, default_value_t = 3)]
    cycles: usize,
    #[arg(long, default_value_t = 25)]
    student_epochs: usize,
    #[arg(long, default_value_t = 80)]
    argmax_epochs: usize,
    #[arg(long, default_value_t = 1234)]
    seed: u64,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Search-space TOML; the built-in default space when absent.
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long, env = "SKELNAS_OUTPUT_DIR", default_value = "runs")]
    output_dir: PathBuf,
    #[arg(long, default_value = "subject", value_parser = parse_protocol)]
    protocol: Protocol,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Replace training with the planted-optimum reward for this configuration file.
    #[arg(long)]
    planted: Option<PathBuf>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

fn parse_protocol(s: &str) -> std::result::Result<Protocol, String> {
    Protocol::parse(s).map_err(|e| e.to_string())
}

impl RunArgs {
    fn to_config(&self) -> Result<SearchRunConfig> {
        let (reward, controller) = match &self.planted {
            Some(path) => {
                let space = load_space(self.space.as_deref())?;
                (RewardMode::Planted(read_config(&space, path)?), ControllerSettings::planted())
            }
            None => (RewardMode::Train, ControllerSettings::default()),
        };
        Ok(SearchRunConfig {
            rollouts: self.rollouts,
            max_cycles: self.cycles,
            student_epochs: self.student_epochs,
            argmax_epochs: self.argmax_epochs,
            seed: self.seed,
            dataset: self.dataset.clone(),
            space: self.space.clone(),
            output_dir: self.output_dir.clone(),
            protocol: self.protocol,
            workers: self.workers,
            controller,
            reward,
            resume: self.resume,
        })
    }
}

fn read_config(space: &SearchSpaceDef, path: &Path) -> Result<skelnas::searchspace::CandidateConfig> {
    decode_config(space, &std::fs::read_to_string(path)?)
}

fn protocol_label(p: Protocol) -> &'static str {
    match p {
        Protocol::Subject => "X-Sub",
        Protocol::View => "X-View",
    }
}

fn search(cfg: &SearchRunConfig) -> Result<SearchState> {
    run_search_observed(cfg, &mut |e| {
        if let Ok(line) = serde_json::to_string(e) {
            eprintln!("{line}");
        }
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let spec = SyntheticSpec {
                num_classes: a.classes,
                joints: a.joints,
                frames: a.frames,
                persons: a.persons,
                samples_per_subject: a.samples_per_subject,
                subjects: a.subjects,
                views: a.views,
                noise_std: a.noise_std,
                seed: a.seed,
            };
            let data = generate_synthetic(&spec)?;
            save_skl(&a.out, &data)?;
            println!("wrote {} samples to {}", data.len(), a.out.display());
        }
        Command::Search(a) => {
            let state = search(&a.to_config()?)?;
            print!("{}", report::search_table(&[&state]));
        }
        Command::RandomSearch(a) => {
            let cfg = a.to_config()?;
            let result = run_random_search(&cfg)?;
            let state_path = cfg.output_dir.join(STATE_FILE);
            if state_path.exists() {
                let state = SearchState::load(&state_path)?;
                print!("{}", report::comparison_table(protocol_label(cfg.protocol), &result, &state));
            } else {
                println!(
                    "Random search   {} - {} iterations",
                    report::pct(result.retrained.test.point),
                    result.iterations()
                );
            }
        }
        Command::TrainArgmax { run, config, out } => {
            let cfg = run.to_config()?;
            let space = load_space(cfg.space.as_deref())?;
            let candidate = read_config(&space, &config)?;
            let data = load_data(&cfg)?;
            let budget = Budget {
                epochs: cfg.argmax_epochs,
                early_stop: false,
            };
            let fitted = fit_config(&space, &data, &candidate, &[0, 1, 2, 3], budget, cfg.seed)?;
            let model = fitted.model.ok_or_else(|| {
                Error::Infeasible(fitted.record.message.clone().unwrap_or_default())
            })?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("argmax.skm"));
            model.save(&out)?;
            println!("{}", serde_json::to_string(&fitted.record)?);
            println!("saved {}", out.display());
        }
        Command::Eval {
            checkpoint,
            dataset,
            protocol,
            seed,
        } => {
            let model = StudentModel::<f32>::load(&checkpoint)?;
            let data = PreparedData::load(&dataset, protocol)?;
            let eval = evaluate(&model, &data.test, 64)?;
            let ci = bootstrap_ci(&eval.predictions, &eval.labels, BOOTSTRAP_RESAMPLES, BOOTSTRAP_PERCENTILES, seed)?;
            println!(
                "accuracy {} [{}, {}] on {} test samples",
                report::pct(ci.point),
                report::pct(ci.lo),
                report::pct(ci.hi),
                eval.labels.len()
            );
        }
        Command::AblateAccel { run, config } => {
            let cfg = run.to_config()?;
            let space = load_space(cfg.space.as_deref())?;
            let result = run_ablation_acceleration(&cfg, &read_config(&space, &config)?)?;
            print!("{}", report::ablation_table(&result));
        }
        Command::SizeSweep { run, large_space } => {
            let cfg = run.to_config()?;
            let base = load_space(cfg.space.as_deref())?;
            let large = match large_space {
                Some(p) => load_space(Some(&p))?,
                None => SearchSpaceDef::from_toml_str(presets::LARGE_SPACE)?,
            };
            let rows = run_size_sweep(&cfg, &[("Small model".into(), base), ("Large model".into(), large)])?;
            print!("{}", report::size_table(&rows));
        }
        Command::ExportHistory { state, out } => {
            let path = if state.is_dir() { state.join(STATE_FILE) } else { state };
            let records = export_policy_history(&SearchState::load(&path)?, &out)?;
            println!("wrote {} records to {}", records.len(), out.display());
        }
    }
    Ok(())
}

fn load_data(cfg: &SearchRunConfig) -> Result<PreparedData> {
    let path = cfg
        .dataset
        .as_deref()
        .ok_or_else(|| Error::Startup("--dataset is required".into()))?;
    PreparedData::load(path, cfg.protocol)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
