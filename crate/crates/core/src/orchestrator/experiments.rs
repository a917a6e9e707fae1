use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{
    derive_seed, fit_config, run_search, stream, test_interval, Budget, ConfidenceInterval, SearchContext,
    SearchRunConfig,
};
use crate::error::{Error, Result};
use crate::searchspace::{CandidateConfig, SearchSpaceDef};
use crate::studentnet::{build_student, count_flops, count_parameters, ArchitectureConfig};

/// Feature branches `P, V, B` without and with the acceleration branch `A`.
pub const ACCEL_BUNDLES: [(&str, &[usize]); 2] = [("P, V, B", &[0, 1, 2]), ("P, V, B, A", &[0, 1, 2, 3])];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub input: String,
    pub branches: Vec<usize>,
    pub test: ConfidenceInterval,
    /// Two-sided z statistic of the second row against the first, shared by both rows.
    pub z: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub test_size: usize,
    /// The difference is significant at the 5% level.
    pub significant: bool,
}

/// Train `config` once per branch bundle with identical seeds and compare test accuracies.
pub fn run_ablation(
    cfg: &SearchRunConfig,
    config: &CandidateConfig,
    bundles: &[(&str, &[usize]); 2],
) -> Result<AblationReport> {
    cfg.validate()?;
    let ctx = SearchContext::load(cfg)?;
    let data = ctx.data()?;
    let seed = derive_seed(cfg.seed, &[stream::ARGMAX, 0]);
    let budget = Budget {
        epochs: cfg.argmax_epochs,
        early_stop: false,
    };
    let mut tests = Vec::new();
    for (label, branches) in bundles {
        let fitted = fit_config(&ctx.space, data, config, branches, budget, seed)?;
        let model = fitted.model.ok_or_else(|| {
            Error::Infeasible(format!("{label}: {}", fitted.record.message.unwrap_or_default()))
        })?;
        tests.push(test_interval(&model, &data.test, derive_seed(seed, &[stream::BOOTSTRAP]))?);
    }
    let n = data.test.len();
    let (z, p) = super::two_proportion_z_test(tests[0].point, n, tests[1].point, n)?;
    let rows = bundles
        .iter()
        .zip(tests)
        .map(|((label, branches), test)| AblationRow {
            input: label.to_string(),
            branches: branches.to_vec(),
            test,
            z,
            p,
        })
        .collect();
    let report = AblationReport {
        rows,
        test_size: n,
        significant: p < 0.05,
    };
    crate::io::write_atomic(
        cfg.output_dir.join("ablation.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    Ok(report)
}

/// Acceleration ablation: `P, V, B` against `P, V, B, A`.
pub fn run_ablation_acceleration(cfg: &SearchRunConfig, config: &CandidateConfig) -> Result<AblationReport> {
    run_ablation(cfg, config, &ACCEL_BUNDLES)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeSweepRow {
    pub label: String,
    pub config: CandidateConfig,
    pub parameters: usize,
    pub flops: u64,
    pub top1: f64,
}

/// Run the search once per space and report the winner of each.
pub fn run_size_sweep(cfg: &SearchRunConfig, spaces: &[(String, SearchSpaceDef)]) -> Result<Vec<SizeSweepRow>> {
    let mut rows = Vec::new();
    for (label, space) in spaces {
        let dir = cfg.output_dir.join(label);
        let space_path: PathBuf = dir.join("space.toml");
        crate::io::write_atomic(&space_path, space.to_toml_string().as_bytes())?;
        let run = SearchRunConfig {
            space: Some(space_path),
            output_dir: dir,
            ..cfg.clone()
        };
        let state = run_search(&run)?;
        let best = state
            .best
            .clone()
            .ok_or_else(|| Error::Contract("search finished without a cycle".into()))?;
        let ctx = SearchContext::load(&run)?;
        let data = ctx.data()?;
        let arch = ArchitectureConfig::from_candidate(space, &best.config)?;
        let spec = data.train.input_spec(&[0, 1, 2, 3]);
        let model = build_student::<f32>(&arch, &data.graph, data.num_classes, &spec, 0)?;
        rows.push(SizeSweepRow {
            label: label.clone(),
            config: best.config,
            parameters: count_parameters(&model),
            flops: count_flops(&model, data.train.frames())?,
            top1: best.accuracy,
        });
    }
    crate::io::write_atomic(
        cfg.output_dir.join("size_sweep.json"),
        serde_json::to_string_pretty(&rows)?.as_bytes(),
    )?;
    Ok(rows)
}
