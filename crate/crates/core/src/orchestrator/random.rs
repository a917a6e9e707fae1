use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, score_all, stream, train_argmax, ArgmaxRecord, SearchContext, SearchRunConfig, StudentRecord};
use crate::error::Result;
use crate::searchspace::{sample_uniform, CandidateConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSearchResult {
    /// The uniformly drawn cohort in draw order.
    pub cohort: Vec<StudentRecord>,
    /// Index into `cohort` of the best student; ties go to the earliest draw.
    pub best_index: usize,
    pub best: CandidateConfig,
    /// The best student retrained at the full budget.
    pub retrained: ArgmaxRecord,
}

impl RandomSearchResult {
    pub fn iterations(&self) -> usize {
        self.cohort.len()
    }
}

/// Train `rollouts * max_cycles` uniform samples and retrain the best one at the argmax budget.
pub fn run_random_search(cfg: &SearchRunConfig) -> Result<RandomSearchResult> {
    cfg.validate()?;
    let ctx = SearchContext::load(cfg)?;
    let n = cfg.rollouts * cfg.max_cycles;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[stream::RANDOM]));
    let configs: Vec<CandidateConfig> = (0..n).map(|_| sample_uniform(&ctx.space, &mut rng)).collect();
    let seeds: Vec<u64> = (0..n)
        .map(|i| derive_seed(cfg.seed, &[stream::RANDOM, stream::ROLLOUT, i as u64]))
        .collect();
    let cohort = score_all(&ctx, cfg, &configs, &seeds)?;
    let best_index = cohort
        .iter()
        .enumerate()
        .fold(0, |best, (i, s)| if s.accuracy > cohort[best].accuracy { i } else { best });
    let best = cohort[best_index].config.clone();
    let seed = derive_seed(cfg.seed, &[stream::RANDOM, stream::ARGMAX]);
    let retrained = train_argmax(&ctx, cfg, &best, seed, "random_best.skm")?;
    let result = RandomSearchResult {
        cohort,
        best_index,
        best,
        retrained,
    };
    crate::io::write_atomic(
        cfg.output_dir.join("random_search.json"),
        serde_json::to_string_pretty(&result)?.as_bytes(),
    )?;
    Ok(result)
}
