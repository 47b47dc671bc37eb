//! Mining ablation: adjacent versus random negatives under otherwise equal
//! training runs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{MiningStrategy, RunConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::trainer::train;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    /// Top-1 accuracy per seed with adjacent negatives.
    pub adjacent: Vec<f64>,
    /// Top-1 accuracy per seed with random negatives.
    pub random: Vec<f64>,
    pub mean_adjacent: f64,
    pub mean_random: f64,
}

impl AblationReport {
    /// Whether adjacent mining is at least as accurate as random mining,
    /// allowing `slack`.
    pub fn adjacent_not_worse(&self, slack: f64) -> bool {
        self.mean_adjacent + slack >= self.mean_random
    }
}

fn run_one(
    train_set: &dyn Dataset,
    eval_set: &dyn Dataset,
    base: &RunConfig,
    seed: u64,
    strategy: MiningStrategy,
) -> Result<f64> {
    let mut cfg = base.clone();
    cfg.train.seed = seed;
    cfg.mining.strategy = strategy;
    let (trainer, _) = train(train_set, &cfg, None)?;
    let report = evaluate(
        &trainer.model(),
        eval_set,
        cfg.eval.vis_threshold,
        cfg.eval.contour_tolerance,
    );
    report
        .aggregates
        .top1
        .ok_or_else(|| Error::Validation("evaluation set has no visible samples".into()))
}

/// Trains both mining variants for every seed and evaluates top-1 accuracy.
/// Runs execute in parallel; results are in seed order.
pub fn run_ablation(
    train_set: &dyn Dataset,
    eval_set: &dyn Dataset,
    base: &RunConfig,
    seeds: &[u64],
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Parameter("ablation needs at least one seed".into()));
    }
    let jobs: Vec<(u64, MiningStrategy)> = seeds
        .iter()
        .flat_map(|&s| [(s, MiningStrategy::Adjacent), (s, MiningStrategy::Random)])
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(s, strat)| run_one(train_set, eval_set, base, s, strat))
        .collect::<Result<_>>()?;
    let adjacent: Vec<f64> = scores.iter().step_by(2).copied().collect();
    let random: Vec<f64> = scores.iter().skip(1).step_by(2).copied().collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        mean_adjacent: mean(&adjacent),
        mean_random: mean(&random),
        adjacent,
        random,
    })
}
