use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{FlowHyper, PropensityHyper, Stage0Hyper};
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;

pub const LEARNING_RATES: [f64; 3] = [0.001, 0.005, 0.01];
pub const BATCH_SIZES: [usize; 3] = [32, 64, 128];
pub const WEIGHT_DECAYS: [f64; 4] = [0.0, 0.001, 0.01, 0.1];
pub const WIDTH_MULTIPLIERS: [f64; 3] = [1.0, 1.5, 2.0];
pub const KNOTS: [usize; 3] = [5, 10, 20];
pub const NOISE_LEVELS: [f64; 3] = [0.05, 0.1, 0.5];

/// Random-search budget per stage.
pub fn default_runs(stage: Stage) -> usize {
    match stage {
        Stage::Stage0(EstimatorKind::CfrIsw) | Stage::Flow => 100,
        _ => 50,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Stage0(EstimatorKind),
    Propensity,
    Flow,
}

/// Full Stage 0 grid. Only the CFR-ISW grid varies the propensity network
/// settings, and only RCFR and CFR-ISW vary the extra network width.
pub fn stage0_grid(kind: EstimatorKind) -> Vec<Stage0Hyper> {
    let isw = kind == EstimatorKind::CfrIsw;
    let extras: &[f64] = if matches!(kind, EstimatorKind::Rcfr | EstimatorKind::CfrIsw) {
        &WIDTH_MULTIPLIERS
    } else {
        &[2.0]
    };
    let prop_lrs: &[f64] = if isw { &LEARNING_RATES } else { &[0.005] };
    let prop_wds: &[f64] = if isw { &WEIGHT_DECAYS } else { &[0.0] };
    let mut out = Vec::new();
    for &learning_rate in &LEARNING_RATES {
        for &batch_size in &BATCH_SIZES {
            for &weight_decay in &WEIGHT_DECAYS {
                for &phi_multiplier in &WIDTH_MULTIPLIERS {
                    for &head_multiplier in &WIDTH_MULTIPLIERS {
                        for &extra_multiplier in extras {
                            for &propensity_learning_rate in prop_lrs {
                                for &propensity_weight_decay in prop_wds {
                                    out.push(Stage0Hyper {
                                        learning_rate,
                                        batch_size,
                                        weight_decay,
                                        phi_multiplier,
                                        head_multiplier,
                                        extra_multiplier,
                                        propensity_learning_rate,
                                        propensity_weight_decay,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn propensity_grid() -> Vec<PropensityHyper> {
    let mut out = Vec::new();
    for &learning_rate in &LEARNING_RATES {
        for &batch_size in &BATCH_SIZES {
            for &weight_decay in &WEIGHT_DECAYS {
                for &multiplier in &WIDTH_MULTIPLIERS {
                    out.push(PropensityHyper {
                        learning_rate,
                        batch_size,
                        weight_decay,
                        multiplier,
                    });
                }
            }
        }
    }
    out
}

pub fn flow_grid() -> Vec<FlowHyper> {
    let mut out = Vec::new();
    for &learning_rate in &LEARNING_RATES {
        for &batch_size in &BATCH_SIZES {
            for &multiplier in &WIDTH_MULTIPLIERS {
                for &knots in &KNOTS {
                    for &outcome_noise in &NOISE_LEVELS {
                        for &representation_noise in &NOISE_LEVELS {
                            out.push(FlowHyper {
                                learning_rate,
                                batch_size,
                                multiplier,
                                knots,
                                outcome_noise,
                                representation_noise,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// `runs` distinct grid points drawn uniformly with `seed`, in grid order;
/// the whole grid when `runs` covers it.
pub fn sample_grid<T: Clone>(grid: &[T], runs: usize, seed: u64) -> Vec<T> {
    if runs >= grid.len() {
        return grid.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..grid.len()).collect::<Vec<_>>().choose_multiple(&mut rng, runs).copied().collect();
    idx.sort_unstable();
    idx.into_iter().map(|i| grid[i].clone()).collect()
}

/// Validation index sets of `k` folds with treated and control units dealt
/// round-robin after a seeded shuffle, so every fold holds both groups
/// whenever each group has at least `k` members.
pub fn stratified_folds(a: &[f64], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut slot = 0;
    for group in [1.0, 0.0] {
        let mut members: Vec<usize> = (0..a.len()).filter(|&i| a[i] == group).collect();
        if members.len() < k {
            return Err(Error::data(format!(
                "only {} units with a = {group}; cannot stratify {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    for f in folds.iter_mut() {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult<T> {
    pub best: T,
    pub best_score: f64,
    pub candidates: Vec<T>,
    /// Mean validation criterion per candidate.
    pub scores: Vec<f64>,
}

/// Cross-validated random grid search. `evaluate(candidate, train_idx,
/// val_idx)` returns the validation criterion of one fold; the candidate
/// with the lowest mean wins, ties going to the earlier candidate.
/// Candidates run in parallel.
pub fn grid_search_cv<T, F>(candidates: &[T], a: &[f64], folds: usize, seed: u64, evaluate: F) -> Result<GridResult<T>>
where
    T: Clone + Send + Sync,
    F: Fn(&T, &[usize], &[usize]) -> Result<f64> + Sync,
{
    if candidates.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    let val_sets = stratified_folds(a, folds, seed)?;
    let splits: Vec<(Vec<usize>, Vec<usize>)> = val_sets
        .iter()
        .map(|val| {
            let mut is_val = vec![false; a.len()];
            for &i in val {
                is_val[i] = true;
            }
            ((0..a.len()).filter(|&i| !is_val[i]).collect(), val.clone())
        })
        .collect();
    let scores = candidates
        .par_iter()
        .map(|c| {
            let mut total = 0.0;
            for (tr, va) in &splits {
                total += evaluate(c, tr, va)?;
            }
            Ok(total / splits.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (best_i, best_score) = scores
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bs), (i, &s)| if s < bs { (i, s) } else { (bi, bs) });
    if !best_score.is_finite() {
        return Err(Error::Diverged("every grid candidate produced a non-finite criterion".into()));
    }
    Ok(GridResult {
        best: candidates[best_i].clone(),
        best_score,
        candidates: candidates.to_vec(),
        scores,
    })
}
