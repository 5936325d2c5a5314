//! Experiment orchestration: data loading, per-stage tuning and training,
//! bound computation, scoring and results persistence.

mod config;
mod grid;
mod results;

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    estimator_preset, DatasetSpec, ExperimentConfig, FlowHyper, Hyperparameters, PropensityHyper, Stage0Hyper,
    TuningMode, DATA_DIR_ENV, DEFAULT_DELTAS,
};
pub use grid::{
    default_runs, flow_grid, grid_search_cv, propensity_grid, sample_grid, stage0_grid, stratified_folds, GridResult,
    Stage,
};
pub use results::{aggregate, emit_results, read_results_json, write_text_table, AggregateRow, ResultsDocument, SCHEMA_VERSION};

use crate::autograd::Tensor;
use crate::bounds::{cate_bounds_multi, point_seed, CateBounds};
use crate::datasets::{build_hcmnist, gen_synthetic_split, load_ihdp_csv, read_idx_images, read_idx_labels, Dataset, HcMnistConfig, IdxImages, Split};
use crate::density::{train_cnf, ConditionalFlow, FlowConfig, FlowData, FlowTrainConfig, NoiseRegConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    build_stage0, hidden_width, predict_point_cate, train_stage0, validation_criterion, HiddenUnits, Stage0Model,
    Stage0Train,
};
use crate::evaluation::{
    bounds_policy, delta_er, independent_noise_differences, point_policy, rpehe, rpehe_scaled, score_policy,
    write_points_csv, PolicyReport,
};
use crate::sensitivity::{train_propensity, PropensityNet, SensitivityEstimate};
use crate::training::TrainRun;

/// Independent sub-seed for one purpose of one run.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    point_seed(seed, tag as usize, 7)
}

const TAG_STAGE0: u64 = 1;
const TAG_PROP_X: u64 = 2;
const TAG_PROP_PHI: u64 = 3;
const TAG_FLOW: u64 = 4;
const TAG_BOUNDS: u64 = 5;
const TAG_PEHE: u64 = 6;
const TAG_GRID: u64 = 7;

fn prefix(images: &IdxImages, labels: &[u8], n: Option<usize>) -> (IdxImages, Vec<u8>) {
    let n = n.unwrap_or(images.n).min(images.n);
    let p = images.pixels_per_image();
    (
        IdxImages {
            n,
            rows: images.rows,
            cols: images.cols,
            pixels: images.pixels[..n * p].to_vec(),
        },
        labels[..n].to_vec(),
    )
}

/// Train and test data for one seed.
pub fn load_data(config: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    match &config.dataset {
        DatasetSpec::Synthetic { n_train, n_test } => Ok(gen_synthetic_split(*n_train, *n_test, seed)),
        DatasetSpec::Ihdp { .. } => load_ihdp_csv(&config.dataset.data_dir()?, seed as usize),
        DatasetSpec::HcMnist { n_train, n_test, .. } => {
            let dir = config.dataset.data_dir()?;
            let tr_img = read_idx_images(&dir.join("train-images-idx3-ubyte"))?;
            let tr_lab = read_idx_labels(&dir.join("train-labels-idx1-ubyte"))?;
            let te_img = read_idx_images(&dir.join("t10k-images-idx3-ubyte"))?;
            let te_lab = read_idx_labels(&dir.join("t10k-labels-idx1-ubyte"))?;
            let cfg = HcMnistConfig::from_images(&tr_img, &tr_lab)?;
            let (ti, tl) = prefix(&tr_img, &tr_lab, *n_train);
            let (vi, vl) = prefix(&te_img, &te_lab, *n_test);
            Ok((
                build_hcmnist(&ti, &tl, &cfg, seed, Split::Train)?,
                build_hcmnist(&vi, &vl, &cfg, seed, Split::Test)?,
            ))
        }
    }
}

fn grid_runs(config: &ExperimentConfig, stage: Stage) -> Option<(usize, usize)> {
    match config.tuning {
        TuningMode::Fixed => None,
        TuningMode::Grid { runs, folds } => Some((runs.unwrap_or_else(|| default_runs(stage)), folds)),
    }
}

fn stage0_with(config: &ExperimentConfig, h: &Stage0Hyper, data: &Dataset, seed: u64) -> Result<Stage0Model> {
    let r = config.dataset.width_factor();
    let d_x = data.d_x();
    let hidden = HiddenUnits::from_multipliers(r, d_x, config.d_phi, h.phi_multiplier, h.head_multiplier, h.extra_multiplier);
    let model = build_stage0(config.estimator, d_x, config.d_phi, hidden, seed)?;
    let train = Stage0Train {
        run: TrainRun::new(h.learning_rate, h.batch_size, h.weight_decay, config.iterations, seed),
        propensity_learning_rate: h.propensity_learning_rate,
        propensity_weight_decay: h.propensity_weight_decay,
    };
    train_stage0(model, data, &train)
}

fn diverged_as_infinite(r: Result<f64>) -> Result<f64> {
    match r {
        Err(Error::Diverged(_)) | Err(Error::NonFinite { .. }) => Ok(f64::INFINITY),
        other => other,
    }
}

/// Stage 0: tunes (in grid mode) and trains the representation estimator.
pub fn fit_stage0(config: &ExperimentConfig, train: &Dataset, seed: u64) -> Result<(Stage0Model, Stage0Hyper)> {
    let s = derive_seed(seed, TAG_STAGE0);
    let run = || -> Result<(Stage0Model, Stage0Hyper)> {
        let hyper = match grid_runs(config, Stage::Stage0(config.estimator.kind)) {
            None => config.hyperparameters.stage0,
            Some((runs, folds)) => {
                let cands = sample_grid(&stage0_grid(config.estimator.kind), runs, derive_seed(seed, TAG_GRID));
                grid_search_cv(&cands, &train.a, folds, s, |h, tr, va| {
                    diverged_as_infinite(
                        stage0_with(config, h, &train.select(tr), s).and_then(|m| validation_criterion(&m, &train.select(va))),
                    )
                })?
                .best
            }
        };
        Ok((stage0_with(config, &hyper, train, s)?, hyper))
    };
    run().map_err(|e| e.in_stage("stage0"))
}

fn propensity_with(h: &PropensityHyper, r: f64, inputs: &Tensor, a: &[f64], iterations: usize, seed: u64) -> Result<PropensityNet> {
    let hidden = hidden_width(r, inputs.cols(), h.multiplier);
    train_propensity(inputs, a, hidden, &TrainRun::new(h.learning_rate, h.batch_size, h.weight_decay, iterations, seed))
}

fn tune_propensity(
    config: &ExperimentConfig,
    fixed: PropensityHyper,
    inputs: &Tensor,
    a: &[f64],
    seed: u64,
) -> Result<(PropensityNet, PropensityHyper)> {
    let r = config.dataset.width_factor();
    let hyper = match grid_runs(config, Stage::Propensity) {
        None => fixed,
        Some((runs, folds)) => {
            let cands = sample_grid(&propensity_grid(), runs, seed ^ TAG_GRID);
            grid_search_cv(&cands, a, folds, seed, |h, tr, va| {
                let sel = |idx: &[usize]| idx.iter().map(|&i| a[i]).collect::<Vec<_>>();
                diverged_as_infinite(
                    propensity_with(h, r, &inputs.select_rows(tr), &sel(tr), config.iterations, seed)
                        .and_then(|net| net.bce(&inputs.select_rows(va), &sel(va))),
                )
            })?
            .best
        }
    };
    Ok((propensity_with(&hyper, r, inputs, a, config.iterations, seed)?, hyper))
}

fn flow_with(config: &ExperimentConfig, h: &FlowHyper, data: &FlowData, seed: u64) -> Result<ConditionalFlow> {
    let hidden = hidden_width(config.dataset.width_factor(), config.d_phi, h.multiplier);
    let fc = FlowConfig::new(config.d_phi, hidden, h.knots, seed);
    let tc = FlowTrainConfig {
        learning_rate: h.learning_rate,
        batch_size: h.batch_size,
        iterations: config.iterations,
        noise: NoiseRegConfig {
            outcome_std: h.outcome_noise,
            representation_std: h.representation_noise,
        },
        seed,
    };
    train_cnf(fc, data, &tc)
}

/// Stage 1 artifacts: both propensity networks with the Γ̂ field at the
/// first radius, and the conditional outcome flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Artifacts {
    pub sensitivity: SensitivityEstimate,
    pub flow: ConditionalFlow,
    pub propensity_x: PropensityHyper,
    pub propensity_phi: PropensityHyper,
    pub flow_hyper: FlowHyper,
}

/// Stage 1 on the frozen Stage 0 representation.
pub fn fit_stage1(config: &ExperimentConfig, train: &Dataset, model: &Stage0Model, seed: u64) -> Result<Stage1Artifacts> {
    let run = || -> Result<Stage1Artifacts> {
        let phi = model.represent(&train.x)?;
        let hp = &config.hyperparameters;
        let (pi_x, hx) = tune_propensity(config, hp.propensity_x, &train.x, &train.a, derive_seed(seed, TAG_PROP_X))?;
        let (pi_phi, hphi) = tune_propensity(config, hp.propensity_phi, &phi, &train.a, derive_seed(seed, TAG_PROP_PHI))?;
        let sensitivity = SensitivityEstimate::new(pi_x, pi_phi, &train.x, &phi, config.deltas[0])?;
        let data = FlowData::new(train.y.clone(), train.a.clone(), phi)?;
        let fs = derive_seed(seed, TAG_FLOW);
        let flow_hyper = match grid_runs(config, Stage::Flow) {
            None => hp.flow,
            Some((runs, folds)) => {
                let cands = sample_grid(&flow_grid(), runs, fs ^ TAG_GRID);
                grid_search_cv(&cands, &data.a, folds, fs, |h, tr, va| {
                    diverged_as_infinite(flow_with(config, h, &data.select(tr), fs).and_then(|f| f.nll(&data.select(va))))
                })?
                .best
            }
        };
        let flow = flow_with(config, &flow_hyper, &data, fs)?;
        Ok(Stage1Artifacts {
            sensitivity,
            flow,
            propensity_x: hx,
            propensity_phi: hphi,
            flow_hyper,
        })
    };
    run().map_err(|e| e.in_stage("stage1"))
}

/// Stage 2: bounds at every row of `x`, one list per configured radius.
pub fn compute_bounds(
    config: &ExperimentConfig,
    x: &Tensor,
    model: &Stage0Model,
    stage1: &Stage1Artifacts,
    seed: u64,
) -> Result<Vec<Vec<CateBounds>>> {
    let run = || -> Result<Vec<Vec<CateBounds>>> {
        let sens = config
            .deltas
            .iter()
            .map(|&d| stage1.sensitivity.with_delta(d))
            .collect::<Result<Vec<_>>>()?;
        cate_bounds_multi(x, model, &sens, &stage1.flow, config.k, derive_seed(seed, TAG_BOUNDS))
    };
    run().map_err(|e| e.in_stage("stage2"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaResult {
    pub delta: f64,
    pub bounds: PolicyReport,
    pub delta_er: Option<f64>,
    pub mean_width: f64,
    pub mean_gamma: f64,
}

/// Everything one seed of an experiment reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub method: String,
    pub d_phi: usize,
    pub stage0: Stage0Hyper,
    pub propensity_x: PropensityHyper,
    pub propensity_phi: PropensityHyper,
    pub flow: FlowHyper,
    /// Out-of-sample report of the point-estimate policy.
    pub point: PolicyReport,
    pub deltas: Vec<DeltaResult>,
    /// On the training-outcome standard deviation scale, against potential
    /// outcome differences with independent unit noise where the generator
    /// has noise.
    pub rpehe_in: f64,
    pub rpehe_out: f64,
    /// Raw scale against the noiseless oracle differences.
    pub rpehe_in_oracle: f64,
    pub rpehe_out_oracle: f64,
}

fn outcome_std(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
}

fn pehe_pair(config: &ExperimentConfig, data: &Dataset, tau_hat: &[f64], scale: f64, seed: u64) -> Result<(f64, f64)> {
    let oracle = data
        .oracle_cate()
        .ok_or_else(|| Error::data("no oracle; evaluation-only metrics disabled"))?;
    let noisy = match config.dataset {
        DatasetSpec::Ihdp { .. } => oracle.clone(),
        _ => independent_noise_differences(&oracle, 1.0, seed),
    };
    Ok((rpehe_scaled(tau_hat, &noisy, scale)?, rpehe(tau_hat, &oracle)?))
}

/// Scores the point and bounds policies on the test split and rPEHE on both
/// splits.
pub fn evaluate_run(
    config: &ExperimentConfig,
    seed: u64,
    train: &Dataset,
    test: &Dataset,
    model: &Stage0Model,
    stage0: Stage0Hyper,
    stage1: &Stage1Artifacts,
    bounds: &[Vec<CateBounds>],
) -> Result<RunRecord> {
    let tau_test = test
        .oracle_cate()
        .ok_or_else(|| Error::data("no oracle; evaluation-only metrics disabled"))?;
    let point_out = predict_point_cate(model, &test.x)?;
    let point = score_policy(&point_policy(&point_out), &tau_test)?;
    let mut deltas = Vec::with_capacity(bounds.len());
    for (&delta, b) in config.deltas.iter().zip(bounds) {
        let report = score_policy(&bounds_policy(b)?, &tau_test)?;
        let n = b.len().max(1) as f64;
        deltas.push(DeltaResult {
            delta,
            delta_er: delta_er(&report, &point),
            bounds: report,
            mean_width: b.iter().map(|c| c.width()).sum::<f64>() / n,
            mean_gamma: b.iter().map(|c| c.gamma).sum::<f64>() / n,
        });
    }
    let scale = outcome_std(&train.y);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let point_in = predict_point_cate(model, &train.x)?;
    let ps = derive_seed(seed, TAG_PEHE);
    let (rpehe_in, rpehe_in_oracle) = pehe_pair(config, train, &point_in, scale, ps)?;
    let (rpehe_out, rpehe_out_oracle) = pehe_pair(config, test, &point_out, scale, ps ^ 1)?;
    Ok(RunRecord {
        config_hash: config.hash(),
        seed,
        method: config.estimator.label(),
        d_phi: config.d_phi,
        stage0,
        propensity_x: stage1.propensity_x,
        propensity_phi: stage1.propensity_phi,
        flow: stage1.flow_hyper,
        point,
        deltas,
        rpehe_in,
        rpehe_out,
        rpehe_in_oracle,
        rpehe_out_oracle,
    })
}

/// Artifacts and outputs of one seed.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub record: RunRecord,
    pub model: Stage0Model,
    pub stage1: Stage1Artifacts,
    pub bounds: Vec<Vec<CateBounds>>,
    pub train: Dataset,
    pub test: Dataset,
}

/// Stage 0 → Stage 1 → Stage 2 → evaluation for one seed.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let (train, test) = load_data(config, seed).map_err(|e| e.in_stage("data"))?;
    let (model, hyper) = fit_stage0(config, &train, seed)?;
    let stage1 = fit_stage1(config, &train, &model, seed)?;
    let bounds = compute_bounds(config, &test.x, &model, &stage1, seed)?;
    let record = evaluate_run(config, seed, &train, &test, &model, hyper, &stage1, &bounds).map_err(|e| e.in_stage("evaluation"))?;
    Ok(SeedRun {
        record,
        model,
        stage1,
        bounds,
        train,
        test,
    })
}

/// Writes a seed's checkpoints and per-point CSVs under `dir/seed_{s}`.
pub fn write_seed_outputs(config: &ExperimentConfig, run: &SeedRun, dir: &Path) -> Result<()> {
    let d = dir.join(format!("seed_{}", run.record.seed));
    std::fs::create_dir_all(&d)?;
    std::fs::write(d.join("stage0.json"), run.model.to_json()?)?;
    std::fs::write(d.join("stage1.json"), serde_json::to_string(&run.stage1)?)?;
    let phi = run.model.represent(&run.train.x)?;
    run.stage1.sensitivity.write_csv(&phi, &d.join("gamma_train.csv"))?;
    let tau = run.test.oracle_cate();
    for (&delta, b) in config.deltas.iter().zip(&run.bounds) {
        let path = d.join(format!("points_delta_{delta}.csv"));
        write_points_csv(&path, b, &bounds_policy(b)?, tau.as_deref())?;
    }
    std::fs::write(d.join("record.json"), serde_json::to_string_pretty(&run.record)?)?;
    Ok(())
}

/// Outcome of [`run_experiment`]: one record per seed plus wall times,
/// which are kept apart so that records are reproducible byte for byte.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config_hash: String,
    pub records: Vec<RunRecord>,
    pub wall_times: Vec<(u64, f64)>,
}

/// Runs every seed (concurrently) and, when `out_dir` is set, writes
/// checkpoints, per-point CSVs and results tables there.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Experiment> {
    config.validate()?;
    let runs = config
        .seeds
        .par_iter()
        .map(|&s| {
            let t0 = Instant::now();
            let r = run_seed(config, s)?;
            if let Some(dir) = &config.out_dir {
                write_seed_outputs(config, &r, dir)?;
            }
            Ok((r.record, (s, t0.elapsed().as_secs_f64())))
        })
        .collect::<Result<Vec<_>>>()?;
    let (records, wall_times): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    if let Some(dir) = &config.out_dir {
        emit_results(config, &records, dir)?;
        let times: Vec<_> = wall_times
            .iter()
            .map(|(s, t)| serde_json::json!({ "seed": s, "wall_time_secs": t }))
            .collect();
        std::fs::write(dir.join("timings.json"), serde_json::to_string_pretty(&times)?)?;
    }
    Ok(Experiment {
        config_hash: config.hash(),
        records,
        wall_times,
    })
}

/// Sequential tuning for one seed: Stage 0 first, then both propensity
/// networks and the flow on the winning representation. Returns the
/// selected hyperparameters; `config.tuning` must be grid mode.
pub fn tune_hyperparameters(config: &ExperimentConfig, seed: u64) -> Result<Hyperparameters> {
    if config.tuning == TuningMode::Fixed {
        return Err(Error::invalid("tuning mode is fixed; nothing to search"));
    }
    let (train, _) = load_data(config, seed).map_err(|e| e.in_stage("data"))?;
    let (model, stage0) = fit_stage0(config, &train, seed)?;
    let s1 = fit_stage1(config, &train, &model, seed)?;
    Ok(Hyperparameters {
        stage0,
        propensity_x: s1.propensity_x,
        propensity_phi: s1.propensity_phi,
        flow: s1.flow_hyper,
    })
}

/// Stage 0 checkpoint with the hyperparameters it was trained with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage0Checkpoint {
    pub config_hash: String,
    pub seed: u64,
    pub hyper: Stage0Hyper,
    pub model: Stage0Model,
}
