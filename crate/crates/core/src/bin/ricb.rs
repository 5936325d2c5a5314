use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ricb::bounds::CateBounds;
use ricb::runner::{
    compute_bounds, emit_results, estimator_preset, evaluate_run, fit_stage0, fit_stage1, load_data, run_experiment,
    tune_hyperparameters, write_text_table, DatasetSpec, ExperimentConfig, Stage0Checkpoint, Stage1Artifacts,
    TuningMode,
};
use ricb::{Error, Result};

#[derive(Parser)]
#[command(name = "ricb", about = "Bounds on representation-induced confounding bias")]
struct Cli {
    /// Experiment config (JSON); defaults to synthetic TARNet with d_phi = 2.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Single seed, overriding the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Estimator preset such as `tarnet` or `cfr:wm:1.0` (without --config).
    #[arg(long, global = true)]
    method: Option<String>,
    #[arg(long, global = true)]
    d_phi: Option<usize>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset's train and test splits as CSV.
    Generate,
    /// Stage 0: train the representation estimator.
    Train,
    /// Stages 1-2: sensitivity, flow and bounds on the test split.
    Refute,
    /// Score the point and bounds policies from saved artifacts.
    Evaluate,
    /// All stages for every seed, with results tables.
    Run,
    /// Cross-validated random grid search, written as a fixed-mode config.
    Grid {
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        runs: Option<usize>,
    },
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut c = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::synthetic(
            estimator_preset(cli.method.as_deref().unwrap_or("tarnet"))?,
            cli.d_phi.unwrap_or(2),
            1000,
        ),
    };
    if cli.config.is_some() {
        if let Some(m) = &cli.method {
            c.estimator = estimator_preset(m)?;
        }
        if let Some(d) = cli.d_phi {
            c.d_phi = d;
        }
    }
    if let Some(i) = cli.iterations {
        c.iterations = i;
    }
    if let Some(s) = cli.seed {
        c.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        c.out_dir = Some(o.clone());
    }
    c.validate()?;
    Ok(c)
}

fn out_dir(c: &ExperimentConfig) -> Result<PathBuf> {
    let d = c.out_dir.clone().ok_or_else(|| Error::InvalidArgument("--out is required".into()))?;
    std::fs::create_dir_all(&d)?;
    Ok(d)
}

fn seed_dir(c: &ExperimentConfig, seed: u64) -> Result<PathBuf> {
    let d = out_dir(c)?.join(format!("seed_{seed}"));
    std::fs::create_dir_all(&d)?;
    Ok(d)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e} (run the previous stage first)", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: &Cli) -> Result<()> {
    let c = config(cli)?;
    match &cli.command {
        Command::Generate => {
            if let DatasetSpec::Ihdp { .. } = c.dataset {
                return Err(Error::InvalidArgument("IHDP replicates are read from disk, not generated".into()));
            }
            for &s in &c.seeds {
                let (train, test) = load_data(&c, s)?;
                let d = seed_dir(&c, s)?;
                train.write_csv(&d.join("train.csv"))?;
                test.write_csv(&d.join("test.csv"))?;
                println!("seed {s}: {} train / {} test rows in {}", train.len(), test.len(), d.display());
            }
        }
        Command::Train => {
            for &s in &c.seeds {
                let (train, _) = load_data(&c, s)?;
                let (model, hyper) = fit_stage0(&c, &train, s)?;
                let ck = Stage0Checkpoint {
                    config_hash: c.hash(),
                    seed: s,
                    hyper,
                    model,
                };
                let p = seed_dir(&c, s)?.join("stage0.json");
                std::fs::write(&p, serde_json::to_string(&ck)?)?;
                println!("seed {s}: stage 0 checkpoint {}", p.display());
            }
        }
        Command::Refute => {
            for &s in &c.seeds {
                let d = seed_dir(&c, s)?;
                let ck: Stage0Checkpoint = read_json(&d.join("stage0.json"))?;
                let (train, test) = load_data(&c, s)?;
                let s1 = fit_stage1(&c, &train, &ck.model, s)?;
                let bounds = compute_bounds(&c, &test.x, &ck.model, &s1, s)?;
                std::fs::write(d.join("stage1.json"), serde_json::to_string(&s1)?)?;
                std::fs::write(d.join("bounds.json"), serde_json::to_string(&bounds)?)?;
                let phi = ck.model.represent(&train.x)?;
                s1.sensitivity.write_csv(&phi, &d.join("gamma_train.csv"))?;
                let tau = test.oracle_cate();
                for (&delta, b) in c.deltas.iter().zip(&bounds) {
                    let decisions = ricb::evaluation::bounds_policy(b)?;
                    ricb::evaluation::write_points_csv(&d.join(format!("points_delta_{delta}.csv")), b, &decisions, tau.as_deref())?;
                }
                println!("seed {s}: bounds for {} test points at {} radii", test.len(), c.deltas.len());
            }
        }
        Command::Evaluate => {
            let mut records = Vec::new();
            for &s in &c.seeds {
                let d = seed_dir(&c, s)?;
                let ck: Stage0Checkpoint = read_json(&d.join("stage0.json"))?;
                let s1: Stage1Artifacts = read_json(&d.join("stage1.json"))?;
                let bounds: Vec<Vec<CateBounds>> = read_json(&d.join("bounds.json"))?;
                let (train, test) = load_data(&c, s)?;
                let r = evaluate_run(&c, s, &train, &test, &ck.model, ck.hyper, &s1, &bounds)?;
                std::fs::write(d.join("record.json"), serde_json::to_string_pretty(&r)?)?;
                records.push(r);
            }
            emit_results(&c, &records, &out_dir(&c)?)?;
            print!("{}", write_text_table(&records));
        }
        Command::Run => {
            let exp = run_experiment(&c)?;
            print!("{}", write_text_table(&exp.records));
            println!("config hash {}", exp.config_hash);
        }
        Command::Grid { folds, runs } => {
            let mut tuned = c.clone();
            tuned.tuning = TuningMode::Grid {
                runs: *runs,
                folds: *folds,
            };
            tuned.validate()?;
            let s = c.seeds[0];
            let hp = tune_hyperparameters(&tuned, s)?;
            let mut fixed = c.clone();
            fixed.hyperparameters = hp;
            fixed.tuning = TuningMode::Fixed;
            fixed.out_dir = None;
            let p = out_dir(&c)?.join("tuned_config.json");
            fixed.save(&p)?;
            println!("{}", serde_json::to_string_pretty(&hp)?);
            println!("tuned config written to {}", p.display());
        }
    }
    Ok(())
}
