use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::balancing::BalancingConfig;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, EstimatorSpec};

pub const DATA_DIR_ENV: &str = "RICB_DATA_DIR";
pub const DEFAULT_DELTAS: [f64; 5] = [0.0005, 0.001, 0.005, 0.01, 0.05];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic {
        n_train: usize,
        n_test: usize,
    },
    /// One replicate per seed; seeds must lie in `1..=100`.
    Ihdp {
        #[serde(default)]
        dir: Option<PathBuf>,
    },
    /// Images from the four MNIST IDX files; optional prefixes of each
    /// split keep runs small.
    HcMnist {
        #[serde(default)]
        dir: Option<PathBuf>,
        #[serde(default)]
        n_train: Option<usize>,
        #[serde(default)]
        n_test: Option<usize>,
    },
}

impl DatasetSpec {
    /// Width multiplier `R` of hidden layers.
    pub fn width_factor(&self) -> f64 {
        match self {
            DatasetSpec::Synthetic { .. } => 2.0,
            _ => 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::Synthetic { .. } => "synthetic",
            DatasetSpec::Ihdp { .. } => "ihdp",
            DatasetSpec::HcMnist { .. } => "hcmnist",
        }
    }

    /// Explicit directory, else `$RICB_DATA_DIR`.
    pub fn data_dir(&self) -> Result<PathBuf> {
        let explicit = match self {
            DatasetSpec::Synthetic { .. } => None,
            DatasetSpec::Ihdp { dir } | DatasetSpec::HcMnist { dir, .. } => dir.clone(),
        };
        explicit
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .ok_or_else(|| Error::invalid(format!("no data directory: set `dir` or {DATA_DIR_ENV}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage0Hyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub phi_multiplier: f64,
    pub head_multiplier: f64,
    pub extra_multiplier: f64,
    pub propensity_learning_rate: f64,
    pub propensity_weight_decay: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub multiplier: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub multiplier: f64,
    pub knots: usize,
    pub outcome_noise: f64,
    pub representation_noise: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub stage0: Stage0Hyper,
    pub propensity_x: PropensityHyper,
    pub propensity_phi: PropensityHyper,
    pub flow: FlowHyper,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        let prop = PropensityHyper {
            learning_rate: 0.005,
            batch_size: 64,
            weight_decay: 0.0,
            multiplier: 2.0,
        };
        Hyperparameters {
            stage0: Stage0Hyper {
                learning_rate: 0.01,
                batch_size: 64,
                weight_decay: 0.0,
                phi_multiplier: 2.0,
                head_multiplier: 2.0,
                extra_multiplier: 2.0,
                propensity_learning_rate: 0.005,
                propensity_weight_decay: 0.0,
            },
            propensity_x: prop,
            propensity_phi: prop,
            flow: FlowHyper {
                learning_rate: 0.01,
                batch_size: 64,
                multiplier: 2.0,
                knots: 10,
                outcome_noise: 0.05,
                representation_noise: 0.05,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TuningMode {
    /// Use `hyperparameters` as given.
    Fixed,
    /// Random grid search with stratified cross-validation per stage;
    /// `runs` defaults to the per-stage budget.
    Grid {
        #[serde(default)]
        runs: Option<usize>,
        folds: usize,
    },
}

/// A complete experiment: data, estimator, sensitivity radii, sampling and
/// tuning settings, and the seeds to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub estimator: EstimatorSpec,
    pub d_phi: usize,
    pub deltas: Vec<f64>,
    /// Outcome samples per arm and evaluation point.
    pub k: usize,
    pub tuning: TuningMode,
    pub hyperparameters: Hyperparameters,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    /// Not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn synthetic(estimator: EstimatorSpec, d_phi: usize, n_train: usize) -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::Synthetic { n_train, n_test: 1000 },
            estimator,
            d_phi,
            deltas: DEFAULT_DELTAS.to_vec(),
            k: 10_000,
            tuning: TuningMode::Fixed,
            hyperparameters: Hyperparameters::default(),
            iterations: 5000,
            seeds: (0..10).collect(),
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() || self.deltas.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::invalid("deltas must be a nonempty list of positive radii"));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("no seeds given"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be >= 1"));
        }
        if let TuningMode::Grid { folds, runs } = self.tuning {
            if folds < 2 {
                return Err(Error::invalid("cross-validation needs at least 2 folds"));
            }
            if runs == Some(0) {
                return Err(Error::invalid("grid search needs at least one run"));
            }
        }
        if let Some(b) = self.estimator.balancing {
            b.validate()?;
        }
        if let DatasetSpec::Ihdp { .. } = self.dataset {
            if let Some(s) = self.seeds.iter().find(|s| !(1..=100).contains(*s)) {
                return Err(Error::invalid(format!("IHDP replicate {s} outside 1..=100")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Estimator presets by name, e.g. `cfr-wm-1.0` or `bnn`.
pub fn estimator_preset(name: &str) -> Result<EstimatorSpec> {
    let lower = name.to_ascii_lowercase();
    let mut parts = lower.splitn(3, ':');
    let kind: EstimatorKind = parts.next().unwrap_or_default().parse()?;
    let metric = parts.next();
    let alpha = parts.next().map(str::parse::<f64>).transpose().map_err(|e| Error::invalid(format!("{name}: {e}")))?;
    let spec = match (kind, metric) {
        (EstimatorKind::TarNet, None) => EstimatorSpec::tarnet(),
        (EstimatorKind::InvTarNet, None) => EstimatorSpec::inv_tarnet(),
        (EstimatorKind::Bnn, None) => EstimatorSpec::bnn(),
        (EstimatorKind::TarNet | EstimatorKind::InvTarNet | EstimatorKind::Bnn, Some(_)) => {
            return Err(Error::invalid(format!("{name}: this estimator takes no balancing metric")))
        }
        (k, m) => {
            let alpha = alpha.unwrap_or(1.0);
            let bal = match m.unwrap_or("wm") {
                "wm" => BalancingConfig::wasserstein(alpha),
                "mmd" => BalancingConfig::mmd(alpha),
                other => return Err(Error::invalid(format!("unknown balancing metric {other:?}"))),
            };
            EstimatorSpec::with_balancing(k, bal)
        }
    };
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_output_directory() {
        let mut a = ExperimentConfig::synthetic(EstimatorSpec::tarnet(), 2, 1000);
        let h = a.hash();
        a.out_dir = Some("/tmp/x".into());
        assert_eq!(a.hash(), h);
        a.seeds.push(99);
        assert_ne!(a.hash(), h);
        assert_eq!(h.len(), 64);
    }

    #[test]
    fn json_round_trip() {
        let a = ExperimentConfig::synthetic(EstimatorSpec::tarnet(), 1, 500);
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&s).unwrap(), a);
    }

    #[test]
    fn presets() {
        assert_eq!(estimator_preset("tarnet").unwrap(), EstimatorSpec::tarnet());
        let c = estimator_preset("cfr:mmd:0.5").unwrap();
        assert_eq!(c.balancing.unwrap(), BalancingConfig::mmd(0.5));
        assert_eq!(estimator_preset("cfr").unwrap().balancing.unwrap(), BalancingConfig::wasserstein(1.0));
        assert!(estimator_preset("tarnet:wm").is_err());
    }
}
