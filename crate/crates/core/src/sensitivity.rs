//! Propensity networks and the per-point sensitivity parameter Γ.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mlp, MlpConfig, Optimizer, OptimizerConfig, OutputActivation, Tensor};
use crate::density::Standardizer;
use crate::error::{Error, Result};
use crate::training::{Batcher, TrainRun};

pub const PROPENSITY_CLAMP: (f64, f64) = (0.01, 0.99);

pub fn clamp_propensity(p: f64) -> f64 {
    p.clamp(PROPENSITY_CLAMP.0, PROPENSITY_CLAMP.1)
}

/// Sigmoid-output classifier of treatment given its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityNet {
    pub net: Mlp,
    pub bce_trace: Vec<f64>,
}

impl PropensityNet {
    pub fn new(input_dim: usize, hidden_units: usize, seed: u64) -> Result<Self> {
        let cfg = MlpConfig::new(input_dim, hidden_units, 1, seed).with_output(OutputActivation::Sigmoid);
        Ok(PropensityNet {
            net: Mlp::new(cfg)?,
            bce_trace: Vec::new(),
        })
    }

    /// Unclamped `P(A = 1 | input)`.
    pub fn predict_raw(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.net.forward(x)?.into_data())
    }

    /// `P(A = 1 | input)` clipped to `[0.01, 0.99]`.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.predict_raw(x)?.into_iter().map(clamp_propensity).collect())
    }

    /// Mean binary cross-entropy of the unclamped classifier.
    pub fn bce(&self, x: &Tensor, a: &[f64]) -> Result<f64> {
        let logits = self.net.logits(x)?;
        Ok(logits
            .data()
            .iter()
            .zip(a)
            .map(|(&l, &t)| crate::autograd::softplus(l) - t * l)
            .sum::<f64>()
            / a.len().max(1) as f64)
    }
}

pub(crate) fn check_both_classes(a: &[f64], what: &str) -> Result<()> {
    if a.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::data(format!("{what}: treatments must be 0 or 1")));
    }
    let treated = a.iter().filter(|&&t| t == 1.0).count();
    if treated == 0 || treated == a.len() {
        return Err(Error::data(format!("{what}: both treatment groups must be present")));
    }
    Ok(())
}

/// Fits a propensity network by AdamW on the binary cross-entropy
/// `softplus(l) − a·l` of the logits `l`.
pub fn train_propensity(
    inputs: &Tensor,
    treatments: &[f64],
    hidden_units: usize,
    run: &TrainRun,
) -> Result<PropensityNet> {
    run.validate()?;
    if inputs.rows() != treatments.len() {
        return Err(Error::shape(
            "train_propensity",
            format!("{} rows vs {} treatments", inputs.rows(), treatments.len()),
        ));
    }
    check_both_classes(treatments, "train_propensity")?;
    let mut model = PropensityNet::new(inputs.cols(), hidden_units, run.seed)?;
    let mut opt = Optimizer::new(OptimizerConfig::adamw(run.learning_rate, run.weight_decay))?;
    let mut batcher = Batcher::new(inputs.rows(), run.batch_size, run.seed ^ 0x5eed);
    for _ in 0..run.iterations {
        let idx = batcher.next_batch();
        let g = Graph::new();
        let bound = model.net.bind(&g)?;
        let x = g.constant(inputs.select_rows(idx))?;
        let t = g.constant(Tensor::column(&idx.iter().map(|&i| treatments[i]).collect::<Vec<_>>()))?;
        let loss = bce_loss(&g, &bound, x, t)?;
        model.bce_trace.push(g.value(loss).item());
        let grads = g.backward(loss)?;
        let gs: Vec<Tensor> = bound.vars.iter().map(|&v| grads.get(v)).collect();
        let mut ps: Vec<&mut Tensor> = model.net.params.iter_mut().collect();
        opt.step(&mut ps, &gs)?;
    }
    Ok(model)
}

pub(crate) fn bce_loss(
    g: &Graph,
    net: &crate::autograd::BoundMlp,
    x: crate::autograd::Var,
    t: crate::autograd::Var,
) -> Result<crate::autograd::Var> {
    let l = net.logits(g, x)?;
    let sp = g.softplus(l)?;
    let tl = g.mul(t, l)?;
    let per = g.sub(sp, tl)?;
    g.mean(per)
}

/// Odds ratio `λ = (π₀ᵠ/π₁ᵠ)(π₁ˣ/π₀ˣ)` and `Γ = max(λ, 1/λ)` from treatment
/// propensities given covariates and given the representation.
pub fn gamma_pointwise(pi1_x: f64, pi1_phi: f64) -> Result<(f64, f64)> {
    for p in [pi1_x, pi1_phi] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("propensity {p} outside (0, 1)")));
        }
    }
    let lambda = ((1.0 - pi1_phi) / pi1_phi) * (pi1_x / (1.0 - pi1_x));
    Ok((lambda, lambda.max(1.0 / lambda)))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Maximum of `gamma_point[j]` over training points within Euclidean
/// distance `delta` of point `i` (point `i` always included).
pub fn gamma_ball(i: usize, points: &Tensor, gamma_point: &[f64], delta: f64) -> f64 {
    let centre = points.row(i);
    let r2 = delta * delta;
    (0..points.rows())
        .filter(|&j| j == i || sq_dist(points.row(j), centre) <= r2)
        .map(|j| gamma_point[j])
        .fold(gamma_point[i], f64::max)
}

/// Per-training-point Γ̂ on standardized representations for one `δ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaField {
    pub delta: f64,
    pub scale: Standardizer,
    /// Standardized training representations.
    pub points: Tensor,
    pub gamma_point: Vec<f64>,
    pub gamma_hat: Vec<f64>,
}

impl GammaField {
    pub fn fit(phi: &Tensor, gamma_point: Vec<f64>, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::invalid("delta must be > 0"));
        }
        if phi.rows() != gamma_point.len() {
            return Err(Error::shape("GammaField", "one gamma per representation row"));
        }
        let scale = Standardizer::fit(phi);
        let points = scale.apply(phi);
        let gamma_hat = (0..points.rows())
            .into_par_iter()
            .map(|i| gamma_ball(i, &points, &gamma_point, delta))
            .collect();
        Ok(GammaField {
            delta,
            scale,
            points,
            gamma_point,
            gamma_hat,
        })
    }

    /// Same training points and Γ values, different radius.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::invalid("delta must be > 0"));
        }
        let gamma_hat = (0..self.points.rows())
            .into_par_iter()
            .map(|i| gamma_ball(i, &self.points, &self.gamma_point, delta))
            .collect();
        Ok(GammaField {
            delta,
            gamma_hat,
            ..self.clone()
        })
    }

    /// Γ at a new representation: the maximum of its own pointwise value and
    /// the pointwise values of training points within `δ`.
    pub fn gamma_at(&self, phi: &[f64], own_gamma: f64) -> f64 {
        let centre = self.scale.apply_row(phi);
        let r2 = self.delta * self.delta;
        (0..self.points.rows())
            .filter(|&j| sq_dist(self.points.row(j), &centre) <= r2)
            .map(|j| self.gamma_point[j])
            .fold(own_gamma, f64::max)
    }
}

/// Fitted propensity pair and Γ̂ field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEstimate {
    pub pi_x: PropensityNet,
    pub pi_phi: PropensityNet,
    pub pi1_x: Vec<f64>,
    pub pi1_phi: Vec<f64>,
    pub field: GammaField,
}

impl SensitivityEstimate {
    /// Evaluates both (clamped) propensities on the training data and builds
    /// the Γ̂ field.
    pub fn new(pi_x: PropensityNet, pi_phi: PropensityNet, x: &Tensor, phi: &Tensor, delta: f64) -> Result<Self> {
        let pi1_x = pi_x.predict(x)?;
        let pi1_phi = pi_phi.predict(phi)?;
        let gamma_point = pi1_x
            .iter()
            .zip(&pi1_phi)
            .map(|(&px, &pp)| gamma_pointwise(px, pp).map(|(_, g)| g))
            .collect::<Result<Vec<_>>>()?;
        let field = GammaField::fit(phi, gamma_point, delta)?;
        Ok(SensitivityEstimate {
            pi_x,
            pi_phi,
            pi1_x,
            pi1_phi,
            field,
        })
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Ok(SensitivityEstimate {
            field: self.field.with_delta(delta)?,
            ..self.clone()
        })
    }

    /// Γ and representation propensity for new rows.
    pub fn gamma_for(&self, x: &Tensor, phi: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let px = self.pi_x.predict(x)?;
        let pp = self.pi_phi.predict(phi)?;
        let gammas = (0..phi.rows())
            .map(|i| {
                let (_, own) = gamma_pointwise(px[i], pp[i])?;
                Ok(self.field.gamma_at(phi.row(i), own))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((gammas, pp))
    }

    /// Per-training-point CSV: id, φ coordinates, π̂ˣ, π̂ᵠ, Γ_point, Γ̂_ball.
    pub fn write_csv(&self, phi: &Tensor, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string()];
        header.extend((1..=phi.cols()).map(|j| format!("phi{j}")));
        header.extend(["pi_x", "pi_phi", "gamma_point", "gamma_ball"].map(String::from));
        w.write_record(&header)?;
        for i in 0..phi.rows() {
            let mut rec = vec![i.to_string()];
            rec.extend(phi.row(i).iter().map(|v| v.to_string()));
            rec.push(self.pi1_x[i].to_string());
            rec.push(self.pi1_phi[i].to_string());
            rec.push(self.field.gamma_point[i].to_string());
            rec.push(self.field.gamma_hat[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
