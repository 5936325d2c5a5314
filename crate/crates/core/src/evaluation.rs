//! Treatment policies from point estimates and bounds, and their scores.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bounds::CateBounds;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Treat,
    NoTreat,
    Defer,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Treat => "treat",
            Decision::NoTreat => "no_treat",
            Decision::Defer => "defer",
        }
    }
}

/// Treat iff the estimate is strictly positive.
pub fn point_policy(tau_hat: &[f64]) -> Vec<Decision> {
    tau_hat
        .iter()
        .map(|&t| if t > 0.0 { Decision::Treat } else { Decision::NoTreat })
        .collect()
}

/// Treat when the whole interval is positive, do nothing when it is
/// negative, defer otherwise.
pub fn bounds_policy(bounds: &[CateBounds]) -> Result<Vec<Decision>> {
    bounds
        .iter()
        .map(|b| {
            if !(b.lower <= b.upper) {
                return Err(Error::invalid(format!("interval [{}, {}] is empty", b.lower, b.upper)));
            }
            Ok(if b.lower > 0.0 {
                Decision::Treat
            } else if b.upper < 0.0 {
                Decision::NoTreat
            } else {
                Decision::Defer
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    /// Share of non-deferred decisions that disagree with the oracle policy;
    /// `None` when every decision was deferred.
    pub error_rate: Option<f64>,
    pub deferral_rate: f64,
    pub n_decided: usize,
    pub n_total: usize,
}

/// Scores decisions against the oracle policy `1{τ > 0}`.
pub fn score_policy(decisions: &[Decision], tau_oracle: &[f64]) -> Result<PolicyReport> {
    if decisions.len() != tau_oracle.len() {
        return Err(Error::shape(
            "score_policy",
            format!("{} decisions vs {} oracle values", decisions.len(), tau_oracle.len()),
        ));
    }
    let mut decided = 0;
    let mut wrong = 0;
    for (d, &t) in decisions.iter().zip(tau_oracle) {
        let optimal = t > 0.0;
        match d {
            Decision::Defer => {}
            Decision::Treat | Decision::NoTreat => {
                decided += 1;
                if (*d == Decision::Treat) != optimal {
                    wrong += 1;
                }
            }
        }
    }
    let n = decisions.len();
    Ok(PolicyReport {
        error_rate: (decided > 0).then(|| wrong as f64 / decided as f64),
        deferral_rate: if n == 0 { 0.0 } else { (n - decided) as f64 / n as f64 },
        n_decided: decided,
        n_total: n,
    })
}

/// `ER(bounds) − ER(point)`; negative means the bounds policy errs less.
pub fn delta_er(bounds: &PolicyReport, point: &PolicyReport) -> Option<f64> {
    Some(bounds.error_rate? - point.error_rate?)
}

/// Root mean squared difference between estimated effects and potential
/// outcome differences.
pub fn rpehe(tau_hat: &[f64], differences: &[f64]) -> Result<f64> {
    rpehe_scaled(tau_hat, differences, 1.0)
}

/// [`rpehe`] after dividing both sides by `scale`, e.g. the training outcome
/// standard deviation.
pub fn rpehe_scaled(tau_hat: &[f64], differences: &[f64], scale: f64) -> Result<f64> {
    if tau_hat.len() != differences.len() || tau_hat.is_empty() {
        return Err(Error::shape(
            "rpehe",
            format!("{} estimates vs {} differences", tau_hat.len(), differences.len()),
        ));
    }
    if !(scale > 0.0) {
        return Err(Error::invalid("rpehe scale must be > 0"));
    }
    let mse = tau_hat
        .iter()
        .zip(differences)
        .map(|(t, d)| ((t - d) / scale).powi(2))
        .sum::<f64>()
        / tau_hat.len() as f64;
    Ok(mse.sqrt())
}

/// Potential outcome differences `τ + ε₁ − ε₀` with independent
/// `N(0, noise_std²)` noise per arm.
pub fn independent_noise_differences(tau: &[f64], noise_std: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tau.iter()
        .map(|t| {
            let e1: f64 = StandardNormal.sample(&mut rng);
            let e0: f64 = StandardNormal.sample(&mut rng);
            t + noise_std * (e1 - e0)
        })
        .collect()
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// One point of the error-rate vs deferral-rate curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub delta: f64,
    pub error_rate: Option<f64>,
    pub deferral_rate: f64,
}

/// Spearman correlation between ER and DR over the curve points with a
/// defined error rate.
pub fn curve_trend(curve: &[CurvePoint]) -> Option<f64> {
    let (dr, er): (Vec<f64>, Vec<f64>) = curve
        .iter()
        .filter_map(|p| p.error_rate.map(|e| (p.deferral_rate, e)))
        .unzip();
    spearman(&dr, &er)
}

/// Per-point results: id, point, lower, upper, gamma, pi_phi, decision and,
/// when given, the oracle CATE.
pub fn write_points_csv(path: &Path, bounds: &[CateBounds], decisions: &[Decision], tau_oracle: Option<&[f64]>) -> Result<()> {
    if bounds.len() != decisions.len() || tau_oracle.is_some_and(|t| t.len() != bounds.len()) {
        return Err(Error::shape("write_points_csv", "one decision and oracle value per interval"));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id", "point", "lower", "upper", "gamma", "pi_phi", "decision"];
    if tau_oracle.is_some() {
        header.push("tau_oracle");
    }
    w.write_record(&header)?;
    for (i, (b, d)) in bounds.iter().zip(decisions).enumerate() {
        let mut rec = vec![
            i.to_string(),
            b.point.to_string(),
            b.lower.to_string(),
            b.upper.to_string(),
            b.gamma.to_string(),
            b.pi1_phi.to_string(),
            d.as_str().to_string(),
        ];
        if let Some(t) = tau_oracle {
            rec.push(t[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Regular lattice over two covariates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub x1: (f64, f64),
    pub x2: (f64, f64),
    pub steps: usize,
}

impl Lattice {
    /// Row-major lattice points `(x1, x2)`.
    pub fn points(&self) -> Vec<[f64; 2]> {
        let s = self.steps.max(2);
        let at = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * i as f64 / (s - 1) as f64;
        (0..s)
            .flat_map(|i| (0..s).map(move |j| [at(self.x1, i), at(self.x2, j)]))
            .collect()
    }
}

/// Decision-boundary grid: lattice coordinates, oracle CATE, point estimate,
/// interval and both policies' decisions.
pub fn write_boundary_grid_csv(
    path: &Path,
    points: &[[f64; 2]],
    tau_oracle: &[f64],
    bounds: &[CateBounds],
) -> Result<()> {
    if points.len() != tau_oracle.len() || points.len() != bounds.len() {
        return Err(Error::shape("write_boundary_grid_csv", "one oracle value and interval per point"));
    }
    let point_dec = point_policy(&bounds.iter().map(|b| b.point).collect::<Vec<_>>());
    let bound_dec = bounds_policy(bounds)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x1", "x2", "tau_oracle", "point", "lower", "upper", "point_decision", "bounds_decision"])?;
    for i in 0..points.len() {
        w.write_record([
            points[i][0].to_string(),
            points[i][1].to_string(),
            tau_oracle[i].to_string(),
            bounds[i].point.to_string(),
            bounds[i].lower.to_string(),
            bounds[i].upper.to_string(),
            point_dec[i].as_str().to_string(),
            bound_dec[i].as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
