//! Marginal-sensitivity bounds on conditional expected outcomes and CATE.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::density::ConditionalFlow;
use crate::error::{Error, Result};
use crate::estimators::{predict_point_cate, Stage0Model};
use crate::sensitivity::SensitivityEstimate;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftCoefficients {
    pub s_minus: f64,
    pub s_plus: f64,
    pub c_minus: f64,
    pub c_plus: f64,
    pub gamma: f64,
}

/// Coefficients of the maximally left/right shifted outcome distributions
/// for sensitivity level `gamma` and arm propensity `pi`.
pub fn shift_coefficients(gamma: f64, pi: f64) -> Result<ShiftCoefficients> {
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("gamma must be >= 1, got {gamma}")));
    }
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::invalid(format!("propensity must be in (0, 1), got {pi}")));
    }
    Ok(ShiftCoefficients {
        s_minus: 1.0 / ((1.0 - gamma) * pi + gamma),
        s_plus: 1.0 / ((1.0 - 1.0 / gamma) * pi + 1.0 / gamma),
        c_minus: 1.0 / (1.0 + gamma),
        c_plus: gamma / (1.0 + gamma),
        gamma,
    })
}

fn check_sorted(sample: &[f64]) -> Result<()> {
    if sample.is_empty() {
        return Err(Error::invalid("empty sample"));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "cvar" });
    }
    if sample.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("sample must be sorted ascending"));
    }
    Ok(())
}

/// Tail sums `(1/k) Σ_{i ≤ ⌊kc⌋} y_i` and `(1/k) Σ_{i > ⌊kc⌋} y_i`.
pub fn cvar_tail_sums(sorted: &[f64], c: f64) -> Result<(f64, f64)> {
    check_sorted(sorted)?;
    let k = sorted.len();
    let m = ((k as f64 * c).floor() as usize).min(k);
    let low: f64 = sorted[..m].iter().sum();
    let high: f64 = sorted[m..].iter().sum();
    Ok((low / k as f64, high / k as f64))
}

/// Bounds built from the floor-split tail sums, without correcting the
/// fractional boundary mass.
pub fn cvar_mu_bounds_floor(sorted: &[f64], coeffs: &ShiftCoefficients) -> Result<(f64, f64)> {
    let (lo_m, hi_m) = cvar_tail_sums(sorted, coeffs.c_minus)?;
    let (lo_p, hi_p) = cvar_tail_sums(sorted, coeffs.c_plus)?;
    Ok((
        lo_m / coeffs.s_minus + hi_m / coeffs.s_plus,
        lo_p / coeffs.s_plus + hi_p / coeffs.s_minus,
    ))
}

/// Means of the lower `c` and upper `1 - c` probability mass of the sample,
/// splitting the boundary element fractionally. Also returns the boundary
/// element.
fn block_means(sorted: &[f64], c: f64) -> (f64, f64, f64) {
    let k = sorted.len();
    let mass = k as f64 * c;
    let fl = (mass.floor() as usize).min(k - 1);
    let frac = mass - fl as f64;
    let boundary = sorted[fl];
    let low_sum: f64 = sorted[..fl].iter().sum::<f64>() + frac * boundary;
    let high_sum: f64 = (1.0 - frac) * boundary + sorted[fl + 1..].iter().sum::<f64>();
    let low = if mass > 0.0 { low_sum / mass } else { boundary };
    let high_mass = k as f64 - mass;
    let high = if high_mass > 0.0 { high_sum / high_mass } else { boundary };
    (low.min(boundary), high.max(boundary), boundary)
}

/// Lower and upper expected outcome from a sorted sample.
///
/// The empirical distribution is reweighted by `1/s₋` below its
/// `c₋`-quantile and `1/s₊` above (lower bound), and by `1/s₊` below the
/// `c₊`-quantile and `1/s₋` above (upper bound). The quantile element is
/// split so each block carries exactly `c` of the mass; the weights then
/// sum to one and the result is written as the sample mean plus a signed
/// correction, so `lower ≤ mean ≤ upper` holds in floating point.
pub fn cvar_mu_bounds(sorted: &[f64], coeffs: &ShiftCoefficients) -> Result<(f64, f64)> {
    check_sorted(sorted)?;
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let excess = 1.0 / coeffs.s_minus - 1.0;
    if excess <= 0.0 {
        return Ok((mean, mean));
    }
    let (low_m, high_m, _) = block_means(sorted, coeffs.c_minus);
    let (low_p, high_p, _) = block_means(sorted, coeffs.c_plus);
    let down = excess * coeffs.c_minus * (high_m - low_m);
    let up = excess * (1.0 - coeffs.c_plus) * (high_p - low_p);
    Ok((mean - down, mean + up))
}

/// Sample mean of a sorted sample and its Monte-Carlo standard error.
pub fn mean_and_standard_error(sample: &[f64]) -> (f64, f64) {
    let k = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / k;
    let var = sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    (mean, (var / k).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CateBounds {
    pub lower: f64,
    pub upper: f64,
    /// Point estimate of the Stage 0 outcome heads.
    pub point: f64,
    pub gamma: f64,
    /// Representation propensity of treatment.
    pub pi1_phi: f64,
    pub k: usize,
}

impl CateBounds {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Interval `[μ₁⁻ − μ₀⁺, μ₁⁺ − μ₀⁻]` from sorted outcome samples of each arm.
/// `pi1` is the representation propensity of treatment.
pub fn cate_bounds_from_samples(
    treated: &[f64],
    control: &[f64],
    gamma: f64,
    pi1: f64,
    point: f64,
) -> Result<CateBounds> {
    let c1 = shift_coefficients(gamma, pi1)?;
    let c0 = shift_coefficients(gamma, 1.0 - pi1)?;
    let (l1, u1) = cvar_mu_bounds(treated, &c1)?;
    let (l0, u0) = cvar_mu_bounds(control, &c0)?;
    Ok(CateBounds {
        lower: l1 - u0,
        upper: u1 - l0,
        point,
        gamma,
        pi1_phi: pi1,
        k: treated.len().min(control.len()),
    })
}

/// Seed of the outcome sample for evaluation point `i` and arm `a`.
pub fn point_seed(seed: u64, i: usize, arm: usize) -> u64 {
    let mut z = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((arm as u64 + 1) << 56);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Bounds for several Γ assignments at once. Each point's arm samples are
/// drawn once (`k` per arm) and shared by every assignment, so intervals for
/// different assignments differ only through Γ.
pub fn bounds_for_gamma_sets(
    flow: &ConditionalFlow,
    phi: &Tensor,
    pi1_phi: &[f64],
    point: &[f64],
    gamma_sets: &[Vec<f64>],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<CateBounds>>> {
    let n = phi.rows();
    if pi1_phi.len() != n || point.len() != n || gamma_sets.iter().any(|g| g.len() != n) {
        return Err(Error::shape("cate_bounds", "one propensity, point estimate and Γ per row"));
    }
    let per_point = (0..n)
        .into_par_iter()
        .map(|i| {
            let treated = flow.sample(1.0, phi.row(i), k, point_seed(seed, i, 1))?;
            let control = flow.sample(0.0, phi.row(i), k, point_seed(seed, i, 0))?;
            gamma_sets
                .iter()
                .map(|g| cate_bounds_from_samples(&treated, &control, g[i], pi1_phi[i], point[i]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..gamma_sets.len())
        .map(|s| per_point.iter().map(|b| b[s]).collect())
        .collect())
}

/// CATE bounds at covariate rows `x` from the frozen Stage 0 model, the
/// sensitivity estimate and the conditional flow. `sensitivities` holds one
/// estimate per radius `δ`; the result has one bound list per estimate.
pub fn cate_bounds_multi(
    x: &Tensor,
    model: &Stage0Model,
    sensitivities: &[SensitivityEstimate],
    flow: &ConditionalFlow,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<CateBounds>>> {
    if sensitivities.is_empty() {
        return Err(Error::invalid("no sensitivity estimate given"));
    }
    if flow.config.d_phi != model.d_phi {
        return Err(Error::invalid(format!(
            "flow conditions on {} dims, representation has {}",
            flow.config.d_phi, model.d_phi
        )));
    }
    let phi = model.represent(x)?;
    let point = predict_point_cate(model, x)?;
    let mut pi1 = Vec::new();
    let mut gamma_sets = Vec::with_capacity(sensitivities.len());
    for s in sensitivities {
        let (g, p) = s.gamma_for(x, &phi)?;
        gamma_sets.push(g);
        pi1 = p;
    }
    bounds_for_gamma_sets(flow, &phi, &pi1, &point, &gamma_sets, k, seed)
}

/// [`cate_bounds_multi`] for a single sensitivity estimate.
pub fn cate_bounds(
    x: &Tensor,
    model: &Stage0Model,
    sensitivity: &SensitivityEstimate,
    flow: &ConditionalFlow,
    k: usize,
    seed: u64,
) -> Result<Vec<CateBounds>> {
    Ok(cate_bounds_multi(x, model, std::slice::from_ref(sensitivity), flow, k, seed)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_confounding_collapse() {
        for pi in [0.1, 0.5, 0.93] {
            let c = shift_coefficients(1.0, pi).unwrap();
            assert_eq!((c.s_minus, c.s_plus, c.c_minus, c.c_plus), (1.0, 1.0, 0.5, 0.5));
        }
    }

    #[test]
    fn gamma_two_half_propensity() {
        let c = shift_coefficients(2.0, 0.5).unwrap();
        assert!((c.s_minus - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.s_plus - 4.0 / 3.0).abs() < 1e-15);
        assert!((c.c_minus - 1.0 / 3.0).abs() < 1e-15);
        assert!((c.c_plus - 2.0 / 3.0).abs() < 1e-15);
        let total = c.c_minus / c.s_minus + (1.0 - c.c_minus) / c.s_plus;
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(shift_coefficients(0.9, 0.5).is_err());
        assert!(shift_coefficients(2.0, 0.0).is_err());
        assert!(shift_coefficients(2.0, 1.0).is_err());
        let c = shift_coefficients(2.0, 0.5).unwrap();
        assert!(cvar_mu_bounds(&[], &c).is_err());
        assert!(cvar_mu_bounds(&[1.0, 0.0], &c).is_err());
    }

    #[test]
    fn gamma_one_gives_sample_mean() {
        let s = [-1.0, 0.0, 0.5, 2.0, 7.0];
        let c = shift_coefficients(1.0, 0.3).unwrap();
        let (lo, hi) = cvar_mu_bounds(&s, &c).unwrap();
        assert_eq!(lo, 1.7);
        assert_eq!(hi, 1.7);
    }

    #[test]
    fn mass_conserving_split_matches_direct_weighting() {
        let s: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let mut s = s;
        s.sort_by(f64::total_cmp);
        let k = s.len() as f64;
        for (gamma, pi) in [(1.7, 0.3), (4.0, 0.8), (9.5, 0.5)] {
            let c = shift_coefficients(gamma, pi).unwrap();
            let weighted = |cut: f64, wl: f64, wh: f64| {
                s.iter()
                    .enumerate()
                    .map(|(i, &y)| {
                        let lo_share = (cut * k - i as f64).clamp(0.0, 1.0);
                        y * (lo_share * wl + (1.0 - lo_share) * wh) / k
                    })
                    .sum::<f64>()
            };
            let direct_lo = weighted(c.c_minus, 1.0 / c.s_minus, 1.0 / c.s_plus);
            let direct_hi = weighted(c.c_plus, 1.0 / c.s_plus, 1.0 / c.s_minus);
            let (lo, hi) = cvar_mu_bounds(&s, &c).unwrap();
            assert!((lo - direct_lo).abs() < 1e-12, "{lo} vs {direct_lo}");
            assert!((hi - direct_hi).abs() < 1e-12, "{hi} vs {direct_hi}");
        }
    }

    #[test]
    fn floor_split_tail_sums() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(cvar_tail_sums(&s, 0.6).unwrap(), (0.75, 1.75));
    }
}
