//! Distributional distances between treated and control representations,
//! used as balancing penalties when training representation networks.
//!
//! All metrics are built from differentiable graph ops, so the penalty
//! backpropagates into the representation network.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BalancingMetric {
    Mmd,
    Wasserstein,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MmdKernel {
    /// Squared distance between mean embeddings.
    Linear,
    /// Gaussian kernel with median-heuristic bandwidth.
    Rbf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalancingConfig {
    pub metric: BalancingMetric,
    pub alpha: f64,
    pub kernel: MmdKernel,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_iters: usize,
}

impl BalancingConfig {
    pub fn mmd(alpha: f64) -> Self {
        BalancingConfig {
            metric: BalancingMetric::Mmd,
            alpha,
            kernel: MmdKernel::Linear,
            sinkhorn_epsilon: 0.1,
            sinkhorn_iters: 10,
        }
    }

    pub fn wasserstein(alpha: f64) -> Self {
        BalancingConfig {
            metric: BalancingMetric::Wasserstein,
            ..BalancingConfig::mmd(alpha)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::invalid("balancing alpha must be >= 0"));
        }
        if self.metric == BalancingMetric::Wasserstein {
            if !(self.sinkhorn_epsilon > 0.0) {
                return Err(Error::invalid("sinkhorn epsilon must be > 0"));
            }
            if self.sinkhorn_iters == 0 {
                return Err(Error::invalid("sinkhorn_iters must be >= 1"));
            }
        }
        Ok(())
    }
}

fn check_groups(g: &Graph, treated: Var, control: Var, op: &'static str) -> Result<()> {
    let (n1, d1) = g.shape(treated);
    let (n0, d0) = g.shape(control);
    if n1 == 0 || n0 == 0 {
        return Err(Error::invalid(format!("{op}: empty treatment group")));
    }
    if d1 != d0 {
        return Err(Error::shape(op, format!("dimension {d1} vs {d0}")));
    }
    Ok(())
}

/// Weights normalised to sum to one, as an `n×1` column.
fn normalised(g: &Graph, w: Var) -> Result<Var> {
    let total = g.sum(w)?;
    let one = g.constant(Tensor::scalar(1.0))?;
    let inv = g.div(one, total)?;
    g.matmul(w, inv)
}

fn weighted_mean(g: &Graph, rep: Var, w: Option<Var>) -> Result<Var> {
    match w {
        None => g.mean_rows(rep),
        Some(w) => {
            let wn = normalised(g, w)?;
            let wt = g.transpose(wn)?;
            g.matmul(wt, rep)
        }
    }
}

/// Linear-kernel MMD: `‖mean(treated) − mean(control)‖²`.
pub fn mmd(g: &Graph, treated: Var, control: Var) -> Result<Var> {
    mmd_weighted(g, treated, control, None, None)
}

pub fn mmd_weighted(
    g: &Graph,
    treated: Var,
    control: Var,
    w_treated: Option<Var>,
    w_control: Option<Var>,
) -> Result<Var> {
    check_groups(g, treated, control, "mmd")?;
    let m1 = weighted_mean(g, treated, w_treated)?;
    let m0 = weighted_mean(g, control, w_control)?;
    let d = g.sub(m1, m0)?;
    let sq = g.square(d)?;
    g.sum(sq)
}

/// Pair `(group, i, group, j)` of the pooled sample whose squared distance is
/// the median pairwise squared distance, with `false` for `a` and `true` for
/// `b`. `None` when there is no pair or the median is zero.
fn median_pair(a: &Tensor, b: &Tensor) -> Option<((bool, usize), (bool, usize))> {
    let pooled: Vec<(bool, usize)> = (0..a.rows())
        .map(|i| (false, i))
        .chain((0..b.rows()).map(|i| (true, i)))
        .collect();
    let row = |(grp, i): (bool, usize)| if grp { b.row(i) } else { a.row(i) };
    let mut d = Vec::new();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            let v: f64 = row(pooled[i]).iter().zip(row(pooled[j])).map(|(p, q)| (p - q) * (p - q)).sum();
            d.push((v, pooled[i], pooled[j]));
        }
    }
    if d.is_empty() {
        return None;
    }
    let mid = d.len() / 2;
    d.select_nth_unstable_by(mid, |x, y| x.0.total_cmp(&y.0));
    let (v, p, q) = d[mid];
    (v > 0.0).then_some((p, q))
}

/// Reciprocal median-heuristic bandwidth as a differentiable `1×1` node.
fn inverse_bandwidth(g: &Graph, treated: Var, control: Var) -> Result<Var> {
    let pair = g.with_value(treated, |a| g.with_value(control, |b| median_pair(a, b)));
    let one = g.constant(Tensor::scalar(1.0))?;
    let Some((p, q)) = pair else { return Ok(one) };
    let pick = |(grp, i): (bool, usize)| g.select_rows(if grp { control } else { treated }, &[i]);
    let diff = g.sub(pick(p)?, pick(q)?)?;
    let sq = g.square(diff)?;
    let bw = g.sum(sq)?;
    g.div(one, bw)
}

fn uniform_or_normalised(g: &Graph, n: usize, w: Option<Var>) -> Result<Var> {
    match w {
        None => g.constant(Tensor::filled(n, 1, 1.0 / n as f64)),
        Some(w) => normalised(g, w),
    }
}

/// Biased (V-statistic) squared MMD with a Gaussian kernel whose bandwidth
/// is the median pairwise squared distance of the pooled sample. Optional
/// weights reweight each group's empirical distribution.
pub fn mmd_rbf(g: &Graph, treated: Var, control: Var) -> Result<Var> {
    mmd_rbf_weighted(g, treated, control, None, None)
}

pub fn mmd_rbf_weighted(
    g: &Graph,
    treated: Var,
    control: Var,
    w_treated: Option<Var>,
    w_control: Option<Var>,
) -> Result<Var> {
    check_groups(g, treated, control, "mmd_rbf")?;
    let inv_bw = inverse_bandwidth(g, treated, control)?;
    let pt = uniform_or_normalised(g, g.shape(treated).0, w_treated)?;
    let pc = uniform_or_normalised(g, g.shape(control).0, w_control)?;
    let kmean = |x: Var, y: Var, px: Var, py: Var| -> Result<Var> {
        let d = g.pairwise_sq_dist(x, y)?;
        let ones = g.constant(Tensor::filled(g.shape(x).0, 1, -1.0))?;
        let col = g.matmul(ones, inv_bw)?;
        let k = g.exp(g.mul_col(d, col)?)?;
        let ky = g.matmul(k, py)?;
        g.sum(g.mul(ky, px)?)
    };
    let ktt = kmean(treated, treated, pt, pt)?;
    let kcc = kmean(control, control, pc, pc)?;
    let ktc = kmean(treated, control, pt, pc)?;
    let kct = kmean(control, treated, pc, pt)?;
    let s = g.add(ktt, kcc)?;
    let cross = g.add(ktc, kct)?;
    g.sub(s, cross)
}

fn log_marginal(g: &Graph, n: usize, w: Option<Var>) -> Result<Var> {
    match w {
        None => g.constant(Tensor::filled(n, 1, -(n as f64).ln())),
        Some(w) => {
            let wn = normalised(g, w)?;
            g.ln(wn)
        }
    }
}

/// One-directional log-domain Sinkhorn transport cost `⟨P, C⟩`.
fn sinkhorn_one_way(
    g: &Graph,
    x: Var,
    y: Var,
    wx: Option<Var>,
    wy: Option<Var>,
    eps: f64,
    iters: usize,
) -> Result<Var> {
    let (n, _) = g.shape(x);
    let (m, _) = g.shape(y);
    let cost = g.pairwise_sq_dist(x, y)?;
    let cost_t = g.transpose(cost)?;
    let neg_c = g.scale(cost, -1.0 / eps)?;
    let neg_ct = g.scale(cost_t, -1.0 / eps)?;
    let log_a = log_marginal(g, n, wx)?;
    let log_b = log_marginal(g, m, wy)?;
    let eps_log_a = g.scale(log_a, eps)?;
    let eps_log_b = g.scale(log_b, eps)?;

    let mut f = g.constant(Tensor::zeros(n, 1))?;
    let mut h = g.constant(Tensor::zeros(m, 1))?;
    for _ in 0..iters {
        let ht = g.transpose(h)?;
        let ht = g.scale(ht, 1.0 / eps)?;
        let arg = g.add_row(neg_c, ht)?;
        let lse = g.logsumexp_rows(arg)?;
        let lse = g.scale(lse, eps)?;
        f = g.sub(eps_log_a, lse)?;

        let ft = g.transpose(f)?;
        let ft = g.scale(ft, 1.0 / eps)?;
        let arg = g.add_row(neg_ct, ft)?;
        let lse = g.logsumexp_rows(arg)?;
        let lse = g.scale(lse, eps)?;
        h = g.sub(eps_log_b, lse)?;
    }
    let ht = g.transpose(h)?;
    let ht = g.scale(ht, 1.0 / eps)?;
    let f_scaled = g.scale(f, 1.0 / eps)?;
    let log_p = g.add_row(neg_c, ht)?;
    let log_p = g.add_col(log_p, f_scaled)?;
    let plan = g.exp(log_p)?;
    let pc = g.mul(plan, cost)?;
    g.sum(pc)
}

/// Entropic optimal-transport cost with squared Euclidean ground cost.
///
/// Computed in both directions and averaged, which makes the value exactly
/// symmetric in its arguments for any iteration count.
pub fn sinkhorn_wasserstein(
    g: &Graph,
    treated: Var,
    control: Var,
    cfg: &BalancingConfig,
) -> Result<Var> {
    sinkhorn_wasserstein_weighted(g, treated, control, None, None, cfg)
}

pub fn sinkhorn_wasserstein_weighted(
    g: &Graph,
    treated: Var,
    control: Var,
    w_treated: Option<Var>,
    w_control: Option<Var>,
    cfg: &BalancingConfig,
) -> Result<Var> {
    check_groups(g, treated, control, "sinkhorn_wasserstein")?;
    if !(cfg.sinkhorn_epsilon > 0.0) {
        return Err(Error::invalid("sinkhorn epsilon must be > 0"));
    }
    let (eps, iters) = (cfg.sinkhorn_epsilon, cfg.sinkhorn_iters.max(1));
    let forward = sinkhorn_one_way(g, treated, control, w_treated, w_control, eps, iters)
        .map_err(non_convergent)?;
    let backward = sinkhorn_one_way(g, control, treated, w_control, w_treated, eps, iters)
        .map_err(non_convergent)?;
    let both = g.add(forward, backward)?;
    g.scale(both, 0.5)
}

fn non_convergent(e: Error) -> Error {
    match e {
        Error::NonFinite { .. } => Error::NonFinite {
            op: "sinkhorn potentials",
        },
        e => e,
    }
}

/// Distance between two groups under `cfg` (without the `alpha` factor).
pub fn distance(
    g: &Graph,
    treated: Var,
    control: Var,
    w_treated: Option<Var>,
    w_control: Option<Var>,
    cfg: &BalancingConfig,
) -> Result<Var> {
    match cfg.metric {
        BalancingMetric::Mmd => match cfg.kernel {
            MmdKernel::Linear => mmd_weighted(g, treated, control, w_treated, w_control),
            MmdKernel::Rbf => mmd_rbf_weighted(g, treated, control, w_treated, w_control),
        },
        BalancingMetric::Wasserstein => {
            sinkhorn_wasserstein_weighted(g, treated, control, w_treated, w_control, cfg)
        }
    }
}

/// Evaluates a metric on plain tensors.
pub fn distance_value(treated: &Tensor, control: &Tensor, cfg: &BalancingConfig) -> Result<f64> {
    let g = Graph::new();
    let t = g.constant(treated.clone())?;
    let c = g.constant(control.clone())?;
    let d = distance(&g, t, c, None, None, cfg)?;
    Ok(g.value(d).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::from_rows(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn mmd_identical_is_zero() {
        let a = t(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 3.0]);
        assert_eq!(distance_value(&a, &a, &BalancingConfig::mmd(1.0)).unwrap(), 0.0);
    }

    #[test]
    fn mmd_mean_shift_closed_form() {
        let treated = t(2, 2, &[2.0, 1.0, 0.0, -1.0]); // mean (1, 0)
        let control = t(2, 2, &[1.0, 3.0, -1.0, -3.0]); // mean (0, 0)
        let v = distance_value(&treated, &control, &BalancingConfig::mmd(1.0)).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sinkhorn_single_points() {
        let cfg = BalancingConfig {
            sinkhorn_epsilon: 1e-3,
            ..BalancingConfig::wasserstein(1.0)
        };
        let v = distance_value(&t(1, 1, &[0.0]), &t(1, 1, &[1.0]), &cfg).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_group_is_rejected() {
        let a = t(2, 1, &[0.0, 1.0]);
        let empty = Tensor::zeros(0, 1);
        assert!(distance_value(&a, &empty, &BalancingConfig::mmd(1.0)).is_err());
        assert!(distance_value(&empty, &a, &BalancingConfig::wasserstein(1.0)).is_err());
    }

    #[test]
    fn weighted_mmd_matches_weighted_means() {
        let g = Graph::new();
        let tr = g.constant(t(2, 1, &[0.0, 4.0])).unwrap();
        let co = g.constant(t(1, 1, &[0.0])).unwrap();
        let w = g.constant(t(2, 1, &[3.0, 1.0])).unwrap();
        let d = mmd_weighted(&g, tr, co, Some(w), None).unwrap();
        assert!((g.value(d).item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rbf_mmd_identical_is_zero() {
        let a = t(4, 1, &[0.0, 1.0, 2.0, 5.0]);
        let cfg = BalancingConfig {
            kernel: MmdKernel::Rbf,
            ..BalancingConfig::mmd(1.0)
        };
        assert!(distance_value(&a, &a, &cfg).unwrap().abs() < 1e-15);
    }
}
