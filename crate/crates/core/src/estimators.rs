//! Representation-learning CATE estimators: a representation network Φ,
//! outcome heads on top of it and optional balancing, reconstruction and
//! reweighting components.

use serde::{Deserialize, Serialize};

use crate::autograd::{
    compare_gradients, BoundMlp, GradCheckReport, Graph, Mlp, MlpConfig, Optimizer, OptimizerConfig,
    OutputActivation, Tensor, Var,
};
use crate::balancing::{self, BalancingConfig, BalancingMetric};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::sensitivity::{bce_loss, check_both_classes, clamp_propensity};
use crate::training::{Batcher, TrainRun};

pub const ISW_WEIGHT_CLAMP: (f64, f64) = (0.1, 10.0);
/// Penalty on the spread of the mean-normalised RCFR weights, `λ·(mean(w²) − 1)`.
pub const RCFR_WEIGHT_PENALTY: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    TarNet,
    Bnn,
    Cfr,
    InvTarNet,
    Rcfr,
    CfrIsw,
    Bwcfr,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::TarNet,
        EstimatorKind::Bnn,
        EstimatorKind::Cfr,
        EstimatorKind::InvTarNet,
        EstimatorKind::Rcfr,
        EstimatorKind::CfrIsw,
        EstimatorKind::Bwcfr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::TarNet => "TARNet",
            EstimatorKind::Bnn => "BNN",
            EstimatorKind::Cfr => "CFR",
            EstimatorKind::InvTarNet => "InvTARNet",
            EstimatorKind::Rcfr => "RCFR",
            EstimatorKind::CfrIsw => "CFR-ISW",
            EstimatorKind::Bwcfr => "BWCFR",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase().replace('-', "") == key)
            .ok_or_else(|| Error::invalid(format!("unknown estimator {s:?}")))
    }
}

/// Estimator kind plus its balancing penalty, if any.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub balancing: Option<BalancingConfig>,
}

impl EstimatorSpec {
    pub fn tarnet() -> Self {
        EstimatorSpec {
            kind: EstimatorKind::TarNet,
            balancing: None,
        }
    }

    pub fn bnn() -> Self {
        EstimatorSpec {
            kind: EstimatorKind::Bnn,
            balancing: Some(BalancingConfig::mmd(0.1)),
        }
    }

    pub fn inv_tarnet() -> Self {
        EstimatorSpec {
            kind: EstimatorKind::InvTarNet,
            balancing: None,
        }
    }

    pub fn with_balancing(kind: EstimatorKind, balancing: BalancingConfig) -> Self {
        EstimatorSpec {
            kind,
            balancing: Some(balancing),
        }
    }

    pub fn cfr(balancing: BalancingConfig) -> Self {
        Self::with_balancing(EstimatorKind::Cfr, balancing)
    }

    /// Display label such as `CFR (WM; α = 1.0)`.
    pub fn label(&self) -> String {
        match self.balancing {
            Some(b) if self.kind != EstimatorKind::TarNet && self.kind != EstimatorKind::InvTarNet => {
                let metric = match b.metric {
                    BalancingMetric::Mmd => "MMD",
                    BalancingMetric::Wasserstein => "WM",
                };
                format!("{} ({metric}; α = {:.1})", self.kind.name(), b.alpha)
            }
            _ => self.kind.name().to_string(),
        }
    }
}

/// Hidden-layer widths of the subnetworks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenUnits {
    /// Representation network (and decoder).
    pub phi: usize,
    /// Outcome heads.
    pub head: usize,
    /// Weight network (RCFR) or representation propensity network (CFR-ISW).
    pub extra: usize,
    /// Covariate propensity network (BWCFR).
    pub covariate: usize,
}

/// Hidden width `m·R·d` rounded to the nearest unit, at least one.
pub fn hidden_width(r: f64, d: usize, m: f64) -> usize {
    ((m * r * d as f64).round() as usize).max(1)
}

impl HiddenUnits {
    /// Widths from the `R`-scaled multipliers of the representation,
    /// heads and extra networks.
    pub fn from_multipliers(r: f64, d_x: usize, d_phi: usize, m_phi: f64, m_head: f64, m_extra: f64) -> Self {
        HiddenUnits {
            phi: hidden_width(r, d_x, m_phi),
            head: hidden_width(r, d_phi, m_head),
            extra: hidden_width(r, d_phi, m_extra),
            covariate: hidden_width(r, d_x, m_phi),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage0Model {
    pub spec: EstimatorSpec,
    pub d_x: usize,
    pub d_phi: usize,
    pub hidden: HiddenUnits,
    pub seed: u64,
    pub phi_net: Mlp,
    /// Two single-output heads, or one two-output head for BNN.
    pub heads: Vec<Mlp>,
    pub decoder: Option<Mlp>,
    pub weight_net: Option<Mlp>,
    pub propensity_phi: Option<Mlp>,
    pub propensity_x: Option<Mlp>,
    pub treated_fraction: f64,
    pub loss_trace: Vec<f64>,
    pub trained: bool,
}

/// Allocates every subnetwork the estimator kind needs.
pub fn build_stage0(spec: EstimatorSpec, d_x: usize, d_phi: usize, hidden: HiddenUnits, seed: u64) -> Result<Stage0Model> {
    if d_phi == 0 || d_phi > d_x {
        return Err(Error::invalid(format!(
            "representation dimension {d_phi} must be in 1..={d_x}"
        )));
    }
    if let Some(b) = spec.balancing {
        b.validate()?;
    }
    let net = |i: usize, o: usize, h: usize, k: u64| Mlp::new(MlpConfig::new(i, h, o, seed.wrapping_mul(31).wrapping_add(k)));
    let sigmoid_net = |i: usize, h: usize, k: u64| {
        Mlp::new(MlpConfig::new(i, h, 1, seed.wrapping_mul(31).wrapping_add(k)).with_output(OutputActivation::Sigmoid))
    };
    let phi_net = net(d_x, d_phi, hidden.phi, 0)?;
    let heads = if spec.kind == EstimatorKind::Bnn {
        vec![net(d_phi, 2, hidden.head, 1)?]
    } else {
        vec![net(d_phi, 1, hidden.head, 1)?, net(d_phi, 1, hidden.head, 2)?]
    };
    use EstimatorKind::*;
    Ok(Stage0Model {
        spec,
        d_x,
        d_phi,
        hidden,
        seed,
        phi_net,
        heads,
        decoder: (spec.kind == InvTarNet).then(|| net(d_phi, d_x, hidden.phi, 3)).transpose()?,
        weight_net: (spec.kind == Rcfr).then(|| net(d_phi, 1, hidden.extra, 4)).transpose()?,
        propensity_phi: (spec.kind == CfrIsw).then(|| sigmoid_net(d_phi, hidden.extra, 5)).transpose()?,
        propensity_x: (spec.kind == Bwcfr).then(|| sigmoid_net(d_x, hidden.covariate, 6)).transpose()?,
        treated_fraction: 0.5,
        loss_trace: Vec::new(),
        trained: false,
    })
}

/// Training hyperparameters; the propensity fields apply to jointly trained
/// propensity subnetworks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage0Train {
    pub run: TrainRun,
    pub propensity_learning_rate: f64,
    pub propensity_weight_decay: f64,
}

impl Stage0Train {
    pub fn new(run: TrainRun) -> Self {
        Stage0Train {
            run,
            propensity_learning_rate: run.learning_rate,
            propensity_weight_decay: run.weight_decay,
        }
    }
}

struct Bound {
    phi: BoundMlp,
    heads: Vec<BoundMlp>,
    decoder: Option<BoundMlp>,
    weight: Option<BoundMlp>,
    prop_phi: Option<BoundMlp>,
    prop_x: Option<BoundMlp>,
}

impl Bound {
    fn main_vars(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.phi.vars.to_vec();
        for h in &self.heads {
            v.extend(h.vars);
        }
        for b in [&self.decoder, &self.weight].into_iter().flatten() {
            v.extend(b.vars);
        }
        v
    }

    fn prop_vars(&self) -> Vec<Var> {
        [&self.prop_phi, &self.prop_x]
            .into_iter()
            .flatten()
            .flat_map(|b| b.vars)
            .collect()
    }
}

/// Components of the Stage 0 objective on one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub balancing: f64,
    pub reconstruction: f64,
    pub bce: f64,
    pub mean_weight: f64,
}

struct GraphLoss {
    total: Var,
    mse: Var,
    balancing: Option<Var>,
    reconstruction: Option<Var>,
    bce: Option<Var>,
    mean_weight: f64,
}

impl Stage0Model {
    fn bind(&self, g: &Graph) -> Result<Bound> {
        let opt = |m: &Option<Mlp>| m.as_ref().map(|n| n.bind(g)).transpose();
        Ok(Bound {
            phi: self.phi_net.bind(g)?,
            heads: self.heads.iter().map(|h| h.bind(g)).collect::<Result<_>>()?,
            decoder: opt(&self.decoder)?,
            weight: opt(&self.weight_net)?,
            prop_phi: opt(&self.propensity_phi)?,
            prop_x: opt(&self.propensity_x)?,
        })
    }

    fn main_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.phi_net.params.iter_mut().collect();
        for h in self.heads.iter_mut() {
            v.extend(h.params.iter_mut());
        }
        for n in [&mut self.decoder, &mut self.weight_net].into_iter().flatten() {
            v.extend(n.params.iter_mut());
        }
        v
    }

    fn prop_params_mut(&mut self) -> Vec<&mut Tensor> {
        [&mut self.propensity_phi, &mut self.propensity_x]
            .into_iter()
            .flatten()
            .flat_map(|n| n.params.iter_mut())
            .collect()
    }

    fn outcome_nodes(&self, g: &Graph, b: &Bound, phi: Var) -> Result<(Var, Var)> {
        if b.heads.len() == 1 {
            let out = b.heads[0].forward(g, phi)?;
            Ok((g.slice_cols(out, 0, 1)?, g.slice_cols(out, 1, 2)?))
        } else {
            Ok((b.heads[0].forward(g, phi)?, b.heads[1].forward(g, phi)?))
        }
    }

    fn loss_graph(&self, g: &Graph, b: &Bound, x: &Tensor, a: &[f64], y: &[f64]) -> Result<GraphLoss> {
        if x.cols() != self.d_x {
            return Err(Error::shape(
                "stage0_loss",
                format!("expected {} covariates, got {}", self.d_x, x.cols()),
            ));
        }
        let n = a.len();
        let xv = g.constant(x.clone())?;
        let av = g.constant(Tensor::column(a))?;
        let yv = g.constant(Tensor::column(y))?;
        let phi = b.phi.forward(g, xv)?;
        let (mu0, mu1) = self.outcome_nodes(g, b, phi)?;
        let diff = g.sub(mu1, mu0)?;
        let shift = g.mul(av, diff)?;
        let pred = g.add(mu0, shift)?;
        let res = g.sub(pred, yv)?;
        let sq = g.square(res)?;

        let mut bce = None;
        let mut spread = None;
        let weights: Option<Var> = match self.spec.kind {
            EstimatorKind::Rcfr => {
                let raw = b.weight.as_ref().expect("weight net").forward(g, phi)?;
                let w = g.softplus(raw)?;
                let m = g.mean(w)?;
                let one = g.constant(Tensor::scalar(1.0))?;
                let inv = g.div(one, m)?;
                let wn = g.matmul(w, inv)?;
                let sq = g.square(wn)?;
                let m2 = g.mean(sq)?;
                let var = g.sub(m2, one)?;
                spread = Some(g.scale(var, RCFR_WEIGHT_PENALTY)?);
                Some(wn)
            }
            EstimatorKind::CfrIsw => {
                let net = b.prop_phi.as_ref().expect("propensity net");
                let detached = g.detach(phi)?;
                bce = Some(bce_loss(g, net, detached, av)?);
                let p = g.value(net.forward(g, detached)?);
                let (p1, p0) = (self.treated_fraction, 1.0 - self.treated_fraction);
                let w: Vec<f64> = (0..n)
                    .map(|i| {
                        let pi1 = clamp_propensity(p.data()[i]);
                        let (pa, pna, ma, mna) = if a[i] == 1.0 { (pi1, 1.0 - pi1, p1, p0) } else { (1.0 - pi1, pi1, p0, p1) };
                        (1.0 + (mna / ma) * (pna / pa)).clamp(ISW_WEIGHT_CLAMP.0, ISW_WEIGHT_CLAMP.1)
                    })
                    .collect();
                Some(g.constant(Tensor::column(&normalise(&w)))?)
            }
            EstimatorKind::Bwcfr => {
                let net = b.prop_x.as_ref().expect("propensity net");
                bce = Some(bce_loss(g, net, xv, av)?);
                let p = g.value(net.forward(g, xv)?);
                let w: Vec<f64> = (0..n)
                    .map(|i| {
                        let pi1 = clamp_propensity(p.data()[i]);
                        if a[i] == 1.0 {
                            1.0 - pi1
                        } else {
                            pi1
                        }
                    })
                    .collect();
                Some(g.constant(Tensor::column(&normalise(&w)))?)
            }
            _ => None,
        };
        let mean_weight = weights.map_or(1.0, |w| g.value(w).mean());
        let mse = match weights {
            Some(w) => {
                let ws = g.mul(w, sq)?;
                g.mean(ws)?
            }
            None => g.mean(sq)?,
        };
        let mut total = mse;

        let mut bal = None;
        if let Some(cfg) = self.spec.balancing {
            let treated: Vec<usize> = (0..n).filter(|&i| a[i] == 1.0).collect();
            let control: Vec<usize> = (0..n).filter(|&i| a[i] == 0.0).collect();
            if cfg.alpha > 0.0 && !treated.is_empty() && !control.is_empty() {
                let p1 = g.select_rows(phi, &treated)?;
                let p0 = g.select_rows(phi, &control)?;
                let (w1, w0) = match weights {
                    Some(w) => (Some(g.select_rows(w, &treated)?), Some(g.select_rows(w, &control)?)),
                    None => (None, None),
                };
                let d = balancing::distance(g, p1, p0, w1, w0, &cfg)?;
                let scaled = g.scale(d, cfg.alpha)?;
                total = g.add(total, scaled)?;
                bal = Some(d);
            }
        }
        let mut rec = None;
        if let Some(dec) = &b.decoder {
            let xr = dec.forward(g, phi)?;
            let e = g.sub(xr, xv)?;
            let e = g.square(e)?;
            let r = g.mean(e)?;
            total = g.add(total, r)?;
            rec = Some(r);
        }
        if let Some(l) = bce {
            total = g.add(total, l)?;
        }
        if let Some(p) = spread {
            total = g.add(total, p)?;
        }
        Ok(GraphLoss {
            total,
            mse,
            balancing: bal,
            reconstruction: rec,
            bce,
            mean_weight,
        })
    }

    /// Representation `Φ(x)`.
    pub fn represent(&self, x: &Tensor) -> Result<Tensor> {
        self.phi_net.forward(x)
    }

    /// Head predictions `(f₀(Φ(x)), f₁(Φ(x)))`.
    pub fn predict_outcomes(&self, x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        let phi = self.represent(x)?;
        if self.heads.len() == 1 {
            let out = self.heads[0].forward(&phi)?;
            Ok(((0..out.rows()).map(|i| out.get(i, 0)).collect(), (0..out.rows()).map(|i| out.get(i, 1)).collect()))
        } else {
            Ok((self.heads[0].forward(&phi)?.into_data(), self.heads[1].forward(&phi)?.into_data()))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn normalise(w: &[f64]) -> Vec<f64> {
    let m = w.iter().sum::<f64>() / w.len().max(1) as f64;
    w.iter().map(|v| v / m).collect()
}

/// Full objective on a batch: weighted factual MSE, `α`-scaled balancing,
/// reconstruction and jointly trained propensity BCE, where applicable.
pub fn stage0_loss(model: &Stage0Model, x: &Tensor, a: &[f64], y: &[f64]) -> Result<LossParts> {
    let g = Graph::new();
    let b = model.bind(&g)?;
    let l = model.loss_graph(&g, &b, x, a, y)?;
    let v = |o: Option<Var>| o.map_or(0.0, |v| g.value(v).item());
    Ok(LossParts {
        total: g.value(l.total).item(),
        mse: g.value(l.mse).item(),
        balancing: v(l.balancing),
        reconstruction: v(l.reconstruction),
        bce: v(l.bce),
        mean_weight: l.mean_weight,
    })
}

/// Backward-pass gradients of the Stage 0 objective with respect to the
/// representation, head, decoder and weight networks, compared with central
/// differences of [`stage0_loss`]. CFR-ISW weights come from a detached
/// representation and are not expected to agree.
pub fn stage0_grad_check(
    model: &Stage0Model,
    x: &Tensor,
    a: &[f64],
    y: &[f64],
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let g = Graph::new();
    let b = model.bind(&g)?;
    let l = model.loss_graph(&g, &b, x, a, y)?;
    let grads = g.backward(l.total)?;
    let analytic: Vec<Tensor> = b.main_vars().into_iter().map(|v| grads.get(v)).collect();
    let mut work = model.clone();
    let mut numeric: Vec<Tensor> = analytic.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
    for (p, grad) in numeric.iter_mut().enumerate() {
        for k in 0..grad.len() {
            let orig = work.main_params_mut()[p].data()[k];
            work.main_params_mut()[p].data_mut()[k] = orig + h;
            let plus = stage0_loss(&work, x, a, y)?.total;
            work.main_params_mut()[p].data_mut()[k] = orig - h;
            let minus = stage0_loss(&work, x, a, y)?.total;
            work.main_params_mut()[p].data_mut()[k] = orig;
            grad.data_mut()[k] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(compare_gradients(&analytic, &numeric, tolerance))
}

/// Trains all subnetworks with AdamW on minibatches.
pub fn train_stage0(mut model: Stage0Model, data: &Dataset, train: &Stage0Train) -> Result<Stage0Model> {
    train.run.validate()?;
    if data.is_empty() {
        return Err(Error::data("empty training set"));
    }
    check_both_classes(&data.a, "train_stage0")?;
    model.treated_fraction = data.treated_fraction();
    let mut opt = Optimizer::new(OptimizerConfig::adamw(train.run.learning_rate, train.run.weight_decay))?;
    let has_prop = model.propensity_phi.is_some() || model.propensity_x.is_some();
    let mut prop_opt = if has_prop {
        Some(Optimizer::new(OptimizerConfig::adamw(
            train.propensity_learning_rate,
            train.propensity_weight_decay,
        ))?)
    } else {
        None
    };
    let mut batcher = Batcher::new(data.len(), train.run.batch_size, train.run.seed);
    for _ in 0..train.run.iterations {
        let idx = batcher.next_batch().to_vec();
        let x = data.x.select_rows(&idx);
        let a: Vec<f64> = idx.iter().map(|&i| data.a[i]).collect();
        let y: Vec<f64> = idx.iter().map(|&i| data.y[i]).collect();
        let g = Graph::new();
        let b = model.bind(&g)?;
        let l = model.loss_graph(&g, &b, &x, &a, &y)?;
        model.loss_trace.push(g.value(l.total).item());
        let grads = g.backward(l.total)?;
        let main: Vec<Tensor> = b.main_vars().into_iter().map(|v| grads.get(v)).collect();
        let prop: Vec<Tensor> = b.prop_vars().into_iter().map(|v| grads.get(v)).collect();
        opt.step(&mut model.main_params_mut(), &main)?;
        if let Some(po) = prop_opt.as_mut() {
            po.step(&mut model.prop_params_mut(), &prop)?;
        }
    }
    model.trained = true;
    Ok(model)
}

/// `f₁(Φ(x)) − f₀(Φ(x))` per row.
pub fn predict_point_cate(model: &Stage0Model, x: &Tensor) -> Result<Vec<f64>> {
    let (m0, m1) = model.predict_outcomes(x)?;
    Ok(m1.iter().zip(&m0).map(|(a, b)| a - b).collect())
}

/// Mean factual squared error on a dataset (the tuning criterion), plus the
/// propensity BCE for estimators that learn one jointly.
pub fn validation_criterion(model: &Stage0Model, data: &Dataset) -> Result<f64> {
    let (m0, m1) = model.predict_outcomes(&data.x)?;
    let mse = (0..data.len())
        .map(|i| {
            let p = if data.a[i] == 1.0 { m1[i] } else { m0[i] };
            (p - data.y[i]).powi(2)
        })
        .sum::<f64>()
        / data.len() as f64;
    let bce = match &model.propensity_phi {
        Some(net) if model.spec.kind == EstimatorKind::CfrIsw => {
            let phi = model.represent(&data.x)?;
            let l = net.logits(&phi)?;
            l.data()
                .iter()
                .zip(&data.a)
                .map(|(&l, &t)| crate::autograd::softplus(l) - t * l)
                .sum::<f64>()
                / data.len() as f64
        }
        _ => 0.0,
    };
    Ok(mse + bce)
}
