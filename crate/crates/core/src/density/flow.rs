use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::spline::{forward_with_raw_gradient, num_raw_params, SplineParams, DEFAULT_TAIL_BOUND};
use crate::autograd::{compare_gradients, GradCheckReport, Graph, Mlp, MlpConfig, Optimizer, OptimizerConfig, Tensor, Var};
use crate::error::{Error, Result};
use crate::training::Batcher;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Column-wise affine standardisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(cols: usize) -> Self {
        Standardizer {
            mean: vec![0.0; cols],
            std: vec![1.0; cols],
        }
    }

    /// Fits means and (population) standard deviations; constant columns
    /// keep unit scale.
    pub fn fit(x: &Tensor) -> Self {
        let (n, m) = (x.rows(), x.cols());
        let mut mean = vec![0.0; m];
        let mut std = vec![1.0; m];
        if n == 0 {
            return Standardizer { mean, std };
        }
        for j in 0..m {
            let mu = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (x.get(i, j) - mu).powi(2)).sum::<f64>() / n as f64;
            mean[j] = mu;
            std[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
        Standardizer { mean, std }
    }

    pub fn cols(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                out.set(i, j, (x.get(i, j) - self.mean[j]) / self.std[j]);
            }
        }
        out
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRegConfig {
    pub outcome_std: f64,
    pub representation_std: f64,
}

impl NoiseRegConfig {
    pub fn none() -> Self {
        NoiseRegConfig {
            outcome_std: 0.0,
            representation_std: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub knots: usize,
    pub tail_bound: f64,
    pub d_phi: usize,
    pub hidden_units: usize,
    pub seed: u64,
}

impl FlowConfig {
    pub fn new(d_phi: usize, hidden_units: usize, knots: usize, seed: u64) -> Self {
        FlowConfig {
            knots,
            tail_bound: DEFAULT_TAIL_BOUND,
            d_phi,
            hidden_units,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub noise: NoiseRegConfig,
    pub seed: u64,
}

/// Training data for the conditional density of `Y` given `(A, Φ)`.
#[derive(Clone, Debug)]
pub struct FlowData {
    pub y: Vec<f64>,
    pub a: Vec<f64>,
    /// `n × d_phi`; may have zero columns.
    pub phi: Tensor,
}

impl FlowData {
    pub fn new(y: Vec<f64>, a: Vec<f64>, phi: Tensor) -> Result<Self> {
        if y.len() != a.len() || y.len() != phi.rows() {
            return Err(Error::shape(
                "FlowData",
                format!("{} outcomes, {} treatments, {} representations", y.len(), a.len(), phi.rows()),
            ));
        }
        Ok(FlowData { y, a, phi })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> FlowData {
        FlowData {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            phi: self.phi.select_rows(idx),
        }
    }
}

/// Single-layer conditional rational-quadratic spline flow with a standard
/// normal base. The spline parameters come from a context network applied
/// to `[a, standardized φ]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalFlow {
    pub config: FlowConfig,
    pub context: Mlp,
    pub outcome_scale: Standardizer,
    pub phi_scale: Standardizer,
    pub nll_trace: Vec<f64>,
}

impl ConditionalFlow {
    /// Context network with zero output layer, so the untrained flow is the
    /// identity spline.
    pub fn new(config: FlowConfig) -> Result<Self> {
        if config.knots < 2 {
            return Err(Error::invalid("knot count must be >= 2"));
        }
        let mut context = Mlp::new(MlpConfig::new(
            1 + config.d_phi,
            config.hidden_units,
            num_raw_params(config.knots),
            config.seed,
        ))?;
        context.params[2] = Tensor::zeros(config.hidden_units, num_raw_params(config.knots));
        context.params[3] = Tensor::zeros(1, num_raw_params(config.knots));
        Ok(ConditionalFlow {
            config,
            context,
            outcome_scale: Standardizer::identity(1),
            phi_scale: Standardizer::identity(config.d_phi),
            nll_trace: Vec::new(),
        })
    }

    fn y_mean(&self) -> f64 {
        self.outcome_scale.mean[0]
    }

    fn y_std(&self) -> f64 {
        self.outcome_scale.std[0]
    }

    fn context_input(&self, a: &[f64], phi_std: &Tensor) -> Result<Tensor> {
        Tensor::column(a).concat_cols(phi_std)
    }

    /// Spline parameters at `(a, φ)` with `φ` in original units.
    pub fn spline_params(&self, a: f64, phi: &[f64]) -> Result<SplineParams> {
        if phi.len() != self.config.d_phi {
            return Err(Error::shape(
                "ConditionalFlow",
                format!("expected {} representation dims, got {}", self.config.d_phi, phi.len()),
            ));
        }
        let mut row = vec![a];
        row.extend(self.phi_scale.apply_row(phi));
        let raw = self.context.forward(&Tensor::from_rows(1, row.len(), row)?)?;
        SplineParams::from_raw(raw.data(), self.config.knots, self.config.tail_bound)
    }

    /// Log-density of `y` (original units) given `(a, φ)`.
    pub fn log_density(&self, y: f64, a: f64, phi: &[f64]) -> Result<f64> {
        let p = self.spline_params(a, phi)?;
        Ok(log_density_with(&p, y, self.y_mean(), self.y_std()))
    }

    /// Sorted draws from the fitted conditional distribution.
    pub fn sample(&self, a: f64, phi: &[f64], k: usize, seed: u64) -> Result<Vec<f64>> {
        if k == 0 {
            return Err(Error::invalid("sample size k must be >= 1"));
        }
        let p = self.spline_params(a, phi)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, s) = (self.y_mean(), self.y_std());
        let mut out: Vec<f64> = (0..k)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + s * p.inverse(z).0
            })
            .collect();
        out.sort_by(f64::total_cmp);
        Ok(out)
    }

    /// Mean negative log-likelihood in original outcome units, without noise.
    pub fn nll(&self, data: &FlowData) -> Result<f64> {
        cnf_nll(self, data, NoiseRegConfig::none(), false, 0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Log-density under a fixed spline with outcome affine scaling.
pub fn log_density_with(p: &SplineParams, y: f64, mean: f64, std: f64) -> f64 {
    let (z, ld) = p.forward((y - mean) / std);
    -0.5 * z * z - HALF_LN_2PI + ld - std.ln()
}

/// Records the spline on the graph: returns an `n × 2` node `[z, log|dz/dy|]`
/// differentiable with respect to `raw`.
fn spline_node(g: &Graph, raw: Var, y_std: &[f64], k: usize, bound: f64) -> Result<Var> {
    let values = g.value(raw);
    let (n, p) = (values.rows(), values.cols());
    let mut out = Vec::with_capacity(2 * n);
    let mut jac = Vec::with_capacity(2 * n * p);
    for (i, &y) in y_std.iter().enumerate() {
        let r = forward_with_raw_gradient(values.row(i), k, bound, y)?;
        out.push(r.z);
        out.push(r.logdet);
        jac.extend(r.dz);
        jac.extend(r.dlogdet);
    }
    let value = Tensor::from_rows(n, 2, out)?;
    g.custom(
        &[raw],
        value,
        Box::new(move |grad: &Tensor| {
            let mut gr = Tensor::zeros(n, p);
            for i in 0..n {
                let (gz, gl) = (grad.get(i, 0), grad.get(i, 1));
                let base = 2 * i * p;
                for j in 0..p {
                    gr.data_mut()[i * p + j] = gz * jac[base + j] + gl * jac[base + p + j];
                }
            }
            vec![gr]
        }),
        "rq_spline",
    )
}

/// Negative log-likelihood on the graph for a batch in standardized units.
/// Returns the mean NLL in original units.
fn nll_graph(
    g: &Graph,
    flow: &ConditionalFlow,
    ctx: &crate::autograd::BoundMlp,
    y_std: &[f64],
    input: Tensor,
) -> Result<Var> {
    let x = g.constant(input)?;
    let raw = ctx.logits(g, x)?;
    let node = spline_node(g, raw, y_std, flow.config.knots, flow.config.tail_bound)?;
    let z = g.slice_cols(node, 0, 1)?;
    let ld = g.slice_cols(node, 1, 2)?;
    let zz = g.square(z)?;
    let zz = g.mean(zz)?;
    let zz = g.scale(zz, 0.5)?;
    let ld = g.mean(ld)?;
    let nll = g.sub(zz, ld)?;
    g.add_scalar(nll, HALF_LN_2PI + flow.y_std().ln())
}

/// Mean negative log-likelihood of `data` under `flow`. With `training`,
/// Gaussian noise of the configured intensities is added to standardized
/// outcomes and representations (seeded by `seed`).
pub fn cnf_nll(
    flow: &ConditionalFlow,
    data: &FlowData,
    noise: NoiseRegConfig,
    training: bool,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let (y_std, input) = prepare(flow, data, noise, training, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let g = Graph::new();
    let ctx = flow.context.bind(&g)?;
    let v = nll_graph(&g, flow, &ctx, &y_std, input)?;
    let out = g.value(v).item();
    if !out.is_finite() {
        return Err(Error::NonFinite { op: "cnf_nll" });
    }
    Ok(out)
}

/// Backward-pass gradients of the noise-free NLL with respect to the context
/// network, compared with central differences of [`cnf_nll`].
pub fn flow_grad_check(flow: &ConditionalFlow, data: &FlowData, h: f64, tolerance: f64) -> Result<GradCheckReport> {
    let (y_std, input) = prepare(flow, data, NoiseRegConfig::none(), false, &mut ChaCha8Rng::seed_from_u64(0))?;
    let g = Graph::new();
    let ctx = flow.context.bind(&g)?;
    let loss = nll_graph(&g, flow, &ctx, &y_std, input)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = ctx.vars.iter().map(|&v| grads.get(v)).collect();
    let mut work = flow.clone();
    let mut numeric: Vec<Tensor> = analytic.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
    let eval = |f: &ConditionalFlow| cnf_nll(f, data, NoiseRegConfig::none(), false, 0);
    for (p, grad) in numeric.iter_mut().enumerate() {
        for k in 0..grad.len() {
            let orig = work.context.params[p].data()[k];
            work.context.params[p].data_mut()[k] = orig + h;
            let plus = eval(&work)?;
            work.context.params[p].data_mut()[k] = orig - h;
            let minus = eval(&work)?;
            work.context.params[p].data_mut()[k] = orig;
            grad.data_mut()[k] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(compare_gradients(&analytic, &numeric, tolerance))
}

fn prepare(
    flow: &ConditionalFlow,
    data: &FlowData,
    noise: NoiseRegConfig,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Tensor)> {
    if data.phi.cols() != flow.config.d_phi {
        return Err(Error::shape(
            "cnf_nll",
            format!("expected {} representation dims, got {}", flow.config.d_phi, data.phi.cols()),
        ));
    }
    let (m, s) = (flow.y_mean(), flow.y_std());
    let mut y: Vec<f64> = data.y.iter().map(|v| (v - m) / s).collect();
    let mut phi = flow.phi_scale.apply(&data.phi);
    if training {
        if noise.outcome_std > 0.0 {
            for v in y.iter_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *v += noise.outcome_std * e;
            }
        }
        if noise.representation_std > 0.0 {
            for v in phi.data_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *v += noise.representation_std * e;
            }
        }
    }
    let input = flow.context_input(&data.a, &phi)?;
    Ok((y, input))
}

/// Fits the flow by SGD with momentum 0.9 on minibatch NLL with noise
/// regularisation. Aborts when the loss stays above ten times its initial
/// magnitude for 500 consecutive steps.
pub fn train_cnf(config: FlowConfig, data: &FlowData, train: &FlowTrainConfig) -> Result<ConditionalFlow> {
    if data.is_empty() {
        return Err(Error::invalid("no training data for the flow"));
    }
    if train.batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let mut flow = ConditionalFlow::new(config)?;
    flow.outcome_scale = Standardizer::fit(&Tensor::column(&data.y));
    flow.phi_scale = Standardizer::fit(&data.phi);
    let mut opt = Optimizer::new(OptimizerConfig::sgd(train.learning_rate))?;
    let mut batcher = Batcher::new(data.len(), train.batch_size, train.seed);
    let mut initial: Option<f64> = None;
    let mut bad_run = 0usize;
    for _ in 0..train.iterations {
        let sub = data.select(batcher.next_batch());
        let (y_std, input) = prepare(&flow, &sub, train.noise, true, batcher.rng())?;
        let g = Graph::new();
        let ctx = flow.context.bind(&g)?;
        let loss = nll_graph(&g, &flow, &ctx, &y_std, input)
            .map_err(|e| Error::Diverged(format!("flow NLL: {e}")))?;
        let value = g.value(loss).item();
        let grads = g.backward(loss)?;
        let gs: Vec<Tensor> = ctx.vars.iter().map(|&v| grads.get(v)).collect();
        let mut ps: Vec<&mut Tensor> = flow.context.params.iter_mut().collect();
        opt.step(&mut ps, &gs)?;
        flow.nll_trace.push(value);
        let init = *initial.get_or_insert(value);
        if value > 10.0 * init.abs().max(1e-3) {
            bad_run += 1;
            if bad_run >= 500 {
                return Err(Error::Diverged(format!(
                    "flow NLL {value:.3} exceeded 10x initial {init:.3} for 500 steps"
                )));
            }
        } else {
            bad_run = 0;
        }
    }
    Ok(flow)
}
