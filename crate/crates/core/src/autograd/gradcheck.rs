use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of comparing analytic gradients to central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, element index)` of the worst entry.
    pub worst: (usize, usize),
    pub tolerance: f64,
    pub passed: bool,
}

/// Denominator floor so that exactly-zero gradients compare absolutely.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Gradients of `loss` at `params` by reverse-mode differentiation.
pub fn analytic_gradient<F>(params: &[Tensor], loss: &F) -> Result<Vec<Tensor>>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars = params
        .iter()
        .map(|p| g.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let l = loss(&g, &vars)?;
    let grads = g.backward(l)?;
    Ok(vars.iter().map(|&v| grads.get(v)).collect())
}

fn eval<F>(params: &[Tensor], loss: &F) -> Result<f64>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars = params
        .iter()
        .map(|p| g.constant(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let l = loss(&g, &vars)?;
    Ok(g.value(l).item())
}

/// Central differences with step `h` on every parameter entry.
pub fn numerical_gradient<F>(params: &[Tensor], loss: &F, h: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Tensor::zeros(params[p].rows(), params[p].cols());
        for k in 0..params[p].len() {
            let orig = work[p].data()[k];
            work[p].data_mut()[k] = orig + h;
            let plus = eval(&work, loss)?;
            work[p].data_mut()[k] = orig - h;
            let minus = eval(&work, loss)?;
            work[p].data_mut()[k] = orig;
            grad.data_mut()[k] = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

pub fn compare_gradients(analytic: &[Tensor], numeric: &[Tensor], tolerance: f64) -> GradCheckReport {
    let mut worst = (0, 0);
    let mut max_rel_error = 0.0_f64;
    for (p, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (k, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            let e = relative_error(x, y);
            if e > max_rel_error || e.is_nan() {
                max_rel_error = e;
                worst = (p, k);
            }
        }
    }
    GradCheckReport {
        max_rel_error,
        worst,
        tolerance,
        passed: max_rel_error < tolerance,
    }
}

/// Reports the largest relative error between backward-pass gradients and
/// central differences (step `h`) over all parameters.
pub fn grad_check<F>(params: &[Tensor], loss: F, h: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradient(params, &loss)?;
    let numeric = numerical_gradient(params, &loss, h)?;
    Ok(compare_gradients(&analytic, &numeric, tolerance))
}
