//! Reverse-mode gradients: check a small ELU network against central
//! differences, then fit it to a 1-d regression with AdamW.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ricb::autograd::{grad_check, Graph, Mlp, MlpConfig, Optimizer, OptimizerConfig, Tensor};

fn main() -> ricb::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let xs: Vec<f64> = (0..256).map(|_| rng.random_range(-3.0..3.0)).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x.sin() + 0.1 * rng.random_range(-1.0..1.0)).collect();
    let (x, y) = (Tensor::column(&xs), Tensor::column(&ys));

    let mut net = Mlp::new(MlpConfig::new(1, 16, 1, 1))?;
    let loss = |g: &Graph, p: &[ricb::autograd::Var]| {
        let h = g.matmul(g.constant(x.clone())?, p[0])?;
        let h = g.elu(g.add_row(h, p[1])?)?;
        let o = g.add_row(g.matmul(h, p[2])?, p[3])?;
        let e = g.sub(o, g.constant(y.clone())?)?;
        let sq = g.square(e)?;
        g.mean(sq)
    };
    let report = grad_check(&net.params, loss, 1e-5, 1e-4)?;
    println!("gradient check: max relative error {:.2e} (passed: {})", report.max_rel_error, report.passed);

    let mut opt = Optimizer::new(OptimizerConfig::adamw(0.01, 0.0))?;
    for step in 0..=2000 {
        let g = Graph::new();
        let bound = net.bind(&g)?;
        let l = loss(&g, &bound.vars)?;
        if step % 500 == 0 {
            println!("step {step:>4}: mse {:.4}", g.value(l).item());
        }
        let grads = g.backward(l)?;
        let gs: Vec<Tensor> = bound.vars.iter().map(|&v| grads.get(v)).collect();
        opt.step(&mut net.params.iter_mut().collect::<Vec<_>>(), &gs)?;
    }
    let probe = Tensor::column(&[-2.0, 0.0, 1.5]);
    let pred = net.forward(&probe)?;
    for (i, p) in probe.data().iter().enumerate() {
        println!("f({p:+.1}) = {:+.3}   sin = {:+.3}", pred.data()[i], p.sin());
    }
    Ok(())
}
