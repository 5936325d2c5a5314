//! Estimates the sensitivity parameter Γ of a lossy one-dimensional
//! representation from the two propensity networks, and widens it over a
//! δ-ball.

use ricb::autograd::Tensor;
use ricb::datasets::gen_synthetic;
use ricb::sensitivity::{train_propensity, SensitivityEstimate};
use ricb::training::TrainRun;

fn main() -> ricb::Result<()> {
    let data = gen_synthetic(2000, 4);
    // keep only x1: the representation drops the confounding in x2
    let phi = Tensor::column(&(0..data.len()).map(|i| data.x.get(i, 0)).collect::<Vec<_>>());
    let run = TrainRun::new(0.005, 64, 0.0, 3000, 4);
    let pi_x = train_propensity(&data.x, &data.a, 8, &run)?;
    let pi_phi = train_propensity(&phi, &data.a, 4, &run)?;
    println!("propensity BCE: covariates {:.4}, representation {:.4}", pi_x.bce(&data.x, &data.a)?, pi_phi.bce(&phi, &data.a)?);

    let est = SensitivityEstimate::new(pi_x, pi_phi, &data.x, &phi, 0.0005)?;
    for delta in [0.0005, 0.005, 0.05, 0.5] {
        let g = est.with_delta(delta)?.field.gamma_hat;
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        let max = g.iter().copied().fold(1.0, f64::max);
        println!("δ = {delta:<6}  mean Γ̂ {mean:.3}  max Γ̂ {max:.3}");
    }
    let out = std::env::temp_dir().join("ricb_gamma_train.csv");
    est.write_csv(&phi, &out)?;
    println!("per-point Γ written to {}", out.display());
    Ok(())
}
