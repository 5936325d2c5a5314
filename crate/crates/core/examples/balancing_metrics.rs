//! Linear MMD, RBF MMD and the Sinkhorn Wasserstein metric between two
//! Gaussian clouds as one of them moves away.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ricb::autograd::Tensor;
use ricb::balancing::{distance_value, BalancingConfig, MmdKernel};

fn cloud(n: usize, shift: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..2 * n).map(|_| StandardNormal.sample(&mut rng)).map(|z: f64| z + shift).collect();
    Tensor::from_rows(n, 2, v).unwrap()
}

fn main() -> ricb::Result<()> {
    let rbf = BalancingConfig { kernel: MmdKernel::Rbf, ..BalancingConfig::mmd(1.0) };
    let metrics = [("MMD (linear)", BalancingConfig::mmd(1.0)), ("MMD (RBF)", rbf), ("WM (Sinkhorn)", BalancingConfig::wasserstein(1.0))];
    let control = cloud(200, 0.0, 1);
    println!("{:>6}  {:>14} {:>14} {:>14}", "shift", metrics[0].0, metrics[1].0, metrics[2].0);
    for shift in [0.0, 0.25, 0.5, 1.0, 2.0] {
        let treated = cloud(150, shift, 2);
        let row: Vec<String> = metrics
            .iter()
            .map(|(_, cfg)| distance_value(&treated, &control, cfg).map(|v| format!("{v:>14.4}")))
            .collect::<ricb::Result<_>>()?;
        println!("{shift:>6.2}  {}", row.join(" "));
    }
    Ok(())
}
