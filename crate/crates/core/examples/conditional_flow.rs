//! Fits the conditional spline flow for `Y | A, Φ` on a heteroscedastic toy
//! problem and compares its quantiles with the truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use ricb::autograd::Tensor;
use ricb::density::{train_cnf, FlowConfig, FlowData, FlowTrainConfig, NoiseRegConfig};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

fn main() -> ricb::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 4000;
    let (mut y, mut a, mut phi) = (vec![], vec![], vec![]);
    for i in 0..n {
        let p: f64 = rng.random_range(-1.0..1.0);
        let t = (i % 2) as f64;
        let sd = 0.5 + 0.4 * (p + 1.0);
        y.push(2.0 * t + p + Normal::new(0.0, sd).unwrap().sample(&mut rng));
        a.push(t);
        phi.push(p);
    }
    let data = FlowData::new(y, a, Tensor::column(&phi))?;
    let train = FlowTrainConfig {
        learning_rate: 0.01,
        batch_size: 64,
        iterations: 4000,
        noise: NoiseRegConfig { outcome_std: 0.05, representation_std: 0.05 },
        seed: 3,
    };
    let z = StdNormal::new(0.0, 1.0).unwrap();
    let flow = train_cnf(FlowConfig::new(1, 16, 10, 3), &data, &train)?;
    println!("training NLL {:.3}", flow.nll(&data)?);
    for (t, p) in [(0.0, -0.8), (1.0, 0.0), (1.0, 0.8)] {
        let s = flow.sample(t, &[p], 20_000, 9)?;
        let sd = 0.5 + 0.4 * (p + 1.0);
        println!("a = {t}, phi = {p:+.1}:");
        for q in [0.1, 0.5, 0.9] {
            let est = s[(q * s.len() as f64) as usize];
            let truth = 2.0 * t + p + sd * z.inverse_cdf(q);
            println!("  q{:<3} flow {est:+.3}   true {truth:+.3}", (q * 100.0) as u32);
        }
        println!("  log p(mean) = {:.3}", flow.log_density(2.0 * t + p, t, &[p])?);
    }
    Ok(())
}
