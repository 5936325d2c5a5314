use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use ricb::autograd::Tensor;
use ricb::density::{
    rq_spline_transform, train_cnf, ConditionalFlow, Direction, FlowConfig, FlowData, FlowTrainConfig,
    NoiseRegConfig, SplineParams,
};
use statrs::distribution::{ContinuousCDF, Normal as StNormal};

const NORMAL_ENTROPY: f64 = 1.418_938_533_204_672_7;

fn random_spline(seed: u64, k: usize) -> SplineParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new(-2.0, 2.0).unwrap();
    let raw: Vec<f64> = (0..3 * k - 1).map(|_| u.sample(&mut rng)).collect();
    SplineParams::from_raw(&raw, k, 5.0).unwrap()
}

#[test]
fn inverse_recovers_input() {
    for seed in 0..20 {
        let p = random_spline(seed, [5, 10, 20][seed as usize % 3]);
        for i in 0..400 {
            let y = -7.0 + 14.0 * i as f64 / 399.0;
            let (z, ld) = rq_spline_transform(y, &p, Direction::Forward).unwrap();
            let (back, ld_inv) = rq_spline_transform(z, &p, Direction::Inverse).unwrap();
            assert!((back - y).abs() < 1e-8, "seed {seed}: {y} -> {z} -> {back}");
            assert!((ld + ld_inv).abs() < 1e-8);
        }
    }
}

#[test]
fn logdet_matches_numerical_derivative() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let u = Uniform::new(-4.9, 4.9).unwrap();
    let p = random_spline(3, 10);
    let h = 1e-6;
    for _ in 0..100 {
        let y = u.sample(&mut rng);
        let (_, ld) = p.forward(y);
        let numeric = (p.forward(y + h).0 - p.forward(y - h).0) / (2.0 * h);
        let analytic = ld.exp();
        assert!(
            (analytic - numeric).abs() / analytic < 1e-4,
            "y = {y}: {analytic} vs {numeric}"
        );
    }
}

#[test]
fn transform_is_strictly_increasing() {
    for seed in 0..10 {
        let p = random_spline(100 + seed, 20);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..1000 {
            let y = -6.0 + 12.0 * i as f64 / 999.0;
            let z = p.forward(y).0;
            assert!(z > prev);
            prev = z;
        }
    }
}

#[test]
fn identity_flow_nll_is_gaussian() {
    let flow = ConditionalFlow::new(FlowConfig::new(1, 4, 10, 0)).unwrap();
    let y = vec![-1.5, 0.0, 0.3, 2.0];
    let expected = y.iter().map(|v| 0.5 * v * v + 0.5 * (2.0 * std::f64::consts::PI).ln()).sum::<f64>() / 4.0;
    let data = FlowData::new(y, vec![0.0, 1.0, 1.0, 0.0], Tensor::column(&[0.1, -0.2, 0.5, 0.0])).unwrap();
    assert!((flow.nll(&data).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn identity_flow_samples_pass_ks() {
    let flow = ConditionalFlow::new(FlowConfig::new(1, 4, 10, 0)).unwrap();
    let s = flow.sample(1.0, &[0.0], 10_000, 5).unwrap();
    let n = StNormal::new(0.0, 1.0).unwrap();
    let k = s.len() as f64;
    let ks = s
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = n.cdf(v);
            (f - i as f64 / k).abs().max(((i + 1) as f64 / k - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.02, "KS = {ks}");
}

fn gaussian_data(n: usize, mean: f64, seed: u64) -> FlowData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(mean, 1.0).unwrap();
    let y: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
    FlowData::new(y, vec![0.0; n], Tensor::zeros(n, 0)).unwrap()
}

fn train_config(seed: u64, iterations: usize, noise: NoiseRegConfig) -> FlowTrainConfig {
    FlowTrainConfig {
        learning_rate: 0.005,
        batch_size: 64,
        iterations,
        noise,
        seed,
    }
}

#[test]
fn context_free_flow_reaches_entropy() {
    let data = gaussian_data(10_000, 2.0, 1);
    let flow = train_cnf(FlowConfig::new(0, 4, 10, 1), &data, &train_config(1, 2000, NoiseRegConfig::none())).unwrap();
    let nll = flow.nll(&data).unwrap();
    assert!((nll - NORMAL_ENTROPY).abs() < 0.05, "nll = {nll}");
}

#[test]
fn conditional_gaussian_heldout_nll() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let u = Uniform::new(-2.0, 2.0).unwrap();
    let eps = Normal::new(0.0, 1.0).unwrap();
    let make = |n: usize, rng: &mut ChaCha8Rng| {
        let mut y = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut phi = Vec::with_capacity(n);
        for i in 0..n {
            let p: f64 = u.sample(rng);
            let t = (i % 2) as f64;
            let s = 2.0 * t - 1.0;
            y.push(s * p + s - 2.0 * (2.0 * s * p).sin() + eps.sample(rng));
            a.push(t);
            phi.push(p);
        }
        FlowData::new(y, a, Tensor::column(&phi)).unwrap()
    };
    let train = make(4000, &mut rng);
    let test = make(2000, &mut rng);
    let flow = train_cnf(
        FlowConfig::new(1, 16, 10, 2),
        &train,
        &FlowTrainConfig {
            learning_rate: 0.01,
            ..train_config(2, 5000, NoiseRegConfig { outcome_std: 0.05, representation_std: 0.05 })
        },
    )
    .unwrap();
    let nll = flow.nll(&test).unwrap();
    assert!((nll - NORMAL_ENTROPY).abs() < 0.1, "held-out nll = {nll}");
}

#[test]
fn training_is_deterministic_and_noise_only_affects_training() {
    let data = gaussian_data(500, 0.5, 3);
    let cfg = FlowConfig::new(0, 4, 5, 3);
    let a = train_cnf(cfg, &data, &train_config(3, 200, NoiseRegConfig::none())).unwrap();
    let b = train_cnf(cfg, &data, &train_config(3, 200, NoiseRegConfig::none())).unwrap();
    assert_eq!(a.nll_trace, b.nll_trace);
    let noisy = NoiseRegConfig {
        outcome_std: 0.5,
        representation_std: 0.5,
    };
    let c = train_cnf(cfg, &data, &train_config(3, 200, noisy)).unwrap();
    assert_ne!(a.nll_trace, c.nll_trace);
    let clean = ricb::density::cnf_nll(&c, &data, noisy, false, 0).unwrap();
    assert_eq!(clean, c.nll(&data).unwrap());
}

#[test]
fn density_integrates_to_one() {
    let data = gaussian_data(2000, -1.0, 4);
    let flow = train_cnf(FlowConfig::new(0, 4, 10, 4), &data, &train_config(4, 500, NoiseRegConfig::none())).unwrap();
    let (lo, hi, n) = (-20.0, 20.0, 40_000);
    let h = (hi - lo) / n as f64;
    let mass: f64 = (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * flow.log_density(lo + h * i as f64, 0.0, &[]).unwrap().exp()
        })
        .sum::<f64>()
        * h;
    assert!((mass - 1.0).abs() < 0.01, "mass = {mass}");
}

#[test]
fn sample_mean_matches_numeric_mean() {
    let data = gaussian_data(2000, 1.0, 6);
    let flow = train_cnf(FlowConfig::new(0, 4, 10, 6), &data, &train_config(6, 500, NoiseRegConfig::none())).unwrap();
    let (lo, hi, n) = (-20.0, 20.0, 40_000);
    let h = (hi - lo) / n as f64;
    let grid: Vec<(f64, f64)> = (0..=n)
        .map(|i| {
            let y = lo + h * i as f64;
            (y, flow.log_density(y, 0.0, &[]).unwrap().exp())
        })
        .collect();
    let mean: f64 = grid.iter().map(|(y, p)| y * p * h).sum();
    let second: f64 = grid.iter().map(|(y, p)| y * y * p * h).sum();
    let sd = (second - mean * mean).sqrt();
    let k = 20_000;
    let s = flow.sample(0.0, &[], k, 1).unwrap();
    let sm = s.iter().sum::<f64>() / k as f64;
    assert!((sm - mean).abs() < 3.0 * sd / (k as f64).sqrt(), "{sm} vs {mean}");
}
