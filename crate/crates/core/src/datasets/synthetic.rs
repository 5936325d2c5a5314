use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Split};
use crate::autograd::Tensor;

fn outcome(a: f64, x1: f64, x2: f64) -> f64 {
    let s = 2.0 * a - 1.0;
    s * x1 + a - 2.0 * (2.0 * s * x1 + x2).sin() - 2.0 * x2 * (1.0 + 0.5 * x1)
}

/// Noiseless treatment effect of the synthetic mechanism.
pub fn synthetic_cate(x1: f64, x2: f64) -> f64 {
    2.0 * x1 + 1.0 - 2.0 * (2.0 * x1 + x2).sin() + 2.0 * (-2.0 * x1 + x2).sin()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn draw(n: usize, rng: &mut ChaCha8Rng, split: Split) -> Dataset {
    let mut x = Vec::with_capacity(2 * n);
    let (mut a, mut y, mut y0, mut y1, mut tau) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for _ in 0..n {
        let x1: f64 = rng.random_range(-2.0..2.0);
        let x2: f64 = StandardNormal.sample(rng);
        let p = sigmoid(0.75 * x1 - x2 + 0.5);
        let t = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        let eps: f64 = StandardNormal.sample(rng);
        let o0 = outcome(0.0, x1, x2) + eps;
        let o1 = outcome(1.0, x1, x2) + eps;
        x.push(x1);
        x.push(x2);
        a.push(t);
        y.push(if t == 1.0 { o1 } else { o0 });
        y0.push(o0);
        y1.push(o1);
        tau.push(synthetic_cate(x1, x2));
    }
    Dataset {
        x: Tensor::from_rows(n, 2, x).expect("shape"),
        a,
        y,
        y0: Some(y0),
        y1: Some(y1),
        tau: Some(tau),
        split,
    }
}

/// Two covariates, a confounded binary treatment and an outcome whose noise
/// is shared by both potential outcomes.
pub fn gen_synthetic(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw(n, &mut rng, Split::Train)
}

/// Train and test draws from disjoint streams of the same seed.
pub fn gen_synthetic_split(n_train: usize, n_test: usize, seed: u64) -> (Dataset, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = draw(n_train, &mut rng, Split::Train);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let test = draw(n_test, &mut rng, Split::Test);
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cate_at_origin_is_one() {
        assert_eq!(synthetic_cate(0.0, 0.0), 1.0);
    }

    #[test]
    fn consistency_and_range() {
        let d = gen_synthetic(500, 3);
        assert_eq!(d.consistency_error(), Some(0.0));
        assert!((0..d.len()).all(|i| (-2.0..=2.0).contains(&d.x.get(i, 0))));
        assert_eq!(d, gen_synthetic(500, 3));
    }
}
