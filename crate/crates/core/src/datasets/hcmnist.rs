use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, IdxImages, Split};
use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const HCMNIST_CLIP: f64 = 1.4;

/// Per-digit intensity statistics and the confounding strength `Γ*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HcMnistConfig {
    pub gamma_star: f64,
    pub class_mean: [f64; 10],
    pub class_std: [f64; 10],
}

impl HcMnistConfig {
    /// Statistics of average image intensity per label, `Γ* = e`.
    pub fn from_images(images: &IdxImages, labels: &[u8]) -> Result<Self> {
        if images.n != labels.len() {
            return Err(Error::data(format!("{} images vs {} labels", images.n, labels.len())));
        }
        let mut sum = [0.0; 10];
        let mut sq = [0.0; 10];
        let mut count = [0usize; 10];
        for (i, &c) in labels.iter().enumerate() {
            let m = images.mean_intensity(i);
            let c = c as usize;
            sum[c] += m;
            sq[c] += m * m;
            count[c] += 1;
        }
        let mut class_mean = [0.0; 10];
        let mut class_std = [0.0; 10];
        for c in 0..10 {
            if count[c] == 0 {
                return Err(Error::data(format!("digit class {c} has no images")));
            }
            let n = count[c] as f64;
            class_mean[c] = sum[c] / n;
            let var = (sq[c] / n - class_mean[c] * class_mean[c]).max(0.0);
            class_std[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Ok(HcMnistConfig {
            gamma_star: std::f64::consts::E,
            class_mean,
            class_std,
        })
    }

    pub fn class_range(c: usize) -> (f64, f64) {
        (-2.0 + 0.4 * c as f64, -2.0 + 0.4 * (c as f64 + 1.0))
    }

    /// One-dimensional summary: the clipped intensity z-score mapped
    /// affinely from `[-1.4, 1.4]` onto the digit's interval.
    pub fn phi(&self, mean_intensity: f64, label: usize) -> f64 {
        let z = (mean_intensity - self.class_mean[label]) / self.class_std[label];
        let (lo, hi) = Self::class_range(label);
        let clipped = z.clamp(-HCMNIST_CLIP, HCMNIST_CLIP);
        lo + (clipped + HCMNIST_CLIP) * (hi - lo) / (2.0 * HCMNIST_CLIP)
    }

    /// `P(A = 1 | φ, u)`.
    pub fn treatment_probability(&self, phi: f64, u: f64) -> f64 {
        let s = 1.0 / (1.0 + (-(0.75 * phi + 0.5)).exp());
        let g = self.gamma_star;
        let alpha = 1.0 / (g * s) + 1.0 - 1.0 / g;
        let beta = g / s + 1.0 - g;
        u / alpha + (1.0 - u) / beta
    }

    pub fn outcome_mean(a: f64, phi: f64, u: f64) -> f64 {
        let s = 2.0 * a - 1.0;
        s * phi + s - 2.0 * (2.0 * s * phi).sin() - 2.0 * (2.0 * u - 1.0) * (1.0 + 0.5 * phi)
    }

    pub fn cate(phi: f64) -> f64 {
        2.0 * phi + 2.0 - 4.0 * (2.0 * phi).sin()
    }
}

/// `φ` for every image.
pub fn hcmnist_phi(images: &IdxImages, labels: &[u8], config: &HcMnistConfig) -> Vec<f64> {
    (0..images.n)
        .map(|i| config.phi(images.mean_intensity(i), labels[i] as usize))
        .collect()
}

/// Semi-synthetic dataset with covariates `[pixels / 255, u]`, confounded
/// treatment and Gaussian outcomes whose noise is shared across arms.
pub fn build_hcmnist(
    images: &IdxImages,
    labels: &[u8],
    config: &HcMnistConfig,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    if images.n != labels.len() {
        return Err(Error::data(format!("{} images vs {} labels", images.n, labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if split == Split::Test {
        rng.set_stream(1);
    }
    let n = images.n;
    let d = images.pixels_per_image() + 1;
    let mut x = Vec::with_capacity(n * d);
    let (mut a, mut y, mut y0, mut y1, mut tau) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for (i, phi) in hcmnist_phi(images, labels, config).into_iter().enumerate() {
        let u = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        let p = config.treatment_probability(phi, u);
        let t = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        let eps: f64 = StandardNormal.sample(&mut rng);
        let o0 = HcMnistConfig::outcome_mean(0.0, phi, u) + eps;
        let o1 = HcMnistConfig::outcome_mean(1.0, phi, u) + eps;
        x.extend(images.image_f64(i));
        x.push(u);
        a.push(t);
        y.push(if t == 1.0 { o1 } else { o0 });
        y0.push(o0);
        y1.push(o1);
        tau.push(HcMnistConfig::cate(phi));
    }
    Ok(Dataset {
        x: Tensor::from_rows(n, d, x)?,
        a,
        y,
        y0: Some(y0),
        y1: Some(y1),
        tau: Some(tau),
        split,
    })
}
