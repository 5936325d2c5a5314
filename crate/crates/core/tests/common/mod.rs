#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ricb::datasets::{ihdp_file_name, write_idx_images, write_idx_labels, IdxImages, Split};

/// Digit-like 28×28 images whose ink density varies by label and by image.
pub fn fake_mnist(n: usize, seed: u64) -> (IdxImages, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = (i % 10) as u8;
        let ink = 0.08 + 0.02 * c as f64 + rng.random_range(0.0..0.1);
        for _ in 0..784 {
            pixels.push(if rng.random::<f64>() < ink { rng.random_range(128..=255) } else { 0 });
        }
        labels.push(c);
    }
    (IdxImages { n, rows: 28, cols: 28, pixels }, labels)
}

/// Writes the four MNIST IDX files under their standard names.
pub fn write_fake_mnist(dir: &Path, n_train: usize, n_test: usize) {
    let (ti, tl) = fake_mnist(n_train, 1);
    let (vi, vl) = fake_mnist(n_test, 2);
    write_idx_images(&dir.join("train-images-idx3-ubyte"), &ti).unwrap();
    write_idx_labels(&dir.join("train-labels-idx1-ubyte"), &tl).unwrap();
    write_idx_images(&dir.join("t10k-images-idx3-ubyte"), &vi).unwrap();
    write_idx_labels(&dir.join("t10k-labels-idx1-ubyte"), &vl).unwrap();
}

/// One IHDP-format replicate with `rows` rows per split.
pub fn write_fake_ihdp(dir: &Path, replicate: usize, rows: (usize, usize), with_mu: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(replicate as u64);
    for (split, n) in [(Split::Train, rows.0), (Split::Test, rows.1)] {
        let mut w = csv::Writer::from_path(dir.join(ihdp_file_name(replicate, split))).unwrap();
        let mut header: Vec<String> = (1..=25).map(|j| format!("x{j}")).collect();
        header.extend(["a", "y"].map(String::from));
        if with_mu {
            header.extend(["mu0", "mu1"].map(String::from));
        }
        w.write_record(&header).unwrap();
        for _ in 0..n {
            let x: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 };
            let mu0 = x[0] + 0.5 * x[1];
            let mu1 = mu0 + 4.0 + x[2];
            let y = if a == 1.0 { mu1 } else { mu0 } + rng.random_range(-1.0..1.0);
            let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            rec.push(a.to_string());
            rec.push(y.to_string());
            if with_mu {
                rec.push(mu0.to_string());
                rec.push(mu1.to_string());
            }
            w.write_record(&rec).unwrap();
        }
        w.flush().unwrap();
    }
}
