//! Dataset generators and loaders: the synthetic benchmark, HC-MNIST from
//! IDX files and IHDP replicates. With `RICB_DATA_DIR` unset, the MNIST part
//! runs on a tiny generated IDX set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ricb::datasets::{
    build_hcmnist, gen_synthetic_split, load_ihdp_csv, read_idx_images, read_idx_labels, write_idx_images,
    write_idx_labels, HcMnistConfig, IdxImages, Split,
};
use ricb::runner::DATA_DIR_ENV;

fn main() -> ricb::Result<()> {
    let (train, test) = gen_synthetic_split(1000, 1000, 0);
    println!(
        "synthetic: {} train / {} test, treated share {:.3}, mean CATE {:.3}",
        train.len(),
        test.len(),
        train.treated_fraction(),
        test.oracle_cate().unwrap().iter().sum::<f64>() / test.len() as f64
    );
    let out = std::env::temp_dir().join("ricb_synthetic_train.csv");
    train.write_csv(&out)?;
    println!("  written to {}", out.display());

    let dir = match std::env::var_os(DATA_DIR_ENV) {
        Some(d) => d.into(),
        None => {
            let d = std::env::temp_dir().join("ricb_fake_mnist");
            std::fs::create_dir_all(&d)?;
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for (name, n) in [("train", 2000), ("t10k", 500)] {
                let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
                let pixels = labels
                    .iter()
                    .flat_map(|&c| (0..784).map(|_| if rng.random::<f64>() < 0.1 + 0.02 * c as f64 { 200 } else { 0 }).collect::<Vec<u8>>())
                    .collect();
                write_idx_images(&d.join(format!("{name}-images-idx3-ubyte")), &IdxImages { n, rows: 28, cols: 28, pixels })?;
                write_idx_labels(&d.join(format!("{name}-labels-idx1-ubyte")), &labels)?;
            }
            d
        }
    };
    let images = read_idx_images(&dir.join("train-images-idx3-ubyte"))?;
    let labels = read_idx_labels(&dir.join("train-labels-idx1-ubyte"))?;
    let cfg = HcMnistConfig::from_images(&images, &labels)?;
    let hc = build_hcmnist(&images, &labels, &cfg, 0, Split::Train)?;
    println!("HC-MNIST: {} images, d_x = {}, treated share {:.3}", hc.len(), hc.d_x(), hc.treated_fraction());

    match load_ihdp_csv(&dir, 1) {
        Ok((tr, te)) => println!("IHDP replicate 1: {} train / {} test, d_x = {}", tr.len(), te.len(), tr.d_x()),
        Err(e) => println!("IHDP not loaded: {e}"),
    }
    Ok(())
}
