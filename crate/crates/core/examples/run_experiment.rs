//! Full pipeline on synthetic data: `cargo run --example run_experiment -- tarnet 1 0,1,2`.

use ricb::runner::{estimator_preset, run_experiment, write_text_table, ExperimentConfig};

fn main() -> ricb::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let method = args.get(1).map_or("tarnet", String::as_str);
    let d_phi: usize = args.get(2).map_or(Ok(1), |s| s.parse()).expect("d_phi");
    let seeds: Vec<u64> = args
        .get(3)
        .map_or("0,1,2".to_string(), Clone::clone)
        .split(',')
        .map(|s| s.parse().expect("seed"))
        .collect();
    let mut config = ExperimentConfig::synthetic(estimator_preset(method)?, d_phi, 1000);
    config.seeds = seeds;
    let exp = run_experiment(&config)?;
    for r in &exp.records {
        let d = &r.deltas[0];
        println!(
            "seed {}: point ER {:?}  bounds ER {:?}  DR {:.3}  dER {:?}  width {:.3}  gamma {:.3}  rPEHE out {:.3} (oracle scale {:.3})",
            r.seed, r.point.error_rate, d.bounds.error_rate, d.bounds.deferral_rate, d.delta_er, d.mean_width, d.mean_gamma,
            r.rpehe_out, r.rpehe_out_oracle
        );
    }
    print!("{}", write_text_table(&exp.records));
    println!("config hash {}", exp.config_hash);
    Ok(())
}
