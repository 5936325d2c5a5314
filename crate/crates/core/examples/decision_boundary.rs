//! One seed of the full pipeline, then the decision-boundary export: CATE
//! intervals over a covariate lattice with both policies' decisions.

use ricb::autograd::Tensor;
use ricb::bounds::cate_bounds;
use ricb::datasets::synthetic_cate;
use ricb::evaluation::{write_boundary_grid_csv, Lattice};
use ricb::runner::{estimator_preset, run_seed, ExperimentConfig};

fn main() -> ricb::Result<()> {
    let mut config = ExperimentConfig::synthetic(estimator_preset("tarnet")?, 1, 1000);
    config.seeds = vec![0];
    let run = run_seed(&config, 0)?;
    let r = &run.record;
    println!("point policy ER {:.3}", r.point.error_rate.unwrap_or(f64::NAN));
    for d in &r.deltas {
        println!(
            "δ = {:<6}  bounds ER {:.3}  DR {:.3}  mean width {:.3}",
            d.delta,
            d.bounds.error_rate.unwrap_or(f64::NAN),
            d.bounds.deferral_rate,
            d.mean_width
        );
    }

    let points = Lattice { x1: (-3.0, 3.0), x2: (-3.0, 3.0), steps: 41 }.points();
    let x = Tensor::from_rows(points.len(), 2, points.iter().flatten().copied().collect())?;
    let sens = run.stage1.sensitivity.with_delta(config.deltas[0])?;
    let bounds = cate_bounds(&x, &run.model, &sens, &run.stage1.flow, 2000, 1)?;
    let tau: Vec<f64> = points.iter().map(|p| synthetic_cate(p[0], p[1])).collect();
    let out = std::env::temp_dir().join("ricb_boundary_grid.csv");
    write_boundary_grid_csv(&out, &points, &tau, &bounds)?;
    println!("{} lattice points written to {}", points.len(), out.display());
    Ok(())
}
