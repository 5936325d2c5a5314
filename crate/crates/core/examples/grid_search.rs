//! Cross-validated random search over the propensity-network grid.

use ricb::datasets::gen_synthetic;
use ricb::runner::{grid_search_cv, propensity_grid, sample_grid};
use ricb::sensitivity::train_propensity;
use ricb::training::TrainRun;

fn main() -> ricb::Result<()> {
    let data = gen_synthetic(600, 0);
    let candidates = sample_grid(&propensity_grid(), 8, 0);
    let result = grid_search_cv(&candidates, &data.a, 5, 0, |h, tr, va| {
        let (train, val) = (data.select(tr), data.select(va));
        let hidden = (2.0 * h.multiplier).round() as usize;
        let run = TrainRun::new(h.learning_rate, h.batch_size, h.weight_decay, 1000, 0);
        train_propensity(&train.x, &train.a, hidden, &run)?.bce(&val.x, &val.a)
    })?;
    for (c, s) in result.candidates.iter().zip(&result.scores) {
        println!(
            "lr {:<6} batch {:<4} wd {:<6} width x{:<4} -> validation BCE {s:.4}",
            c.learning_rate, c.batch_size, c.weight_decay, c.multiplier
        );
    }
    println!("selected {:?} (BCE {:.4})", result.best, result.best_score);
    Ok(())
}
