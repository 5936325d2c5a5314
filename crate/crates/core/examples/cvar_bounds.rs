//! Sharp outcome bounds under the marginal sensitivity model from a sorted
//! Monte-Carlo sample, across Γ and treatment propensities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ricb::bounds::{cate_bounds_from_samples, cvar_mu_bounds, shift_coefficients};

fn main() -> ricb::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut y0: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    y0.sort_by(f64::total_cmp);
    let y1: Vec<f64> = y0.iter().map(|v| v + 0.3).collect();

    let c = shift_coefficients(2.0, 0.5)?;
    println!("Γ = 2, π = 0.5: s- = {:.4}, s+ = {:.4}, c- = {:.4}, c+ = {:.4}", c.s_minus, c.s_plus, c.c_minus, c.c_plus);
    let (lo, hi) = cvar_mu_bounds(&y0, &c)?;
    println!("standard normal mean bounds: [{lo:.4}, {hi:.4}]\n");

    println!("{:>5} {:>5}  {:>9} {:>9}  {:>7}", "Γ", "π", "lower", "upper", "width");
    for gamma in [1.0, 1.5, 2.0, 4.0, 8.0] {
        for pi in [0.2, 0.5, 0.8] {
            let b = cate_bounds_from_samples(&y1, &y0, gamma, pi, 0.3)?;
            println!("{gamma:>5.1} {pi:>5.1}  {:>9.4} {:>9.4}  {:>7.4}", b.lower, b.upper, b.width());
        }
    }
    Ok(())
}
