use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ricb::bounds::CateBounds;
use ricb::evaluation::{
    bounds_policy, curve_trend, delta_er, independent_noise_differences, point_policy, rpehe, rpehe_scaled,
    score_policy, spearman, write_boundary_grid_csv, write_points_csv, CurvePoint, Decision, Lattice,
};

fn interval(lower: f64, upper: f64, point: f64) -> CateBounds {
    CateBounds {
        lower,
        upper,
        point,
        gamma: 2.0,
        pi1_phi: 0.4,
        k: 100,
    }
}

fn collapsed(v: f64) -> CateBounds {
    CateBounds {
        gamma: 1.0,
        ..interval(v, v, v)
    }
}

#[test]
fn hand_counted_rates() {
    // 10 points, 2 deferred, 2 of the remaining 8 wrong
    let tau = [1.0, -1.0, 0.5, -0.5, 2.0, -2.0, 0.1, -0.1, 3.0, -3.0];
    let b = [
        interval(-1.0, 1.0, 0.0),
        interval(-1.0, 1.0, 0.0),
        interval(0.1, 0.9, 0.5),
        interval(-0.9, -0.1, -0.5),
        interval(1.0, 3.0, 2.0),
        interval(0.5, 1.0, 0.7),
        interval(-1.0, -0.5, -0.7),
        interval(-0.2, -0.05, -0.1),
        interval(2.0, 4.0, 3.0),
        interval(-4.0, -2.0, -3.0),
    ];
    let d = bounds_policy(&b).unwrap();
    let r = score_policy(&d, &tau).unwrap();
    assert_eq!(r.error_rate, Some(0.25));
    assert_eq!(r.deferral_rate, 0.2);
    assert_eq!((r.n_decided, r.n_total), (8, 10));

    let p = score_policy(&point_policy(&b.iter().map(|c| c.point).collect::<Vec<_>>()), &tau).unwrap();
    assert_eq!(p.deferral_rate, 0.0);
    // points 0 and 1 have τ̂ = 0 → no treatment, wrong for point 0; 5 and 6 wrong
    assert_eq!(p.error_rate, Some(0.3));
    assert!((delta_er(&r, &p).unwrap() + 0.05).abs() < 1e-15);
}

#[test]
fn unit_gamma_bounds_reproduce_point_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tau_hat: Vec<f64> = independent_noise_differences(&vec![0.0; 500], 1.0, 2);
    let b: Vec<CateBounds> = tau_hat.iter().map(|&t| collapsed(t)).collect();
    assert_eq!(bounds_policy(&b).unwrap(), point_policy(&tau_hat));
    let mut tau = tau_hat.clone();
    tau.shuffle(&mut rng);
    assert_eq!(
        score_policy(&bounds_policy(&b).unwrap(), &tau).unwrap(),
        score_policy(&point_policy(&tau_hat), &tau).unwrap()
    );
}

proptest! {
    #[test]
    fn rates_are_permutation_invariant(
        rows in prop::collection::vec((-2f64..2.0, 0f64..1.0, -2f64..2.0), 1..80),
        seed in 0u64..1000,
    ) {
        let b: Vec<CateBounds> = rows.iter().map(|&(lo, w, _)| interval(lo, lo + w, lo + 0.5 * w)).collect();
        let tau: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let r = score_policy(&bounds_policy(&b).unwrap(), &tau).unwrap();
        let mut idx: Vec<usize> = (0..b.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let pb: Vec<CateBounds> = idx.iter().map(|&i| b[i]).collect();
        let pt: Vec<f64> = idx.iter().map(|&i| tau[i]).collect();
        let q = score_policy(&bounds_policy(&pb).unwrap(), &pt).unwrap();
        prop_assert_eq!(r, q);
        prop_assert!((0.0..=1.0).contains(&r.deferral_rate));
        if let Some(e) = r.error_rate {
            prop_assert!((0.0..=1.0).contains(&e));
        }
    }

    #[test]
    fn rpehe_matches_explicit_loop(
        pairs in prop::collection::vec((-10f64..10.0, -10f64..10.0), 1..200),
        scale in 0.1f64..5.0,
    ) {
        let (t, d): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let mut acc = 0.0;
        for i in 0..t.len() {
            acc += (t[i] - d[i]) * (t[i] - d[i]);
        }
        let expect = (acc / t.len() as f64).sqrt();
        prop_assert!((rpehe(&t, &d).unwrap() - expect).abs() <= 1e-12 * expect.max(1.0));
        prop_assert!((rpehe_scaled(&t, &d, scale).unwrap() - expect / scale).abs() <= 1e-12 * expect.max(1.0));
    }
}

#[test]
fn noisy_differences_have_the_right_spread() {
    let tau = vec![1.0; 200_000];
    let d = independent_noise_differences(&tau, 1.0, 3);
    let r = rpehe(&tau, &d).unwrap();
    assert!((r - 2f64.sqrt()).abs() < 0.01, "{r}");
    assert_eq!(d, independent_noise_differences(&tau, 1.0, 3));
}

#[test]
fn spearman_against_pearson_on_ranks() {
    let x = [0.3, 0.1, 0.9, 0.5, 0.7];
    let y = [1.0, 3.0, 2.0, 5.0, 4.0];
    // ranks: x → [2,1,5,3,4], y → [1,3,2,5,4]; Σd² = 1+4+9+4+0 = 18
    let expect = 1.0 - 6.0 * 18.0 / (5.0 * 24.0);
    assert!((spearman(&x, &y).unwrap() - expect).abs() < 1e-12);
    let curve: Vec<CurvePoint> = [(0.1, Some(0.3), 0.1), (0.2, Some(0.2), 0.3), (0.3, None, 1.0), (0.4, Some(0.1), 0.6)]
        .iter()
        .map(|&(delta, error_rate, deferral_rate)| CurvePoint { delta, error_rate, deferral_rate })
        .collect();
    assert_eq!(curve_trend(&curve), Some(-1.0));
}

#[test]
fn points_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let b = vec![interval(-1.0, 1.0, 0.2), interval(0.5, 1.5, 1.0)];
    let d = bounds_policy(&b).unwrap();
    let p = dir.path().join("points.csv");
    write_points_csv(&p, &b, &d, Some(&[0.1, 0.9])).unwrap();
    let mut r = csv::Reader::from_path(&p).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["id", "point", "lower", "upper", "gamma", "pi_phi", "decision", "tau_oracle"]
    );
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(&rows[0][6], "defer");
    assert_eq!(&rows[1][6], "treat");
    assert_eq!(rows[1][2].parse::<f64>().unwrap(), 0.5);
    assert!(write_points_csv(&p, &b, &d[..1], None).is_err());
}

#[test]
fn boundary_grid_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let lattice = Lattice { x1: (-1.0, 1.0), x2: (-1.0, 1.0), steps: 4 };
    let pts = lattice.points();
    let tau: Vec<f64> = pts.iter().map(|p| p[0] + p[1]).collect();
    let b: Vec<CateBounds> = tau.iter().map(|&t| interval(t - 0.5, t + 0.5, t)).collect();
    let p = dir.path().join("grid.csv");
    write_boundary_grid_csv(&p, &pts, &tau, &b).unwrap();
    let mut r = csv::Reader::from_path(&p).unwrap();
    assert_eq!(r.headers().unwrap().len(), 8);
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 16);
    for row in &rows {
        let t: f64 = row[2].parse().unwrap();
        let expect = if t > 0.5 {
            Decision::Treat
        } else if t < -0.5 {
            Decision::NoTreat
        } else {
            Decision::Defer
        };
        assert_eq!(&row[7], expect.as_str());
    }
}
