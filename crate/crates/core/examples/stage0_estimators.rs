//! Trains every Stage 0 estimator on the synthetic benchmark and reports
//! out-of-sample rPEHE against the noiseless CATE.

use ricb::datasets::gen_synthetic_split;
use ricb::estimators::{build_stage0, predict_point_cate, train_stage0, validation_criterion, HiddenUnits, Stage0Train};
use ricb::evaluation::rpehe;
use ricb::runner::estimator_preset;
use ricb::training::TrainRun;

fn main() -> ricb::Result<()> {
    let d_phi: usize = std::env::args().nth(1).map_or(2, |s| s.parse().expect("d_phi"));
    let (train, test) = gen_synthetic_split(1000, 1000, 0);
    let tau = test.oracle_cate().unwrap();
    let hidden = HiddenUnits::from_multipliers(2.0, 2, d_phi, 2.0, 2.0, 2.0);
    for name in ["tarnet", "bnn", "cfr:mmd:1.0", "cfr:wm:1.0", "invtarnet", "rcfr:wm:1.0", "cfr-isw:wm:1.0", "bwcfr:wm:1.0"] {
        let spec = estimator_preset(name)?;
        let model = build_stage0(spec, 2, d_phi, hidden, 0)?;
        let model = train_stage0(model, &train, &Stage0Train::new(TrainRun::new(0.01, 64, 0.0, 3000, 0)))?;
        let tau_hat = predict_point_cate(&model, &test.x)?;
        println!(
            "{:<22} factual MSE {:.3}   rPEHE_out {:.3}",
            spec.label(),
            validation_criterion(&model, &test)?,
            rpehe(&tau_hat, &tau)?
        );
    }
    Ok(())
}
