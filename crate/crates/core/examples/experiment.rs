//! Run a reduced loss grid end to end and write results, tables and plots.
//!
//! cargo run --release --example experiment -- [out_dir]

use fnlab::censor::CensorMode;
use fnlab::losses::LossSpec;
use fnlab::runner::{self, ExperimentConfig, RunOptions, SplitSizes};

fn main() -> fnlab::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = ExperimentConfig::desk_scale();
    cfg.name = "example".into();
    cfg.phantom.dims = [32, 32, 16];
    cfg.split = SplitSizes { train: 8, validation: 2, test: 4 };
    cfg.censor.mode = CensorMode::Stochastic;
    cfg.censor.p = 0.5;
    cfg.grid = vec![LossSpec::ce(), LossSpec::class_weighted(3.0), LossSpec::lopsided(3.0, 0.1)];
    cfg.train.epochs = 3;
    cfg.out_dir = std::env::args().nth(1).unwrap_or_else(|| "fnlab_example".into()).into();

    let results = runner::run_experiment(&cfg, RunOptions { force: false, threads: 1 })?;
    for r in &results {
        let s = &r.evaluation.summary;
        println!(
            "{:<24} mAP {:.3}  max_sens {:.3}  H(lesion) {:.2}",
            r.loss_label, s.map, s.max_sensitivity, r.evaluation.entropy.lesion_h
        );
    }
    println!("outputs in {}", cfg.out_dir.display());
    Ok(())
}
