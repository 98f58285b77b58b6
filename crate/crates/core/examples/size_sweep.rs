//! Repeat one loss over growing training subsets, with and without censoring.

use fnlab::censor::CensorMode;
use fnlab::losses::LossSpec;
use fnlab::runner::{self, ExperimentConfig, RunOptions, SplitSizes};

fn main() -> fnlab::Result<()> {
    let mut cfg = ExperimentConfig::desk_scale();
    cfg.name = "sweep".into();
    cfg.phantom.dims = [32, 32, 16];
    cfg.split = SplitSizes { train: 8, validation: 2, test: 4 };
    cfg.censor.mode = CensorMode::SizeBased;
    cfg.censor.p = 0.5;
    cfg.grid = vec![LossSpec::lopsided(3.0, 0.1)];
    cfg.train.epochs = 2;
    let dir = tempfile_dir();
    cfg.out_dir = dir.clone();

    let results = runner::run_size_sweep(&cfg, &[2, 4, 8], RunOptions { force: true, threads: 1 })?;
    println!("{:>7} {:<11} {:>6} {:>9}", "n_train", "censoring", "mAP", "max_sens");
    for r in &results {
        println!(
            "{:>7} {:<11} {:>6.3} {:>9.3}",
            r.n_train_cases,
            runner::mode_slug(r.censor.mode),
            r.evaluation.summary.map,
            r.evaluation.summary.max_sensitivity
        );
    }
    std::fs::remove_dir_all(&dir).map_err(|e| fnlab::Error::io(&dir, e))?;
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    std::env::temp_dir().join(format!("fnlab_sweep_{}", std::process::id()))
}
