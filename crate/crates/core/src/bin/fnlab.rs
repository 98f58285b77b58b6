use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fnlab::runner::{self, ExperimentConfig, ExperimentResult, RunOptions};
use fnlab::{censor, phantom, plot, Error};

#[derive(Parser)]
#[command(name = "fnlab", version, about = "Lesion segmentation under false-negative label noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON). Defaults to the desk-scale preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Recompute outputs that already exist.
    #[arg(long, global = true)]
    force: bool,

    /// Grid cells run concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write the phantom dataset.
    Generate,
    /// Write the censoring plan.
    Censor,
    /// Train every grid cell and store checkpoints.
    Train,
    /// Evaluate stored checkpoints on the test split.
    Evaluate,
    /// Train and evaluate every grid cell.
    Experiment,
    /// Repeat the experiment on subsampled training splits.
    Sweep {
        /// Training-split sizes; defaults to the config's `sweep_counts`.
        #[arg(long, value_delimiter = ',')]
        counts: Vec<usize>,
    },
    /// Render SVG plots for every result found under the output directory.
    Plot,
}

fn load_config(cli: &Cli) -> fnlab::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::desk_scale(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    let resolved = cfg.resolved();
    resolved.validate()?;
    Ok(resolved)
}

fn report(results: &[ExperimentResult]) {
    for r in results {
        let s = &r.evaluation.summary;
        println!(
            "{:<28} n_train {:>3}  mAP {:.3} ({:.3}, {:.3})  max_sens {:.3}  tp_dice {:.3}  H(lesion) {:.2}",
            r.loss_label,
            r.n_train_cases,
            s.map,
            s.map_ci95.0,
            s.map_ci95.1,
            s.max_sensitivity,
            s.tp_dice_mean,
            r.evaluation.entropy.lesion_h
        );
    }
}

fn run(cli: &Cli) -> fnlab::Result<()> {
    let cfg = load_config(cli)?;
    let opts = RunOptions {
        force: cli.force,
        threads: cli.threads,
    };
    match &cli.command {
        Command::Generate => {
            let ds = runner::build_dataset(&cfg)?;
            let dir = cfg.out_dir.join("dataset");
            phantom::write_dataset(&dir, &ds)?;
            println!("{} cases written to {}", ds.cases.len(), dir.display());
        }
        Command::Censor => {
            let ds = runner::build_dataset(&cfg)?;
            let plan = runner::build_plan(&cfg, &ds)?;
            let path = cfg.out_dir.join("censor_plan.json");
            std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
            plan.save(&path)?;
            println!(
                "removed {} of {} lesions ({:.3}) over {} cases -> {}",
                plan.removed.len(),
                plan.total_lesions,
                plan.achieved_rate,
                censor::censorable_cases(&ds).len(),
                path.display()
            );
        }
        Command::Train => {
            for r in runner::train_grid(&cfg, opts)? {
                println!("{:<28} selected epoch {}", r.loss.label(), r.selected_epoch);
            }
        }
        Command::Evaluate => report(&runner::evaluate_grid(&cfg, opts)?),
        Command::Experiment => report(&runner::run_experiment(&cfg, opts)?),
        Command::Sweep { counts } => {
            let counts = if counts.is_empty() { &cfg.sweep_counts } else { counts };
            report(&runner::run_size_sweep(&cfg, counts, opts)?);
        }
        Command::Plot => {
            let mut n = 0;
            for path in runner::find_results(&cfg.out_dir)? {
                let r = ExperimentResult::load(&path)?;
                let dir = path.parent().expect("result file has a parent");
                n += plot::emit_plots(std::slice::from_ref(&r), dir)?.len();
            }
            println!("{n} plots written");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
