mod common;

use std::fs;
use std::path::Path;

use common::*;
use fnlab::censor::CensorMode;
use fnlab::losses::LossSpec;
use fnlab::plot;
use fnlab::runner::{self, ExperimentConfig, ExperimentResult, RunOptions, SplitSizes};

fn tiny(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk_scale();
    c.name = "tiny".into();
    c.phantom = small_phantom(0);
    c.phantom.dims = [20, 20, 10];
    c.phantom.test_bands = vec![(1, 3)];
    c.split = SplitSizes { train: 3, validation: 1, test: 2 };
    c.censor.mode = CensorMode::Stochastic;
    c.censor.p = 0.5;
    c.grid = vec![LossSpec::class_weighted(3.0), LossSpec::lopsided(3.0, 0.1)];
    c.train.epochs = 2;
    c.out_dir = out.to_path_buf();
    c
}

fn result_bytes(out: &Path) -> Vec<(String, Vec<u8>)> {
    runner::find_results(out)
        .unwrap()
        .into_iter()
        .map(|p| (p.strip_prefix(out).unwrap().display().to_string(), fs::read(&p).unwrap()))
        .collect()
}

const SERIAL: RunOptions = RunOptions { force: false, threads: 1 };
const FORCED: RunOptions = RunOptions { force: true, threads: 1 };

#[test]
fn rerun_gives_byte_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let first = runner::run_experiment(&cfg, SERIAL).unwrap();
    assert_eq!(first.len(), 2);
    let a = result_bytes(dir.path());
    assert_eq!(a.len(), 2);

    runner::run_experiment(&cfg, FORCED).unwrap();
    assert_eq!(result_bytes(dir.path()), a);

    let parallel = RunOptions { force: true, threads: 2 };
    runner::run_experiment(&cfg, parallel).unwrap();
    assert_eq!(result_bytes(dir.path()), a);
}

#[test]
fn resume_skips_finished_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let first = runner::run_experiment(&cfg, SERIAL).unwrap();
    let path = dir.path().join("cells").join(cfg.grid[0].slug()).join("result.json");
    let stamp = fs::metadata(&path).unwrap().modified().unwrap();
    let again = runner::run_experiment(&cfg, SERIAL).unwrap();
    assert_eq!(fs::metadata(&path).unwrap().modified().unwrap(), stamp);
    assert_eq!(
        first.iter().map(|r| r.to_json().unwrap()).collect::<Vec<_>>(),
        again.iter().map(|r| r.to_json().unwrap()).collect::<Vec<_>>()
    );
}

#[test]
fn train_then_evaluate_matches_a_full_run() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = tiny(d1.path());
    cfg.grid.truncate(1);
    let full = runner::run_experiment(&cfg, SERIAL).unwrap();
    cfg.out_dir = d2.path().to_path_buf();
    let records = runner::train_grid(&cfg, SERIAL).unwrap();
    let split = runner::evaluate_grid(&cfg, SERIAL).unwrap();
    assert_eq!(records[0], full[0].training);
    assert_eq!(split[0].evaluation, full[0].evaluation);
}

#[test]
fn outputs_include_tables_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let results = runner::run_experiment(&cfg, SERIAL).unwrap();
    let cell = dir.path().join("cells").join(cfg.grid[1].slug());
    for f in ["result.json", "pr.csv", "strata.csv"] {
        assert!(cell.join(f).exists(), "{f} missing");
    }
    assert!(dir.path().join("config.json").exists());
    assert!(dir.path().join("censor_plan.json").exists());
    let back = ExperimentResult::load(&cell.join("result.json")).unwrap();
    assert_eq!(back.to_json().unwrap(), results[1].to_json().unwrap());
    let pr_rows = fs::read_to_string(cell.join("pr.csv")).unwrap().lines().count();
    assert_eq!(pr_rows, results[1].evaluation.pr_curve.points.len() + 1);
}

fn data_counts(svg: &str, class: &str) -> u64 {
    let key = format!(r#"class="{class}" data-count=""#);
    svg.match_indices(&key)
        .map(|(i, _)| {
            let rest = &svg[i + key.len()..];
            rest[..rest.find('"').unwrap()].parse::<u64>().unwrap()
        })
        .sum()
}

#[test]
fn plots_are_stable_and_faithful() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let results = runner::run_experiment(&cfg, SERIAL).unwrap();

    let empty = tempfile::tempdir().unwrap();
    assert!(plot::emit_plots(&[], empty.path()).unwrap().is_empty());
    assert_eq!(fs::read_dir(empty.path()).unwrap().count(), 0);

    let out = tempfile::tempdir().unwrap();
    let paths = plot::emit_plots(&results[..1], out.path()).unwrap();
    assert_eq!(paths.len(), 3);
    let again = tempfile::tempdir().unwrap();
    let paths2 = plot::emit_plots(&results[..1], again.path()).unwrap();
    for (a, b) in paths.iter().zip(&paths2) {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    let r = &results[0];
    let hist = plot::histogram_svg(r);
    let ds = runner::build_dataset(&cfg.resolved()).unwrap();
    let lesion_voxels: u64 = ds.test().flat_map(|c| c.lesions.iter()).map(|l| l.voxels.len() as u64).sum();
    let all_voxels: u64 = ds.test().map(|c| c.dims().iter().product::<usize>() as u64).sum();
    assert_eq!(data_counts(&hist, "lesion"), lesion_voxels);
    assert_eq!(data_counts(&hist, "normal"), all_voxels - lesion_voxels);
    assert!(plot::pr_svg(r).starts_with("<svg"));
    assert!(plot::strata_svg(r).ends_with("</svg>\n"));
}

#[test]
fn size_sweep_writes_one_tree_per_count_and_mode() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.grid.truncate(1);
    cfg.train.epochs = 1;
    let results = runner::run_size_sweep(&cfg, &[1, 3], SERIAL).unwrap();
    assert_eq!(results.len(), 4);
    for (r, (n, mode)) in results.iter().zip([(1, "none"), (1, "stochastic"), (3, "none"), (3, "stochastic")]) {
        assert_eq!(r.n_train_cases, n);
        assert_eq!(runner::mode_slug(r.censor.mode), mode);
        assert!(dir.path().join("sweep").join(format!("n{n}_{mode}")).join("config.json").exists());
    }
    assert!(runner::run_size_sweep(&cfg, &[4], SERIAL).unwrap_err().is_config());
    assert!(runner::run_size_sweep(&cfg, &[0], SERIAL).unwrap_err().is_config());
}

#[test]
fn invalid_configs_fail_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = tiny(&out);
    cfg.censor.p = 1.5;
    assert!(runner::run_experiment(&cfg, SERIAL).unwrap_err().is_config());
    let mut cfg = tiny(&out);
    cfg.model.channels_per_slice = 3;
    assert!(runner::run_experiment(&cfg, SERIAL).unwrap_err().is_config());
    let mut cfg = tiny(&out);
    cfg.grid.push(cfg.grid[0]);
    assert!(runner::train_grid(&cfg, SERIAL).unwrap_err().is_config());
    assert!(!out.exists());
}

#[test]
fn config_files_round_trip_and_reject_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let path = dir.path().join("cfg.json");
    cfg.save(&path).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);

    let text = fs::read_to_string(&path).unwrap().replacen('{', r#"{"learning_rate": 1,"#, 1);
    fs::write(&path, text).unwrap();
    assert!(ExperimentConfig::load(&path).unwrap_err().is_config());
    assert!(ExperimentConfig::load(&dir.path().join("missing.json")).unwrap_err().is_config());
}
