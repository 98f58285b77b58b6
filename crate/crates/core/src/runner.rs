//! Config-driven experiments: censor, train, evaluate, persist.
//!
//! One [`ExperimentConfig`] describes a phantom dataset, a censoring plan and
//! a grid of losses. [`run_experiment`] trains one model per grid cell on the
//! censored training annotations and evaluates it against the uncensored test
//! split. Output layout under `out_dir`:
//!
//! ```text
//! config.json              resolved config
//! censor_plan.json
//! cells/<loss-slug>/
//!     model/               checkpoint plus training record
//!     result.json          ExperimentResult
//!     pr.csv, strata.csv
//!     <slug>_pr.svg, <slug>_hist.svg, <slug>_strata.svg
//! ```
//!
//! A cell whose `result.json` exists is loaded instead of recomputed unless
//! `force` is set.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::censor::{self, CensorMode, CensorPlan};
use crate::detect::detect_case;
use crate::error::{Error, Result};
use crate::losses::{LossSpec, ProbHistogram};
use crate::metrics::{self, DetectionSummary, EntropySummary, PrCurve, Stratum};
use crate::phantom::{self, rasterize_mask, Case, Dataset, PhantomSpec};
use crate::plot;
use crate::raster_io;
use crate::seeds::{self, tag};
use crate::segnet::{self, EpochRecord, EvalConfig, LayerSpec, ModelConfig, SegNet, TrainConfig};

/// Version of the config and result JSON layout.
pub const SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 30,
            validation: 5,
            test: 15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CensorConfig {
    pub mode: CensorMode,
    pub p: f64,
    /// Stochastic draws; derived from the master seed when absent.
    pub seed: Option<u64>,
}

impl Default for CensorConfig {
    fn default() -> Self {
        Self {
            mode: CensorMode::None,
            p: 0.0,
            seed: None,
        }
    }
}

/// Everything needed to reproduce one experiment grid.
///
/// The master seed owns every random stream: [`ExperimentConfig::resolved`]
/// overwrites the phantom and training seeds from it and fills in a missing
/// censoring seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub name: String,
    pub master_seed: u64,
    pub phantom: PhantomSpec,
    pub split: SplitSizes,
    pub censor: CensorConfig,
    pub grid: Vec<LossSpec>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Training-split sizes for [`run_size_sweep`].
    pub sweep_counts: Vec<usize>,
    /// Censor modes for [`run_size_sweep`]; empty means none plus `censor.mode`.
    pub sweep_modes: Vec<CensorMode>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA,
            name: "experiment".into(),
            master_seed: 0,
            phantom: PhantomSpec::default(),
            split: SplitSizes::default(),
            censor: CensorConfig::default(),
            grid: vec![LossSpec::class_weighted(3.0)],
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep_counts: Vec::new(),
            sweep_modes: Vec::new(),
            out_dir: PathBuf::from("runs/experiment"),
        }
    }
}

impl ExperimentConfig {
    /// Small phantom experiment that trains in well under a minute per cell
    /// on one CPU core.
    pub fn desk_scale() -> Self {
        Self {
            name: "desk".into(),
            phantom: PhantomSpec {
                dims: [48, 48, 32],
                lesions_per_case: (5, 15),
                radius_mm: (1.5, 5.0),
                test_bands: vec![(5, 8), (9, 12), (13, 15)],
                ..PhantomSpec::default()
            },
            model: ModelConfig {
                context_slices: 3,
                channels_per_slice: 4,
                layers: vec![
                    LayerSpec { filters: 8, kernel: 3 },
                    LayerSpec { filters: 8, kernel: 3 },
                    LayerSpec { filters: 2, kernel: 1 },
                ],
            },
            train: TrainConfig {
                epochs: 8,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        raster_io::write_json(path, self)
    }

    /// Copy with every seed derived from `master_seed`.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.phantom.seed = self.master_seed;
        c.train.seed = seeds::derive_seed(self.master_seed, &[tag::INIT]);
        if c.censor.mode == CensorMode::Stochastic && c.censor.seed.is_none() {
            c.censor.seed = Some(seeds::derive_seed(self.master_seed, &[tag::CENSOR]));
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::Config(format!(
                "schema {} is not supported (expected {SCHEMA})",
                self.schema
            )));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("loss grid is empty".into()));
        }
        let mut slugs = BTreeSet::new();
        for l in &self.grid {
            l.validate()?;
            if !slugs.insert(l.slug()) {
                return Err(Error::Config(format!("loss {} appears twice in the grid", l.label())));
            }
        }
        self.phantom.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.split.train == 0 || self.split.validation == 0 || self.split.test == 0 {
            return Err(Error::Config(format!("every split needs at least one case: {:?}", self.split)));
        }
        if self.phantom.channels != self.model.channels_per_slice {
            return Err(Error::Config(format!(
                "phantom has {} channels, model expects {}",
                self.phantom.channels, self.model.channels_per_slice
            )));
        }
        if !(0.0..=1.0).contains(&self.censor.p) {
            return Err(Error::Config(format!("censor rate {} is outside [0, 1]", self.censor.p)));
        }
        let e = &self.eval;
        if !(0.0..1.0).contains(&e.threshold) {
            return Err(Error::Config(format!("binarization threshold {} is outside [0, 1)", e.threshold)));
        }
        if !(e.tol_mm > 0.0) {
            return Err(Error::Config(format!("match tolerance {} mm must be positive", e.tol_mm)));
        }
        if e.entropy_bins == 0 {
            return Err(Error::Config("entropy histogram needs at least one bin".into()));
        }
        if e.diameter_edges.windows(2).any(|w| !(w[0] < w[1])) || e.diameter_edges.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Config(format!(
                "diameter edges {:?} must be positive and increasing",
                e.diameter_edges
            )));
        }
        Ok(())
    }

    fn sweep_mode_list(&self) -> Vec<CensorMode> {
        if !self.sweep_modes.is_empty() {
            return self.sweep_modes.clone();
        }
        let mut m = vec![CensorMode::None];
        if self.censor.mode != CensorMode::None {
            m.push(self.censor.mode);
        }
        m
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Recompute cells whose outputs already exist.
    pub force: bool,
    /// Grid cells trained concurrently; 0 or 1 runs them one after another.
    pub threads: usize,
}

/// Test-split evaluation of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub summary: DetectionSummary,
    pub pr_curve: PrCurve,
    pub strata: Vec<Stratum>,
    pub entropy: EntropySummary,
    /// Predicted lesion probability over ground-truth lesion voxels.
    pub lesion_hist: ProbHistogram,
    /// Predicted lesion probability over ground-truth normal voxels.
    pub normal_hist: ProbHistogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensorRecord {
    pub mode: CensorMode,
    pub rate: f64,
    pub seed: Option<u64>,
    pub achieved_rate: f64,
    pub n_removed: usize,
    pub total_lesions: usize,
    pub tie_break: Option<String>,
}

impl From<&CensorPlan> for CensorRecord {
    fn from(p: &CensorPlan) -> Self {
        Self {
            mode: p.mode,
            rate: p.rate,
            seed: p.seed,
            achieved_rate: p.achieved_rate,
            n_removed: p.removed.len(),
            total_lesions: p.total_lesions,
            tie_break: p.tie_break.clone(),
        }
    }
}

/// What training produced, stored next to the checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub loss: LossSpec,
    pub initial_loss: f64,
    pub selected_epoch: usize,
    /// Per-epoch learning rate, training loss and validation metric.
    pub history: Vec<EpochRecord>,
}

/// One row of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub schema: u32,
    pub cell: String,
    pub loss: LossSpec,
    pub loss_label: String,
    pub n_train_cases: usize,
    pub censor: CensorRecord,
    pub training: TrainingRecord,
    pub evaluation: Evaluation,
    pub config: ExperimentConfig,
}

impl ExperimentResult {
    pub fn load(path: &Path) -> Result<Self> {
        raster_io::read_json(path)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("<result>", e))
    }
}

/// Predicts every case and scores it against the full, uncensored lesion sets.
pub fn evaluate<T: crate::gradcore::Real>(model: &SegNet<T>, cases: &[&Case], eval: &EvalConfig) -> Result<Evaluation> {
    let mut matches = Vec::with_capacity(cases.len());
    let mut lesion_hist = ProbHistogram::new(eval.entropy_bins);
    let mut normal_hist = ProbHistogram::new(eval.entropy_bins);
    for case in cases {
        let prob = segnet::predict_volume(model, case)?;
        let gt = rasterize_mask(case.lesions.iter(), case.dims(), case.spacing());
        for (&p, &y) in prob.data().iter().zip(gt.data()) {
            if y != 0 {
                lesion_hist.add(p as f64);
            } else {
                normal_hist.add(p as f64);
            }
        }
        matches.push(detect_case(
            case.id,
            &prob,
            &case.lesions,
            eval.threshold,
            eval.connectivity,
            eval.tol_mm,
        )?);
    }
    let summary = metrics::summarize_detections(&matches, eval.duplicates)?;
    let pr_curve = metrics::pr_curve(&matches, eval.duplicates)?;
    let strata = metrics::size_strata(&matches, &eval.diameter_edges);
    Ok(Evaluation {
        summary,
        pr_curve,
        strata,
        entropy: EntropySummary {
            lesion_h: lesion_hist.entropy(),
            normal_h: normal_hist.entropy(),
            bins: eval.entropy_bins,
        },
        lesion_hist,
        normal_hist,
    })
}

pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    phantom::generate_dataset(&cfg.phantom, cfg.split.train, cfg.split.validation, cfg.split.test)
}

pub fn build_plan(cfg: &ExperimentConfig, ds: &Dataset) -> Result<CensorPlan> {
    let seed = cfg.censor.seed.unwrap_or(0);
    censor::plan_for(ds, cfg.censor.mode, cfg.censor.p, seed)
}

/// Keeps `count` training cases chosen by a stream keyed on the master seed
/// and the count. Validation and test splits are untouched.
pub fn subsample_train(ds: &Dataset, count: usize, master_seed: u64) -> Result<Dataset> {
    let available = ds.split.train.len();
    if count == 0 || count > available {
        return Err(Error::Config(format!(
            "cannot subsample {count} training cases from {available}"
        )));
    }
    let mut ids = ds.split.train.clone();
    if count < available {
        let mut rng = seeds::stream(master_seed, &[tag::SUBSAMPLE, count as u64]);
        ids.shuffle(&mut rng);
        ids.truncate(count);
        ids.sort_unstable();
    }
    let mut out = ds.clone();
    out.split.train = ids;
    Ok(out)
}

fn cell_dir(out: &Path, loss: &LossSpec) -> PathBuf {
    out.join("cells").join(loss.slug())
}

fn train_or_load(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    plan: &CensorPlan,
    loss: &LossSpec,
    dir: &Path,
    force: bool,
) -> Result<(SegNet<f32>, TrainingRecord)> {
    let model_dir = dir.join("model");
    if !force && model_dir.join("model.json").exists() {
        let (model, meta) = SegNet::<f32>::load(&model_dir)?;
        let record: TrainingRecord =
            serde_json::from_value(meta).map_err(|e| Error::json(model_dir.join("model.json"), e))?;
        if record.loss == *loss {
            log::info!("{}: reusing checkpoint", loss.label());
            return Ok((model, record));
        }
    }
    log::info!("{}: training on {} cases", loss.label(), ds.split.train.len());
    let trained = segnet::train::<f32>(ds, plan, loss, &cfg.model, &cfg.train, &cfg.eval)?;
    let record = TrainingRecord {
        loss: *loss,
        initial_loss: trained.initial_loss,
        selected_epoch: trained.selected_epoch,
        history: trained.history,
    };
    let meta = serde_json::to_value(&record).map_err(|e| Error::json(&model_dir, e))?;
    trained.model.save(&model_dir, meta)?;
    Ok((trained.model, record))
}

fn run_cell(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    plan: &CensorPlan,
    loss: &LossSpec,
    out: &Path,
    force: bool,
) -> Result<ExperimentResult> {
    let dir = cell_dir(out, loss);
    let result_path = dir.join("result.json");
    if !force && result_path.exists() {
        log::info!("{}: result exists, skipping", loss.label());
        return ExperimentResult::load(&result_path);
    }
    let (model, training) = train_or_load(cfg, ds, plan, loss, &dir, force)?;
    let test: Vec<&Case> = ds.test().collect();
    let evaluation = evaluate(&model, &test, &cfg.eval)?;
    let result = ExperimentResult {
        schema: SCHEMA,
        cell: loss.slug(),
        loss: *loss,
        loss_label: loss.label(),
        n_train_cases: ds.split.train.len(),
        censor: plan.into(),
        training,
        evaluation,
        config: cfg.clone(),
    };
    write_result(&dir, &result)?;
    Ok(result)
}

/// Writes `result.json`, the CSV tables and the plots of one cell.
pub fn write_result(dir: &Path, result: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    raster_io::write_json(&dir.join("result.json"), result)?;
    write_csvs(dir, result)?;
    plot::emit_plots(std::slice::from_ref(result), dir)?;
    Ok(())
}

#[derive(Serialize)]
struct StratumRow {
    lo_mm: f64,
    hi_mm: Option<f64>,
    n_gt: usize,
    n_detected: usize,
    detection_rate: Option<f64>,
}

fn write_csvs(dir: &Path, result: &ExperimentResult) -> Result<()> {
    let csv_err = |path: &Path, e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    };

    let path = dir.join("pr.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    for p in &result.evaluation.pr_curve.points {
        w.serialize(p).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("strata.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    for s in &result.evaluation.strata {
        w.serialize(StratumRow {
            lo_mm: s.lo_mm,
            hi_mm: s.hi_mm,
            n_gt: s.n_gt,
            n_detected: s.n_detected,
            detection_rate: s.detection_rate(),
        })
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn prepare(cfg: &ExperimentConfig) -> Result<ExperimentConfig> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

fn for_each_cell<R: Send>(
    grid: &[LossSpec],
    threads: usize,
    f: impl Fn(&LossSpec) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    if threads <= 1 {
        return grid.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| grid.par_iter().map(f).collect())
}

/// Trains and evaluates every grid cell. Results come back in grid order.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<ExperimentResult>> {
    let cfg = prepare(cfg)?;
    let ds = build_dataset(&cfg)?;
    run_on(&cfg, &ds, &cfg.out_dir, opts)
}

fn run_on(cfg: &ExperimentConfig, ds: &Dataset, out: &Path, opts: RunOptions) -> Result<Vec<ExperimentResult>> {
    let plan = build_plan(cfg, ds)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    cfg.save(&out.join("config.json"))?;
    plan.save(&out.join("censor_plan.json"))?;
    for_each_cell(&cfg.grid, opts.threads, |loss| run_cell(cfg, ds, &plan, loss, out, opts.force))
}

/// Trains every grid cell and stores the checkpoints without evaluating.
pub fn train_grid(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<TrainingRecord>> {
    let cfg = prepare(cfg)?;
    let ds = build_dataset(&cfg)?;
    let plan = build_plan(&cfg, &ds)?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    cfg.save(&out.join("config.json"))?;
    plan.save(&out.join("censor_plan.json"))?;
    for_each_cell(&cfg.grid, opts.threads, |loss| {
        train_or_load(&cfg, &ds, &plan, loss, &cell_dir(out, loss), opts.force).map(|(_, r)| r)
    })
}

/// Evaluates the checkpoints written by [`train_grid`]. A missing checkpoint
/// is an error.
pub fn evaluate_grid(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<ExperimentResult>> {
    let cfg = prepare(cfg)?;
    let ds = build_dataset(&cfg)?;
    let plan = build_plan(&cfg, &ds)?;
    let test: Vec<&Case> = ds.test().collect();
    for_each_cell(&cfg.grid, opts.threads, |loss| {
        let dir = cell_dir(&cfg.out_dir, loss);
        let model_dir = dir.join("model");
        let (model, meta) = SegNet::<f32>::load(&model_dir)?;
        let training: TrainingRecord =
            serde_json::from_value(meta).map_err(|e| Error::json(model_dir.join("model.json"), e))?;
        let result = ExperimentResult {
            schema: SCHEMA,
            cell: loss.slug(),
            loss: *loss,
            loss_label: loss.label(),
            n_train_cases: ds.split.train.len(),
            censor: (&plan).into(),
            training,
            evaluation: evaluate(&model, &test, &cfg.eval)?,
            config: cfg.clone(),
        };
        write_result(&dir, &result)?;
        Ok(result)
    })
}

/// Runs the full grid for each `(count, mode)` pair on a seeded subsample of
/// the training split. Each pair writes under `out_dir/sweep/n<count>_<mode>`.
pub fn run_size_sweep(cfg: &ExperimentConfig, counts: &[usize], opts: RunOptions) -> Result<Vec<ExperimentResult>> {
    let cfg = prepare(cfg)?;
    if counts.is_empty() {
        return Err(Error::Config("size sweep needs at least one patient count".into()));
    }
    if let Some(&c) = counts.iter().find(|&&c| c == 0 || c > cfg.split.train) {
        return Err(Error::Config(format!(
            "patient count {c} is outside 1..={}",
            cfg.split.train
        )));
    }
    let ds = build_dataset(&cfg)?;
    let mut results = Vec::new();
    for &count in counts {
        let sub = subsample_train(&ds, count, cfg.master_seed)?;
        for mode in cfg.sweep_mode_list() {
            let mut cell_cfg = cfg.clone();
            cell_cfg.censor.mode = mode;
            if mode == CensorMode::None {
                cell_cfg.censor.p = 0.0;
            }
            let cell_cfg = cell_cfg.resolved();
            let out = cfg.out_dir.join("sweep").join(format!("n{count}_{}", mode_slug(mode)));
            results.extend(run_on(&cell_cfg, &sub, &out, opts)?);
        }
    }
    Ok(results)
}

pub fn mode_slug(mode: CensorMode) -> &'static str {
    match mode {
        CensorMode::None => "none",
        CensorMode::Stochastic => "stochastic",
        CensorMode::SizeBased => "size_based",
    }
}

/// Every `result.json` below `dir`, in path order.
pub fn find_results(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|e| Error::io(&d, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "result.json") {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}
