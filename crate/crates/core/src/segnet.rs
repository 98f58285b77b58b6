//! Small 2.5D convolutional segmenter and its training loop.
//!
//! A frame is the stack of `context_slices` neighbouring axial slices of
//! every image channel, predicting the center slice. The network is a plain
//! stack of same-padded convolutions with ReLU between layers and a
//! two-class channel softmax on top.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::censor::{apply_plan, CensorPlan};
use crate::detect::{detect_case, Connectivity};
use crate::error::{Error, Result};
use crate::gradcore::{Graph, Real, Sgd, StepDecay, Tensor, Var};
use crate::losses::{self, LossSpec};
use crate::metrics::{self, DuplicatePolicy};
use crate::phantom::{Case, Dataset, LesionSet};
use crate::raster_io;
use crate::seeds::{self, tag};
use crate::volume::{Volume3, Volume4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub filters: usize,
    pub kernel: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub context_slices: usize,
    pub channels_per_slice: usize,
    pub layers: Vec<LayerSpec>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            context_slices: 5,
            channels_per_slice: 4,
            layers: vec![
                LayerSpec { filters: 16, kernel: 3 },
                LayerSpec { filters: 16, kernel: 3 },
                LayerSpec { filters: 2, kernel: 1 },
            ],
        }
    }
}

impl ModelConfig {
    pub fn input_channels(&self) -> usize {
        self.context_slices * self.channels_per_slice
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_slices % 2 == 0 {
            return Err(Error::Config(format!(
                "context_slices must be odd, got {}",
                self.context_slices
            )));
        }
        if self.channels_per_slice == 0 {
            return Err(Error::Config("channels_per_slice must be positive".into()));
        }
        match self.layers.last() {
            Some(l) if l.filters == 2 => {}
            _ => return Err(Error::Config("final layer must have 2 output channels".into())),
        }
        if let Some(l) = self.layers.iter().find(|l| l.kernel % 2 == 0 || l.filters == 0) {
            return Err(Error::Config(format!("layer {l:?} needs an odd kernel and filters > 0")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    ValLoss,
    ValMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub l2: f64,
    pub momentum: f64,
    pub lr_decay: StepDecay,
    pub seed: u64,
    pub selection_metric: SelectionMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            lr: 0.05,
            l2: 1e-4,
            momentum: 0.9,
            lr_decay: StepDecay::default(),
            seed: 0,
            selection_metric: SelectionMetric::ValLoss,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::Config(format!("lr {} and l2 {} must be >= 0", self.lr, self.l2)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

/// How probability maps become lesion detections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub threshold: f64,
    pub connectivity: Connectivity,
    pub tol_mm: f64,
    pub duplicates: DuplicatePolicy,
    pub diameter_edges: Vec<f64>,
    pub entropy_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: crate::detect::DEFAULT_THRESHOLD,
            connectivity: Connectivity::Corners,
            tol_mm: crate::detect::DEFAULT_TOLERANCE_MM,
            duplicates: DuplicatePolicy::CountAsTp,
            diameter_edges: metrics::DEFAULT_DIAMETER_EDGES.to_vec(),
            entropy_bins: losses::ENTROPY_BINS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegNet<T> {
    pub config: ModelConfig,
    /// Kernel then bias for every layer.
    pub params: Vec<Tensor<T>>,
}

impl<T: Real> SegNet<T> {
    /// He-normal kernels, zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeds::stream(seed, &[tag::INIT]);
        let mut params = Vec::new();
        let mut c_in = config.input_channels();
        for layer in &config.layers {
            let fan_in = (c_in * layer.kernel * layer.kernel) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            let shape = [layer.filters, c_in, layer.kernel, layer.kernel];
            params.push(Tensor::from_fn(&shape, |_| T::from_f64(normal.sample(&mut rng))));
            params.push(Tensor::zeros(&[layer.filters]));
            c_in = layer.filters;
        }
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    /// Records the forward pass for `input` `[N,C,H,W]` using parameter nodes
    /// `params`, returning the softmax output `[N,2,H,W]`.
    pub fn forward(&self, g: &mut Graph<T>, params: &[Var], input: Var) -> Result<Var> {
        let mut x = input;
        let n = self.config.layers.len();
        for i in 0..n {
            x = g.conv2d(x, params[2 * i], params[2 * i + 1])?;
            if i + 1 < n {
                x = g.relu(x);
            }
        }
        g.softmax_channels(x)
    }

    /// Class probabilities without recording gradients.
    pub fn predict(&self, input: Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let params: Vec<Var> = self.params.iter().map(|p| g.constant(p.clone())).collect();
        let x = g.constant(input);
        let out = self.forward(&mut g, &params, x)?;
        Ok(g.value(out).clone())
    }

    pub fn cast<U: Real>(&self) -> SegNet<U> {
        SegNet {
            config: self.config.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }

    /// Writes `model.json` and one raw little-endian f64 raster per tensor.
    pub fn save(&self, dir: &Path, meta: serde_json::Value) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tensors = Vec::new();
        for (i, p) in self.params.iter().enumerate() {
            let name = format!("layer{}_{}.raw", i / 2, if i % 2 == 0 { "kernel" } else { "bias" });
            let bytes: Vec<u8> = p.data().iter().flat_map(|v| v.as_f64().to_le_bytes()).collect();
            let path = dir.join(&name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            tensors.push(TensorEntry {
                file: name,
                shape: p.shape().to_vec(),
            });
        }
        raster_io::write_json(
            &dir.join("model.json"),
            &Checkpoint {
                dtype: "f64le".into(),
                config: self.config.clone(),
                tensors,
                meta,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<(Self, serde_json::Value)> {
        let ck: Checkpoint = raster_io::read_json(&dir.join("model.json"))?;
        let mut params = Vec::new();
        for t in &ck.tensors {
            let path = dir.join(&t.file);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let data: Vec<T> = bytes
                .chunks_exact(8)
                .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            params.push(Tensor::new(t.shape.clone(), data)?);
        }
        let model = Self {
            config: ck.config,
            params,
        };
        let expected = SegNet::<T>::init(&model.config, 0)?;
        if expected.params.len() != model.params.len()
            || expected.params.iter().zip(&model.params).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Config(format!(
                "{}: tensor shapes do not match the layer config",
                dir.display()
            )));
        }
        Ok((model, ck.meta))
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    file: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    dtype: String,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    meta: serde_json::Value,
}

/// Channel stack `[context * C, Y, X]` centred on slice `z`; slices outside
/// the volume are zero.
pub fn stack_frame<T: Real>(volume: &Volume4, z: usize, context: usize) -> Result<Tensor<T>> {
    let dims = volume.dims();
    if z >= dims[2] {
        return Err(Error::InvalidParameter(format!("slice {z} outside 0..{}", dims[2])));
    }
    if context % 2 == 0 {
        return Err(Error::InvalidParameter(format!("context {context} must be odd")));
    }
    let mut out = Vec::with_capacity(context * volume.channels() * dims[0] * dims[1]);
    write_frame(volume, z, context, &mut out);
    Tensor::new(vec![context * volume.channels(), dims[1], dims[0]], out)
}

fn write_frame<T: Real>(volume: &Volume4, z: usize, context: usize, out: &mut Vec<T>) {
    let dims = volume.dims();
    let plane = dims[0] * dims[1];
    let half = (context / 2) as isize;
    for s in -half..=half {
        let zz = z as isize + s;
        for c in 0..volume.channels() {
            if zz < 0 || zz as usize >= dims[2] {
                out.extend(std::iter::repeat(T::zero()).take(plane));
            } else {
                out.extend(volume.slice(c, zz as usize).iter().map(|&v| T::from_f64(v as f64)));
            }
        }
    }
}

fn batch_input<T: Real>(frames: &[(&Volume4, usize)], context: usize) -> Result<Tensor<T>> {
    let v0 = frames[0].0;
    let dims = v0.dims();
    let c = context * v0.channels();
    let mut data = Vec::with_capacity(frames.len() * c * dims[0] * dims[1]);
    for (vol, z) in frames {
        write_frame(vol, *z, context, &mut data);
    }
    Tensor::new(vec![frames.len(), c, dims[1], dims[0]], data)
}

/// Lesion probability for every voxel of `case`.
pub fn predict_volume<T: Real>(model: &SegNet<T>, case: &Case) -> Result<Volume3<f32>> {
    predict_raw(model, &case.volume)
}

const PREDICT_BATCH: usize = 8;

fn predict_raw<T: Real>(model: &SegNet<T>, volume: &Volume4) -> Result<Volume3<f32>> {
    if volume.channels() != model.config.channels_per_slice {
        return Err(Error::Shape(format!(
            "model expects {} channels per slice, volume has {}",
            model.config.channels_per_slice,
            volume.channels()
        )));
    }
    let dims = volume.dims();
    let plane = dims[0] * dims[1];
    let mut out = Volume3::filled(dims, volume.spacing(), 0.0f32);
    let zs: Vec<usize> = (0..dims[2]).collect();
    for chunk in zs.chunks(PREDICT_BATCH) {
        let frames: Vec<(&Volume4, usize)> = chunk.iter().map(|&z| (volume, z)).collect();
        let probs = model.predict(batch_input(&frames, model.config.context_slices)?)?;
        for (k, &z) in chunk.iter().enumerate() {
            let src = &probs.data()[(2 * k + 1) * plane..(2 * k + 2) * plane];
            for (o, &p) in out.slice_mut(z).iter_mut().zip(src) {
                *o = p.as_f64() as f32;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedModel<T> {
    pub model: SegNet<T>,
    pub loss: LossSpec,
    pub train_config: TrainConfig,
    /// Loss of the first mini-batch before any update.
    pub initial_loss: f64,
    pub history: Vec<EpochRecord>,
    pub selected_epoch: usize,
}

fn check_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence(format!("{what} is {v}")))
    }
}

/// Mean loss over every slice of `cases` against `masks`.
fn mean_loss<T: Real>(
    model: &SegNet<T>,
    cases: &[&Case],
    masks: &std::collections::BTreeMap<usize, Volume3<u8>>,
    spec: &LossSpec,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for case in cases {
        let dims = case.dims();
        let mask = &masks[&case.id];
        let zs: Vec<usize> = (0..dims[2]).collect();
        for chunk in zs.chunks(PREDICT_BATCH) {
            let frames: Vec<(&Volume4, usize)> = chunk.iter().map(|&z| (&case.volume, z)).collect();
            let probs = model.predict(batch_input(&frames, model.config.context_slices)?)?;
            let target: Vec<u8> = chunk.iter().flat_map(|&z| mask.slice(z).iter().copied()).collect();
            total += losses::loss_value(&probs, &target, spec)? * target.len() as f64;
            count += target.len();
        }
    }
    Ok(total / count.max(1) as f64)
}

/// Detection mAP of `model` on `cases` against the given lesion sets.
pub fn detection_map<T: Real>(
    model: &SegNet<T>,
    cases: &[&Case],
    gts: &[LesionSet],
    eval: &EvalConfig,
) -> Result<f64> {
    let mut matches = Vec::new();
    for (case, gt) in cases.iter().zip(gts) {
        let prob = predict_volume(model, case)?;
        matches.push(detect_case(case.id, &prob, gt, eval.threshold, eval.connectivity, eval.tol_mm)?);
    }
    if metrics::total_gt(&matches) == 0 {
        return Ok(0.0);
    }
    Ok(metrics::mean_average_precision(&metrics::pr_curve(&matches, eval.duplicates)?))
}

/// Trains on the plan's censored annotations and returns the parameters of
/// the epoch with the best validation metric.
///
/// Every epoch visits each slice of each training case once, in an order
/// shuffled by `(seed, epoch)`. Validation uses the same plan.
pub fn train<T: Real>(
    ds: &Dataset,
    plan: &CensorPlan,
    loss_spec: &LossSpec,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    eval: &EvalConfig,
) -> Result<TrainedModel<T>> {
    loss_spec.validate()?;
    model_cfg.validate()?;
    cfg.validate()?;
    if ds.split.train.is_empty() || ds.split.validation.is_empty() {
        return Err(Error::Config("training needs non-empty train and validation splits".into()));
    }
    if ds.spec.channels != model_cfg.channels_per_slice {
        return Err(Error::Config(format!(
            "model expects {} channels per slice, dataset has {}",
            model_cfg.channels_per_slice, ds.spec.channels
        )));
    }
    let masks = apply_plan(ds, plan)?;
    for id in ds.split.train.iter().chain(&ds.split.validation) {
        if !masks.contains_key(id) {
            return Err(Error::Config(format!("censor plan does not cover case {id}")));
        }
    }

    let train_cases: Vec<&Case> = ds.train().collect();
    let val_cases: Vec<&Case> = ds.validation().collect();
    let val_gts: Vec<LesionSet> = val_cases
        .iter()
        .map(|c| LesionSet {
            lesions: c
                .lesions
                .iter()
                .filter(|l| {
                    !plan.is_removed(crate::censor::LesionRef {
                        case_id: c.id,
                        lesion_id: l.id,
                    })
                })
                .cloned()
                .collect(),
        })
        .collect();

    let mut frames: Vec<(usize, usize)> = train_cases
        .iter()
        .flat_map(|c| (0..c.dims()[2]).map(move |z| (c.id, z)))
        .collect();

    let mut model = SegNet::<T>::init(model_cfg, cfg.seed)?;
    let mut opt = Sgd::<T>::new(cfg.l2, cfg.momentum)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor<T>>)> = None;
    let mut initial_loss = None;
    let context = model_cfg.context_slices;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_decay.lr_at(cfg.lr, epoch);
        let mut rng = seeds::stream(cfg.seed, &[tag::SHUFFLE, epoch as u64]);
        frames.sort_unstable();
        frames.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut voxel_sum = 0usize;
        for batch in frames.chunks(cfg.batch_size) {
            let refs: Vec<(&Volume4, usize)> = batch.iter().map(|&(id, z)| (&ds.cases[id].volume, z)).collect();
            let target: Vec<u8> = batch
                .iter()
                .flat_map(|&(id, z)| masks[&id].slice(z).iter().copied())
                .collect();

            let mut g = Graph::new();
            let pvars: Vec<Var> = model.params.iter().map(|p| g.param(p.clone())).collect();
            let x = g.constant(batch_input(&refs, context)?);
            let probs = model.forward(&mut g, &pvars, x)?;
            let l = losses::loss(&mut g, probs, &target, loss_spec)?;
            let lv = check_finite(g.value(l).item().as_f64(), "training loss")?;
            initial_loss.get_or_insert(lv);
            loss_sum += lv * target.len() as f64;
            voxel_sum += target.len();

            g.backward(l)?;
            let grads: Vec<Tensor<T>> = pvars
                .iter()
                .map(|&v| g.take_grad(v).expect("params require grad"))
                .collect();
            opt.step(&mut model.params, &grads, lr)?;
        }
        let train_loss = check_finite(loss_sum / voxel_sum.max(1) as f64, "epoch loss")?;

        let (val_metric, score) = match cfg.selection_metric {
            SelectionMetric::ValLoss => {
                let v = check_finite(mean_loss(&model, &val_cases, &masks, loss_spec)?, "validation loss")?;
                (v, -v)
            }
            SelectionMetric::ValMap => {
                let v = detection_map(&model, &val_cases, &val_gts, eval)?;
                (v, v)
            }
        };
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_metric,
        });
        log::debug!(
            "{} epoch {epoch}: lr {lr:.4} train {train_loss:.5} val {val_metric:.5}",
            loss_spec.label()
        );
        if best.as_ref().map_or(true, |(s, _, _)| score > *s) {
            best = Some((score, epoch, model.params.clone()));
        }
    }

    let (_, selected_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainedModel {
        model,
        loss: *loss_spec,
        train_config: cfg.clone(),
        initial_loss: initial_loss.unwrap_or(f64::NAN),
        history,
        selected_epoch,
    })
}
