//! Voxel-wise losses for two-class segmentation under false-negative label noise.
//!
//! Every loss here is a per-voxel weighted cross entropy against the class
//! probabilities,
//!
//! ```text
//! loss = -(1 / #voxels) * sum_v [ w0(v) ln p0(v) + w1(v) ln p1(v) ]
//! ```
//!
//! with weights that depend on the (possibly censored) label and, for the
//! bootstrap variants, on the model's own hard prediction:
//!
//! | kind                 | label 1        | label 0                              |
//! |----------------------|----------------|--------------------------------------|
//! | `Ce`                 | (0, 1)         | (1, 0)                               |
//! | `ClassWeighted`      | (0, alpha)     | (1, 0)                               |
//! | `Bootstrap`          | (1-b)(0,1) + b*hard | (1-b)(1,0) + b*hard             |
//! | `LopsidedBootstrap`  | (0, alpha)     | (1-b)(1,0) + b*hard                  |
//!
//! `hard` is the one-hot argmax of the prediction. It is computed from the
//! forward values and enters the graph as a constant, so no gradient flows
//! through it. A prediction of exactly 0.5 counts as the negative class.
//! Probabilities are clamped to `[eps, 1 - eps]` before the log.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{Graph, Real, Tensor, Var};

pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    ClassWeighted,
    Bootstrap,
    LopsidedBootstrap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Weight of positive-labelled voxels (`ClassWeighted`, `LopsidedBootstrap`).
    #[serde(default = "one")]
    pub alpha: f64,
    /// Share of the self-prediction term (`Bootstrap`, `LopsidedBootstrap`).
    #[serde(default)]
    pub beta: f64,
}

fn one() -> f64 {
    1.0
}

impl LossSpec {
    pub fn ce() -> Self {
        Self {
            kind: LossKind::Ce,
            alpha: 1.0,
            beta: 0.0,
        }
    }

    pub fn class_weighted(alpha: f64) -> Self {
        Self {
            kind: LossKind::ClassWeighted,
            alpha,
            beta: 0.0,
        }
    }

    pub fn bootstrap(beta: f64) -> Self {
        Self {
            kind: LossKind::Bootstrap,
            alpha: 1.0,
            beta,
        }
    }

    pub fn lopsided(alpha: f64, beta: f64) -> Self {
        Self {
            kind: LossKind::LopsidedBootstrap,
            alpha,
            beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha {} must be >= 1", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidParameter(format!("beta {} outside [0, 1]", self.beta)));
        }
        Ok(())
    }

    /// Short label such as `lopsided(a=3,b=0.1)`.
    pub fn label(&self) -> String {
        match self.kind {
            LossKind::Ce => "ce".into(),
            LossKind::ClassWeighted => format!("class_weighted(a={})", self.alpha),
            LossKind::Bootstrap => format!("bootstrap(b={})", self.beta),
            LossKind::LopsidedBootstrap => format!("lopsided(a={},b={})", self.alpha, self.beta),
        }
    }

    /// Filesystem-safe identifier.
    pub fn slug(&self) -> String {
        let f = |v: f64| format!("{v}").replace('.', "p");
        match self.kind {
            LossKind::Ce => "ce".into(),
            LossKind::ClassWeighted => format!("cw_a{}", f(self.alpha)),
            LossKind::Bootstrap => format!("boot_b{}", f(self.beta)),
            LossKind::LopsidedBootstrap => format!("lop_a{}_b{}", f(self.alpha), f(self.beta)),
        }
    }

    /// Per-voxel class weights `(w0, w1)` given the label and the predicted
    /// lesion probability.
    #[inline]
    pub fn voxel_weights(&self, label: bool, p_lesion: f64) -> (f64, f64) {
        let hard = if p_lesion > 0.5 { (0.0, 1.0) } else { (1.0, 0.0) };
        let y = if label { (0.0, 1.0) } else { (1.0, 0.0) };
        let mix = |b: f64| (y.0 * (1.0 - b) + hard.0 * b, y.1 * (1.0 - b) + hard.1 * b);
        match self.kind {
            LossKind::Ce => y,
            LossKind::ClassWeighted | LossKind::LopsidedBootstrap if label => (0.0, self.alpha),
            LossKind::ClassWeighted => y,
            LossKind::Bootstrap | LossKind::LopsidedBootstrap => mix(self.beta),
        }
    }
}

/// Table layout grid: for each alpha, plain class weighting then the lopsided
/// bootstrap at each beta below 1.
pub fn table_grid(alphas: &[f64], betas: &[f64]) -> Vec<LossSpec> {
    let mut grid = Vec::new();
    for &a in alphas {
        grid.push(LossSpec::class_weighted(a));
    }
    for &b in betas.iter().filter(|&&b| b < 1.0) {
        for &a in alphas {
            grid.push(LossSpec::lopsided(a, b));
        }
    }
    grid
}

pub const GRID_ALPHAS: [f64; 3] = [3.0, 10.0, 30.0];
pub const GRID_BETAS: [f64; 3] = [1.0, 0.5, 0.1];

/// Every (alpha, beta) point of the hyperparameter grid as a lopsided loss.
pub fn full_grid() -> Vec<LossSpec> {
    GRID_ALPHAS
        .iter()
        .flat_map(|&a| GRID_BETAS.iter().map(move |&b| LossSpec::lopsided(a, b)))
        .collect()
}

fn check_inputs<T: Real>(probs: &Tensor<T>, target: &[u8]) -> Result<(usize, usize, usize)> {
    let s = probs.shape();
    if s.len() != 4 || s[1] != 2 {
        return Err(Error::Shape(format!("loss expects probabilities [N,2,H,W], got {s:?}")));
    }
    let (n, plane) = (s[0], s[2] * s[3]);
    if target.len() != n * plane {
        return Err(Error::Shape(format!(
            "target has {} voxels, probabilities have {}",
            target.len(),
            n * plane
        )));
    }
    if let Some(v) = target.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidParameter(format!("target value {v} is not binary")));
    }
    Ok((n, 2, plane))
}

/// Constant weight tensor `[N,2,H,W]` for `probs` and a binary `target` `[N,H,W]`.
pub fn weight_tensor<T: Real>(probs: &Tensor<T>, target: &[u8], spec: &LossSpec) -> Result<Tensor<T>> {
    spec.validate()?;
    let (n, c, plane) = check_inputs(probs, target)?;
    let p = probs.data();
    let mut w = vec![T::zero(); n * c * plane];
    for ni in 0..n {
        for v in 0..plane {
            let p1 = p[(ni * c + 1) * plane + v].as_f64();
            let (w0, w1) = spec.voxel_weights(target[ni * plane + v] == 1, p1);
            w[(ni * c) * plane + v] = T::from_f64(w0);
            w[(ni * c + 1) * plane + v] = T::from_f64(w1);
        }
    }
    Tensor::new(probs.shape().to_vec(), w)
}

/// Records the loss on `g` and returns the scalar node.
///
/// `probs` must be a channel softmax output `[N,2,H,W]`; `target` holds one
/// 0/1 label per voxel in `[N,H,W]` order.
pub fn loss<T: Real>(g: &mut Graph<T>, probs: Var, target: &[u8], spec: &LossSpec) -> Result<Var> {
    let w = weight_tensor(g.value(probs), target, spec)?;
    let voxels = target.len();
    let eps = T::from_f64(PROB_EPS);
    let clamped = g.clamp(probs, eps, T::one() - eps);
    let logp = g.log(clamped);
    let wv = g.constant(w);
    let weighted = g.mul(logp, wv)?;
    let total = g.sum(weighted);
    Ok(g.scale(total, -T::one() / T::from_f64(voxels as f64)))
}

/// Loss value without recording gradients.
pub fn loss_value<T: Real>(probs: &Tensor<T>, target: &[u8], spec: &LossSpec) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(probs.clone());
    let l = loss(&mut g, p, target, spec)?;
    Ok(g.value(l).item().as_f64())
}

pub fn ce_loss<T: Real>(g: &mut Graph<T>, probs: Var, target: &[u8]) -> Result<Var> {
    loss(g, probs, target, &LossSpec::ce())
}

pub fn class_weighted_loss<T: Real>(g: &mut Graph<T>, probs: Var, target: &[u8], alpha: f64) -> Result<Var> {
    loss(g, probs, target, &LossSpec::class_weighted(alpha))
}

pub fn bootstrap_loss<T: Real>(g: &mut Graph<T>, probs: Var, target: &[u8], beta: f64) -> Result<Var> {
    loss(g, probs, target, &LossSpec::bootstrap(beta))
}

pub fn lopsided_bootstrap_loss<T: Real>(
    g: &mut Graph<T>,
    probs: Var,
    target: &[u8],
    alpha: f64,
    beta: f64,
) -> Result<Var> {
    loss(g, probs, target, &LossSpec::lopsided(alpha, beta))
}

/// Histogram of lesion probabilities over `bins` equal-width bins on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbHistogram {
    pub counts: Vec<u64>,
}

impl ProbHistogram {
    pub fn new(bins: usize) -> Self {
        Self {
            counts: vec![0; bins.max(1)],
        }
    }

    #[inline]
    pub fn add(&mut self, p: f64) {
        let bins = self.counts.len();
        let i = ((p.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        self.counts[i] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &ProbHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Shannon entropy (nats) of the renormalised histogram; 0 when empty.
    pub fn entropy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let t = total as f64;
        -self
            .counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let q = c as f64 / t;
                q * q.ln()
            })
            .sum::<f64>()
    }
}

pub const ENTROPY_BINS: usize = 100;

/// Entropy of the histogram of `probs` over `bins` bins.
pub fn lesion_prob_entropy(probs: impl IntoIterator<Item = f64>, bins: usize) -> f64 {
    let mut h = ProbHistogram::new(bins);
    for p in probs {
        h.add(p);
    }
    h.entropy()
}
