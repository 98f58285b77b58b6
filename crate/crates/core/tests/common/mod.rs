//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use fnlab::censor::{censor_size_based, censor_stochastic};
use fnlab::detect::Connectivity;
use fnlab::gradcore::{Graph, Tensor, Var};
use fnlab::losses::{self, LossSpec, GRID_ALPHAS, GRID_BETAS};
use fnlab::metrics::{self, DuplicatePolicy, PrCurve, ScoredDetection};
use fnlab::phantom::{generate_case, Case, Lesion, LesionSet, PhantomSpec};
use fnlab::segnet::{LayerSpec, ModelConfig, SegNet};
use fnlab::volume::{linear_index, voxel_at, voxel_count, Dims, Volume3, Volume4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Result of one acceptance check.
pub struct Outcome {
    pub ok: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(ok: bool, detail: impl Into<String>) -> Self {
        Self { ok, detail: detail.into() }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

// ---------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;
/// Denominator floor so that near-zero gradients are compared absolutely.
const FD_FLOOR: f64 = 1e-2;

pub type Build<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Var + 'a;

fn evaluate(inputs: &[Tensor<f64>], build: &Build<'_>) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.value(out).item()
}

/// Largest relative error between reverse-mode and central-difference
/// gradients over every element of every input.
pub fn max_fd_error(inputs: &[Tensor<f64>], build: &Build<'_>) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.backward(out).unwrap();
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().clone()).collect();

    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (evaluate(&plus, build) - evaluate(&minus, build)) / (2.0 * FD_STEP);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Reduces a tensor to a scalar through fixed random weights so that every
/// element contributes to the gradient.
pub fn weighted_sum(g: &mut Graph<f64>, x: Var, seed: u64) -> Var {
    let shape = g.value(x).shape().to_vec();
    let mut r = rng(seed);
    let w = g.constant(random_tensor(&mut r, &shape, 1.0));
    let prod = g.mul(x, w).unwrap();
    g.sum(prod)
}

/// Logits whose two-class softmax stays clear of the 0.5 argmax boundary, so
/// a finite-difference step never flips a bootstrap target.
pub fn logits_away_from_tie(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    assert_eq!(c, 2);
    let mut data = vec![0.0; n * c * plane];
    for ni in 0..n {
        for p in 0..plane {
            let sign = if r.gen::<bool>() { 1.0 } else { -1.0 };
            let gap = sign * r.gen_range(0.3..2.5);
            let base = r.gen_range(-1.0..1.0);
            data[ni * 2 * plane + p] = base;
            data[ni * 2 * plane + plane + p] = base + gap;
        }
    }
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn random_target(r: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    (0..len).map(|_| r.gen_bool(0.4) as u8).collect()
}

/// Every loss the grid can produce plus the plain variants.
pub fn all_losses() -> Vec<LossSpec> {
    let mut v = vec![LossSpec::ce(), LossSpec::bootstrap(0.5), LossSpec::bootstrap(1.0)];
    for &a in &GRID_ALPHAS {
        v.push(LossSpec::class_weighted(a));
        for &b in &GRID_BETAS {
            v.push(LossSpec::lopsided(a, b));
        }
    }
    v
}

/// `(name, max relative error)` for every op and loss.
pub fn gradient_report() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut r = rng(1);

    let x = random_tensor(&mut r, &[2, 3, 5, 4], 1.0);
    let k = random_tensor(&mut r, &[2, 3, 3, 3], 0.5);
    let b = random_tensor(&mut r, &[2], 0.5);
    out.push((
        "conv2d".into(),
        max_fd_error(&[x.clone(), k, b], &|g, v| {
            let y = g.conv2d(v[0], v[1], v[2]).unwrap();
            weighted_sum(g, y, 2)
        }),
    ));
    let k1 = random_tensor(&mut r, &[4, 3, 1, 1], 0.5);
    let b1 = random_tensor(&mut r, &[4], 0.5);
    out.push((
        "conv2d 1x1".into(),
        max_fd_error(&[x.clone(), k1, b1], &|g, v| {
            let y = g.conv2d(v[0], v[1], v[2]).unwrap();
            weighted_sum(g, y, 3)
        }),
    ));

    let away_from_zero = Tensor::from_fn(&[1, 2, 3, 3], |i| {
        let m = 0.05 + 0.1 * (i % 7) as f64;
        if i % 2 == 0 { m } else { -m }
    });
    out.push((
        "relu".into(),
        max_fd_error(&[away_from_zero.clone()], &|g, v| {
            let y = g.relu(v[0]);
            weighted_sum(g, y, 4)
        }),
    ));
    let logits3 = random_tensor(&mut r, &[2, 3, 2, 2], 2.0);
    out.push((
        "softmax_channels".into(),
        max_fd_error(&[logits3], &|g, v| {
            let y = g.softmax_channels(v[0]).unwrap();
            weighted_sum(g, y, 5)
        }),
    ));
    let a = random_tensor(&mut r, &[3, 4], 1.0);
    let c = random_tensor(&mut r, &[3, 4], 1.0);
    out.push((
        "add".into(),
        max_fd_error(&[a.clone(), c.clone()], &|g, v| {
            let y = g.add(v[0], v[1]).unwrap();
            weighted_sum(g, y, 6)
        }),
    ));
    out.push((
        "mul".into(),
        max_fd_error(&[a.clone(), c], &|g, v| {
            let y = g.mul(v[0], v[1]).unwrap();
            weighted_sum(g, y, 7)
        }),
    ));
    let positive = Tensor::from_fn(&[3, 4], |i| 0.2 + 0.15 * i as f64);
    out.push((
        "log".into(),
        max_fd_error(&[positive.clone()], &|g, v| {
            let y = g.log(v[0]);
            weighted_sum(g, y, 8)
        }),
    ));
    out.push((
        "clamp".into(),
        max_fd_error(&[away_from_zero], &|g, v| {
            let y = g.clamp(v[0], -0.3, 0.4);
            weighted_sum(g, y, 9)
        }),
    ));
    out.push((
        "scale".into(),
        max_fd_error(&[a.clone()], &|g, v| {
            let y = g.scale(v[0], -1.7);
            weighted_sum(g, y, 10)
        }),
    ));
    out.push((
        "mean".into(),
        max_fd_error(&[a], &|g, v| {
            let sq = g.mul(v[0], v[0]).unwrap();
            g.mean(sq)
        }),
    ));

    for spec in all_losses() {
        let logits = logits_away_from_tie(&mut r, &[1, 2, 4, 4]);
        let target = random_target(&mut r, 16);
        let err = max_fd_error(&[logits], &|g, v| {
            let p = g.softmax_channels(v[0]).unwrap();
            losses::loss(g, p, &target, &spec).unwrap()
        });
        out.push((format!("loss {}", spec.label()), err));
    }

    out.push(("3-layer net".into(), network_fd_error(11)));
    out
}

/// Gradient check through a random 3-layer network and lopsided loss,
/// with respect to every parameter and the input.
///
/// Instances whose output probability comes within 0.05 of the argmax tie
/// are redrawn (with the next seed), since the bootstrap target is
/// discontinuous there.
pub fn network_fd_error(seed: u64) -> f64 {
    let cfg = ModelConfig {
        context_slices: 1,
        channels_per_slice: 2,
        layers: vec![
            LayerSpec { filters: 3, kernel: 3 },
            LayerSpec { filters: 3, kernel: 3 },
            LayerSpec { filters: 2, kernel: 1 },
        ],
    };
    let spec = LossSpec::lopsided(3.0, 0.5);
    for s in seed.. {
        let model = SegNet::<f64>::init(&cfg, s).unwrap();
        let mut r = rng(s);
        let input = random_tensor(&mut r, &[1, 2, 5, 5], 1.0);
        let target = random_target(&mut r, 25);
        let probs = model.predict(input.clone()).unwrap();
        if probs.data().iter().any(|p| (p - 0.5).abs() < 0.05) {
            continue;
        }
        let n_params = model.params.len();
        let mut inputs = model.params.clone();
        inputs.push(input);
        return max_fd_error(&inputs, &|g, v| {
            let x = v[n_params];
            let probs = model.forward(g, &v[..n_params], x).unwrap();
            losses::loss(g, probs, &target, &spec).unwrap()
        });
    }
    unreachable!()
}

pub fn gradient_suite() -> Outcome {
    let report = gradient_report();
    let (worst_name, worst) = report
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap();
    let ok = report.iter().all(|(_, e)| *e <= FD_TOL);
    Outcome::new(
        ok,
        format!("{} checks, worst rel err {worst:.2e} ({worst_name})", report.len()),
    )
}

// ---------------------------------------------------------------- losses

pub fn single_voxel(p: f64) -> Tensor<f64> {
    Tensor::new(vec![1, 2, 1, 1], vec![1.0 - p, p]).unwrap()
}

pub fn loss_identity_suite() -> Outcome {
    let mut r = rng(21);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let logits = random_tensor(&mut r, &[2, 2, 4, 4], 3.0);
        let mut g = Graph::new();
        let l = g.constant(logits);
        let sm = g_softmax(&mut g, l);
        let probs = g.value(sm).clone();
        let target = random_target(&mut r, 32);
        let v = |s: LossSpec| losses::loss_value(&probs, &target, &s).unwrap();
        worst = worst.max((v(LossSpec::class_weighted(1.0)) - v(LossSpec::ce())).abs());
        worst = worst.max((v(LossSpec::bootstrap(0.0)) - v(LossSpec::ce())).abs());
        let alpha = [1.0, 3.0, 10.0, 30.0][trial % 4];
        worst = worst.max((v(LossSpec::lopsided(alpha, 0.0)) - v(LossSpec::class_weighted(alpha))).abs());
    }

    let hand = |p: f64, y: u8, s: LossSpec| losses::loss_value(&single_voxel(p), &[y], &s).unwrap();
    let cases = [
        (hand(0.8, 1, LossSpec::ce()), -(0.8f64).ln()),
        (hand(0.8, 1, LossSpec::class_weighted(3.0)), -3.0 * (0.8f64).ln()),
        (hand(0.8, 0, LossSpec::bootstrap(0.5)), -0.5 * (0.2f64).ln() - 0.5 * (0.8f64).ln()),
        (hand(0.8, 1, LossSpec::lopsided(3.0, 0.1)), -3.0 * (0.8f64).ln()),
        (hand(0.8, 1, LossSpec::lopsided(3.0, 1.0)), -3.0 * (0.8f64).ln()),
        (hand(0.9, 0, LossSpec::lopsided(7.0, 0.1)), -0.9 * (0.1f64).ln() - 0.1 * (0.9f64).ln()),
    ];
    let hand_err = cases.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let rounded = [0.22314, 0.66943, 0.91629, 0.66943, 0.66943, 2.0828626];
    let rounding_ok = cases
        .iter()
        .zip(rounded)
        .all(|((_, exact), r)| (exact - r).abs() < 5e-6);
    let ok = worst <= 1e-12 && hand_err <= 1e-12 && rounding_ok;
    Outcome::new(
        ok,
        format!("identity max diff {worst:.1e}, hand-value max diff {hand_err:.1e}"),
    )
}

fn g_softmax(g: &mut Graph<f64>, x: Var) -> Var {
    g.softmax_channels(x).unwrap()
}

// ---------------------------------------------------------------- conv

/// Direct six-loop same-padded convolution, `[N,C,H,W] * [F,C,k,k] + [F]`.
pub fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, ks) = (k.shape()[0], k.shape()[2]);
    let pad = (ks / 2) as isize;
    let xi = |ni: usize, ci: usize, y: usize, xx: usize| x.data()[((ni * c + ci) * h + y) * w + xx];
    let ki = |fi: usize, ci: usize, dy: usize, dx: usize| k.data()[((fi * c + ci) * ks + dy) * ks + dx];
    let mut out = vec![0.0; n * f * h * w];
    for ni in 0..n {
        for fi in 0..f {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = b.data()[fi];
                    for ci in 0..c {
                        for dy in 0..ks {
                            for dx in 0..ks {
                                let sy = y as isize + dy as isize - pad;
                                let sx = xx as isize + dx as isize - pad;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    acc += xi(ni, ci, sy as usize, sx as usize) * ki(fi, ci, dy, dx);
                                }
                            }
                        }
                    }
                    out[((ni * f + fi) * h + y) * w + xx] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, f, h, w], out).unwrap()
}

// ---------------------------------------------------------------- components

pub fn random_mask(r: &mut ChaCha8Rng, dims: Dims, density: f64) -> Volume3<u8> {
    let data = (0..voxel_count(dims)).map(|_| r.gen_bool(density) as u8).collect();
    Volume3::from_vec(dims, [1.0; 3], data).unwrap()
}

fn neighbours(conn: Connectivity) -> Vec<[isize; 3]> {
    let mut v = Vec::new();
    for dz in -1isize..=1 {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let nonzero = (dx != 0) as u32 + (dy != 0) as u32 + (dz != 0) as u32;
                let keep = match conn {
                    Connectivity::Faces => nonzero == 1,
                    Connectivity::Edges => nonzero == 1 || nonzero == 2,
                    Connectivity::Corners => nonzero >= 1,
                };
                if keep {
                    v.push([dx, dy, dz]);
                }
            }
        }
    }
    v
}

fn fill(mask: &Volume3<u8>, label: &mut [usize], at: usize, id: usize, offs: &[[isize; 3]]) {
    label[at] = id;
    let dims = mask.dims();
    let v = voxel_at(dims, at);
    for o in offs {
        let p = [v[0] as isize + o[0], v[1] as isize + o[1], v[2] as isize + o[2]];
        if (0..3).any(|a| p[a] < 0 || p[a] as usize >= dims[a]) {
            continue;
        }
        let q = linear_index(dims, [p[0] as usize, p[1] as usize, p[2] as usize]);
        if mask.data()[q] != 0 && label[q] == 0 {
            fill(mask, label, q, id, offs);
        }
    }
}

/// Recursive flood fill. Components as sorted linear-index lists, ordered by
/// their smallest index.
pub fn flood_fill_components(mask: &Volume3<u8>, conn: Connectivity) -> Vec<Vec<usize>> {
    let offs = neighbours(conn);
    let mut label = vec![0usize; mask.data().len()];
    let mut next = 0;
    for i in 0..label.len() {
        if mask.data()[i] != 0 && label[i] == 0 {
            next += 1;
            fill(mask, &mut label, i, next, &offs);
        }
    }
    let mut comps = vec![Vec::new(); next];
    for (i, &l) in label.iter().enumerate() {
        if l > 0 {
            comps[l - 1].push(i);
        }
    }
    comps
}

pub fn canonical(mut comps: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    for c in comps.iter_mut() {
        c.sort_unstable();
    }
    comps.sort();
    comps
}

pub fn cc_oracle_suite(grids: usize) -> Outcome {
    let mut r = rng(31);
    let mut mismatches = 0;
    for i in 0..grids {
        let density = [0.1, 0.25, 0.4][i % 3];
        let mask = random_mask(&mut r, [16, 16, 16], density);
        for conn in [Connectivity::Faces, Connectivity::Edges, Connectivity::Corners] {
            let got = canonical(fnlab::detect::connected_components_3d(&mask, conn));
            let want = canonical(flood_fill_components(&mask, conn));
            if got != want {
                mismatches += 1;
            }
        }
    }
    Outcome::new(
        mismatches == 0,
        format!("{grids} grids x 3 connectivities, {mismatches} mismatches"),
    )
}

// ---------------------------------------------------------------- PR / mAP

pub fn random_detections(r: &mut ChaCha8Rng, max_n: usize) -> (Vec<ScoredDetection>, usize) {
    let n_gt = r.gen_range(1..=6usize);
    let n = r.gen_range(0..=max_n);
    // a small confidence alphabet forces ties
    let levels = r.gen_range(1..=6u32);
    let dets = (0..n)
        .map(|_| ScoredDetection {
            confidence: (r.gen_range(0..levels) as f64 + 1.0) / (levels as f64 + 1.0),
            hit: r.gen_bool(0.6).then(|| (0usize, r.gen_range(0..n_gt as u32))),
        })
        .collect();
    (dets, n_gt)
}

/// Average precision by recomputing precision and recall from scratch at
/// every candidate threshold.
pub fn brute_force_map(dets: &[ScoredDetection], n_gt: usize, policy: DuplicatePolicy) -> f64 {
    let thresholds: BTreeSet<u64> = dets.iter().map(|d| d.confidence.to_bits()).collect();
    let mut ts: Vec<f64> = thresholds.into_iter().map(f64::from_bits).collect();
    ts.sort_by(|a, b| b.total_cmp(a));
    let mut prev = 0.0;
    let mut area = 0.0;
    for t in ts {
        let kept: Vec<&ScoredDetection> = dets.iter().filter(|d| d.confidence >= t).collect();
        let distinct: BTreeSet<(usize, u32)> = kept.iter().filter_map(|d| d.hit).collect();
        let tp = match policy {
            DuplicatePolicy::CountAsTp => kept.iter().filter(|d| d.hit.is_some()).count(),
            DuplicatePolicy::CountAsFp => distinct.len(),
        };
        let precision = tp as f64 / kept.len() as f64;
        let recall = distinct.len() as f64 / n_gt as f64;
        area += (recall - prev) * precision;
        prev = recall;
    }
    area
}

pub fn map_of(dets: &[ScoredDetection], n_gt: usize, policy: DuplicatePolicy) -> f64 {
    let pr: PrCurve = metrics::pr_curve_from(dets, n_gt, policy).unwrap();
    metrics::mean_average_precision(&pr)
}

pub fn map_oracle_suite(instances: usize) -> Outcome {
    let mut r = rng(41);
    let mut mismatches = 0;
    for _ in 0..instances {
        let (dets, n_gt) = random_detections(&mut r, 10);
        for policy in [DuplicatePolicy::CountAsTp, DuplicatePolicy::CountAsFp] {
            if map_of(&dets, n_gt, policy) != brute_force_map(&dets, n_gt, policy) {
                mismatches += 1;
            }
        }
    }
    Outcome::new(mismatches == 0, format!("{instances} instances x 2 policies, {mismatches} mismatches"))
}

pub fn hanley_suite() -> Outcome {
    let se = |a, p, n| metrics::hanley_mcneil_se(a, p, n).unwrap();
    let ci = |a, p, n| metrics::hanley_mcneil_ci(a, p, n).unwrap();
    let mut errs = vec![
        (se(0.5, 1, 1) - 0.5).abs(),
        (se(1.0, 5, 7) - 0.0).abs(),
        (se(0.0, 5, 7) - 0.0).abs(),
    ];
    let (lo, hi) = ci(0.5, 1, 1);
    errs.push((lo - 0.0).abs());
    errs.push((hi - 1.0).abs());
    let (lo, hi) = ci(1.0, 3, 3);
    errs.push((lo - 1.0).abs() + (hi - 1.0).abs());
    // A = 0.8, n_pos = 10, n_neg = 20 substituted by hand
    let (a, np, nn) = (0.8f64, 10.0, 20.0);
    let q1 = a / (2.0 - a);
    let q2 = 2.0 * a * a / (1.0 + a);
    let want = ((a * (1.0 - a) + (np - 1.0) * (q1 - a * a) + (nn - 1.0) * (q2 - a * a)) / (np * nn)).sqrt();
    errs.push((se(0.8, 10, 20) - want).abs());
    let (lo, hi) = ci(0.46, 322, 500);
    let shape_ok = lo > 0.0 && hi < 1.0 && hi - lo < 0.1 && ((0.46 - lo) - (hi - 0.46)).abs() < 1e-12;
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    Outcome::new(worst <= 1e-12 && shape_ok, format!("max diff {worst:.1e}"))
}

// ---------------------------------------------------------------- censoring

/// A case with `n` lesions of distinct volumes and no image content; enough
/// for censoring, which only looks at lesion ids and volumes.
pub fn synthetic_case(id: usize, n: usize, r: &mut ChaCha8Rng) -> Case {
    let dims = [4, 4, 4];
    let lesions = (0..n)
        .map(|i| {
            let mut l = Lesion::from_voxels(i as u32, vec![voxel_at(dims, i % 64)], dims, [1.0; 3]);
            l.volume_mm3 = r.gen_range(1.0..500.0);
            l
        })
        .collect();
    Case {
        id,
        seed: id as u64,
        volume: Volume4::zeros(1, dims, [1.0; 3]),
        lesions: LesionSet { lesions },
    }
}

pub fn lesion_pool(n_cases: usize, per_case: usize, seed: u64) -> Vec<Case> {
    let mut r = rng(seed);
    (0..n_cases).map(|i| synthetic_case(i, per_case, &mut r)).collect()
}

/// Two-sided 99.9% interval of Binomial(n, p) from the exact pmf.
pub fn binomial_interval(n: usize, p: f64, mass: f64) -> (usize, usize) {
    let mut pmf = vec![0.0f64; n + 1];
    let mut log_c = 0.0f64;
    for k in 0..=n {
        if k > 0 {
            log_c += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        pmf[k] = (log_c + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp();
    }
    let tail = (1.0 - mass) / 2.0;
    let mut acc = 0.0;
    let mut lo = 0;
    while acc + pmf[lo] <= tail {
        acc += pmf[lo];
        lo += 1;
    }
    let mut acc = 0.0;
    let mut hi = n;
    while acc + pmf[hi] <= tail {
        acc += pmf[hi];
        hi -= 1;
    }
    (lo, hi)
}

pub fn censor_stats_suite() -> Outcome {
    let cases = lesion_pool(40, 10, 51);
    let refs: Vec<&Case> = cases.iter().collect();
    let n = 400;
    let (lo, hi) = binomial_interval(n, 0.5, 0.999);
    let mut in_interval = true;
    let mut rates = Vec::new();
    for seed in 0..100u64 {
        let plan = censor_stochastic(&refs, 0.5, seed).unwrap();
        let k = plan.removed.len();
        in_interval &= (lo..=hi).contains(&k);
        rates.push(plan.achieved_rate);
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;

    let volume = |r: &fnlab::censor::LesionRef| cases[r.case_id].lesions.get(r.lesion_id).unwrap().volume_mm3;
    let mut size_ok = true;
    let mut prev: BTreeSet<fnlab::censor::LesionRef> = BTreeSet::new();
    for i in 1..=9 {
        let p = i as f64 / 10.0;
        let plan = censor_size_based(&refs, p).unwrap();
        let removed = plan.removed_set();
        let max_removed = removed.iter().map(volume).fold(f64::NEG_INFINITY, f64::max);
        let min_retained = cases
            .iter()
            .flat_map(|c| c.lesions.iter().map(move |l| (c.id, l)))
            .filter(|(cid, l)| !removed.contains(&fnlab::censor::LesionRef { case_id: *cid, lesion_id: l.id }))
            .map(|(_, l)| l.volume_mm3)
            .fold(f64::INFINITY, f64::min);
        size_ok &= max_removed <= min_retained;
        size_ok &= prev.is_subset(&removed);
        size_ok &= removed.len() == (p * n as f64).floor() as usize;
        prev = removed;
    }
    let ok = in_interval && (mean - 0.5).abs() <= 0.02 && size_ok;
    Outcome::new(
        ok,
        format!(
            "removals within [{lo}, {hi}] for all 100 seeds: {in_interval}; mean rate {mean:.4}; size plans ordered and nested: {size_ok}"
        ),
    )
}

/// Phantom spec small enough for quick tests.
pub fn small_phantom(seed: u64) -> PhantomSpec {
    PhantomSpec {
        dims: [24, 24, 16],
        lesions_per_case: (2, 5),
        radius_mm: (1.5, 3.5),
        test_bands: vec![(1, 2), (3, 5)],
        seed,
        ..PhantomSpec::default()
    }
}

pub fn small_case(seed: u64) -> Case {
    generate_case(&small_phantom(seed), 0).unwrap()
}
