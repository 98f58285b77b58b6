//! Lesion-level precision-recall analysis and run summaries.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::detect::{DetectionLabel, MatchResult};
use crate::error::{Error, Result};
use crate::phantom::equivalent_diameter_mm;

/// How a second (or later) true positive on an already-detected lesion is
/// counted in precision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplicatePolicy {
    /// Still a true positive; adds nothing to recall.
    #[default]
    CountAsTp,
    /// Treated as a false positive.
    CountAsFp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct confidence, in descending threshold order.
    pub points: Vec<PrPoint>,
    pub n_gt: usize,
    /// False positives once every detection is included.
    pub n_fp: usize,
}

/// A detection reduced to what the PR sweep needs: its confidence and the
/// `(case, lesion)` it hit, if any.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredDetection {
    pub confidence: f64,
    pub hit: Option<(usize, u32)>,
}

pub fn scored_detections(matches: &[MatchResult]) -> Vec<ScoredDetection> {
    matches
        .iter()
        .flat_map(|m| {
            m.detections.iter().map(move |d| ScoredDetection {
                confidence: d.confidence,
                hit: match d.label {
                    DetectionLabel::Tp => d.matched_lesion.map(|l| (m.case_id, l)),
                    DetectionLabel::Fp => None,
                },
            })
        })
        .collect()
}

pub fn total_gt(matches: &[MatchResult]) -> usize {
    matches.iter().map(|m| m.gt_status.len()).sum()
}

/// Threshold sweep over pooled detections.
///
/// At each distinct confidence `t` (descending) all detections with
/// confidence `>= t` are included; precision is TP / included and recall is
/// the number of distinct lesions hit divided by `n_gt`.
pub fn pr_curve_from(dets: &[ScoredDetection], n_gt: usize, policy: DuplicatePolicy) -> Result<PrCurve> {
    if n_gt == 0 {
        return Err(Error::Undefined("recall needs at least one ground-truth lesion".into()));
    }
    let mut order: Vec<&ScoredDetection> = dets.iter().collect();
    order.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));

    let mut hit = BTreeSet::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let t = order[i].confidence;
        while i < order.len() && order[i].confidence == t {
            match order[i].hit {
                Some(key) => {
                    let fresh = hit.insert(key);
                    if fresh || policy == DuplicatePolicy::CountAsTp {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
                None => fp += 1,
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: tp as f64 / (tp + fp) as f64,
            recall: hit.len() as f64 / n_gt as f64,
        });
    }
    Ok(PrCurve {
        points,
        n_gt,
        n_fp: fp,
    })
}

pub fn pr_curve(matches: &[MatchResult], policy: DuplicatePolicy) -> Result<PrCurve> {
    pr_curve_from(&scored_detections(matches), total_gt(matches), policy)
}

/// Area under the PR curve by step integration from recall 0:
/// `sum_i (r_i - r_{i-1}) * p_i`.
pub fn mean_average_precision(pr: &PrCurve) -> f64 {
    let mut prev = 0.0;
    let mut area = 0.0;
    for p in &pr.points {
        area += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    area
}

pub fn hanley_mcneil_se(a: f64, n_pos: usize, n_neg: usize) -> Result<f64> {
    if n_pos < 1 || n_neg < 1 {
        return Err(Error::Undefined(format!(
            "Hanley-McNeil needs n_pos >= 1 and n_neg >= 1, got {n_pos} and {n_neg}"
        )));
    }
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::InvalidParameter(format!("area {a} outside [0, 1]")));
    }
    let q1 = a / (2.0 - a);
    let q2 = 2.0 * a * a / (1.0 + a);
    let (np, nn) = (n_pos as f64, n_neg as f64);
    let var = (a * (1.0 - a) + (np - 1.0) * (q1 - a * a) + (nn - 1.0) * (q2 - a * a)) / (np * nn);
    Ok(var.max(0.0).sqrt())
}

/// 95% interval `a +- 1.96 SE`, clipped to `[0, 1]`.
pub fn hanley_mcneil_ci(a: f64, n_pos: usize, n_neg: usize) -> Result<(f64, f64)> {
    let se = hanley_mcneil_se(a, n_pos, n_neg)?;
    Ok(((a - 1.96 * se).max(0.0), (a + 1.96 * se).min(1.0)))
}

/// Fraction of ground-truth lesions hit by at least one component.
pub fn max_sensitivity(matches: &[MatchResult]) -> f64 {
    let n = total_gt(matches);
    if n == 0 {
        return 0.0;
    }
    let hit: usize = matches.iter().map(|m| m.n_detected()).sum();
    hit as f64 / n as f64
}

/// Mean DICE over all true-positive components; 0 when there are none.
pub fn tp_dice_mean(matches: &[MatchResult]) -> f64 {
    let dices: Vec<f64> = matches
        .iter()
        .flat_map(|m| m.detections.iter().filter_map(|d| d.dice))
        .collect();
    if dices.is_empty() {
        0.0
    } else {
        dices.iter().sum::<f64>() / dices.len() as f64
    }
}

pub const DEFAULT_DIAMETER_EDGES: [f64; 4] = [2.0, 4.0, 6.0, 10.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub lo_mm: f64,
    /// `None` for the open-ended last bin.
    pub hi_mm: Option<f64>,
    pub n_gt: usize,
    pub n_detected: usize,
}

impl Stratum {
    pub fn detection_rate(&self) -> Option<f64> {
        (self.n_gt > 0).then(|| self.n_detected as f64 / self.n_gt as f64)
    }

    pub fn label(&self) -> String {
        match self.hi_mm {
            Some(hi) => format!("[{}, {})", self.lo_mm, hi),
            None => format!("[{}, inf)", self.lo_mm),
        }
    }
}

/// Detection counts per equivalent-sphere-diameter bin. `edges` are the
/// interior bin boundaries; bins are `[0, e0), [e0, e1), ..., [e_last, inf)`.
pub fn size_strata(matches: &[MatchResult], edges: &[f64]) -> Vec<Stratum> {
    let mut bounds = vec![0.0];
    bounds.extend_from_slice(edges);
    let mut strata: Vec<Stratum> = bounds
        .iter()
        .enumerate()
        .map(|(i, &lo)| Stratum {
            lo_mm: lo,
            hi_mm: bounds.get(i + 1).copied(),
            n_gt: 0,
            n_detected: 0,
        })
        .collect();
    for g in matches.iter().flat_map(|m| &m.gt_status) {
        let d = equivalent_diameter_mm(g.volume_mm3);
        let k = edges.iter().take_while(|&&e| d >= e).count();
        strata[k].n_gt += 1;
        strata[k].n_detected += g.detected as usize;
    }
    strata
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropySummary {
    pub lesion_h: f64,
    pub normal_h: f64,
    pub bins: usize,
}

/// Headline numbers of one evaluated model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub map: f64,
    pub map_ci95: (f64, f64),
    /// `(n_pos, n_neg)` fed to the interval.
    pub ci_counts: (usize, usize),
    pub max_sensitivity: f64,
    pub tp_dice_mean: f64,
    pub n_gt: usize,
    pub n_detections: usize,
    pub n_tp: usize,
}

pub fn summarize_detections(matches: &[MatchResult], policy: DuplicatePolicy) -> Result<DetectionSummary> {
    let pr = pr_curve(matches, policy)?;
    let map = mean_average_precision(&pr);
    let ci = if pr.n_fp == 0 {
        hanley_mcneil_ci(map, pr.n_gt, 1)?
    } else {
        hanley_mcneil_ci(map, pr.n_gt, pr.n_fp)?
    };
    let n_det: usize = matches.iter().map(|m| m.detections.len()).sum();
    let n_tp: usize = matches
        .iter()
        .map(|m| m.detections.iter().filter(|d| d.label == DetectionLabel::Tp).count())
        .sum();
    Ok(DetectionSummary {
        map,
        map_ci95: ci,
        ci_counts: (pr.n_gt, pr.n_fp.max(1)),
        max_sensitivity: max_sensitivity(matches),
        tp_dice_mean: tp_dice_mean(matches),
        n_gt: pr.n_gt,
        n_detections: n_det,
        n_tp,
    })
}
