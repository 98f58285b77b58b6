//! Lesion-level detection: probability maps become 3D connected components,
//! each matched against ground-truth lesions by centroid distance.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{Lesion, LesionSet};
use crate::volume::{
    centroid_mm, voxel_at, voxel_center_mm, voxel_count, voxel_volume_mm3, Spacing, Volume3,
    Voxel,
};

pub const DEFAULT_THRESHOLD: f64 = 0.10;
pub const DEFAULT_TOLERANCE_MM: f64 = 1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Faces,
    #[serde(rename = "18")]
    Edges,
    #[default]
    #[serde(rename = "26")]
    Corners,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Self::Faces),
            18 => Ok(Self::Edges),
            26 => Ok(Self::Corners),
            _ => Err(Error::InvalidParameter(format!(
                "connectivity must be 6, 18 or 26, got {n}"
            ))),
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Self::Faces => 6,
            Self::Edges => 18,
            Self::Corners => 26,
        }
    }

    /// Neighbour offsets `(dx, dy, dz)`.
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let max = match self {
            Self::Faces => 1,
            Self::Edges => 2,
            Self::Corners => 3,
        };
        let mut out = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let l1 = dx.abs() + dy.abs() + dz.abs();
                    if l1 > 0 && l1 <= max {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Foreground where `prob >= threshold`.
pub fn binarize(prob: &Volume3<f32>, threshold: f64) -> Volume3<u8> {
    let data = prob
        .data()
        .iter()
        .map(|&p| (p as f64 >= threshold) as u8)
        .collect();
    Volume3::from_vec(prob.dims(), prob.spacing(), data).expect("same dims")
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

/// Connected components of the foreground of `mask`, as lists of linear voxel
/// indices.
///
/// Two-pass union-find labelling. Components are ordered by their smallest
/// linear index; voxels within a component are ascending.
pub fn connected_components_3d(mask: &Volume3<u8>, connectivity: Connectivity) -> Vec<Vec<usize>> {
    let dims = mask.dims();
    let data = mask.data();
    let n = voxel_count(dims);
    // Offsets that precede the current voxel in scan order.
    let back: Vec<[isize; 3]> = connectivity
        .offsets()
        .into_iter()
        .filter(|d| d[2] < 0 || (d[2] == 0 && (d[1] < 0 || (d[1] == 0 && d[0] < 0))))
        .collect();

    const NONE: u32 = u32::MAX;
    let mut label = vec![NONE; n];
    let mut parent: Vec<u32> = Vec::new();
    for idx in 0..n {
        if data[idx] == 0 {
            continue;
        }
        let v = voxel_at(dims, idx);
        let mut mine = NONE;
        for d in &back {
            let q = [v[0] as isize + d[0], v[1] as isize + d[1], v[2] as isize + d[2]];
            if (0..3).any(|a| q[a] < 0 || q[a] as usize >= dims[a]) {
                continue;
            }
            let j = (q[2] as usize * dims[1] + q[1] as usize) * dims[0] + q[0] as usize;
            let lj = label[j];
            if lj == NONE {
                continue;
            }
            if mine == NONE {
                mine = find(&mut parent, lj);
            } else {
                let (a, b) = (find(&mut parent, mine), find(&mut parent, lj));
                if a != b {
                    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                    parent[hi as usize] = lo;
                    mine = lo;
                }
            }
        }
        if mine == NONE {
            mine = parent.len() as u32;
            parent.push(mine);
        }
        label[idx] = mine;
    }

    let mut slot = vec![NONE; parent.len()];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for idx in 0..n {
        if label[idx] == NONE {
            continue;
        }
        let root = find(&mut parent, label[idx]) as usize;
        if slot[root] == NONE {
            slot[root] = comps.len() as u32;
            comps.push(Vec::new());
        }
        comps[slot[root] as usize].push(idx);
    }
    comps
}

#[derive(Clone, Debug, PartialEq)]
pub struct Component3D {
    pub voxels: Vec<Voxel>,
    pub centroid_mm: [f64; 3],
    /// Mean lesion probability over the component.
    pub confidence: f64,
    pub volume_mm3: f64,
}

/// Binarizes `prob` and returns its components with centroids and confidences.
pub fn extract_components(prob: &Volume3<f32>, threshold: f64, connectivity: Connectivity) -> Vec<Component3D> {
    let mask = binarize(prob, threshold);
    let dims = prob.dims();
    let spacing = prob.spacing();
    connected_components_3d(&mask, connectivity)
        .into_iter()
        .map(|idxs| {
            let confidence =
                idxs.iter().map(|&i| prob.data()[i] as f64).sum::<f64>() / idxs.len() as f64;
            let voxels: Vec<Voxel> = idxs.iter().map(|&i| voxel_at(dims, i)).collect();
            Component3D {
                centroid_mm: centroid_mm(&voxels, spacing),
                confidence,
                volume_mm3: voxels.len() as f64 * voxel_volume_mm3(spacing),
                voxels,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectionLabel {
    #[serde(rename = "TP")]
    Tp,
    #[serde(rename = "FP")]
    Fp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub voxel_count: usize,
    pub centroid_mm: [f64; 3],
    pub confidence: f64,
    pub volume_mm3: f64,
    pub label: DetectionLabel,
    pub matched_lesion: Option<u32>,
    /// Distance from the centroid to the nearest ground-truth voxel center.
    pub distance_mm: Option<f64>,
    /// Overlap with the matched lesion, for true positives.
    pub dice: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtStatus {
    pub lesion_id: u32,
    pub volume_mm3: f64,
    pub detected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub case_id: usize,
    pub detections: Vec<Detection>,
    pub gt_status: Vec<GtStatus>,
}

impl MatchResult {
    pub fn n_detected(&self) -> usize {
        self.gt_status.iter().filter(|g| g.detected).count()
    }
}

struct LesionIndex<'a> {
    lesion: &'a Lesion,
    lo: [f64; 3],
    hi: [f64; 3],
}

fn bbox_distance(p: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for a in 0..3 {
        let d = (lo[a] - p[a]).max(0.0).max(p[a] - hi[a]);
        s += d * d;
    }
    s.sqrt()
}

fn nearest_voxel_distance(p: [f64; 3], lesion: &Lesion, spacing: Spacing) -> f64 {
    lesion
        .voxels
        .iter()
        .map(|v| {
            let c = voxel_center_mm(*v, spacing);
            ((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2) + (c[2] - p[2]).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Labels each component TP when its centroid lies within `tol_mm` of a voxel
/// center of some ground-truth lesion, recording the nearest such lesion.
pub fn match_components(
    case_id: usize,
    components: &[Component3D],
    gt: &LesionSet,
    spacing: Spacing,
    tol_mm: f64,
) -> Result<MatchResult> {
    if !(tol_mm > 0.0) {
        return Err(Error::InvalidParameter(format!("match tolerance {tol_mm} must be > 0")));
    }
    let index: Vec<LesionIndex> = gt
        .iter()
        .map(|l| {
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for v in &l.voxels {
                let c = voxel_center_mm(*v, spacing);
                for a in 0..3 {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a]);
                }
            }
            LesionIndex { lesion: l, lo, hi }
        })
        .collect();

    let mut detected = vec![false; index.len()];
    let mut detections = Vec::with_capacity(components.len());
    for comp in components {
        let mut best: Option<(f64, usize)> = None;
        for (k, li) in index.iter().enumerate() {
            if bbox_distance(comp.centroid_mm, li.lo, li.hi) > tol_mm {
                continue;
            }
            let d = nearest_voxel_distance(comp.centroid_mm, li.lesion, spacing);
            if d <= tol_mm && best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, k));
            }
        }
        let det = match best {
            Some((d, k)) => {
                detected[k] = true;
                Detection {
                    voxel_count: comp.voxels.len(),
                    centroid_mm: comp.centroid_mm,
                    confidence: comp.confidence,
                    volume_mm3: comp.volume_mm3,
                    label: DetectionLabel::Tp,
                    matched_lesion: Some(index[k].lesion.id),
                    distance_mm: Some(d),
                    dice: Some(tp_dice(&comp.voxels, &index[k].lesion.voxels)),
                }
            }
            None => Detection {
                voxel_count: comp.voxels.len(),
                centroid_mm: comp.centroid_mm,
                confidence: comp.confidence,
                volume_mm3: comp.volume_mm3,
                label: DetectionLabel::Fp,
                matched_lesion: None,
                distance_mm: None,
                dice: None,
            },
        };
        detections.push(det);
    }
    let gt_status = index
        .iter()
        .zip(&detected)
        .map(|(li, &d)| GtStatus {
            lesion_id: li.lesion.id,
            volume_mm3: li.lesion.volume_mm3,
            detected: d,
        })
        .collect();
    Ok(MatchResult {
        case_id,
        detections,
        gt_status,
    })
}

/// `2|A n B| / (|A| + |B|)`; 0 when both sets are empty.
pub fn tp_dice(a: &[Voxel], b: &[Voxel]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let set: HashSet<&Voxel> = a.iter().collect();
    let inter = b.iter().filter(|v| set.contains(v)).count();
    2.0 * inter as f64 / (a.len() + b.len()) as f64
}

/// Full per-case pipeline: binarize, label, match.
pub fn detect_case(
    case_id: usize,
    prob: &Volume3<f32>,
    gt: &LesionSet,
    threshold: f64,
    connectivity: Connectivity,
    tol_mm: f64,
) -> Result<MatchResult> {
    let comps = extract_components(prob, threshold, connectivity);
    match_components(case_id, &comps, gt, prob.spacing(), tol_mm)
}
