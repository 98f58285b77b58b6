//! False-negative injection: whole lesions are deleted from training and
//! validation annotations, either independently at random or smallest-first.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{rasterize_mask, Case, Dataset};
use crate::raster_io;
use crate::seeds::{self, tag};
use crate::volume::Volume3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorMode {
    None,
    Stochastic,
    SizeBased,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LesionRef {
    pub case_id: usize,
    pub lesion_id: u32,
}

pub const SIZE_TIE_BREAK: &str = "volume ascending, then (case_id, lesion_id) ascending";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensorPlan {
    pub mode: CensorMode,
    pub rate: f64,
    pub seed: Option<u64>,
    /// Sorted ascending.
    pub removed: Vec<LesionRef>,
    pub total_lesions: usize,
    pub achieved_rate: f64,
    /// Cases the plan was computed over; only these may be censored.
    pub cases: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tie_break: Option<String>,
}

impl CensorPlan {
    fn build(
        mode: CensorMode,
        rate: f64,
        seed: Option<u64>,
        cases: &[&Case],
        mut removed: Vec<LesionRef>,
    ) -> Self {
        removed.sort();
        let total: usize = cases.iter().map(|c| c.lesions.len()).sum();
        Self {
            mode,
            rate,
            seed,
            achieved_rate: if total == 0 {
                0.0
            } else {
                removed.len() as f64 / total as f64
            },
            removed,
            total_lesions: total,
            cases: cases.iter().map(|c| c.id).collect(),
            tie_break: (mode == CensorMode::SizeBased).then(|| SIZE_TIE_BREAK.to_string()),
        }
    }

    /// Plan that removes nothing.
    pub fn none(cases: &[&Case]) -> Self {
        Self::build(CensorMode::None, 0.0, None, cases, Vec::new())
    }

    pub fn removed_set(&self) -> BTreeSet<LesionRef> {
        self.removed.iter().copied().collect()
    }

    pub fn is_removed(&self, r: LesionRef) -> bool {
        self.removed.binary_search(&r).is_ok()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        raster_io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        raster_io::read_json(path)
    }
}

fn check_rate(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("censoring rate {p} outside [0, 1]")));
    }
    Ok(())
}

/// Removes each lesion independently with probability `p`.
///
/// Every lesion draws from its own stream keyed by `(seed, case_id, lesion_id)`,
/// so the outcome for a lesion does not depend on which other cases are present
/// or their order.
pub fn censor_stochastic(cases: &[&Case], p: f64, seed: u64) -> Result<CensorPlan> {
    check_rate(p)?;
    let mut removed = Vec::new();
    for case in cases {
        for lesion in case.lesions.iter() {
            let mut rng = seeds::stream(seed, &[tag::CENSOR, case.id as u64, lesion.id as u64]);
            if rng.gen::<f64>() < p {
                removed.push(LesionRef {
                    case_id: case.id,
                    lesion_id: lesion.id,
                });
            }
        }
    }
    Ok(CensorPlan::build(CensorMode::Stochastic, p, Some(seed), cases, removed))
}

/// Removes the `floor(p * n)` smallest lesions pooled over all `cases`.
///
/// Ties in volume are broken by `(case_id, lesion_id)`.
pub fn censor_size_based(cases: &[&Case], p: f64) -> Result<CensorPlan> {
    check_rate(p)?;
    let mut pool: Vec<(f64, LesionRef)> = cases
        .iter()
        .flat_map(|c| {
            c.lesions.iter().map(|l| {
                (
                    l.volume_mm3,
                    LesionRef {
                        case_id: c.id,
                        lesion_id: l.id,
                    },
                )
            })
        })
        .collect();
    pool.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = (p * pool.len() as f64).floor() as usize;
    let removed = pool[..k].iter().map(|(_, r)| *r).collect();
    Ok(CensorPlan::build(CensorMode::SizeBased, p, None, cases, removed))
}

/// Cases whose annotations a plan may touch: training plus validation.
pub fn censorable_cases(ds: &Dataset) -> Vec<&Case> {
    ds.train().chain(ds.validation()).collect()
}

/// Builds a plan of the requested mode over the training and validation splits.
pub fn plan_for(ds: &Dataset, mode: CensorMode, p: f64, seed: u64) -> Result<CensorPlan> {
    let cases = censorable_cases(ds);
    match mode {
        CensorMode::None => Ok(CensorPlan::none(&cases)),
        CensorMode::Stochastic => censor_stochastic(&cases, p, seed),
        CensorMode::SizeBased => censor_size_based(&cases, p),
    }
}

/// Annotation mask of one case with the plan's removed lesions left out.
pub fn censored_mask(case: &Case, plan: &CensorPlan) -> Volume3<u8> {
    let kept = case.lesions.iter().filter(|l| {
        !plan.is_removed(LesionRef {
            case_id: case.id,
            lesion_id: l.id,
        })
    });
    rasterize_mask(kept, case.dims(), case.spacing())
}

/// Censored annotation masks for every case the plan covers.
///
/// Test cases are refused: test-time ground truth is never censored.
pub fn apply_plan(ds: &Dataset, plan: &CensorPlan) -> Result<BTreeMap<usize, Volume3<u8>>> {
    let test: BTreeSet<usize> = ds.split.test.iter().copied().collect();
    if let Some(id) = plan.cases.iter().find(|id| test.contains(id)) {
        return Err(Error::Config(format!(
            "censor plan covers test case {id}; test annotations are never censored"
        )));
    }
    if let Some(r) = plan.removed.iter().find(|r| test.contains(&r.case_id)) {
        return Err(Error::Config(format!(
            "censor plan removes a lesion from test case {}",
            r.case_id
        )));
    }
    plan.cases
        .iter()
        .map(|&id| {
            let case = ds
                .cases
                .get(id)
                .ok_or_else(|| Error::Config(format!("censor plan names unknown case {id}")))?;
            Ok((id, censored_mask(case, plan)))
        })
        .collect()
}
