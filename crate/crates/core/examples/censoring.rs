//! Compare stochastic and size-based censoring at several rates.

use fnlab::censor::{apply_plan, plan_for, CensorMode};
use fnlab::phantom::{generate_dataset, PhantomSpec};

fn main() -> fnlab::Result<()> {
    let spec = PhantomSpec {
        dims: [32, 32, 16],
        lesions_per_case: (5, 10),
        radius_mm: (1.5, 5.0),
        seed: 7,
        ..PhantomSpec::default()
    };
    let ds = generate_dataset(&spec, 10, 2, 2)?;

    for p in [0.1, 0.3, 0.5, 0.7, 0.9] {
        for mode in [CensorMode::Stochastic, CensorMode::SizeBased] {
            let plan = plan_for(&ds, mode, p, 1)?;
            let removed = plan.removed_set();
            let vols = |keep: bool| -> Vec<f64> {
                ds.train()
                    .chain(ds.validation())
                    .flat_map(|c| c.lesions.iter().map(move |l| (c.id, l)))
                    .filter(|(id, l)| {
                        removed.contains(&fnlab::censor::LesionRef { case_id: *id, lesion_id: l.id }) != keep
                    })
                    .map(|(_, l)| l.volume_mm3)
                    .collect()
            };
            let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len().max(1) as f64;
            println!(
                "p {p:.1} {mode:<10?} removed {:>3}/{} (rate {:.3}), mean volume removed {:>6.1} kept {:>6.1}",
                plan.removed.len(),
                plan.total_lesions,
                plan.achieved_rate,
                mean(vols(false)),
                mean(vols(true)),
            );
        }
    }

    let plan = plan_for(&ds, CensorMode::Stochastic, 0.5, 1)?;
    let masks = apply_plan(&ds, &plan)?;
    let kept: usize = masks.values().map(|m| m.popcount()).sum();
    println!("censored masks cover {} cases, {kept} lesion voxels", masks.len());
    Ok(())
}
