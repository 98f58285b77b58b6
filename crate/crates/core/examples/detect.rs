//! Lesion-level evaluation of a noisy probability map.
//!
//! The "prediction" is the ground-truth mask blurred with noise, a few lesions
//! dropped and a few false blobs added, so every part of the matcher shows up.

use fnlab::detect::{detect_case, Connectivity};
use fnlab::metrics::{self, DuplicatePolicy, DEFAULT_DIAMETER_EDGES};
use fnlab::phantom::{generate_case, rasterize_mask, PhantomSpec};
use fnlab::volume::Volume3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fnlab::Result<()> {
    let spec = PhantomSpec {
        dims: [40, 40, 24],
        lesions_per_case: (8, 12),
        radius_mm: (1.0, 4.0),
        seed: 5,
        ..PhantomSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut matches = Vec::new();
    for id in 0..4 {
        let case = generate_case(&spec, id)?;
        let kept: Vec<_> = case.lesions.iter().filter(|_| rng.gen_bool(0.8)).collect();
        let mask = rasterize_mask(kept, case.dims(), case.spacing());
        let mut prob: Vec<f32> = mask
            .data()
            .iter()
            .map(|&m| if m == 1 { rng.gen_range(0.3..1.0) } else { rng.gen_range(0.0..0.05) })
            .collect();
        for _ in 0..3 {
            let i = rng.gen_range(0..prob.len());
            prob[i] = rng.gen_range(0.1..0.6);
        }
        let prob = Volume3::from_vec(case.dims(), case.spacing(), prob)?;
        matches.push(detect_case(case.id as usize, &prob, &case.lesions, 0.1, Connectivity::Corners, 1.0)?);
    }

    let s = metrics::summarize_detections(&matches, DuplicatePolicy::CountAsTp)?;
    println!(
        "{} lesions, {} detections, {} TP; mAP {:.3} (95% CI {:.3} to {:.3}), max sensitivity {:.3}, TP dice {:.3}",
        s.n_gt, s.n_detections, s.n_tp, s.map, s.map_ci95.0, s.map_ci95.1, s.max_sensitivity, s.tp_dice_mean
    );
    for st in metrics::size_strata(&matches, &DEFAULT_DIAMETER_EDGES) {
        println!("  diameter {:<12} {}/{}", st.label(), st.n_detected, st.n_gt);
    }
    let pr = metrics::pr_curve(&matches, DuplicatePolicy::CountAsTp)?;
    for p in pr.points.iter().step_by((pr.points.len() / 8).max(1)) {
        println!("  t {:.3}  precision {:.3}  recall {:.3}", p.threshold, p.precision, p.recall);
    }
    Ok(())
}
