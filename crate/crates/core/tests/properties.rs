mod common;

use common::*;
use fnlab::censor::{censor_size_based, censor_stochastic};
use fnlab::detect::{binarize, connected_components_3d, Connectivity, Detection, DetectionLabel, GtStatus, MatchResult};
use fnlab::gradcore::{Graph, Tensor};
use fnlab::losses::{self, ProbHistogram};
use fnlab::metrics::{self, DuplicatePolicy, ScoredDetection};
use fnlab::phantom::Case;
use fnlab::volume::{linear_index, voxel_at, voxel_count, Volume3};
use proptest::prelude::*;

fn logits(h: usize, w: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-40.0f64..40.0, 2 * h * w)
        .prop_map(move |d| Tensor::new(vec![1, 2, h, w], d).unwrap())
}

fn softmax(x: Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let v = g.constant(x);
    let p = g.softmax_channels(v).unwrap();
    g.value(p).clone()
}

fn detections() -> impl Strategy<Value = (Vec<ScoredDetection>, usize)> {
    (1usize..6).prop_flat_map(|n_gt| {
        let det = (0.01f64..0.99, prop::option::weighted(0.6, 0..n_gt as u32))
            .prop_map(|(confidence, hit)| ScoredDetection { confidence, hit: hit.map(|l| (0, l)) });
        (prop::collection::vec(det, 0..20), Just(n_gt))
    })
}

fn as_matches(dets: &[ScoredDetection], n_gt: usize) -> Vec<MatchResult> {
    let detections = dets
        .iter()
        .map(|d| Detection {
            voxel_count: 1,
            centroid_mm: [0.0; 3],
            confidence: d.confidence,
            volume_mm3: 1.0,
            label: if d.hit.is_some() { DetectionLabel::Tp } else { DetectionLabel::Fp },
            matched_lesion: d.hit.map(|h| h.1),
            distance_mm: None,
            dice: None,
        })
        .collect();
    let gt_status = (0..n_gt as u32)
        .map(|id| GtStatus {
            lesion_id: id,
            volume_mm3: 1.0,
            detected: dets.iter().any(|d| d.hit == Some((0, id))),
        })
        .collect();
    vec![MatchResult { case_id: 0, detections, gt_status }]
}

fn mask(dims: [usize; 3]) -> impl Strategy<Value = Volume3<u8>> {
    prop::collection::vec(prop::bool::weighted(0.3), voxel_count(dims))
        .prop_map(move |b| Volume3::from_vec(dims, [1.0; 3], b.into_iter().map(u8::from).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_is_a_distribution(x in logits(3, 4)) {
        let p = softmax(x);
        let d = p.data();
        for i in 0..12 {
            prop_assert!((d[i] + d[12 + i] - 1.0).abs() < 1e-12);
            prop_assert!(d[i] >= 0.0 && d[i] <= 1.0);
        }
    }

    #[test]
    fn losses_are_finite_and_nonnegative(x in logits(3, 3), t in prop::collection::vec(0u8..2, 9)) {
        let p = softmax(x);
        for spec in all_losses() {
            let l = losses::loss_value(&p, &t, &spec).unwrap();
            prop_assert!(l.is_finite() && l >= 0.0, "{} gave {l}", spec.label());
        }
    }

    #[test]
    fn binarize_shrinks_with_threshold(d in prop::collection::vec(0.0f32..1.0, 60), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let prob = Volume3::from_vec([5, 4, 3], [1.0; 3], d).unwrap();
        let (m_lo, m_hi) = (binarize(&prob, lo), binarize(&prob, hi));
        prop_assert!(m_lo.data().iter().zip(m_hi.data()).all(|(l, h)| h <= l));
    }

    #[test]
    fn components_are_translation_invariant(m in mask([5, 4, 3]), s in (0usize..3, 0usize..3, 0usize..3)) {
        let big = [9, 8, 6];
        let mut shifted = Volume3::filled(big, [1.0; 3], 0u8);
        for (i, &v) in m.data().iter().enumerate() {
            let p = voxel_at(m.dims(), i);
            shifted.set([p[0] + s.0, p[1] + s.1, p[2] + s.2], v);
        }
        for conn in [Connectivity::Faces, Connectivity::Edges, Connectivity::Corners] {
            let a = canonical(connected_components_3d(&m, conn));
            let b: Vec<Vec<usize>> = canonical(connected_components_3d(&shifted, conn))
                .into_iter()
                .map(|c| {
                    c.into_iter()
                        .map(|i| {
                            let p = voxel_at(big, i);
                            linear_index(m.dims(), [p[0] - s.0, p[1] - s.1, p[2] - s.2])
                        })
                        .collect()
                })
                .collect();
            prop_assert_eq!(a, canonical(b));
        }
    }

    #[test]
    fn components_partition_the_mask(m in mask([4, 4, 4])) {
        let comps = connected_components_3d(&m, Connectivity::Corners);
        let mut seen: Vec<usize> = comps.concat();
        seen.sort_unstable();
        let on: Vec<usize> = (0..64).filter(|&i| m.data()[i] == 1).collect();
        prop_assert_eq!(seen, on);
    }

    #[test]
    fn map_ignores_monotone_rescaling((dets, n_gt) in detections()) {
        for policy in [DuplicatePolicy::CountAsTp, DuplicatePolicy::CountAsFp] {
            let a = map_of(&dets, n_gt, policy);
            let cubed: Vec<ScoredDetection> = dets
                .iter()
                .map(|d| ScoredDetection { confidence: d.confidence.powi(3), hit: d.hit })
                .collect();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(a, map_of(&cubed, n_gt, policy));
        }
    }

    #[test]
    fn pr_sweep_is_well_formed((dets, n_gt) in detections()) {
        let pr = metrics::pr_curve_from(&dets, n_gt, DuplicatePolicy::CountAsTp).unwrap();
        for w in pr.points.windows(2) {
            prop_assert!(w[0].threshold > w[1].threshold);
            prop_assert!(w[0].recall <= w[1].recall);
        }
        for p in &pr.points {
            prop_assert!((0.0..=1.0).contains(&p.precision) && (0.0..=1.0).contains(&p.recall));
        }
        let strict = map_of(&dets, n_gt, DuplicatePolicy::CountAsFp);
        prop_assert!(strict <= map_of(&dets, n_gt, DuplicatePolicy::CountAsTp) + 1e-12);
    }

    #[test]
    fn max_sensitivity_bounds_recall((dets, n_gt) in detections()) {
        let m = as_matches(&dets, n_gt);
        let ms = metrics::max_sensitivity(&m);
        let pr = metrics::pr_curve(&m, DuplicatePolicy::CountAsTp).unwrap();
        prop_assert!(pr.points.iter().all(|p| p.recall <= ms));
        prop_assert_eq!(pr.points.last().map_or(0.0, |p| p.recall), ms);
    }

    #[test]
    fn hanley_interval_is_symmetric_until_clipped(a in 0.0f64..=1.0, np in 1usize..500, nn in 1usize..500) {
        let se = metrics::hanley_mcneil_se(a, np, nn).unwrap();
        let (lo, hi) = metrics::hanley_mcneil_ci(a, np, nn).unwrap();
        prop_assert!(lo <= a && a <= hi && lo >= 0.0 && hi <= 1.0);
        prop_assert!((lo - (a - 1.96 * se).max(0.0)).abs() < 1e-15);
        prop_assert!((hi - (a + 1.96 * se).min(1.0)).abs() < 1e-15);
    }

    #[test]
    fn entropy_is_bounded(ps in prop::collection::vec(0.0f64..=1.0, 1..200), bins in 1usize..120) {
        let mut h = ProbHistogram::new(bins);
        for &p in &ps {
            h.add(p);
        }
        prop_assert_eq!(h.total(), ps.len() as u64);
        let e = h.entropy();
        prop_assert!(e >= 0.0 && e <= (bins as f64).ln() + 1e-12);
    }

    #[test]
    fn censoring_respects_the_rate(p in 0.0f64..=1.0, seed in any::<u64>(), n in 1usize..8) {
        let cases: Vec<Case> = lesion_pool(n, 5, seed);
        let refs: Vec<&Case> = cases.iter().collect();
        let total = 5 * n;
        let size = censor_size_based(&refs, p).unwrap();
        prop_assert_eq!(size.removed.len(), (p * total as f64).floor() as usize);
        let sto = censor_stochastic(&refs, p, seed).unwrap();
        prop_assert!(sto.removed.len() <= total);
        prop_assert_eq!(sto.total_lesions, total);
    }
}
