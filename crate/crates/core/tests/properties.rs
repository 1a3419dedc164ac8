//! Property tests over randomized inputs for the spec-level invariants:
//! subject-disjoint splitting, landmark rescaling, loss shape properties,
//! and rank-statistic metrics.

use proptest::prelude::*;

use padkit::data::{kfold_subject_split, DatasetManifest, FaceSample, Label};
use padkit::geometry::{rescale_landmarks, LandmarkSet};
use padkit::losses::{
    pairwise_sq_dist, triplet_focal_loss, TripletBatch, TripletConfig,
};
use padkit::metrics::{compute_pad_metrics, eer, tdr_at_fdr, ScoredSample};
use padkit::nn::Triplet;

fn manifest_strategy() -> impl Strategy<Value = DatasetManifest> {
    // up to 12 subjects, 1-4 samples each, arbitrary labels per subject
    (2usize..12, any::<u64>()).prop_map(|(n_subjects, seed)| {
        let mut samples = Vec::new();
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            state >> 33
        };
        for s in 0..n_subjects {
            let count = 1 + (next() % 4) as usize;
            let label = if next() % 2 == 0 { Label::BonaFide } else { Label::Attack };
            for j in 0..count {
                samples.push(FaceSample {
                    sample_id: format!("s{s}_{j}"),
                    subject_id: format!("subj{s}"),
                    image_path: "img.png".into(),
                    landmark_path: "lm.txt".into(),
                    label,
                    attack_type: None,
                    reference_size: (64, 64),
                });
            }
        }
        DatasetManifest { name: "prop".into(), samples }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kfold_is_subject_disjoint_and_covering(
        manifest in manifest_strategy(),
        k in 2usize..6,
        seed in any::<u64>(),
    ) {
        prop_assume!(manifest.subjects().len() >= k);
        let folds = kfold_subject_split(&manifest, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = std::collections::BTreeSet::new();
        for (train, test) in &folds {
            let tr: std::collections::BTreeSet<_> = train.subjects().into_iter().collect();
            let te: std::collections::BTreeSet<_> = test.subjects().into_iter().collect();
            prop_assert!(tr.is_disjoint(&te), "train and test share a subject");
            for s in &test.samples {
                prop_assert!(seen.insert(s.sample_id.clone()), "sample in two test folds");
            }
            prop_assert_eq!(train.len() + test.len(), manifest.len());
        }
        prop_assert_eq!(seen.len(), manifest.len());
    }

    #[test]
    fn rescale_roundtrips_within_tolerance(
        seed in any::<u64>(),
        w in 64u32..800,
        h in 64u32..800,
        tw in 64u32..800,
        th in 64u32..800,
    ) {
        let mut state = seed;
        let mut next_unit = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        };
        let points: Vec<[f64; 2]> = (0..98)
            .map(|_| {
                [
                    next_unit() * (w as f64 - 0.02),
                    next_unit() * (h as f64 - 0.02),
                ]
            })
            .collect();
        let lm = LandmarkSet::new(points, (w, h)).unwrap();
        let back = rescale_landmarks(&rescale_landmarks(&lm, (tw, th)), (w, h));
        for (a, b) in lm.points().iter().zip(back.points()) {
            prop_assert!((a[0] - b[0]).abs() <= 1e-4);
            prop_assert!((a[1] - b[1]).abs() <= 1e-4);
        }
    }

    #[test]
    fn triplet_focal_nonnegative_and_zero_iff_satisfied(
        dap in 0.0f32..6.0,
        dan in 0.0f32..6.0,
        sigma in 0.5f32..3.0,
        margin in 0.0f32..1.5,
    ) {
        let d = ndarray::array![
            [0.0, dap, dan],
            [dap, 0.0, 0.0],
            [dan, 0.0, 0.0]
        ];
        let cfg = TripletConfig { sigma, margin };
        let batch = TripletBatch {
            triplets: vec![Triplet { anchor: 0, positive: 1, negative: 2 }],
        };
        let loss = triplet_focal_loss(&batch, &d.view(), &cfg);
        prop_assert!(loss >= 0.0);
        let satisfied = (dan / sigma).exp() >= (dap / sigma).exp() + margin;
        if satisfied {
            prop_assert!(loss <= 1e-6, "satisfied triplet must cost 0, got {loss}");
        } else {
            prop_assert!(loss > 0.0, "violating triplet must cost > 0");
        }
    }

    #[test]
    fn pairwise_distances_symmetric_zero_diagonal(
        seed in any::<u64>(),
        n in 2usize..8,
        d in 1usize..6,
    ) {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (((state >> 11) as f64) / ((1u64 << 53) as f64)) as f32 * 4.0 - 2.0
        };
        let emb = ndarray::Array2::from_shape_fn((n, d), |_| next());
        let dist = pairwise_sq_dist(&emb.view());
        for i in 0..n {
            prop_assert_eq!(dist[(i, i)], 0.0);
            for j in 0..n {
                prop_assert_eq!(dist[(i, j)], dist[(j, i)]);
                prop_assert!(dist[(i, j)] >= 0.0);
            }
        }
    }

    #[test]
    fn metrics_invariant_under_monotone_transforms(
        seed in any::<u64>(),
        scale in 0.5f64..4.0,
        shift in -2.0f64..2.0,
    ) {
        let mut state = seed;
        let mut next_unit = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        };
        let mut scores = Vec::new();
        for i in 0..30 {
            scores.push(ScoredSample {
                sample_id: format!("s{i}"),
                subject_id: format!("s{i}"),
                label: if i < 15 { Label::BonaFide } else { Label::Attack },
                attack_type: None,
                score: next_unit(),
            });
        }
        let f = |x: f64| (scale * x + shift).exp(); // strictly monotone
        let mapped: Vec<ScoredSample> = scores
            .iter()
            .map(|s| ScoredSample { score: f(s.score), ..s.clone() })
            .collect();
        let (e0, _) = eer(&scores).unwrap();
        let (e1, _) = eer(&mapped).unwrap();
        prop_assert!((e0 - e1).abs() < 1e-9);
        let t0 = tdr_at_fdr(&scores, 1.0).unwrap();
        let t1 = tdr_at_fdr(&mapped, 1.0).unwrap();
        prop_assert!((t0 - t1).abs() < 1e-9);
        let r0 = compute_pad_metrics(&scores, 0.5).unwrap();
        let r1 = compute_pad_metrics(&mapped, f(0.5)).unwrap();
        prop_assert!((r0.apcer - r1.apcer).abs() < 1e-9);
        prop_assert!((r0.bpcer - r1.bpcer).abs() < 1e-9);
        prop_assert!((r0.acer - r1.acer).abs() < 1e-9);
        prop_assert!((r0.accuracy - r1.accuracy).abs() < 1e-9);
    }
}
