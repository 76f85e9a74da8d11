//! Property tests over randomized inputs.

mod common;

use mvclearn::contrastive::{batch_loss, cosine_sim, LossMode, ProjectionBatch};
use mvclearn::data::{consensus_label, subsample_labels, ConsensusLabel, LabeledLesion};
use mvclearn::eval::auc_concordance;
use mvclearn::volume::Volume;
use ndarray::Array3;
use proptest::prelude::*;

proptest! {
    /// Windowing always lands in [0, 1] and maps the bounds to 0 and 1.
    #[test]
    fn windowed_values_stay_in_unit_interval(
        values in prop::collection::vec(-3000.0_f64..3000.0, 8),
        lo in -2000.0_f64..0.0,
        width in 1.0_f64..3000.0,
    ) {
        let data = Array3::from_shape_vec((2, 2, 2), values).unwrap();
        let v = Volume::new(data, [1.0; 3], false).unwrap();
        let w = v.hu_window(lo, lo + width).unwrap();
        prop_assert!(w.data().iter().all(|x| (0.0..=1.0).contains(x)));
    }

    /// Consensus labeling ignores the order of the ratings.
    #[test]
    fn consensus_is_permutation_invariant(
        mut ratings in prop::collection::vec(1u8..=5, 1..8),
        rotate in 0usize..8,
    ) {
        let original = consensus_label(&ratings, 1).unwrap();
        let len = ratings.len();
        ratings.rotate_left(rotate % len);
        prop_assert_eq!(consensus_label(&ratings, 1).unwrap(), original);
    }

    /// Mean rating strictly below/above 3 decides the label.
    #[test]
    fn consensus_matches_mean_rule(ratings in prop::collection::vec(1u8..=5, 1..8)) {
        let mean = ratings.iter().map(|r| *r as f64).sum::<f64>() / ratings.len() as f64;
        let got = consensus_label(&ratings, 1).unwrap();
        if mean < 3.0 - 1e-9 {
            prop_assert_eq!(got, ConsensusLabel::Benign);
        } else if mean > 3.0 + 1e-9 {
            prop_assert_eq!(got, ConsensusLabel::Malignant);
        } else {
            prop_assert_eq!(got, ConsensusLabel::Excluded);
        }
    }

    /// Cosine similarity is symmetric, bounded, and scale invariant.
    #[test]
    fn cosine_similarity_properties(
        u in prop::collection::vec(-10.0_f64..10.0, 4),
        v in prop::collection::vec(-10.0_f64..10.0, 4),
        scale in 0.1_f64..100.0,
    ) {
        prop_assume!(u.iter().map(|x| x * x).sum::<f64>() > 1e-6);
        prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 1e-6);
        let s = cosine_sim(&u, &v).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
        prop_assert!((cosine_sim(&v, &u).unwrap() - s).abs() < 1e-12);
        let su: Vec<f64> = u.iter().map(|x| x * scale).collect();
        prop_assert!((cosine_sim(&su, &v).unwrap() - s).abs() < 1e-9);
    }

    /// The inclusive-denominator batch loss is a -log of probabilities, so it
    /// can never go negative.
    #[test]
    fn cmc_batch_loss_is_nonnegative(seed in 0u64..500, n in 1usize..5, m in 2usize..4) {
        let z = common::random_unit_projections(m, n, 4, seed);
        let batch = ProjectionBatch::new(
            common::to_tensors(&z),
            common::lesion_ids(n),
            0.07,
        ).unwrap();
        prop_assert!(batch_loss(&batch, LossMode::CmcInclusive).unwrap().loss >= 0.0);
    }

    /// Label subsets nest: a smaller fraction is contained in a larger one.
    #[test]
    fn subsamples_nest(seed in 0u64..1000, a in 0.01_f64..1.0, b in 0.01_f64..1.0) {
        let (small, large) = if a <= b { (a, b) } else { (b, a) };
        let train: Vec<LabeledLesion> = (0..40)
            .map(|i| LabeledLesion { lesion_id: format!("l{i:02}"), class: i % 2 })
            .collect();
        let s = subsample_labels(&train, small, seed).unwrap();
        let l = subsample_labels(&train, large, seed).unwrap();
        for lesion in &s {
            prop_assert!(l.contains(lesion));
        }
    }

    /// AUC is invariant under strictly monotone transforms of the scores.
    #[test]
    fn auc_invariant_under_monotone_transform(
        scores in prop::collection::vec(0.0_f64..1.0, 6..30),
        flips in prop::collection::vec(any::<bool>(), 6..30),
        gain in 0.5_f64..8.0,
    ) {
        let n = scores.len().min(flips.len());
        let scores = &scores[..n];
        let labels = &flips[..n];
        prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
        let base = auc_concordance(scores, labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|s| (gain * s).tanh()).collect();
        prop_assert!((auc_concordance(&squashed, labels).unwrap() - base).abs() < 1e-12);
    }
}
