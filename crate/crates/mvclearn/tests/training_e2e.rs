//! Protocol-level training checks: the fine-tuning contract (unfrozen
//! encoders, fresh head) and the paired comparison against linear evaluation
//! at the same labeled fraction.

mod common;

use mvclearn::data::{
    gen_synthetic_lesion, split_dataset, subsample_labels, LabeledLesion, SyntheticClass,
};
use mvclearn::eval::{
    evaluate_head, extract_representations, fine_tune, linear_evaluate, FineTuneConfig,
    HeadTrainConfig,
};
use mvclearn::nn::model::tiny_model_config;
use mvclearn::pipeline::{pretrain, PretrainConfig, ViewStore};
use mvclearn::views::{extract_view, extract_views};

struct Setup {
    store: ViewStore,
    lesions: Vec<LabeledLesion>,
}

fn setup(n_per_class: usize, side: usize, out: usize) -> Setup {
    let planes = vec![1u8, 2];
    let mut store = ViewStore::new();
    let mut lesions = Vec::new();
    for class in [SyntheticClass::SmoothBlob, SyntheticClass::SpiculatedBlob] {
        for i in 0..n_per_class {
            let cube = gen_synthetic_lesion(class, side, i as u64).unwrap();
            lesions.push(LabeledLesion {
                lesion_id: cube.lesion_id().to_string(),
                class: if class == SyntheticClass::SmoothBlob { 0 } else { 1 },
            });
            store.insert(extract_views(&cube, &planes, out).unwrap());
        }
    }
    Setup { store, lesions }
}

fn split_lesions(
    lesions: &[LabeledLesion],
    seed: u64,
) -> (Vec<LabeledLesion>, Vec<LabeledLesion>) {
    let split = split_dataset(lesions, 0.2, seed).unwrap();
    let train = lesions
        .iter()
        .filter(|l| split.train.contains(&l.lesion_id))
        .cloned()
        .collect();
    let test = lesions
        .iter()
        .filter(|l| split.test.contains(&l.lesion_id))
        .cloned()
        .collect();
    (train, test)
}

/// The concatenated representation is `M * d` long in plane-id order, and
/// the input view order cannot matter (view sets sort internally).
#[test]
fn concatenation_dimension_contract() {
    use mvclearn::eval::concat_representations;
    use mvclearn::nn::{EncoderConfig, ModelConfig, ModelState, OptimizerConfig, ProjectorConfig};
    use mvclearn::views::{plane, ViewSet};

    // Full-size encoder (d = 2048) with nine views; the projector is not on
    // this path, so a small one keeps the model light.
    let encoder = EncoderConfig::default();
    assert_eq!(encoder.output_dim(), 2048);
    let config = ModelConfig::new(
        (1..=9).collect(),
        224,
        encoder,
        ProjectorConfig::with_dims(2048, [16, 16, 8]),
        OptimizerConfig::default(),
    )
    .unwrap();
    let state = ModelState::<f32>::init(config, 1).unwrap();

    let cube = gen_synthetic_lesion(SyntheticClass::SmoothBlob, 16, 0).unwrap();
    let views: Vec<_> = (1..=9)
        .map(|id| extract_view(&cube, &plane(id).unwrap(), 224).unwrap())
        .collect();
    let set = ViewSet::new(cube.lesion_id(), views.clone()).unwrap();
    let record = concat_representations(&state, &set).unwrap();
    assert_eq!(record.concatenated.len(), 9 * 2048);
    assert_eq!(record.per_view.len(), 9);

    // Same views handed over in reverse order produce the same record.
    let mut reversed = views;
    reversed.reverse();
    let set_rev = ViewSet::new(cube.lesion_id(), reversed).unwrap();
    let record_rev = concat_representations(&state, &set_rev).unwrap();
    assert_eq!(record_rev.concatenated, record.concatenated);

    // Plane mismatch is a configuration error.
    let two_config = mvclearn::nn::model::tiny_model_config(vec![1, 2], 16);
    let d = two_config.encoder.output_dim();
    let two_state = ModelState::<f32>::init(two_config, 2).unwrap();
    let two_set = extract_views(&cube, &[1, 2], 16).unwrap();
    let two = concat_representations(&two_state, &two_set).unwrap();
    assert_eq!(two.concatenated.len(), 2 * d);
    let wrong = extract_views(&cube, &[1, 3], 16).unwrap();
    assert!(concat_representations(&two_state, &wrong).is_err());
}

#[test]
fn finetune_unfreezes_encoders_and_fraction_one_uses_all_labels() {
    let s = setup(16, 12, 12);
    let mut model = tiny_model_config(vec![1, 2], 12);
    model.optimizer.epochs = 3;
    model.optimizer.decay_epochs = vec![];
    model.optimizer.batch_size = 8;
    model.optimizer.base_lr = 0.005;
    let out = pretrain::<f32>(&s.store, &PretrainConfig::new(model, 3), None).unwrap();

    let (train, test) = split_lesions(&s.lesions, 3);
    // fraction 1.0 degenerates to the full training set
    let subset = subsample_labels(&train, 1.0, 3).unwrap();
    assert_eq!(subset.len(), train.len());

    let mut state = out.state;
    let frozen_hash = state.encoders_hash();
    let head = fine_tune(
        &mut state,
        &s.store,
        &subset,
        2,
        &FineTuneConfig {
            epochs: 3,
            lr: 0.002,
            seed: 3,
            ..Default::default()
        },
    )
    .unwrap();
    assert_ne!(
        state.encoders_hash(),
        frozen_hash,
        "fine-tuning must move encoder parameters"
    );
    assert!(head.trained_from_scratch);

    let test_records = extract_representations(&state, &s.store, &test).unwrap();
    let report = evaluate_head(&head, &test_records).unwrap();
    assert!(report.accuracy.is_finite());

    // Empty subsets are rejected.
    assert!(fine_tune(
        &mut state,
        &s.store,
        &[],
        2,
        &FineTuneConfig::default()
    )
    .is_err());
}

/// Paired protocol comparison at fraction 0.5, averaged over 3 seeds:
/// fine-tuning (which adapts the encoders to the labels) must reach at least
/// the frozen-representation linear probe.
#[test]
fn finetune_beats_or_matches_linear_eval_at_half_fraction() {
    let s = setup(80, 16, 16);
    let mut linear_accs = Vec::new();
    let mut finetune_accs = Vec::new();
    for seed in [5u64, 6, 7] {
        let mut model = tiny_model_config(vec![1, 2], 16);
        model.optimizer.epochs = 10;
        model.optimizer.decay_epochs = vec![8];
        model.optimizer.batch_size = 24;
        let pretrained = pretrain::<f32>(&s.store, &PretrainConfig::new(model, seed), None)
            .unwrap()
            .state;

        let (train, test) = split_lesions(&s.lesions, seed);
        let subset = subsample_labels(&train, 0.5, seed).unwrap();

        let le = linear_evaluate(
            &pretrained,
            &s.store,
            &subset,
            &test,
            2,
            &HeadTrainConfig {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        linear_accs.push(le.report.accuracy);

        let mut ft_state = pretrained.clone();
        let head = fine_tune(
            &mut ft_state,
            &s.store,
            &subset,
            2,
            &FineTuneConfig {
                epochs: 60,
                lr: 0.002,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let test_records = extract_representations(&ft_state, &s.store, &test).unwrap();
        finetune_accs.push(evaluate_head(&head, &test_records).unwrap().accuracy);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ml, mf) = (mean(&linear_accs), mean(&finetune_accs));
    println!("linear {linear_accs:?} (mean {ml:.4}) vs finetune {finetune_accs:?} (mean {mf:.4})");
    assert!(
        mf >= ml,
        "fine-tune mean {mf:.4} fell below linear-eval mean {ml:.4}"
    );
}
