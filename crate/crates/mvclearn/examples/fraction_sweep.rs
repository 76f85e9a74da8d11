//! Label-efficiency sweep: linear evaluation of one pretrained model at
//! increasing labeled fractions (nested subsets, so more labels never means
//! different data, only more of it).
//!
//! ```bash
//! cargo run --release -p mvclearn --example fraction_sweep
//! ```

use mvclearn::data::{
    gen_synthetic_lesion, split_dataset, subsample_labels, LabeledLesion, SyntheticClass,
};
use mvclearn::eval::{linear_evaluate, HeadTrainConfig};
use mvclearn::nn::model::tiny_model_config;
use mvclearn::pipeline::{pretrain, PretrainConfig, ViewStore};
use mvclearn::views::extract_views;

fn main() -> mvclearn::Result<()> {
    let planes = vec![1u8, 2, 3];
    let (side, out_size, n_per_class) = (24usize, 24usize, 80usize);
    let mut store = ViewStore::new();
    let mut lesions = Vec::new();
    for class in [SyntheticClass::SmoothBlob, SyntheticClass::SpiculatedBlob] {
        for i in 0..n_per_class {
            let cube = gen_synthetic_lesion(class, side, i as u64)?;
            lesions.push(LabeledLesion {
                lesion_id: cube.lesion_id().to_string(),
                class: if class == SyntheticClass::SmoothBlob { 0 } else { 1 },
            });
            store.insert(extract_views(&cube, &planes, out_size)?);
        }
    }

    let seed = 23;
    let mut model = tiny_model_config(planes, out_size);
    model.optimizer.epochs = 15;
    model.optimizer.decay_epochs = vec![10];
    model.optimizer.base_lr = 0.01;
    model.optimizer.weight_decay = 1e-3;
    let state = pretrain::<f32>(&store, &PretrainConfig::new(model, seed), None)?.state;

    let split = split_dataset(&lesions, 0.2, seed)?;
    let train: Vec<LabeledLesion> = lesions
        .iter()
        .filter(|l| split.train.contains(&l.lesion_id))
        .cloned()
        .collect();
    let test: Vec<LabeledLesion> = lesions
        .iter()
        .filter(|l| split.test.contains(&l.lesion_id))
        .cloned()
        .collect();

    println!("fraction  labels  accuracy  auc");
    for fraction in [0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 1.0] {
        let subset = subsample_labels(&train, fraction, seed)?;
        let head_cfg = HeadTrainConfig { seed, ..Default::default() };
        let outcome = linear_evaluate(&state, &store, &subset, &test, 2, &head_cfg)?;
        println!(
            "{fraction:>8}  {:>6}  {:>8.4}  {:.4}",
            subset.len(),
            outcome.report.accuracy,
            outcome.report.auc
        );
    }
    Ok(())
}
