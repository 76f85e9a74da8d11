//! Linear evaluation of frozen representations plus embedding diagnostics:
//! pretrain on synthetic lesions, train a linear head on 100% of the train
//! labels, report test metrics and the within/between similarity gap.
//!
//! ```bash
//! cargo run --release -p mvclearn --example linear_probe
//! ```

use mvclearn::data::{gen_synthetic_lesion, split_dataset, LabeledLesion, SyntheticClass};
use mvclearn::eval::{
    embedding_diagnostics, linear_evaluate, pca_projection, project_lesions, HeadTrainConfig,
};
use mvclearn::nn::model::tiny_model_config;
use mvclearn::pipeline::{pretrain, PretrainConfig, ViewStore};
use mvclearn::views::extract_views;

fn main() -> mvclearn::Result<()> {
    let planes = vec![1u8, 2, 3];
    let (side, out_size, n_per_class) = (24usize, 24usize, 60usize);
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

    let seed = 11;
    let mut model = tiny_model_config(planes, out_size);
    model.optimizer.epochs = 15;
    model.optimizer.decay_epochs = vec![10];
    model.optimizer.base_lr = 0.01;
    model.optimizer.weight_decay = 1e-3;
    let state = pretrain::<f32>(&store, &PretrainConfig::new(model, seed), None)?.state;

    let split = split_dataset(&lesions, 0.2, seed)?;
    let by_ids = |ids: &[String]| -> Vec<LabeledLesion> {
        lesions
            .iter()
            .filter(|l| ids.contains(&l.lesion_id))
            .cloned()
            .collect()
    };
    let train = by_ids(&split.train);
    let test = by_ids(&split.test);

    let head_cfg = HeadTrainConfig { seed, ..Default::default() };
    let outcome = linear_evaluate(&state, &store, &train, &test, 2, &head_cfg)?;
    println!(
        "linear evaluation on {} train / {} test lesions:",
        train.len(),
        test.len()
    );
    println!("{}", serde_json::to_string_pretty(&outcome.report).unwrap());

    let test_ids: Vec<String> = test.iter().map(|l| l.lesion_id.clone()).collect();
    let groups = project_lesions(&state, &store, &test_ids)?;
    let diag = embedding_diagnostics(&groups)?;
    println!(
        "\nembedding geometry: within {:.4}, between {:.4}, gap {:.4}",
        diag.within_mean, diag.between_mean, diag.gap
    );

    let pca = pca_projection(&groups)?;
    println!("\nfirst PCA rows (lesion, view, x, y):");
    for row in pca.iter().take(6) {
        println!("  {} v{} ({:+.3}, {:+.3})", row.lesion_id, row.view_id, row.x, row.y);
    }
    Ok(())
}
