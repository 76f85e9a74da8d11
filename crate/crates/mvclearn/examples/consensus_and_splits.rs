//! Dataset ingestion rules: consensus labeling from radiologist ratings,
//! manifest filtering, stratified splitting, and nested label subsampling.
//!
//! ```bash
//! cargo run -p mvclearn --example consensus_and_splits
//! ```

use mvclearn::data::{
    consensus_label, filter_manifest, label_lesions, split_dataset, subsample_labels, Annotation,
    DatasetMode, ManifestRow,
};

fn row(id: &str, thickness: f64, diameter: f64, ratings: Vec<u8>) -> ManifestRow {
    ManifestRow {
        volume_path: format!("{id}.raw"),
        lesion_id: id.to_string(),
        center_mm: [32.0, 32.0, 32.0],
        longest_diameter_mm: diameter,
        slice_thickness_mm: thickness,
        annotation: Annotation::Ratings(ratings),
    }
}

fn main() -> mvclearn::Result<()> {
    // Consensus rule: mean rating < 3 benign, > 3 malignant, exactly 3 excluded.
    for ratings in [vec![1, 2, 2], vec![3, 3, 3], vec![4, 5, 4], vec![5, 5]] {
        println!("ratings {ratings:?} -> {:?}", consensus_label(&ratings, 3)?);
    }

    // Filtering drops thick slices and sub-3mm nodules in nodule-dataset mode.
    let manifest = vec![
        row("keep-a", 1.0, 12.0, vec![4, 4, 4]),
        row("drop-thick", 5.0, 12.0, vec![4, 4, 4]),
        row("drop-small", 1.0, 2.0, vec![4, 4, 4]),
        row("keep-b", 2.5, 3.0, vec![1, 1, 2]),
        row("drop-uncertain", 1.0, 9.0, vec![3, 3, 3]),
        row("keep-c", 2.0, 8.0, vec![2, 2, 1]),
        row("keep-d", 1.5, 7.0, vec![5, 4, 5]),
    ];
    let kept = filter_manifest(manifest, DatasetMode::Lidc);
    println!("\nafter filtering: {:?}", kept.iter().map(|r| r.lesion_id.as_str()).collect::<Vec<_>>());

    let labeled = label_lesions(&kept, DatasetMode::Lidc)?;
    println!("after consensus (uncertain never appear):");
    for l in &labeled {
        println!(
            "  {} -> {}",
            l.lesion_id,
            DatasetMode::Lidc.class_names()[l.class]
        );
    }

    // Stratified splits and nested subsampling on a bigger labeled set.
    let many: Vec<_> = (0..60)
        .map(|i| mvclearn::data::LabeledLesion {
            lesion_id: format!("lesion{i:03}"),
            class: i % 2,
        })
        .collect();
    let split = split_dataset(&many, 0.2, 7)?;
    println!("\nsplit: {} train / {} test (seed {})", split.train.len(), split.test.len(), split.seed);

    let p10 = subsample_labels(
        &many.iter().filter(|l| split.train.contains(&l.lesion_id)).cloned().collect::<Vec<_>>(),
        0.10,
        7,
    )?;
    let p25 = subsample_labels(
        &many.iter().filter(|l| split.train.contains(&l.lesion_id)).cloned().collect::<Vec<_>>(),
        0.25,
        7,
    )?;
    let nested = p10.iter().all(|l| p25.contains(l));
    println!("10% subset ({} lesions) nested in 25% subset ({}): {nested}", p10.len(), p25.len());
    Ok(())
}
