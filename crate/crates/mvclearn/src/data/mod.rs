//! Dataset ingestion: consensus labels, manifest filtering, reproducible
//! stratified splits, nested label subsampling, and synthetic lesions.

pub mod manifest;
pub mod synthetic;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::derive_rng;

pub use manifest::{read_manifest, write_manifest, Annotation, ManifestRow};
pub use synthetic::{gen_synthetic_lesion, SyntheticClass};

/// Ingestion rules differ per source dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    /// >= 3 raters per nodule; thickness and diameter filters apply.
    Lidc,
    /// Same rules but a single rater suffices.
    Lndb,
    /// All annotated lesions are kept; labels are 4-way disease classes.
    TianChi,
    /// Synthetic two-class data; no filtering.
    Synthetic,
}

impl DatasetMode {
    pub fn min_raters(&self) -> usize {
        match self {
            DatasetMode::Lidc => 3,
            DatasetMode::Lndb => 1,
            _ => 1,
        }
    }

    /// Class names in index order.
    pub fn class_names(&self) -> &'static [&'static str] {
        match self {
            DatasetMode::Lidc | DatasetMode::Lndb => &["benign", "malignant"],
            DatasetMode::TianChi => &[
                "nodule",
                "streak_shadow",
                "arteriosclerosis_calcification",
                "lymph_node_calcification",
            ],
            DatasetMode::Synthetic => &["smooth_blob", "spiculated_blob"],
        }
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.class_names()
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::InvalidAnnotation {
                reason: format!("unknown class {name:?} for {self:?}"),
            })
    }
}

impl std::fmt::Display for DatasetMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DatasetMode::Lidc => "lidc",
            DatasetMode::Lndb => "lndb",
            DatasetMode::TianChi => "tianchi",
            DatasetMode::Synthetic => "synthetic",
        };
        write!(f, "{s}")
    }
}

/// Consensus outcome for a rated nodule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsensusLabel {
    Benign,
    Malignant,
    /// Mean rating exactly 3, or too few raters: dropped from the dataset.
    Excluded,
}

/// Mean-malignancy consensus: fewer than `min_raters` ratings excludes the
/// nodule; mean < 3 is benign, mean > 3 malignant, exactly 3 uncertain.
///
/// The comparison is on integer sums (`sum <=> 3 * count`), so the "exactly
/// 3" band is decided without floating-point equality.
pub fn consensus_label(ratings: &[u8], min_raters: usize) -> Result<ConsensusLabel> {
    if ratings.is_empty() {
        return Err(Error::InvalidAnnotation {
            reason: "empty ratings list".into(),
        });
    }
    for r in ratings {
        if !(1..=5).contains(r) {
            return Err(Error::InvalidRating { value: *r });
        }
    }
    if ratings.len() < min_raters {
        return Ok(ConsensusLabel::Excluded);
    }
    let sum: u32 = ratings.iter().map(|r| *r as u32).sum();
    let pivot = 3 * ratings.len() as u32;
    Ok(match sum.cmp(&pivot) {
        std::cmp::Ordering::Less => ConsensusLabel::Benign,
        std::cmp::Ordering::Equal => ConsensusLabel::Excluded,
        std::cmp::Ordering::Greater => ConsensusLabel::Malignant,
    })
}

/// Drop rows that fail the dataset's inclusion rules, preserving order.
/// Nodule datasets drop slices thicker than 2.5 mm and diameters under 3 mm;
/// TianChi and synthetic data keep everything.
pub fn filter_manifest(rows: Vec<ManifestRow>, mode: DatasetMode) -> Vec<ManifestRow> {
    match mode {
        DatasetMode::Lidc | DatasetMode::Lndb => rows
            .into_iter()
            .filter(|r| r.slice_thickness_mm <= 2.5 && r.longest_diameter_mm >= 3.0)
            .collect(),
        DatasetMode::TianChi | DatasetMode::Synthetic => rows,
    }
}

/// Lesion with a resolved class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledLesion {
    pub lesion_id: String,
    pub class: usize,
}

/// Resolve manifest rows into labeled lesions: consensus labeling for rated
/// nodules (uncertain ones never appear), class lookup otherwise.
pub fn label_lesions(rows: &[ManifestRow], mode: DatasetMode) -> Result<Vec<LabeledLesion>> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        match &row.annotation {
            Annotation::Ratings(ratings) => {
                match consensus_label(ratings, mode.min_raters())? {
                    ConsensusLabel::Benign => out.push(LabeledLesion {
                        lesion_id: row.lesion_id.clone(),
                        class: 0,
                    }),
                    ConsensusLabel::Malignant => out.push(LabeledLesion {
                        lesion_id: row.lesion_id.clone(),
                        class: 1,
                    }),
                    ConsensusLabel::Excluded => {}
                }
            }
            Annotation::ClassLabel(name) => out.push(LabeledLesion {
                lesion_id: row.lesion_id.clone(),
                class: mode.class_index(name)?,
            }),
        }
    }
    Ok(out)
}

/// Train/test partition, exported as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub fraction: f64,
}

fn classes_of(lesions: &[LabeledLesion]) -> Vec<usize> {
    let mut classes: Vec<usize> = lesions.iter().map(|l| l.class).collect();
    classes.sort_unstable();
    classes.dedup();
    classes
}

/// Deterministic stratified split: per class, a seeded shuffle then a
/// `round(test_fraction * n)` test slice (at least one lesion on each side).
pub fn split_dataset(
    lesions: &[LabeledLesion],
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(0.0 < test_fraction && test_fraction < 1.0) {
        return Err(Error::Config {
            reason: format!("test_fraction {test_fraction} must lie in (0, 1)"),
        });
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in classes_of(lesions) {
        let mut ids: Vec<&str> = lesions
            .iter()
            .filter(|l| l.class == class)
            .map(|l| l.lesion_id.as_str())
            .collect();
        if ids.len() < 2 {
            return Err(Error::Stratification {
                reason: format!("class {class} has {} lesion(s); need at least 2", ids.len()),
            });
        }
        ids.sort_unstable();
        let mut rng = derive_rng(seed, "split", class as u64);
        ids.shuffle(&mut rng);
        let n_test = ((ids.len() as f64 * test_fraction).round() as usize)
            .clamp(1, ids.len() - 1);
        for (i, id) in ids.iter().enumerate() {
            if i < n_test {
                test.push(id.to_string());
            } else {
                train.push(id.to_string());
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit {
        train,
        test,
        seed,
        fraction: test_fraction,
    })
}

/// Stratified label subsample of size `max(1, round(p * n))` per class.
///
/// Subsets nest across fractions: each class is shuffled once per seed and a
/// prefix is taken, so `subsample(a) ⊆ subsample(b)` whenever `a <= b`.
pub fn subsample_labels(
    train: &[LabeledLesion],
    fraction: f64,
    seed: u64,
) -> Result<Vec<LabeledLesion>> {
    if !(0.0 < fraction && fraction <= 1.0) {
        return Err(Error::Config {
            reason: format!("label fraction {fraction} must lie in (0, 1]"),
        });
    }
    let mut out = Vec::new();
    for class in classes_of(train) {
        let mut members: Vec<&LabeledLesion> =
            train.iter().filter(|l| l.class == class).collect();
        members.sort_by(|a, b| a.lesion_id.cmp(&b.lesion_id));
        let mut rng = derive_rng(seed, "subsample", class as u64);
        members.shuffle(&mut rng);
        let take = ((members.len() as f64 * fraction).round() as usize)
            .max(1)
            .min(members.len());
        out.extend(members[..take].iter().map(|l| (*l).clone()));
    }
    out.sort_by(|a, b| a.lesion_id.cmp(&b.lesion_id));
    Ok(out)
}
