//! Target-task evaluation: representation concatenation, linear probing,
//! fine-tuning, classification metrics, and embedding-geometry diagnostics.

pub mod diagnostics;
pub mod linear;
pub mod metrics;

pub use diagnostics::{
    embedding_diagnostics, pca_projection, project_lesions, write_pca_csv, EmbeddingDiagnostics,
    PcaRow, ProjectionGroup,
};
pub use linear::{
    concat_representations, evaluate_head, extract_representations, fine_tune, linear_evaluate,
    train_linear_head, FineTuneConfig, HeadState, HeadTrainConfig, LinearEvalOutcome,
    RepresentationRecord,
};
pub use metrics::{
    auc_concordance, binary_metrics, confusion_at, multiclass_accuracy, one_vs_rest_auc,
    MetricReport, THRESHOLD,
};
