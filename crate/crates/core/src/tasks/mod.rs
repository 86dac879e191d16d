//! Finetuning heads, cross-validation and evaluation metrics for slide-level
//! subtyping and survival prediction.

mod finetune;
mod manifest;
mod metrics;
mod model;
mod split;
mod survival;
pub mod synthetic;

pub use finetune::{
    assign_folds, evaluate, finetune, predict, sample_gradients, train, Dataset, FinetuneConfig,
    FinetuneReport, FoldResult, Sample, Target,
};
pub use manifest::{
    parse_manifest, parse_manifest_str, write_manifest, Label, StudyRecord, TaskKind,
};
pub use metrics::{auc_binary, auc_macro, c_index, Summary};
pub use model::{TaskHead, TaskModel};
pub use split::kfold_split;
pub use survival::{risk_score, survival_curve, SurvivalBins};
