//! Evaluation: ranking metrics, Ward clustering with ARI, downstream
//! classifiers on embeddings, corruption robustness sweeps, attention and
//! gradient interpretability, and the inference-latency benchmark.

pub mod benchmark;
pub mod clustering;
pub mod downstream;
pub mod interpret;
pub mod metrics;
pub mod report;
pub mod robustness;

pub use benchmark::{inference_benchmark, BenchmarkRow};
pub use clustering::{agglomerative_cluster, Linkage};
pub use downstream::{downstream_classify, DownstreamClassifier};
pub use interpret::{
    attention_diag, attention_gradient_correlation, gradient_saliency, masking_sweep,
    MaskCriterion, MaskFill,
};
pub use metrics::{ari, f1, macro_f1, pr_auc, roc_auc};
pub use report::EvalReport;
pub use robustness::{corrupt, robustness_sweep, CorruptionMode, CorruptionSpec};
