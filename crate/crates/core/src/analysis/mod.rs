//! Open evaluation stack: minutiae extraction and matching, dataset statistics,
//! score distributions with a one-sided KS test, and the leakage search.

pub mod features;
pub mod ks;
pub mod leakage;
pub mod matcher;
pub mod metrics;
pub mod minutiae;
pub mod scores;

pub use features::{image_features, manifest_features, ImageFeatures, ManifestFeatures};
pub use ks::{ks_one_sided, KsResult};
pub use leakage::{
    calibrate_stage1, cosine, exclude_identities, leakage_search, one_per_identity, threshold_at_far,
    FlaggedPair, LeakageItem, LeakageReport,
};
pub use matcher::{match_minutiae, match_minutiae_with, MatcherConfig};
pub use metrics::{dataset_metrics, metrics_csv, reference_rows, MeanSd, MetricsRow};
pub use minutiae::{
    extract_minutiae, extract_minutiae_with, Foreground, Minutia, MinutiaKind, MinutiaSet, MinutiaeConfig,
};
pub use scores::{
    score_distributions, score_distributions_from_sets, Histogram, ScoreDistribution, ScoreLabel, ScoreMode,
};
