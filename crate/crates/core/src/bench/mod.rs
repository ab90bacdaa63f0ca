//! Synthetic benchmarks, cross-validation folds and evaluation metrics.

pub mod folds;
pub mod metrics;
pub mod synthetic;

pub use folds::{fixed_test_subset, make_cv_folds, make_folds_over, nonzero_coords, Coord, FoldSet};
pub use metrics::{
    hidden_ranks, mean_recall_at_n, probability_at_n, ranking, recall_at_n, rmse, rmse_values, MetricRecord,
};
pub use synthetic::{generate_factors, generate_synthetic, SyntheticFactors, SyntheticSpec, Topology};
