//! Reference points for the lookup layer: the dense FFN it replaces and the
//! LSH-based alternatives whose pathologies it avoids.

mod ffn;
mod lsh;
mod yoso;

pub use ffn::{Activation, FfnCache, FfnGrads, FfnParams, FfnWorkspace};
pub use lsh::{
    brute_force_top, bucket_histogram, gini, lsh_recall_experiment, BucketStats, LshEnsemble,
    RecallRow, RecallSpec,
};
pub use yoso::{collision_weighted_sum, yoso_estimate, yoso_mse, YosoTables};
