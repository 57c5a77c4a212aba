//! Kernel SHAP attributions and perturbation elasticities.

mod elasticity;
mod kmeans;
mod shap;

pub use elasticity::{expected_elasticity, ElasticityEstimate, ElasticityTable, Perturbation};
pub use kmeans::{kmeans, kmeans_background, BackgroundSet};
pub use shap::{kernel_shap, shap_summary, shapley_kernel, ShapOptions, ShapResult, ShapSummary, EXACT_MAX_FEATURES};
