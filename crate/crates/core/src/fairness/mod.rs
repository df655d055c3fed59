//! Subgroup fairness metrics and independence tests.

mod divergence;
mod independence;
mod subgroup;

pub use divergence::{
    js_divergence, kl_divergence, max_mean_gap, subgroup_means, uf_metric, Histogram, KL_EPSILON,
};
pub use independence::{
    chi2_independence_test, permutation_p_value, permutation_test_joint, permutation_test_mutual,
    TestMethod, TestResult,
};
pub use subgroup::{bin_continuous, BinningSpec, QuantileBinner, SubgroupKey};
