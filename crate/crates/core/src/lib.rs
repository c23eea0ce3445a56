//! Joint independence testing with dHSIC.
//!
//! The crate evaluates the dHSIC V-statistic from per-variable Gram matrices,
//! runs exhaustive and Monte Carlo permutation tests, plans how many
//! permutations a Monte Carlo test needs, and drives power and calibration
//! simulations.

pub mod bplanner;
pub mod statistic;
pub mod error;
pub mod kernel;
pub mod level;
pub mod permutation;
pub mod rng;
pub mod sim;

pub use bplanner::{ci_coverage, ci_half_width, minimal_b, rejection_probability, BPlan};
pub use statistic::{dhsic_factorized, dhsic_naive, hsic, EvalPath, StatisticValue};
pub use error::{Error, Result};
pub use kernel::{
    build_gram_stack, median_heuristic_bandwidth, Bandwidth, Dataset, GramStack, KernelSpec,
    Matrix,
};
pub use level::Alpha;
pub use perm_test::{rank_with_ties, test_exhaustive, test_sampled, Method, TestResult, TiePolicy};
pub use permutation::{
    enumerate_permutation_vectors, replica_permutation_vector, sample_permutation_vector,
    to_assignment, IndexAssignment, PermutationVector, DEFAULT_ENUMERATION_CAP,
};

/// Library version stamped into results and manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
