//! Shared fixtures for the criterion benches.

use dhsic::sim::generate_scenario1;
use dhsic::{build_gram_stack, GramStack, KernelSpec};

/// Gram stack for a dependent scenario-1 sample of size `n`.
pub fn scenario1_gram(n: usize) -> GramStack {
    let data = generate_scenario1(0.3, n, 7).expect("valid scenario");
    build_gram_stack(&data, &[KernelSpec::gaussian_median(), KernelSpec::gaussian_median()])
        .expect("non-degenerate data")
}
