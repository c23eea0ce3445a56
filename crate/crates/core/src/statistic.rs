//! The dHSIC V-statistic.
//!
//! Two evaluators are provided. [`dhsic_naive`] sums the three terms of the
//! estimator literally over all index tuples and exists for verification.
//! [`dhsic_factorized`] uses
//!
//! ```text
//! A = n^-2 sum_{a,b} prod_j K~j[a][b]
//! B = prod_j mean(K~j)
//! C = n^-1 sum_a prod_j rowmean(K~j)[a]
//! dHSIC = A + B - 2C
//! ```
//!
//! where `K~j` is `K^j` read through the assignment's index map. Row and grand
//! means are permutation-covariant, so only `A` touches the matrices:
//! O(d n^2) per assignment.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::GramStack;
use crate::permutation::IndexAssignment;

/// Values in `(-NEGATIVE_SLACK, 0)` are rounding noise and clamp to zero.
pub const NEGATIVE_SLACK: f64 = 1e-10;

/// Largest `n^(2d)` the literal evaluator will attempt.
pub const NAIVE_GUARD: u128 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPath {
    Naive,
    Factorized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StatisticValue {
    pub value: f64,
    /// Value before clamping.
    pub raw: f64,
    pub n: usize,
    pub d: usize,
    pub path: EvalPath,
}

fn clamp(raw: f64) -> f64 {
    if raw < 0.0 && raw > -NEGATIVE_SLACK {
        0.0
    } else {
        if raw <= -NEGATIVE_SLACK {
            log::warn!("dHSIC evaluated to {raw}; kernel matrices may not be positive semidefinite");
        }
        raw
    }
}

fn check_shapes(gram: &GramStack, assignment: &IndexAssignment) -> Result<()> {
    if assignment.d() != gram.d() || assignment.n() != gram.n() {
        return Err(Error::DimensionMismatch(format!(
            "assignment is {}x{} (d x n), Gram stack is {}x{}",
            assignment.d(),
            assignment.n(),
            gram.d(),
            gram.n()
        )));
    }
    Ok(())
}

/// Advances an odometer over `{0..n}^len`; `false` once it wraps.
fn advance(idx: &mut [usize], n: usize) -> bool {
    for slot in idx.iter_mut().rev() {
        *slot += 1;
        if *slot < n {
            return true;
        }
        *slot = 0;
    }
    false
}

/// Literal evaluation of the estimator by nested summation over
/// `{1..n}^2`, `{1..n}^(2d)` and `{1..n}^(d+1)`.
pub fn dhsic_naive(gram: &GramStack, assignment: &IndexAssignment) -> Result<StatisticValue> {
    check_shapes(gram, assignment)?;
    let n = gram.n();
    let d = gram.d();
    let work = (n as u128)
        .checked_pow(2 * d as u32)
        .unwrap_or(u128::MAX);
    if work > NAIVE_GUARD {
        return Err(Error::GuardExceeded {
            what: "naive dHSIC summation",
            count: work,
            cap: NAIVE_GUARD,
        });
    }
    let k = |j: usize, a: usize, b: usize| {
        let m = assignment.map(j);
        gram.mat(j).get(m[a], m[b])
    };

    let mut idx = vec![0usize; 2];
    let mut sum_a = 0.0;
    loop {
        sum_a += (0..d).map(|j| k(j, idx[0], idx[1])).product::<f64>();
        if !advance(&mut idx, n) {
            break;
        }
    }

    let mut idx = vec![0usize; 2 * d];
    let mut sum_b = 0.0;
    loop {
        sum_b += (0..d).map(|j| k(j, idx[2 * j], idx[2 * j + 1])).product::<f64>();
        if !advance(&mut idx, n) {
            break;
        }
    }

    let mut idx = vec![0usize; d + 1];
    let mut sum_c = 0.0;
    loop {
        sum_c += (0..d).map(|j| k(j, idx[0], idx[j + 1])).product::<f64>();
        if !advance(&mut idx, n) {
            break;
        }
    }

    let nf = n as f64;
    let raw = sum_a / nf.powi(2) + sum_b / nf.powi(2 * d as i32)
        - 2.0 * sum_c / nf.powi(d as i32 + 1);
    Ok(StatisticValue {
        value: clamp(raw),
        raw,
        n,
        d,
        path: EvalPath::Naive,
    })
}

/// O(d n^2) evaluation; panics if `assignment` does not match `gram`'s shape.
pub fn dhsic_factorized(gram: &GramStack, assignment: &IndexAssignment) -> StatisticValue {
    check_shapes(gram, assignment).expect("assignment shape");
    let raw = factorized_raw(gram, assignment);
    StatisticValue {
        value: clamp(raw),
        raw,
        n: gram.n(),
        d: gram.d(),
        path: EvalPath::Factorized,
    }
}

fn factorized_raw(gram: &GramStack, assignment: &IndexAssignment) -> f64 {
    let n = gram.n();
    let d = gram.d();
    let nf = n as f64;

    let sum_a = if d == 2 {
        hadamard_sum_pair(gram, assignment.map(0), assignment.map(1))
    } else {
        hadamard_sum(gram, assignment)
    };

    let term_b: f64 = (0..d).map(|j| gram.grand_mean(j)).product();

    let mut sum_c = 0.0;
    for a in 0..n {
        let mut p = 1.0;
        for j in 0..d {
            p *= gram.row_means(j)[assignment.map(j)[a]];
        }
        sum_c += p;
    }

    sum_a / (nf * nf) + term_b - 2.0 * sum_c / nf
}

fn hadamard_sum_pair(gram: &GramStack, m0: &[usize], m1: &[usize]) -> f64 {
    let (k0, k1) = (gram.mat(0), gram.mat(1));
    let anchored = m0.iter().enumerate().all(|(i, &x)| i == x);
    let mut total = 0.0;
    for (a, &pa) in m1.iter().enumerate() {
        let r1 = k1.row(pa);
        if anchored {
            let r0 = k0.row(a);
            total += r0.iter().zip(m1).map(|(&x, &pb)| x * r1[pb]).sum::<f64>();
        } else {
            let r0 = k0.row(m0[a]);
            total += m0
                .iter()
                .zip(m1)
                .map(|(&qb, &pb)| r0[qb] * r1[pb])
                .sum::<f64>();
        }
    }
    total
}

fn hadamard_sum(gram: &GramStack, assignment: &IndexAssignment) -> f64 {
    let n = gram.n();
    let d = gram.d();
    let mut acc = vec![0.0; n];
    let mut total = 0.0;
    for a in 0..n {
        acc.fill(1.0);
        for j in 0..d {
            let map = assignment.map(j);
            let row = gram.mat(j).row(map[a]);
            for (slot, &b) in acc.iter_mut().zip(map) {
                *slot *= row[b];
            }
        }
        total += acc.iter().sum::<f64>();
    }
    total
}

/// HSIC, the two-variable case of dHSIC.
pub fn hsic(gram: &GramStack, assignment: &IndexAssignment) -> Result<StatisticValue> {
    if gram.d() != 2 {
        return Err(Error::WrongArity {
            expected: 2,
            got: gram.d(),
        });
    }
    check_shapes(gram, assignment)?;
    Ok(dhsic_factorized(gram, assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_gram_stack, Dataset, KernelSpec, Matrix};
    use crate::rng;
    use crate::permutation::sample_permutation;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn two_point_stack() -> GramStack {
        let ds = Dataset::new(vec![Matrix::column(&[0.0, 1.0]), Matrix::column(&[0.0, 1.0])])
            .unwrap();
        build_gram_stack(&ds, &[KernelSpec::gaussian(1.0), KernelSpec::gaussian(1.0)]).unwrap()
    }

    fn closed_form() -> f64 {
        let e = (-1.0f64).exp();
        ((1.0 - e) / 2.0).powi(2)
    }

    fn random_stack(seed: u64, n: usize, d: usize) -> GramStack {
        let mut r = rng::stream(seed, &[]);
        let blocks = (0..d)
            .map(|_| {
                let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
                Matrix::column(&v)
            })
            .collect();
        let ds = Dataset::new(blocks).unwrap();
        build_gram_stack(&ds, &vec![KernelSpec::gaussian_median(); d]).unwrap()
    }

    #[test]
    fn two_point_closed_form() {
        let g = two_point_stack();
        let id = IndexAssignment::identity(2, 2);
        let naive = dhsic_naive(&g, &id).unwrap();
        let fact = dhsic_factorized(&g, &id);
        assert!((naive.value - closed_form()).abs() < 1e-12);
        assert!((fact.value - closed_form()).abs() < 1e-12);
        assert!((hsic(&g, &id).unwrap().value - closed_form()).abs() < 1e-12);
        assert_eq!(naive.path, EvalPath::Naive);
        assert_eq!(fact.path, EvalPath::Factorized);
    }

    #[test]
    fn identical_samples_give_zero() {
        let ds = Dataset::new(vec![
            Matrix::filled(5, 2, 1.5),
            Matrix::filled(5, 1, -3.0),
            Matrix::filled(5, 3, 0.0),
        ])
        .unwrap();
        let g = build_gram_stack(&ds, &vec![KernelSpec::gaussian(1.0); 3]).unwrap();
        let id = IndexAssignment::identity(5, 3);
        assert_eq!(dhsic_naive(&g, &id).unwrap().value, 0.0);
        assert_eq!(dhsic_factorized(&g, &id).value, 0.0);
    }

    #[test]
    fn naive_matches_factorized_three_variables() {
        let g = random_stack(11, 6, 3);
        let id = IndexAssignment::identity(6, 3);
        let a = dhsic_naive(&g, &id).unwrap().value;
        let b = dhsic_factorized(&g, &id).value;
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn hsic_arity() {
        let g = random_stack(3, 4, 3);
        assert_eq!(
            hsic(&g, &IndexAssignment::identity(4, 3)).unwrap_err(),
            Error::WrongArity { expected: 2, got: 3 }
        );
    }

    #[test]
    fn hsic_matches_centered_trace() {
        let g = random_stack(99, 10, 2);
        let n = 10;
        let center = |m: &Matrix| -> Vec<f64> {
            let row: Vec<f64> = (0..n).map(|a| (0..n).map(|b| m.get(a, b)).sum::<f64>() / n as f64).collect();
            let col: Vec<f64> = (0..n).map(|b| (0..n).map(|a| m.get(a, b)).sum::<f64>() / n as f64).collect();
            let all = row.iter().sum::<f64>() / n as f64;
            let mut out = vec![0.0; n * n];
            for a in 0..n {
                for b in 0..n {
                    out[a * n + b] = m.get(a, b) - row[a] - col[b] + all;
                }
            }
            out
        };
        let c1 = center(g.mat(0));
        let c2 = center(g.mat(1));
        let oracle = c1.iter().zip(&c2).map(|(x, y)| x * y).sum::<f64>() / (n * n) as f64;
        let id = IndexAssignment::identity(n, 2);
        let h = hsic(&g, &id).unwrap().value;
        let naive = dhsic_naive(&g, &id).unwrap().value;
        assert!((h - oracle).abs() <= 1e-12 * oracle.max(1e-3));
        assert!((naive - oracle).abs() <= 1e-12 * oracle.max(1e-3));
        assert_eq!(h.to_bits(), dhsic_factorized(&g, &id).value.to_bits());
    }

    #[test]
    fn naive_guard() {
        let g = random_stack(1, 12, 4);
        let err = dhsic_naive(&g, &IndexAssignment::identity(12, 4)).unwrap_err();
        assert!(matches!(err, Error::GuardExceeded { .. }));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let g = random_stack(1, 4, 2);
        assert!(matches!(
            dhsic_naive(&g, &IndexAssignment::identity(5, 2)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn factorized_agrees_with_naive(seed in any::<u64>(), n in 3usize..=7, d in 2usize..=3) {
            let g = random_stack(seed, n, d);
            let mut r = rng::stream(seed, &[1]);
            let mut maps = vec![(0..n).collect::<Vec<_>>()];
            for _ in 1..d {
                maps.push(sample_permutation(n, &mut r));
            }
            let asg = IndexAssignment::from_maps(maps).unwrap();
            let naive = dhsic_naive(&g, &asg).unwrap();
            let fact = dhsic_factorized(&g, &asg);
            prop_assert!((fact.value - naive.value).abs() <= 1e-10 * naive.value.abs().max(1.0));
            prop_assert!(fact.raw >= -NEGATIVE_SLACK);
            prop_assert!(fact.value >= 0.0);
        }

        #[test]
        fn common_reordering_leaves_value_unchanged(seed in any::<u64>(), n in 3usize..=12, d in 2usize..=4) {
            let g = random_stack(seed, n, d);
            let mut r = rng::stream(seed, &[2]);
            let maps: Vec<Vec<usize>> = (0..d).map(|_| sample_permutation(n, &mut r)).collect();
            let pi = sample_permutation(n, &mut r);
            let composed: Vec<Vec<usize>> = maps.iter().map(|m| pi.iter().map(|&i| m[i]).collect()).collect();
            let v0 = dhsic_factorized(&g, &IndexAssignment::from_maps(maps).unwrap()).value;
            let v1 = dhsic_factorized(&g, &IndexAssignment::from_maps(composed).unwrap()).value;
            prop_assert!((v0 - v1).abs() <= 1e-12);
        }
    }
}
