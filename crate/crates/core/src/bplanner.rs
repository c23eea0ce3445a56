//! Choosing the number of permutations.
//!
//! Given a dataset whose exhaustive p-value is `p_D`, the Monte Carlo p-value
//! with `B` permutations is `(1 + Z) / (B + 1)` with `Z ~ Binom(B, p_D)`.
//! Everything here is arithmetic on that binomial law: the probability of
//! rejecting, the probability that `p_hat +- eps` covers `p_D`, and the
//! smallest `B` that makes the interval a confidence interval of a given
//! level for every `p_D` up to a threshold `C`.

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::level::Alpha;

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::DomainError(format!("p_D must lie in [0, 1], got {p}")));
    }
    Ok(())
}

fn check_b(b: u64) -> Result<()> {
    if b == 0 {
        return Err(Error::DomainError("B must be at least 1".into()));
    }
    Ok(())
}

fn ln_binom_pmf(b: u64, k: u64, ln_p: f64, ln_q: f64, ln_b_fact: f64) -> f64 {
    let kf = k as f64;
    let rest = (b - k) as f64;
    ln_b_fact - ln_gamma(kf + 1.0) - ln_gamma(rest + 1.0) + kf * ln_p + rest * ln_q
}

/// `P(lo <= Z <= hi)` for `Z ~ Binom(b, p)`, summed in log space around the
/// largest term in the window.
pub fn binomial_window(b: u64, p: f64, lo: u64, hi: u64) -> f64 {
    let hi = hi.min(b);
    if lo > hi {
        return 0.0;
    }
    if p == 0.0 {
        return if lo == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if hi == b { 1.0 } else { 0.0 };
    }
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let ln_b_fact = ln_gamma(b as f64 + 1.0);
    let mode = (((b + 1) as f64 * p).floor() as u64).min(b);
    let peak = mode.clamp(lo, hi);
    let ln_peak = ln_binom_pmf(b, peak, ln_p, ln_q, ln_b_fact);
    let mut scaled = 0.0;
    for k in lo..=hi {
        scaled += (ln_binom_pmf(b, k, ln_p, ln_q, ln_b_fact) - ln_peak).exp();
    }
    (ln_peak.exp() * scaled).clamp(0.0, 1.0)
}

/// Rounds values within float noise of an integer onto it, so window edges
/// that are mathematically integral are not lost to `floor`/`ceil`.
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x
    }
}

/// `P(p_hat <= alpha | p_D) = P(Z <= floor(alpha (B + 1) - 1))`; zero when the
/// threshold is negative.
pub fn rejection_probability(p_d: f64, b: u64, alpha: Alpha) -> Result<f64> {
    check_probability(p_d)?;
    check_b(b)?;
    Ok(match alpha.rejection_threshold(b) {
        None => 0.0,
        Some(t) => binomial_window(b, p_d, 0, t),
    })
}

/// Integer window of `Z` for which `|p_hat - p_D| <= eps`, or `None` if empty.
pub fn coverage_window(p_d: f64, b: u64, epsilon: f64) -> Option<(u64, u64)> {
    let scale = (b + 1) as f64;
    let lo = snap((p_d - epsilon) * scale - 1.0).ceil().max(0.0);
    let hi = snap((p_d + epsilon) * scale - 1.0).floor().min(b as f64);
    if lo > hi {
        None
    } else {
        Some((lo as u64, hi as u64))
    }
}

/// `P((p_D - eps)(B + 1) - 1 <= Z <= (p_D + eps)(B + 1) - 1)`: the probability
/// that `p_hat +- eps` contains `p_D`.
pub fn ci_coverage(p_d: f64, b: u64, epsilon: f64) -> Result<f64> {
    check_probability(p_d)?;
    check_b(b)?;
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::DomainError(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(match coverage_window(p_d, b, epsilon) {
        None => 0.0,
        Some((lo, hi)) => binomial_window(b, p_d, lo, hi),
    })
}

/// Smallest half-width `eps` for which `p_hat +- eps` covers `p_D` with
/// probability at least `confidence`.
///
/// The window for half-width `eps` holds exactly the counts `k` with
/// `|k - c| <= eps (B + 1)`, `c = p_D (B + 1) - 1`, so counts are added in
/// order of distance from `c` until the mass reaches `confidence`.
pub fn ci_half_width(p_d: f64, b: u64, confidence: f64) -> Result<f64> {
    check_probability(p_d)?;
    check_b(b)?;
    if !(0.0..1.0).contains(&confidence) {
        return Err(Error::DomainError(format!(
            "confidence must lie in [0, 1), got {confidence}"
        )));
    }
    if confidence == 0.0 {
        return Ok(0.0);
    }
    let scale = (b + 1) as f64;
    let center = p_d * scale - 1.0;
    let mass = |k: i64| -> f64 {
        if k < 0 || k as u64 > b {
            0.0
        } else {
            binomial_window(b, p_d, k as u64, k as u64)
        }
    };
    let mut left = center.floor() as i64;
    let mut right = left + 1;
    let mut acc = 0.0;
    let max_k = b as i64;
    loop {
        let dl = if left >= 0 { center - left as f64 } else { f64::INFINITY };
        let dr = if right <= max_k { right as f64 - center } else { f64::INFINITY };
        if dl.is_infinite() && dr.is_infinite() {
            return Ok(center.abs().max((max_k as f64 - center).abs()) / scale);
        }
        let dist = dl.min(dr);
        // take every count at this distance before testing the level
        if dl <= dist {
            acc += mass(left);
            left -= 1;
        }
        if dr <= dist {
            acc += mass(right);
            right += 1;
        }
        if acc >= confidence {
            return Ok(dist / scale);
        }
    }
}

/// Outcome of the permutation-budget search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BPlan {
    pub alpha: Alpha,
    pub epsilon: f64,
    pub confidence: f64,
    pub threshold_c: f64,
    #[serde(rename = "B_min")]
    pub b_min: u64,
    /// Worst coverage over the `[0, C]` grid at `B_min`.
    pub min_coverage_at_b_min: f64,
    /// Worst coverage over the same grid at `B_min - 1` (absent when `B_min` is the lower bound).
    pub min_coverage_below_b_min: Option<f64>,
    /// Widest confidence half-width over `p_D` in `(C, 1]` at `B_min`.
    pub max_ci_width_above_c: f64,
    pub grid_step: f64,
    pub search_bounds: (u64, u64),
    pub note: &'static str,
}

const PLAN_NOTE: &str = "coverage is not monotone in B (lattice effects); minimality is certified by evaluating B_min and B_min - 1 directly";

/// Grid `0, h, 2h, .., C` with step `h <= eps / 10` and both endpoints present.
fn p_grid(lo: f64, hi: f64, epsilon: f64) -> (Vec<f64>, f64) {
    let steps = ((hi - lo) / (epsilon / 10.0)).ceil().max(1.0) as usize;
    let h = (hi - lo) / steps as f64;
    let grid = (0..=steps)
        .map(|k| if k == steps { hi } else { lo + k as f64 * h })
        .collect();
    (grid, h)
}

fn worst_coverage(grid: &[f64], b: u64, epsilon: f64, stop_below: f64) -> f64 {
    let mut worst = f64::INFINITY;
    // coverage is lowest near C, so scan from the top and stop at the first failure
    for &p in grid.iter().rev() {
        let c = ci_coverage(p, b, epsilon).expect("grid values are valid");
        worst = worst.min(c);
        if worst < stop_below {
            break;
        }
    }
    worst
}

/// Smallest `B` in `search_bounds` such that `p_hat +- epsilon` is a
/// `confidence`-level interval for every `p_D` on a grid of `[0, C]`.
///
/// Brackets by doubling and then bisects; the result satisfies the criterion
/// and `B_min - 1` does not, both checked by direct evaluation.
pub fn minimal_b(
    alpha: Alpha,
    epsilon: f64,
    confidence: f64,
    threshold_c: f64,
    search_bounds: (u64, u64),
) -> Result<BPlan> {
    if !(epsilon > 0.0 && epsilon < threshold_c && threshold_c < 1.0) {
        return Err(Error::DomainError(format!(
            "need 0 < epsilon < C < 1, got epsilon = {epsilon}, C = {threshold_c}"
        )));
    }
    if threshold_c <= alpha.as_f64() {
        return Err(Error::DomainError(format!(
            "C = {threshold_c} must exceed alpha = {alpha}"
        )));
    }
    if !(0.0..1.0).contains(&confidence) {
        return Err(Error::DomainError(format!(
            "confidence must lie in [0, 1), got {confidence}"
        )));
    }
    let (lo_bound, hi_bound) = search_bounds;
    if lo_bound == 0 || lo_bound > hi_bound {
        return Err(Error::DomainError(format!(
            "search bounds must satisfy 1 <= lo <= hi, got {search_bounds:?}"
        )));
    }

    let (grid, step) = p_grid(0.0, threshold_c, epsilon);
    let holds = |b: u64| worst_coverage(&grid, b, epsilon, confidence) >= confidence;

    let b_min = if holds(lo_bound) {
        lo_bound
    } else {
        let mut failing = lo_bound;
        let mut passing = None;
        while passing.is_none() {
            if failing >= hi_bound {
                return Err(Error::SearchExhausted {
                    lo: lo_bound,
                    hi: hi_bound,
                });
            }
            let next = failing.saturating_mul(2).min(hi_bound);
            if holds(next) {
                passing = Some(next);
            } else {
                failing = next;
            }
        }
        let mut passing = passing.unwrap();
        while passing - failing > 1 {
            let mid = failing + (passing - failing) / 2;
            if holds(mid) {
                passing = mid;
            } else {
                failing = mid;
            }
        }
        passing
    };

    let min_cov = worst_coverage(&grid, b_min, epsilon, f64::NEG_INFINITY);
    let below = (b_min > lo_bound).then(|| worst_coverage(&grid, b_min - 1, epsilon, f64::NEG_INFINITY));

    let (upper_grid, _) = p_grid(threshold_c, 1.0, epsilon);
    let max_width = upper_grid
        .iter()
        .skip(1)
        .map(|&p| ci_half_width(p, b_min, confidence).expect("valid grid point"))
        .fold(0.0, f64::max);

    Ok(BPlan {
        alpha,
        epsilon,
        confidence,
        threshold_c,
        b_min,
        min_coverage_at_b_min: min_cov,
        min_coverage_below_b_min: below,
        max_ci_width_above_c: max_width,
        grid_step: step,
        search_bounds,
        note: PLAN_NOTE,
    })
}

/// `(p_D, coverage)` at `plan.b_min` over `[0, 1]` with the plan's grid step.
pub fn coverage_curve(plan: &BPlan) -> Vec<(f64, f64)> {
    let (grid, _) = p_grid(0.0, 1.0, plan.epsilon);
    grid.into_iter()
        .map(|p| (p, ci_coverage(p, plan.b_min, plan.epsilon).expect("valid grid point")))
        .collect()
}
