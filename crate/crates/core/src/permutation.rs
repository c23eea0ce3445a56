//! Permutation vectors acting on variables `2..=d`, their enumeration and
//! sampling, and the Gram index maps they induce.
//!
//! Internally every permutation is 0-based; serialized forms are 1-based.

use rand::Rng;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng;

/// Default cap on the number of vectors an exhaustive enumeration may produce.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

fn is_bijection(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    for &x in p {
        if x >= p.len() || seen[x] {
            return false;
        }
        seen[x] = true;
    }
    true
}

/// A `(d - 1)`-tuple of permutations of `{0, .., n - 1}`. Part `k` reorders
/// variable `k + 2` (1-based): sample `i` of that variable becomes `parts[k][i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PermutationVector {
    n: usize,
    parts: Vec<Vec<usize>>,
}

impl PermutationVector {
    pub fn new(n: usize, parts: Vec<Vec<usize>>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::DimensionMismatch(
                "a permutation vector needs at least one part".into(),
            ));
        }
        for p in &parts {
            if p.len() != n || !is_bijection(p) {
                return Err(Error::InvalidInput(format!(
                    "part {p:?} is not a permutation of 0..{n}"
                )));
            }
        }
        Ok(PermutationVector { n, parts })
    }

    /// Builds from 1-based parts, as found in serialized output.
    pub fn from_one_based(n: usize, parts: &[Vec<usize>]) -> Result<Self> {
        let parts = parts
            .iter()
            .map(|p| {
                p.iter()
                    .map(|&x| {
                        x.checked_sub(1)
                            .ok_or_else(|| Error::InvalidInput("1-based index 0".into()))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        PermutationVector::new(n, parts)
    }

    pub fn identity(n: usize, d: usize) -> Self {
        PermutationVector {
            n,
            parts: vec![(0..n).collect(); d.saturating_sub(1).max(1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of variables this vector acts on (`parts + 1`).
    pub fn d(&self) -> usize {
        self.parts.len() + 1
    }

    pub fn parts(&self) -> &[Vec<usize>] {
        &self.parts
    }

    pub fn is_identity(&self) -> bool {
        self.parts
            .iter()
            .all(|p| p.iter().enumerate().all(|(i, &x)| i == x))
    }

    pub fn to_one_based(&self) -> Vec<Vec<usize>> {
        self.parts
            .iter()
            .map(|p| p.iter().map(|x| x + 1).collect())
            .collect()
    }
}

impl Serialize for PermutationVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("PermutationVector", 2)?;
        st.serialize_field("n", &self.n)?;
        st.serialize_field("parts", &self.to_one_based())?;
        st.end()
    }
}

/// Per-variable index maps through which Gram matrices are read:
/// variable `j` is addressed as `K^j[maps[j][a]][maps[j][b]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexAssignment {
    maps: Vec<Vec<usize>>,
}

impl IndexAssignment {
    /// The unpermuted assignment.
    pub fn identity(n: usize, d: usize) -> Self {
        IndexAssignment {
            maps: vec![(0..n).collect(); d],
        }
    }

    /// Arbitrary bijective maps for every variable, including the first.
    /// Permutation tests only produce assignments whose first map is the identity;
    /// the general form exists for reorder-invariance checks.
    pub fn from_maps(maps: Vec<Vec<usize>>) -> Result<Self> {
        let n = maps.first().map_or(0, Vec::len);
        if maps.len() < 2 {
            return Err(Error::DimensionMismatch("need at least 2 maps".into()));
        }
        for m in &maps {
            if m.len() != n || !is_bijection(m) {
                return Err(Error::InvalidInput(format!(
                    "index map {m:?} is not a permutation of 0..{n}"
                )));
            }
        }
        Ok(IndexAssignment { maps })
    }

    pub fn n(&self) -> usize {
        self.maps[0].len()
    }

    pub fn d(&self) -> usize {
        self.maps.len()
    }

    pub fn map(&self, j: usize) -> &[usize] {
        &self.maps[j]
    }

    pub fn maps(&self) -> &[Vec<usize>] {
        &self.maps
    }

    /// Whether the first variable is held fixed.
    pub fn is_anchored(&self) -> bool {
        self.maps[0].iter().enumerate().all(|(i, &x)| i == x)
    }
}

/// Applies `psi` to a `d`-variable dataset: variable 1 stays fixed, variable
/// `j >= 2` is read through `psi.parts[j - 2]`.
pub fn to_assignment(psi: &PermutationVector, d: usize) -> Result<IndexAssignment> {
    if psi.parts.len() + 1 != d {
        return Err(Error::DimensionMismatch(format!(
            "permutation vector has {} parts, expected {} for d = {d}",
            psi.parts.len(),
            d - 1
        )));
    }
    let mut maps = Vec::with_capacity(d);
    maps.push((0..psi.n).collect());
    maps.extend(psi.parts.iter().cloned());
    Ok(IndexAssignment { maps })
}

/// Uniform draw from `S_n` by forward Fisher-Yates: position `i` swaps with a
/// position drawn uniformly from `i..n`.
pub fn sample_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in 0..n.saturating_sub(1) {
        let j = rng.random_range(i..n);
        p.swap(i, j);
    }
    p
}

/// `d - 1` independent uniform permutations of `{0, .., n - 1}`.
pub fn sample_permutation_vector<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    rng: &mut R,
) -> PermutationVector {
    assert!(n >= 1 && d >= 2, "need n >= 1 and d >= 2");
    let parts = (0..d - 1).map(|_| sample_permutation(n, rng)).collect();
    PermutationVector { n, parts }
}

/// The vector for replica `index` of a run seeded with `seed`; independent of
/// which worker draws it or in what order.
pub fn replica_permutation_vector(n: usize, d: usize, seed: u64, index: u64) -> PermutationVector {
    let mut r = rng::stream(seed, &[index]);
    sample_permutation_vector(n, d, &mut r)
}

/// `(n!)^(d - 1)`, or `None` on `u128` overflow.
pub fn permutation_vector_count(n: usize, d: usize) -> Option<u128> {
    let mut fact: u128 = 1;
    for k in 2..=n as u128 {
        fact = fact.checked_mul(k)?;
    }
    let mut total: u128 = 1;
    for _ in 1..d {
        total = total.checked_mul(fact)?;
    }
    Some(total)
}

fn factorial(n: usize) -> u128 {
    (2..=n as u128).product()
}

/// The `rank`-th permutation of `{0, .., n - 1}` in lexicographic order.
fn unrank_permutation(n: usize, mut rank: u128) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n);
    for k in (0..n).rev() {
        let f = factorial(k);
        let idx = (rank / f) as usize;
        rank %= f;
        out.push(pool.remove(idx));
    }
    out
}

/// Advances to the next permutation in lexicographic order; returns `false`
/// (leaving `p` sorted ascending) after the last one.
fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        p.reverse();
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// All `(n!)^(d-1)` permutation vectors in lexicographic order of the tuple
/// (first part most significant), starting from the all-identity vector.
#[derive(Debug, Clone)]
pub struct Enumeration {
    n: usize,
    d: usize,
    total: u128,
    next_rank: u128,
    end: u128,
    current: Option<Vec<Vec<usize>>>,
}

impl Enumeration {
    pub fn total(&self) -> u128 {
        self.total
    }

    /// The vector at lexicographic position `rank`.
    pub fn unrank(&self, rank: u128) -> PermutationVector {
        assert!(rank < self.total, "rank {rank} out of range");
        let fact = factorial(self.n);
        let mut parts = vec![Vec::new(); self.d - 1];
        let mut r = rank;
        for k in (0..self.d - 1).rev() {
            parts[k] = unrank_permutation(self.n, r % fact);
            r /= fact;
        }
        PermutationVector { n: self.n, parts }
    }

    /// Restricts iteration to ranks `[start, end)`, for partitioning work.
    pub fn range(mut self, start: u128, end: u128) -> Self {
        self.next_rank = start.min(self.total);
        self.end = end.min(self.total);
        self.current = None;
        self
    }
}

impl Iterator for Enumeration {
    type Item = PermutationVector;

    fn next(&mut self) -> Option<PermutationVector> {
        if self.next_rank >= self.end {
            return None;
        }
        let parts = match self.current.take() {
            None => self.unrank(self.next_rank).parts,
            Some(mut parts) => {
                let mut k = parts.len();
                loop {
                    k -= 1;
                    if next_permutation(&mut parts[k]) || k == 0 {
                        break;
                    }
                }
                parts
            }
        };
        self.next_rank += 1;
        self.current = Some(parts.clone());
        Some(PermutationVector { n: self.n, parts })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.end - self.next_rank).min(usize::MAX as u128) as usize;
        (left, Some(left))
    }
}

/// Enumerates every permutation vector, refusing when `(n!)^(d-1)` exceeds `cap`.
pub fn enumerate_permutation_vectors(n: usize, d: usize, cap: u128) -> Result<Enumeration> {
    if n == 0 || d < 2 {
        return Err(Error::InvalidInput(format!("need n >= 1 and d >= 2, got n = {n}, d = {d}")));
    }
    let total = permutation_vector_count(n, d).ok_or(Error::GuardExceeded {
        what: "exhaustive enumeration",
        count: u128::MAX,
        cap,
    })?;
    if total > cap {
        return Err(Error::GuardExceeded {
            what: "exhaustive enumeration",
            count: total,
            cap,
        });
    }
    Ok(Enumeration {
        n,
        d,
        total,
        next_rank: 0,
        end: total,
        current: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    #[test]
    fn n_one_is_identity() {
        let mut r = rng::stream(1, &[]);
        let v = sample_permutation_vector(1, 4, &mut r);
        assert_eq!(v.parts(), &[vec![0], vec![0], vec![0]]);
        assert!(v.is_identity());
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let a = replica_permutation_vector(20, 3, 42, 5);
        let b = replica_permutation_vector(20, 3, 42, 5);
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
        assert_ne!(a, replica_permutation_vector(20, 3, 42, 6));
    }

    #[test]
    fn sampling_is_uniform_on_s3() {
        let mut r = rng::stream(2024, &[]);
        let draws = 60_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..draws {
            let v = sample_permutation_vector(3, 2, &mut r);
            *counts.entry(v.parts()[0].clone()).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        let mut chi2 = 0.0;
        let expected = draws as f64 / 6.0;
        for &c in counts.values() {
            let f = c as f64 / draws as f64;
            assert!((f - 1.0 / 6.0).abs() <= 0.01, "frequency {f}");
            chi2 += (c as f64 - expected).powi(2) / expected;
        }
        // chi-square with 5 df: 0.999 quantile is 20.5
        assert!(chi2 < 20.5, "chi2 = {chi2}");
    }

    #[test]
    fn enumeration_small_cases() {
        let all: Vec<_> = enumerate_permutation_vectors(2, 2, DEFAULT_ENUMERATION_CAP)
            .unwrap()
            .collect();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].parts(), &[vec![0, 1]]);
        assert_eq!(all[1].parts(), &[vec![1, 0]]);

        let all: Vec<_> = enumerate_permutation_vectors(3, 3, DEFAULT_ENUMERATION_CAP)
            .unwrap()
            .collect();
        assert_eq!(all.len(), 36);
        assert!(all[0].is_identity());
        let set: HashSet<_> = all.iter().cloned().collect();
        assert_eq!(set.len(), 36);
    }

    #[test]
    fn enumeration_is_complete_and_matches_unrank() {
        for n in 1..=4 {
            for d in 2..=3 {
                let e = enumerate_permutation_vectors(n, d, DEFAULT_ENUMERATION_CAP).unwrap();
                let total = e.total();
                assert_eq!(Some(total), permutation_vector_count(n, d));
                let all: Vec<_> = e.clone().collect();
                assert_eq!(all.len() as u128, total);
                let set: HashSet<_> = all.iter().cloned().collect();
                assert_eq!(set.len() as u128, total);
                for (r, v) in all.iter().enumerate() {
                    assert_eq!(&e.unrank(r as u128), v);
                }
                // lexicographic order of the flattened tuple
                assert!(all.windows(2).all(|w| w[0].parts() < w[1].parts()));
                // a middle range resumes at the right place
                let mid = total / 2;
                let tail: Vec<_> = e.clone().range(mid, total).collect();
                assert_eq!(&tail[..], &all[mid as usize..]);
            }
        }
    }

    #[test]
    fn enumeration_guard() {
        let err = enumerate_permutation_vectors(8, 3, DEFAULT_ENUMERATION_CAP).unwrap_err();
        assert_eq!(
            err,
            Error::GuardExceeded {
                what: "exhaustive enumeration",
                count: 1_625_702_400,
                cap: DEFAULT_ENUMERATION_CAP
            }
        );
    }

    #[test]
    fn assignment_layout() {
        let psi = PermutationVector::new(3, vec![vec![2, 0, 1], vec![1, 2, 0]]).unwrap();
        let a = to_assignment(&psi, 3).unwrap();
        assert_eq!(a.map(0), &[0, 1, 2]);
        assert_eq!(a.map(1), &[2, 0, 1]);
        assert_eq!(a.map(2), &[1, 2, 0]);
        assert!(a.is_anchored());
        assert!(to_assignment(&psi, 2).is_err());
    }

    #[test]
    fn serialization_is_one_based() {
        let psi = PermutationVector::new(3, vec![vec![2, 0, 1]]).unwrap();
        let json = serde_json::to_string(&psi).unwrap();
        assert_eq!(json, r#"{"n":3,"parts":[[3,1,2]]}"#);
        let back = PermutationVector::from_one_based(3, &[vec![3, 1, 2]]).unwrap();
        assert_eq!(back, psi);
    }

    #[test]
    fn rejects_non_bijections() {
        assert!(PermutationVector::new(3, vec![vec![0, 0, 1]]).is_err());
        assert!(PermutationVector::new(3, vec![vec![0, 1]]).is_err());
        assert!(IndexAssignment::from_maps(vec![vec![0, 1], vec![1, 1]]).is_err());
    }
}
