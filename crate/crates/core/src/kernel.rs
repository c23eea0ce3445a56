//! Datasets, kernels, bandwidth selection and Gram matrices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Matrix::new(rows.len(), cols, data)
    }

    /// A single-column matrix.
    pub fn column(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows reordered so that row `i` of the result is row `order[i]` of `self`.
    pub fn select_rows(&self, order: &[usize]) -> Self {
        let mut data = Vec::with_capacity(order.len() * self.cols);
        for &r in order {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: order.len(),
            cols: self.cols,
            data,
        }
    }
}

/// `n` joint observations of `d >= 2` variables, one `n x m_j` block per variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    blocks: Vec<Matrix>,
}

impl Dataset {
    pub fn new(blocks: Vec<Matrix>) -> Result<Self> {
        if blocks.len() < 2 {
            return Err(Error::DimensionMismatch(format!(
                "need at least 2 variables, got {}",
                blocks.len()
            )));
        }
        let n = blocks[0].rows();
        if n == 0 {
            return Err(Error::DimensionMismatch("dataset has no samples".into()));
        }
        for (j, b) in blocks.iter().enumerate() {
            if b.rows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "variable {} has {} rows, expected {n}",
                    j + 1,
                    b.rows()
                )));
            }
            if b.cols() == 0 {
                return Err(Error::DimensionMismatch(format!(
                    "variable {} has no columns",
                    j + 1
                )));
            }
            if b.as_slice().iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "variable {} contains a non-finite value",
                    j + 1
                )));
            }
        }
        Ok(Dataset { blocks })
    }

    pub fn n(&self) -> usize {
        self.blocks[0].rows()
    }

    pub fn d(&self) -> usize {
        self.blocks.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(Matrix::cols).collect()
    }

    pub fn block(&self, j: usize) -> &Matrix {
        &self.blocks[j]
    }

    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }

    /// Reorders the rows of one variable: sample `i` of variable `j` becomes
    /// the old sample `order[i]`.
    pub fn with_permuted_variable(&self, j: usize, order: &[usize]) -> Self {
        let mut blocks = self.blocks.clone();
        blocks[j] = self.blocks[j].select_rows(order);
        Dataset { blocks }
    }

    /// Reorders the rows of every variable by the same map.
    pub fn with_permuted_samples(&self, order: &[usize]) -> Self {
        Dataset {
            blocks: self.blocks.iter().map(|b| b.select_rows(order)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

/// Kernel applied to one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSpec {
    /// `exp(-||x - y||^2 / sigma^2)`.
    Gaussian(Bandwidth),
    /// `<x, y>`.
    Linear,
    /// A precomputed symmetric `n x n` Gram matrix; the variable's data block is ignored.
    Tabulated(Matrix),
}

impl KernelSpec {
    pub fn gaussian_median() -> Self {
        KernelSpec::Gaussian(Bandwidth::MedianHeuristic)
    }

    pub fn gaussian(sigma: f64) -> Self {
        KernelSpec::Gaussian(Bandwidth::Fixed(sigma))
    }

    pub fn family(&self) -> &'static str {
        match self {
            KernelSpec::Gaussian(_) => "gaussian",
            KernelSpec::Linear => "linear",
            KernelSpec::Tabulated(_) => "tabulated",
        }
    }
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of the nonzero pairwise Euclidean distances between rows.
pub fn median_heuristic_bandwidth(block: &Matrix) -> Result<f64> {
    let n = block.rows();
    if n < 2 {
        return Err(Error::InvalidInput(
            "median heuristic needs at least 2 samples".into(),
        ));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            let d2 = squared_distance(block.row(a), block.row(b));
            if d2 > 0.0 {
                dists.push(d2.sqrt());
            }
        }
    }
    if dists.is_empty() {
        return Err(Error::AllPointsIdentical { variable: 0 });
    }
    let m = dists.len();
    let mid = m / 2;
    let (_, upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if m % 2 == 1 {
        Ok(upper)
    } else {
        let lower = dists[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(0.5 * (lower + upper))
    }
}

/// One kernel matrix per variable, plus the row and grand means the
/// factorized statistic needs.
#[derive(Debug, Clone)]
pub struct GramStack {
    n: usize,
    mats: Vec<Matrix>,
    specs: Vec<KernelSpec>,
    bandwidths: Vec<Option<f64>>,
    row_means: Vec<Vec<f64>>,
    grand_means: Vec<f64>,
}

const SYMMETRY_TOL: f64 = 1e-12;

fn gram_for(block: &Matrix, spec: &KernelSpec, n: usize) -> Result<(Matrix, Option<f64>)> {
    match spec {
        KernelSpec::Gaussian(bw) => {
            let sigma = match *bw {
                Bandwidth::Fixed(s) => {
                    if !(s > 0.0 && s.is_finite()) {
                        return Err(Error::DomainError(format!(
                            "bandwidth must be a positive real, got {s}"
                        )));
                    }
                    s
                }
                Bandwidth::MedianHeuristic => median_heuristic_bandwidth(block)?,
            };
            let inv = 1.0 / (sigma * sigma);
            let mut data = vec![0.0; n * n];
            for a in 0..n {
                data[a * n + a] = 1.0;
                for b in a + 1..n {
                    let k = (-squared_distance(block.row(a), block.row(b)) * inv).exp();
                    data[a * n + b] = k;
                    data[b * n + a] = k;
                }
            }
            Ok((Matrix::new(n, n, data)?, Some(sigma)))
        }
        KernelSpec::Linear => {
            let mut data = vec![0.0; n * n];
            for a in 0..n {
                for b in a..n {
                    let k: f64 = block.row(a).iter().zip(block.row(b)).map(|(x, y)| x * y).sum();
                    data[a * n + b] = k;
                    data[b * n + a] = k;
                }
            }
            Ok((Matrix::new(n, n, data)?, None))
        }
        KernelSpec::Tabulated(m) => {
            check_gram(m, n)?;
            Ok((m.clone(), None))
        }
    }
}

fn check_gram(m: &Matrix, n: usize) -> Result<()> {
    if m.rows() != n || m.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "Gram matrix must be {n}x{n}, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if m.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("Gram matrix has a non-finite entry".into()));
    }
    for a in 0..n {
        for b in a + 1..n {
            if (m.get(a, b) - m.get(b, a)).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidInput(format!(
                    "Gram matrix is not symmetric at ({a}, {b})"
                )));
            }
        }
    }
    Ok(())
}

/// Evaluates each variable's kernel on its block. Median-heuristic bandwidths
/// are resolved per variable.
pub fn build_gram_stack(data: &Dataset, specs: &[KernelSpec]) -> Result<GramStack> {
    if specs.len() != data.d() {
        return Err(Error::DimensionMismatch(format!(
            "{} kernel specs for {} variables",
            specs.len(),
            data.d()
        )));
    }
    let n = data.n();
    let built: Vec<Result<(Matrix, Option<f64>)>> = specs
        .par_iter()
        .enumerate()
        .map(|(j, spec)| {
            gram_for(data.block(j), spec, n).map_err(|e| match e {
                Error::AllPointsIdentical { .. } => Error::AllPointsIdentical { variable: j + 1 },
                other => other,
            })
        })
        .collect();
    let mut mats = Vec::with_capacity(specs.len());
    let mut bandwidths = Vec::with_capacity(specs.len());
    for r in built {
        let (m, bw) = r?;
        mats.push(m);
        bandwidths.push(bw);
    }
    Ok(GramStack::assemble(n, mats, specs.to_vec(), bandwidths))
}

impl GramStack {
    /// Wraps precomputed symmetric `n x n` Gram matrices.
    pub fn from_matrices(mats: Vec<Matrix>) -> Result<Self> {
        if mats.len() < 2 {
            return Err(Error::DimensionMismatch(format!(
                "need at least 2 Gram matrices, got {}",
                mats.len()
            )));
        }
        let n = mats[0].rows();
        if n == 0 {
            return Err(Error::DimensionMismatch("empty Gram matrix".into()));
        }
        for m in &mats {
            check_gram(m, n)?;
        }
        let specs = mats.iter().cloned().map(KernelSpec::Tabulated).collect();
        let bandwidths = vec![None; mats.len()];
        Ok(GramStack::assemble(n, mats, specs, bandwidths))
    }

    fn assemble(
        n: usize,
        mats: Vec<Matrix>,
        specs: Vec<KernelSpec>,
        bandwidths: Vec<Option<f64>>,
    ) -> Self {
        let nf = n as f64;
        let row_means: Vec<Vec<f64>> = mats
            .iter()
            .map(|m| (0..n).map(|a| m.row(a).iter().sum::<f64>() / nf).collect())
            .collect();
        let grand_means = row_means
            .iter()
            .map(|r| r.iter().sum::<f64>() / nf)
            .collect();
        GramStack {
            n,
            mats,
            specs,
            bandwidths,
            row_means,
            grand_means,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.mats.len()
    }

    pub fn mat(&self, j: usize) -> &Matrix {
        &self.mats[j]
    }

    pub fn mats(&self) -> &[Matrix] {
        &self.mats
    }

    pub fn specs(&self) -> &[KernelSpec] {
        &self.specs
    }

    /// Bandwidth used for each Gaussian variable; `None` for other families.
    pub fn resolved_bandwidths(&self) -> &[Option<f64>] {
        &self.bandwidths
    }

    pub(crate) fn row_means(&self, j: usize) -> &[f64] {
        &self.row_means[j]
    }

    pub(crate) fn grand_mean(&self, j: usize) -> f64 {
        self.grand_means[j]
    }
}
