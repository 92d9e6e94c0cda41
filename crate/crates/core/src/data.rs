//! Sparse design matrices, block partitions and the per-dataset statistics
//! the solvers precompute once: sample supports over blocks, occurrence
//! counts, reweighting factors, column dual norms and the smoothness constant.

use std::io::BufRead;

use crate::error::{Error, Result};
use crate::model::{LossFamily, Regularizer};

/// Design matrix `A` (n x p) stored twice, row-major and column-major, with
/// one target per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDataset {
    n: usize,
    p: usize,
    row_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    row_val: Vec<f64>,
    col_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    col_val: Vec<f64>,
    targets: Vec<f64>,
}

impl SparseDataset {
    /// Builds a dataset from per-sample `(feature, value)` lists.
    ///
    /// Entries must be strictly ascending in feature index within each row.
    /// Explicit zeros are dropped so that row supports only contain nonzeros.
    pub fn from_rows(p: usize, rows: &[Vec<(usize, f64)>], targets: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if p == 0 {
            return Err(Error::Model("feature count must be at least 1".into()));
        }
        if targets.len() != n {
            return Err(Error::Dimension { expected: n, got: targets.len() });
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut row_val = Vec::new();
        row_ptr.push(0);
        for (i, row) in rows.iter().enumerate() {
            let mut last: Option<usize> = None;
            for &(j, v) in row {
                if j >= p {
                    return Err(Error::Parse { line: i + 1, msg: format!("feature index {} out of range (p = {p})", j + 1) });
                }
                if last.is_some_and(|l| j <= l) {
                    return Err(Error::Parse { line: i + 1, msg: "feature indices must be strictly ascending".into() });
                }
                last = Some(j);
                if v != 0.0 {
                    row_idx.push(j);
                    row_val.push(v);
                }
            }
            row_ptr.push(row_idx.len());
        }

        // Transpose: a counting pass, then a fill pass in ascending sample order.
        let nnz = row_idx.len();
        let mut col_ptr = vec![0usize; p + 1];
        for &j in &row_idx {
            col_ptr[j + 1] += 1;
        }
        for j in 0..p {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut fill = col_ptr.clone();
        let mut col_idx = vec![0usize; nnz];
        let mut col_val = vec![0f64; nnz];
        for i in 0..n {
            for k in row_ptr[i]..row_ptr[i + 1] {
                let j = row_idx[k];
                col_idx[fill[j]] = i;
                col_val[fill[j]] = row_val[k];
                fill[j] += 1;
            }
        }

        Ok(Self { n, p, row_ptr, row_idx, row_val, col_ptr, col_idx, col_val, targets })
    }

    /// Builds a dataset from a dense row-major matrix.
    pub fn from_dense(rows: &[Vec<f64>], targets: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let sparse: Vec<Vec<(usize, f64)>> = rows
            .iter()
            .map(|r| {
                if r.len() != p {
                    return Err(Error::Dimension { expected: p, got: r.len() });
                }
                Ok(r.iter().copied().enumerate().collect())
            })
            .collect::<Result<_>>()?;
        Self::from_rows(p, &sparse, targets)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Feature indices and values of sample `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.row_idx[r.clone()], &self.row_val[r])
    }

    /// Sample indices and values of feature `j`.
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.col_idx[r.clone()], &self.col_val[r])
    }

    /// Value at `(i, j)` looked up through the row view.
    pub fn get_by_row(&self, i: usize, j: usize) -> f64 {
        let (idx, val) = self.row(i);
        idx.binary_search(&j).map_or(0.0, |k| val[k])
    }

    /// Value at `(i, j)` looked up through the column view.
    pub fn get_by_col(&self, i: usize, j: usize) -> f64 {
        let (idx, val) = self.col(j);
        idx.binary_search(&i).map_or(0.0, |k| val[k])
    }

    /// `a_i^T x` for a full-length coefficient vector.
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (idx, val) = self.row(i);
        idx.iter().zip(val).map(|(&j, &v)| x[j] * v).sum()
    }

    /// `A x` for a full-length coefficient vector.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row_dot(i, x)).collect()
    }

    /// `A^T u` for a length-n vector.
    pub fn mul_t_vec(&self, u: &[f64]) -> Vec<f64> {
        (0..self.p)
            .map(|j| {
                let (idx, val) = self.col(j);
                idx.iter().zip(val).map(|(&i, &v)| u[i] * v).sum()
            })
            .collect()
    }

    /// Squared Euclidean norm of every row.
    pub fn row_sq_norms(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).1.iter().map(|v| v * v).sum()).collect()
    }

    /// Copy of the samples in `range`, keeping the feature dimension.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let rows: Vec<Vec<(usize, f64)>> = range
            .clone()
            .map(|i| {
                let (idx, val) = self.row(i);
                idx.iter().copied().zip(val.iter().copied()).collect()
            })
            .collect();
        Self::from_rows(self.p, &rows, self.targets[range].to_vec())
    }
}

/// Parses LIBSVM text (`label idx:val idx:val ...`, 1-based indices).
///
/// Blank lines and lines starting with `#` are skipped. When `dims` is given
/// it fixes `(n, p)`; `p` may exceed the largest index seen to pad trailing
/// all-zero features.
pub fn parse_libsvm<R: BufRead>(reader: R, dims: Option<(usize, usize)>) -> Result<SparseDataset> {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let label = tokens.next().unwrap_or_default();
        let y: f64 = label
            .parse()
            .map_err(|_| Error::Parse { line: lineno, msg: format!("malformed label {label:?}") })?;
        let mut row = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::Parse { line: lineno, msg: format!("malformed token {tok:?}") })?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::Parse { line: lineno, msg: format!("malformed index in {tok:?}") })?;
            let val: f64 = val
                .parse()
                .map_err(|_| Error::Parse { line: lineno, msg: format!("malformed value in {tok:?}") })?;
            if idx == 0 {
                return Err(Error::Parse { line: lineno, msg: "indices are 1-based; found 0".into() });
            }
            if idx <= last {
                return Err(Error::Parse { line: lineno, msg: format!("non-ascending index {idx} after {last}") });
            }
            if !val.is_finite() {
                return Err(Error::Parse { line: lineno, msg: format!("non-finite value in {tok:?}") });
            }
            last = idx;
            row.push((idx - 1, val));
        }
        max_index = max_index.max(last);
        rows.push(row);
        targets.push(y);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let p = match dims {
        Some((n, p)) => {
            if n != rows.len() {
                return Err(Error::Dimension { expected: n, got: rows.len() });
            }
            if p < max_index {
                return Err(Error::Dimension { expected: p, got: max_index });
            }
            p
        }
        None => max_index.max(1),
    };
    SparseDataset::from_rows(p, &rows, targets)
}

/// A partition `G` of the coefficient indices into disjoint, nonempty blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartition {
    blocks: Vec<Vec<usize>>,
    block_of: Vec<usize>,
}

impl BlockPartition {
    /// Validates that `blocks` is a disjoint cover of `0..p`.
    pub fn new(p: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut block_of = vec![usize::MAX; p];
        for (b, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(Error::Partition(format!("block {b} is empty")));
            }
            for &j in block {
                if j >= p {
                    return Err(Error::Partition(format!("index {j} in block {b} is outside 0..{p}")));
                }
                if block_of[j] != usize::MAX {
                    return Err(Error::Partition(format!("index {j} belongs to blocks {} and {b}", block_of[j])));
                }
                block_of[j] = b;
            }
        }
        if let Some(j) = block_of.iter().position(|&b| b == usize::MAX) {
            return Err(Error::Partition(format!("index {j} is not covered by any block")));
        }
        Ok(Self { blocks, block_of })
    }

    /// One block per coordinate.
    pub fn singletons(p: usize) -> Self {
        Self { blocks: (0..p).map(|j| vec![j]).collect(), block_of: (0..p).collect() }
    }

    /// Contiguous blocks of `size` coordinates; the last block may be shorter.
    pub fn equal(p: usize, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::Partition("block size must be positive".into()));
        }
        let blocks = (0..p).step_by(size).map(|s| (s..(s + size).min(p)).collect()).collect();
        Self::new(p, blocks)
    }

    pub fn p(&self) -> usize {
        self.block_of.len()
    }

    /// Number of blocks `q`.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block(&self, b: usize) -> &[usize] {
        &self.blocks[b]
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block_of(&self, j: usize) -> usize {
        self.block_of[j]
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }
}

/// Which blocks each sample touches, and the derived reweighting factors.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportMap {
    psi_ptr: Vec<usize>,
    psi: Vec<usize>,
    counts: Vec<usize>,
    weights: Vec<Option<f64>>,
    delta: f64,
}

impl SupportMap {
    /// Block ids (ascending) touched by the nonzeros of sample `i`.
    pub fn psi(&self, i: usize) -> &[usize] {
        &self.psi[self.psi_ptr[i]..self.psi_ptr[i + 1]]
    }

    /// Occurrence count `n_G` for every block.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// `d_G = n / n_G`, absent for blocks no sample touches.
    pub fn weight(&self, b: usize) -> Option<f64> {
        self.weights[b]
    }

    pub fn weights(&self) -> &[Option<f64>] {
        &self.weights
    }

    /// Block sparsity: the largest fraction of samples touching one block.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Largest asynchrony the convergence guarantee tolerates, `1/(10 sqrt(delta))`.
    pub fn tau_bound(&self) -> f64 {
        1.0 / (10.0 * self.delta.sqrt())
    }
}

pub fn build_support_map(data: &SparseDataset, partition: &BlockPartition) -> Result<SupportMap> {
    if partition.p() != data.p() {
        return Err(Error::Partition(format!(
            "partition covers {} coordinates but the dataset has {}",
            partition.p(),
            data.p()
        )));
    }
    let n = data.n();
    let q = partition.len();
    let mut psi_ptr = Vec::with_capacity(n + 1);
    let mut psi = Vec::new();
    let mut counts = vec![0usize; q];
    psi_ptr.push(0);
    let mut seen = vec![usize::MAX; q];
    let mut scratch = Vec::new();
    for i in 0..n {
        scratch.clear();
        for &j in data.row(i).0 {
            let b = partition.block_of(j);
            if seen[b] != i {
                seen[b] = i;
                scratch.push(b);
            }
        }
        scratch.sort_unstable();
        for &b in &scratch {
            counts[b] += 1;
        }
        psi.extend_from_slice(&scratch);
        psi_ptr.push(psi.len());
    }
    let weights = counts.iter().map(|&c| (c > 0).then(|| n as f64 / c as f64)).collect();
    let delta = counts.iter().copied().max().unwrap_or(0) as f64 / n as f64;
    Ok(SupportMap { psi_ptr, psi, counts, weights, delta })
}

/// `Omega_j^D(A_j)` for every block: the operator norm of the column
/// submatrix from the Euclidean norm to the block dual norm.
pub fn column_dual_norms(data: &SparseDataset, partition: &BlockPartition, reg: Regularizer) -> Vec<f64> {
    let col_norm = |j: usize| data.col(j).1.iter().map(|v| v * v).sum::<f64>().sqrt();
    partition
        .blocks()
        .iter()
        .map(|block| match reg {
            // l2 -> l_inf: the largest column norm in the block
            Regularizer::L1 => block.iter().map(|&j| col_norm(j)).fold(0.0, f64::max),
            Regularizer::GroupL2 => {
                if block.len() == 1 {
                    col_norm(block[0])
                } else {
                    spectral_norm(data, block)
                }
            }
        })
        .collect()
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 1000;

/// Largest singular value of the column submatrix `A_block`, by power
/// iteration on its Gram matrix.
fn spectral_norm(data: &SparseDataset, block: &[usize]) -> f64 {
    let m = block.len();
    let mut gram = vec![0.0; m * m];
    for a in 0..m {
        for b in a..m {
            let v = sparse_dot(data.col(block[a]), data.col(block[b]));
            gram[a * m + b] = v;
            gram[b * m + a] = v;
        }
    }
    let mut v = vec![1.0 / (m as f64).sqrt(); m];
    let mut w = vec![0.0; m];
    let mut eig = 0.0;
    for _ in 0..POWER_MAX_ITER {
        for (a, wa) in w.iter_mut().enumerate() {
            *wa = (0..m).map(|b| gram[a * m + b] * v[b]).sum();
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        for (va, wa) in v.iter_mut().zip(&w) {
            *va = wa / norm;
        }
        let done = (next - eig).abs() <= POWER_TOL * next.abs();
        eig = next;
        if done {
            break;
        }
    }
    eig.max(0.0).sqrt()
}

fn sparse_dot(a: (&[usize], &[f64]), b: (&[usize], &[f64])) -> f64 {
    let (mut i, mut k, mut acc) = (0, 0, 0.0);
    while i < a.0.len() && k < b.0.len() {
        match a.0[i].cmp(&b.0[k]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => k += 1,
            std::cmp::Ordering::Equal => {
                acc += a.1[i] * b.1[k];
                i += 1;
                k += 1;
            }
        }
    }
    acc
}

/// `L = gamma * max_i ||a_i||^2`: every `F_i(x) = f_i(a_i^T x)` is L-smooth.
pub fn smoothness_constant(data: &SparseDataset, loss: LossFamily) -> f64 {
    loss.gamma() * data.row_sq_norms().into_iter().fold(0.0, f64::max)
}
