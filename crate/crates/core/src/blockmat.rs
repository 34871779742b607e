//! Dense block-matrix algebra.
//!
//! Provides the uniform-grid [`BlockMatrix`] carrier, communication-topology
//! structure checks, the block element-wise rearrangement [`bew`], and the
//! sequential Schur-complement recursion [`sylvester_decompose`] that tests
//! (or incrementally enforces, via [`SylvesterState`]) positive definiteness
//! one block row at a time.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg;

/// Entries with absolute value at or below this count as structural zeros.
pub const ZERO_TOL: f64 = 1e-12;

/// Default positive-definiteness threshold on the smallest eigenvalue.
pub const PD_TOL: f64 = 1e-8;

/// Pivot blocks whose smallest eigenvalue magnitude falls below this are
/// rejected as numerically singular instead of being classified.
pub const SINGULAR_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum BlockMatError {
    #[error("block ({row},{col}) has shape {got_rows}x{got_cols}, expected {want_rows}x{want_cols}")]
    BlockShape {
        row: usize,
        col: usize,
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("expected a {want_rows}x{want_cols} block grid, got {got_rows}x{got_cols}")]
    GridShape {
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("operation requires uniform square blocks")]
    NonUniformBlocks,
    #[error("matrix is not symmetric (max deviation {max_dev:.3e})")]
    NotSymmetric { max_dev: f64 },
    #[error("ill-conditioned pivot block at index {index} (lambda_min {lambda_min:.3e})")]
    IllConditioned { index: usize, lambda_min: f64 },
    #[error("row {got} pushed, expected row of length {want}")]
    RowLength { got: usize, want: usize },
}

/// Grid of dense real blocks. Blocks in a row share their row count and
/// blocks in a column share their column count.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    row_dims: Vec<usize>,
    col_dims: Vec<usize>,
    blocks: Vec<DMatrix<f64>>,
}

impl BlockMatrix {
    /// All-zero grid with the given per-block dimensions.
    pub fn zeros(row_dims: Vec<usize>, col_dims: Vec<usize>) -> Self {
        let blocks = row_dims
            .iter()
            .flat_map(|&r| col_dims.iter().map(move |&c| DMatrix::zeros(r, c)))
            .collect();
        Self {
            row_dims,
            col_dims,
            blocks,
        }
    }

    /// Grid of `n x n` blocks, each `size x size`, filled by `f(i, j)`.
    pub fn from_fn(
        row_dims: Vec<usize>,
        col_dims: Vec<usize>,
        mut f: impl FnMut(usize, usize) -> DMatrix<f64>,
    ) -> Result<Self, BlockMatError> {
        let mut out = Self::zeros(row_dims, col_dims);
        for i in 0..out.n_row_blocks() {
            for j in 0..out.n_col_blocks() {
                out.set_block(i, j, f(i, j))?;
            }
        }
        Ok(out)
    }

    /// Reinterpret a dense matrix as a block grid.
    pub fn from_dense(
        dense: &DMatrix<f64>,
        row_dims: Vec<usize>,
        col_dims: Vec<usize>,
    ) -> Result<Self, BlockMatError> {
        let total_r: usize = row_dims.iter().sum();
        let total_c: usize = col_dims.iter().sum();
        if dense.nrows() != total_r || dense.ncols() != total_c {
            return Err(BlockMatError::GridShape {
                got_rows: dense.nrows(),
                got_cols: dense.ncols(),
                want_rows: total_r,
                want_cols: total_c,
            });
        }
        let row_offsets = offsets(&row_dims);
        let col_offsets = offsets(&col_dims);
        Self::from_fn(row_dims.clone(), col_dims.clone(), |i, j| {
            dense
                .view((row_offsets[i], col_offsets[j]), (row_dims[i], col_dims[j]))
                .into_owned()
        })
    }

    pub fn n_row_blocks(&self) -> usize {
        self.row_dims.len()
    }

    pub fn n_col_blocks(&self) -> usize {
        self.col_dims.len()
    }

    pub fn row_dims(&self) -> &[usize] {
        &self.row_dims
    }

    pub fn col_dims(&self) -> &[usize] {
        &self.col_dims
    }

    pub fn block(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.blocks[i * self.col_dims.len() + j]
    }

    pub fn set_block(
        &mut self,
        i: usize,
        j: usize,
        block: DMatrix<f64>,
    ) -> Result<(), BlockMatError> {
        if block.nrows() != self.row_dims[i] || block.ncols() != self.col_dims[j] {
            return Err(BlockMatError::BlockShape {
                row: i,
                col: j,
                got_rows: block.nrows(),
                got_cols: block.ncols(),
                want_rows: self.row_dims[i],
                want_cols: self.col_dims[j],
            });
        }
        self.blocks[i * self.col_dims.len() + j] = block;
        Ok(())
    }

    /// Concatenate all blocks into one dense matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let row_offsets = offsets(&self.row_dims);
        let col_offsets = offsets(&self.col_dims);
        let mut out = DMatrix::zeros(self.row_dims.iter().sum(), self.col_dims.iter().sum());
        for i in 0..self.n_row_blocks() {
            for j in 0..self.n_col_blocks() {
                out.view_mut(
                    (row_offsets[i], col_offsets[j]),
                    (self.row_dims[i], self.col_dims[j]),
                )
                .copy_from(self.block(i, j));
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.col_dims.clone(), self.row_dims.clone(), |i, j| {
            self.block(j, i).transpose()
        })
        .expect("transpose preserves shapes")
    }

    /// `alpha * self + beta * other`; the grids must agree blockwise.
    pub fn add_scaled(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self, BlockMatError> {
        if self.row_dims != other.row_dims || self.col_dims != other.col_dims {
            return Err(BlockMatError::GridShape {
                got_rows: other.row_dims.iter().sum(),
                got_cols: other.col_dims.iter().sum(),
                want_rows: self.row_dims.iter().sum(),
                want_cols: self.col_dims.iter().sum(),
            });
        }
        Self::from_fn(self.row_dims.clone(), self.col_dims.clone(), |i, j| {
            self.block(i, j) * alpha + other.block(i, j) * beta
        })
    }

    /// Blockwise matrix product.
    pub fn matmul(&self, other: &Self) -> Result<Self, BlockMatError> {
        if self.col_dims != other.row_dims {
            return Err(BlockMatError::GridShape {
                got_rows: other.row_dims.iter().sum(),
                got_cols: other.col_dims.iter().sum(),
                want_rows: self.col_dims.iter().sum(),
                want_cols: other.col_dims.iter().sum(),
            });
        }
        Self::from_fn(self.row_dims.clone(), other.col_dims.clone(), |i, j| {
            let mut acc = DMatrix::zeros(self.row_dims[i], other.col_dims[j]);
            for k in 0..self.n_col_blocks() {
                acc += self.block(i, k) * other.block(k, j);
            }
            acc
        })
    }

    /// True if the grid is square and `blocks[i][j] == blocks[j][i]^T`
    /// entrywise within `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.row_dims != self.col_dims {
            return false;
        }
        for i in 0..self.n_row_blocks() {
            for j in i..self.n_col_blocks() {
                let d = self.block(i, j) - self.block(j, i).transpose();
                if d.iter().any(|v| v.abs() > tol) {
                    return false;
                }
            }
        }
        true
    }

    fn uniform_block_size(&self) -> Option<usize> {
        let s = *self.row_dims.first()?;
        if self.row_dims.iter().all(|&d| d == s) && self.col_dims.iter().all(|&d| d == s) {
            Some(s)
        } else {
            None
        }
    }
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(dims.len());
    let mut acc = 0;
    for &d in dims {
        out.push(acc);
        acc += d;
    }
    out
}

/// Directed communication topology over `n` subsystems. An edge `(i, j)`
/// means subsystem `i` receives information from subsystem `j`. Indices are
/// zero-based and self-loops are rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Topology {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            edges: BTreeSet::new(),
        }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut t = Self::new(n);
        for (i, j) in edges {
            t.add_edge(i, j);
        }
        t
    }

    /// Inserts a directed edge. Panics on self-loops or out-of-range indices.
    pub fn add_edge(&mut self, i: usize, j: usize) {
        assert!(i != j, "self-loops are not allowed");
        assert!(i < self.n && j < self.n, "vertex index out of range");
        self.edges.insert((i, j));
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }

    /// True if `i` and `j` are connected in either direction.
    pub fn coupled(&self, i: usize, j: usize) -> bool {
        self.has_edge(i, j) || self.has_edge(j, i)
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }
}

/// True iff every off-diagonal block `(i, j)` of `theta` with no edge in
/// either direction between `i` and `j` is entrywise zero (within
/// [`ZERO_TOL`]). Panics if `theta` is not a square grid of `topo.n()`
/// blocks.
pub fn is_network_matrix(theta: &BlockMatrix, topo: &Topology) -> bool {
    assert_eq!(
        theta.n_row_blocks(),
        topo.n(),
        "block count must match the topology"
    );
    assert_eq!(
        theta.n_col_blocks(),
        topo.n(),
        "theta must be a square block grid"
    );
    for i in 0..topo.n() {
        for j in 0..topo.n() {
            if i != j && !topo.coupled(i, j) {
                if theta.block(i, j).iter().any(|v| v.abs() > ZERO_TOL) {
                    return false;
                }
            }
        }
    }
    true
}

/// Block element-wise rearrangement.
///
/// Interprets `psi` (a square grid of `outer * inner` uniform square blocks)
/// as an `outer x outer` matrix whose `(k, l)` entry is itself an
/// `inner x inner` block matrix, and regroups entries by inner index:
/// `out[(i,k),(j,l)] = psi[(k,i),(l,j)]` with composite block index
/// `(k, i) = k * inner + i` on the input and `(i, k) = i * outer + k` on the
/// output. The rearrangement is a permutation similarity, so it preserves
/// symmetry and the eigenvalue multiset; applying it again with the roles of
/// `outer` and `inner` swapped restores the input.
pub fn bew(psi: &BlockMatrix, outer: usize, inner: usize) -> Result<BlockMatrix, BlockMatError> {
    let n = outer * inner;
    if psi.n_row_blocks() != n || psi.n_col_blocks() != n {
        return Err(BlockMatError::GridShape {
            got_rows: psi.n_row_blocks(),
            got_cols: psi.n_col_blocks(),
            want_rows: n,
            want_cols: n,
        });
    }
    if psi.uniform_block_size().is_none() {
        return Err(BlockMatError::NonUniformBlocks);
    }
    BlockMatrix::from_fn(psi.row_dims().to_vec(), psi.col_dims().to_vec(), |r, c| {
        let (i, k) = (r / outer, r % outer);
        let (j, l) = (c / outer, c % outer);
        psi.block(k * inner + i, l * inner + j).clone()
    })
}

/// Verdict of the sequential positive-definiteness recursion.
#[derive(Debug, Clone)]
pub enum SylvesterOutcome {
    /// Every pivot block was positive definite; `certificates[i]` holds the
    /// i-th Schur-complement diagonal block.
    Positive { certificates: Vec<DMatrix<f64>> },
    /// The recursion failed at block row `failed_index` (zero-based). The
    /// last certificate is the failing (non-positive-definite) block.
    NotPositive {
        failed_index: usize,
        certificates: Vec<DMatrix<f64>>,
    },
}

impl SylvesterOutcome {
    pub fn is_positive(&self) -> bool {
        matches!(self, SylvesterOutcome::Positive { .. })
    }

    pub fn certificates(&self) -> &[DMatrix<f64>] {
        match self {
            SylvesterOutcome::Positive { certificates } => certificates,
            SylvesterOutcome::NotPositive { certificates, .. } => certificates,
        }
    }
}

/// Result of pushing one block row into a [`SylvesterState`].
#[derive(Debug, Clone)]
pub enum RowOutcome {
    /// The new pivot is positive definite and the row was committed.
    Accepted { lambda_min: f64 },
    /// The new pivot fails positive definiteness; the state is unchanged.
    Rejected {
        lambda_min: f64,
        certificate: DMatrix<f64>,
    },
}

/// Incremental Schur-complement recursion over the lower triangle of a
/// symmetric block matrix.
///
/// After `i` accepted rows the state holds, for the leading principal
/// `i x i` block prefix `W`, the pivot blocks
/// `Wt_ii = W_ii - sum_j Wt_ij Wt_jj^{-1} Wt_ij^T` together with the
/// semi-factored off-diagonal rows, so that the prefix is positive definite
/// iff every stored pivot is.
#[derive(Debug, Clone)]
pub struct SylvesterState {
    dims: Vec<usize>,
    rows: Vec<Vec<DMatrix<f64>>>,
    factors: Vec<Vec<DMatrix<f64>>>,
    pivots: Vec<DMatrix<f64>>,
    pivot_inverses: Vec<DMatrix<f64>>,
    pd_tol: f64,
    singular_tol: f64,
}

impl Default for SylvesterState {
    fn default() -> Self {
        Self::new()
    }
}

impl SylvesterState {
    pub fn new() -> Self {
        Self::with_tolerances(PD_TOL, SINGULAR_TOL)
    }

    pub fn with_tolerances(pd_tol: f64, singular_tol: f64) -> Self {
        Self {
            dims: Vec::new(),
            rows: Vec::new(),
            factors: Vec::new(),
            pivots: Vec::new(),
            pivot_inverses: Vec::new(),
            pd_tol,
            singular_tol,
        }
    }

    /// Number of accepted block rows.
    pub fn processed(&self) -> usize {
        self.pivots.len()
    }

    /// Pivot certificates `Wt_ii` accepted so far.
    pub fn certificates(&self) -> &[DMatrix<f64>] {
        &self.pivots
    }

    /// Total dimension of the accepted prefix.
    pub fn prefix_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Dense symmetric leading principal submatrix accumulated so far.
    pub fn principal_matrix(&self) -> DMatrix<f64> {
        let n = self.prefix_dim();
        let offs = offsets(&self.dims);
        let mut out = DMatrix::zeros(n, n);
        for i in 0..self.rows.len() {
            for j in 0..=i {
                let b = &self.rows[i][j];
                out.view_mut((offs[i], offs[j]), (b.nrows(), b.ncols()))
                    .copy_from(b);
                if i != j {
                    out.view_mut((offs[j], offs[i]), (b.ncols(), b.nrows()))
                        .copy_from(&b.transpose());
                }
            }
        }
        out
    }

    /// Push block row `i`: `[W_i0, ..., W_i(i-1), W_ii]`. The diagonal block
    /// must be symmetric. On acceptance the internal factorization is
    /// extended; on rejection the state is left untouched so the caller can
    /// retry with a different row.
    pub fn push_row(&mut self, row: Vec<DMatrix<f64>>) -> Result<RowOutcome, BlockMatError> {
        let i = self.processed();
        if row.len() != i + 1 {
            return Err(BlockMatError::RowLength {
                got: row.len(),
                want: i + 1,
            });
        }
        let dim = row[i].nrows();
        if row[i].ncols() != dim {
            return Err(BlockMatError::BlockShape {
                row: i,
                col: i,
                got_rows: row[i].nrows(),
                got_cols: row[i].ncols(),
                want_rows: dim,
                want_cols: dim,
            });
        }
        let asym = linalg::max_asymmetry(&row[i]);
        if asym > 1e-8 {
            return Err(BlockMatError::NotSymmetric { max_dev: asym });
        }
        for (j, block) in row.iter().enumerate().take(i) {
            if block.nrows() != dim || block.ncols() != self.dims[j] {
                return Err(BlockMatError::BlockShape {
                    row: i,
                    col: j,
                    got_rows: block.nrows(),
                    got_cols: block.ncols(),
                    want_rows: dim,
                    want_cols: self.dims[j],
                });
            }
        }

        // Semi-factored row: Wt_ik = W_ik - sum_{j<k} Wt_ij Wt_jj^{-1} Wt_kj^T.
        let mut fac: Vec<DMatrix<f64>> = Vec::with_capacity(i);
        for k in 0..i {
            let mut t = row[k].clone();
            for j in 0..k {
                t -= &fac[j] * &self.pivot_inverses[j] * self.factors[k][j].transpose();
            }
            fac.push(t);
        }
        let mut pivot = row[i].clone();
        for (j, f) in fac.iter().enumerate() {
            pivot -= f * &self.pivot_inverses[j] * f.transpose();
        }
        let pivot = linalg::symmetrize(&pivot);
        let lambda_min = linalg::lambda_min(&pivot);

        if lambda_min.abs() <= self.singular_tol {
            return Err(BlockMatError::IllConditioned {
                index: i,
                lambda_min,
            });
        }
        if lambda_min <= self.pd_tol {
            return Ok(RowOutcome::Rejected {
                lambda_min,
                certificate: pivot,
            });
        }

        let inv = pivot
            .clone()
            .try_inverse()
            .ok_or(BlockMatError::IllConditioned {
                index: i,
                lambda_min,
            })?;
        self.dims.push(dim);
        self.rows.push(row);
        self.factors.push(fac);
        self.pivots.push(pivot);
        self.pivot_inverses.push(inv);
        Ok(RowOutcome::Accepted { lambda_min })
    }
}

/// Runs the sequential Schur-complement recursion over a symmetric block
/// matrix and reports whether it is positive definite, returning the pivot
/// certificates. Fails with [`BlockMatError::IllConditioned`] when a pivot
/// is too close to singular to classify.
pub fn sylvester_decompose(w: &BlockMatrix) -> Result<SylvesterOutcome, BlockMatError> {
    sylvester_decompose_with(w, PD_TOL, SINGULAR_TOL)
}

pub fn sylvester_decompose_with(
    w: &BlockMatrix,
    pd_tol: f64,
    singular_tol: f64,
) -> Result<SylvesterOutcome, BlockMatError> {
    if w.n_row_blocks() != w.n_col_blocks() {
        return Err(BlockMatError::GridShape {
            got_rows: w.n_row_blocks(),
            got_cols: w.n_col_blocks(),
            want_rows: w.n_row_blocks(),
            want_cols: w.n_row_blocks(),
        });
    }
    if !w.is_symmetric(1e-8) {
        let max_dev = linalg::max_asymmetry(&w.to_dense());
        return Err(BlockMatError::NotSymmetric { max_dev });
    }
    let mut state = SylvesterState::with_tolerances(pd_tol, singular_tol);
    for i in 0..w.n_row_blocks() {
        let mut row: Vec<DMatrix<f64>> = (0..i).map(|j| w.block(i, j).clone()).collect();
        row.push(linalg::symmetrize(w.block(i, i)));
        match state.push_row(row)? {
            RowOutcome::Accepted { .. } => {}
            RowOutcome::Rejected { certificate, .. } => {
                let mut certificates = state.pivots.clone();
                certificates.push(certificate);
                return Ok(SylvesterOutcome::NotPositive {
                    failed_index: i,
                    certificates,
                });
            }
        }
    }
    Ok(SylvesterOutcome::Positive {
        certificates: state.pivots,
    })
}
