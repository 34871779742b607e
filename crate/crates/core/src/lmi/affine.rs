//! Affine expressions over the scalar decision variables of an LMI problem.

use nalgebra::DMatrix;

use super::LmiError;

/// `constant + sum_k coeff_k * x_{idx_k}`, with terms sorted by variable
/// index and merged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineScalar {
    pub constant: f64,
    terms: Vec<(usize, f64)>,
}

impl AffineScalar {
    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn variable(idx: usize) -> Self {
        Self::term(idx, 1.0)
    }

    pub fn term(idx: usize, coeff: f64) -> Self {
        Self {
            constant: 0.0,
            terms: if coeff == 0.0 {
                Vec::new()
            } else {
                vec![(idx, coeff)]
            },
        }
    }

    pub fn terms(&self) -> &[(usize, f64)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.is_empty()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &AffineScalar, scale: f64) {
        if scale == 0.0 {
            return;
        }
        self.constant += scale * other.constant;
        for &(idx, c) in &other.terms {
            self.terms.push((idx, scale * c));
        }
        self.normalize();
    }

    pub fn scaled(&self, scale: f64) -> Self {
        let mut out = Self::constant(0.0);
        out.add_scaled(self, scale);
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    fn normalize(&mut self) {
        self.terms.sort_unstable_by_key(|&(i, _)| i);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(i, c) in &self.terms {
            match merged.last_mut() {
                Some((li, lc)) if *li == i => *lc += c,
                _ => merged.push((i, c)),
            }
        }
        merged.retain(|&(_, c)| c.abs() > 0.0);
        self.terms = merged;
    }
}

impl std::ops::Sub for AffineScalar {
    type Output = AffineScalar;
    fn sub(mut self, rhs: AffineScalar) -> AffineScalar {
        self.add_scaled(&rhs, -1.0);
        self
    }
}

impl std::ops::Add for AffineScalar {
    type Output = AffineScalar;
    fn add(mut self, rhs: AffineScalar) -> AffineScalar {
        self.add_scaled(&rhs, 1.0);
        self
    }
}

/// Dense matrix of affine scalars, row-major.
#[derive(Debug, Clone)]
pub struct AffineMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<AffineScalar>,
}

impl AffineMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![AffineScalar::default(); nrows * ncols],
        }
    }

    pub fn from_const(m: &DMatrix<f64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.data[i * m.ncols() + j] = AffineScalar::constant(m[(i, j)]);
            }
        }
        out
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        Self::from_const(&(DMatrix::identity(n, n) * scale))
    }

    /// `n x n` identity scaled by a single variable.
    pub fn identity_times_var(n: usize, var: usize) -> Self {
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            *out.at_mut(i, i) = AffineScalar::variable(var);
        }
        out
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn at(&self, i: usize, j: usize) -> &AffineScalar {
        &self.data[i * self.ncols + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut AffineScalar {
        &mut self.data[i * self.ncols + j]
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, other: &AffineMatrix, scale: f64) -> Result<Self, LmiError> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(LmiError::Shape(format!(
                "add: {}x{} vs {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut out = self.clone();
        for (dst, src) in out.data.iter_mut().zip(&other.data) {
            dst.add_scaled(src, scale);
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        for e in &mut out.data {
            *e = e.scaled(s);
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                *out.at_mut(j, i) = self.at(i, j).clone();
            }
        }
        out
    }

    /// `c * self` with a constant left factor.
    pub fn left_mul(&self, c: &DMatrix<f64>) -> Result<Self, LmiError> {
        if c.ncols() != self.nrows {
            return Err(LmiError::Shape(format!(
                "left mul: {}x{} * {}x{}",
                c.nrows(),
                c.ncols(),
                self.nrows,
                self.ncols
            )));
        }
        let mut out = Self::zeros(c.nrows(), self.ncols);
        for i in 0..c.nrows() {
            for j in 0..self.ncols {
                let e = out.at_mut(i, j);
                for k in 0..self.nrows {
                    e.add_scaled(self.at(k, j), c[(i, k)]);
                }
            }
        }
        Ok(out)
    }

    /// `self * c` with a constant right factor.
    pub fn right_mul(&self, c: &DMatrix<f64>) -> Result<Self, LmiError> {
        if self.ncols != c.nrows() {
            return Err(LmiError::Shape(format!(
                "right mul: {}x{} * {}x{}",
                self.nrows,
                self.ncols,
                c.nrows(),
                c.ncols()
            )));
        }
        let mut out = Self::zeros(self.nrows, c.ncols());
        for i in 0..self.nrows {
            for j in 0..c.ncols() {
                let e = out.at_mut(i, j);
                for k in 0..self.ncols {
                    e.add_scaled(self.at(i, k), c[(k, j)]);
                }
            }
        }
        Ok(out)
    }

    /// Assemble from a conformal grid of blocks.
    pub fn from_block_rows(rows: &[Vec<AffineMatrix>]) -> Result<Self, LmiError> {
        if rows.is_empty() {
            return Ok(Self::zeros(0, 0));
        }
        let block_cols = rows[0].len();
        let col_dims: Vec<usize> = rows[0].iter().map(|b| b.ncols).collect();
        let mut row_dims = Vec::with_capacity(rows.len());
        for (bi, row) in rows.iter().enumerate() {
            if row.len() != block_cols {
                return Err(LmiError::Shape(format!(
                    "block row {bi} has {} blocks, expected {block_cols}",
                    row.len()
                )));
            }
            let h = row[0].nrows;
            for (bj, b) in row.iter().enumerate() {
                if b.nrows != h || b.ncols != col_dims[bj] {
                    return Err(LmiError::Shape(format!(
                        "block ({bi},{bj}) is {}x{}, expected {h}x{}",
                        b.nrows, b.ncols, col_dims[bj]
                    )));
                }
            }
            row_dims.push(h);
        }
        let total_r: usize = row_dims.iter().sum();
        let total_c: usize = col_dims.iter().sum();
        let mut out = Self::zeros(total_r, total_c);
        let mut roff = 0;
        for (bi, row) in rows.iter().enumerate() {
            let mut coff = 0;
            for b in row {
                for i in 0..b.nrows {
                    for j in 0..b.ncols {
                        *out.at_mut(roff + i, coff + j) = b.at(i, j).clone();
                    }
                }
                coff += b.ncols;
            }
            roff += row_dims[bi];
        }
        Ok(out)
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.nrows, self.ncols, |i, j| self.at(i, j).eval(x))
    }

    /// Symmetrized copy, failing if the asymmetry exceeds `tol` structurally
    /// (checked per entry on both constants and coefficients).
    pub fn symmetrized(&self, tol: f64) -> Result<Self, LmiError> {
        if self.nrows != self.ncols {
            return Err(LmiError::Shape(format!(
                "symmetrize: {}x{}",
                self.nrows, self.ncols
            )));
        }
        let t = self.transpose();
        let mut max_dev = 0.0f64;
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                let mut d = self.at(i, j).clone();
                d.add_scaled(t.at(i, j), -1.0);
                max_dev = max_dev.max(d.constant.abs());
                for &(_, c) in d.terms() {
                    max_dev = max_dev.max(c.abs());
                }
            }
        }
        if max_dev > tol {
            return Err(LmiError::NotSymmetric(max_dev));
        }
        Ok(self.add_scaled(&t, 1.0)?.scale(0.5))
    }
}
