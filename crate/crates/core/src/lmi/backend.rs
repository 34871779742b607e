//! Lowered conic program and the pluggable solver backend.
//!
//! The lowering targets a standard primal form
//! `min q^T x  s.t.  A x + s = b, s in K` with `K` a product of nonnegative
//! and scaled-triangle PSD cones. Any solver handling those cones with
//! primal-dual termination can implement [`ConicBackend`]; Clarabel is the
//! default.

use std::time::Instant;

use super::LmiError;

/// Cone blocks, in row order of the assembled constraint matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cone {
    /// `dim` nonnegative rows.
    Nonnegative(usize),
    /// Scaled upper-triangle (svec) block of a `side x side` PSD matrix.
    PsdTriangle(usize),
}

impl Cone {
    pub fn rows(&self) -> usize {
        match *self {
            Cone::Nonnegative(d) => d,
            Cone::PsdTriangle(s) => s * (s + 1) / 2,
        }
    }
}

/// `min q^T x  s.t.  A x + s = b, s in K`, with `A` in triplet form.
#[derive(Debug, Clone)]
pub struct ConicProgram {
    pub n_vars: usize,
    pub q: Vec<f64>,
    pub a_triplets: Vec<(usize, usize, f64)>,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProgram {
    pub fn n_rows(&self) -> usize {
        self.cones.iter().map(Cone::rows).sum()
    }

    /// Plain-text dump of the лowered program.
    ///
    /// Format (`lmi-conic-dump v1`): a header line, then
    /// `vars <n>` / `rows <m>`, one `cone nonneg <dim>` or `cone psd <side>`
    /// line per cone block, `objective <nnz>` followed by `<col> <coeff>`
    /// lines, `b <m>` followed by one value per line, and `A <nnz>` followed
    /// by `<row> <col> <value>` triplets. PSD blocks use the scaled
    /// upper-triangle (svec) row layout, column-major within the triangle.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        writeln!(s, "lmi-conic-dump v1").unwrap();
        writeln!(s, "vars {}", self.n_vars).unwrap();
        writeln!(s, "rows {}", self.n_rows()).unwrap();
        for c in &self.cones {
            match c {
                Cone::Nonnegative(d) => writeln!(s, "cone nonneg {d}").unwrap(),
                Cone::PsdTriangle(d) => writeln!(s, "cone psd {d}").unwrap(),
            }
        }
        let obj_nnz = self.q.iter().filter(|v| **v != 0.0).count();
        writeln!(s, "objective {obj_nnz}").unwrap();
        for (i, v) in self.q.iter().enumerate() {
            if *v != 0.0 {
                writeln!(s, "{i} {v:.17e}").unwrap();
            }
        }
        writeln!(s, "b {}", self.b.len()).unwrap();
        for v in &self.b {
            writeln!(s, "{v:.17e}").unwrap();
        }
        writeln!(s, "A {}", self.a_triplets.len()).unwrap();
        for (r, c, v) in &self.a_triplets {
            writeln!(s, "{r} {c} {v:.17e}").unwrap();
        }
        s
    }
}

/// Raw backend termination classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendStatus {
    Solved,
    AlmostSolved,
    PrimalInfeasible,
    DualInfeasible,
    NumericalTrouble,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: BackendStatus,
    pub status_detail: String,
    pub x: Vec<f64>,
    pub objective: f64,
    pub residual_primal: f64,
    pub residual_dual: f64,
    pub iterations: u32,
    pub solve_time: std::time::Duration,
}

pub trait ConicBackend {
    fn solve(&self, program: &ConicProgram) -> Result<ConicSolution, LmiError>;
}

/// Clarabel interior-point backend.
#[derive(Debug, Clone)]
pub struct ClarabelBackend {
    pub verbose: bool,
    pub max_iter: u32,
    /// Enables Clarabel's chordal decomposition of large PSD cones.
    pub chordal_decomposition: bool,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        Self {
            verbose: std::env::var("CLARABEL_VERBOSE").is_ok(),
            max_iter: 200,
            // Large PSD cones from the network-level problems carry very
            // sparse aggregate patterns; decomposing them is the difference
            // between milliseconds and minutes per factorization.
            chordal_decomposition: true,
        }
    }
}

fn csc_from_triplets(
    nrows: usize,
    ncols: usize,
    triplets: &[(usize, usize, f64)],
) -> clarabel::algebra::CscMatrix<f64> {
    let mut sorted: Vec<&(usize, usize, f64)> = triplets.iter().collect();
    sorted.sort_by_key(|&&(r, c, _)| (c, r));
    let mut colptr = Vec::with_capacity(ncols + 1);
    let mut rowval = Vec::with_capacity(sorted.len());
    let mut nzval = Vec::with_capacity(sorted.len());
    let mut k = 0;
    colptr.push(0);
    for col in 0..ncols {
        while k < sorted.len() && sorted[k].1 == col {
            debug_assert!(sorted[k].0 < nrows);
            rowval.push(sorted[k].0);
            nzval.push(sorted[k].2);
            k += 1;
        }
        colptr.push(rowval.len());
    }
    clarabel::algebra::CscMatrix::new(nrows, ncols, colptr, rowval, nzval)
}

impl ConicBackend for ClarabelBackend {
    fn solve(&self, program: &ConicProgram) -> Result<ConicSolution, LmiError> {
        use clarabel::algebra::CscMatrix;
        use clarabel::solver::{
            DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
        };

        let m = program.n_rows();
        let n = program.n_vars;
        let p = CscMatrix::zeros((n, n));
        let a = csc_from_triplets(m, n, &program.a_triplets);
        let cones: Vec<SupportedConeT<f64>> = program
            .cones
            .iter()
            .map(|c| match *c {
                Cone::Nonnegative(d) => SupportedConeT::NonnegativeConeT(d),
                Cone::PsdTriangle(d) => SupportedConeT::PSDTriangleConeT(d),
            })
            .collect();
        let settings = DefaultSettingsBuilder::default()
            .verbose(self.verbose)
            .max_iter(self.max_iter)
            .chordal_decomposition_enable(self.chordal_decomposition)
            // The default clique-graph merge stalls on the bordered
            // certificate patterns; the tree-based merge is robust.
            .chordal_decomposition_merge_method("parent_child".to_string())
            .build()
            .map_err(|e| LmiError::Backend(format!("settings: {e}")))?;

        let started = Instant::now();
        let mut solver = DefaultSolver::new(&p, &program.q, &a, &program.b, &cones, settings)
            .map_err(|e| LmiError::Backend(format!("setup: {e:?}")))?;
        solver.solve();
        let elapsed = started.elapsed();

        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => BackendStatus::Solved,
            SolverStatus::AlmostSolved => BackendStatus::AlmostSolved,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                BackendStatus::PrimalInfeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                BackendStatus::DualInfeasible
            }
            _ => BackendStatus::NumericalTrouble,
        };
        Ok(ConicSolution {
            status,
            status_detail: format!("{:?}", sol.status),
            x: sol.x.clone(),
            objective: sol.obj_val,
            residual_primal: sol.r_prim,
            residual_dual: sol.r_dual,
            iterations: sol.iterations,
            solve_time: elapsed,
        })
    }
}

/// svec index layout for a `side x side` PSD block: column-major upper
/// triangle, off-diagonal entries scaled by sqrt(2).
pub(crate) fn svec_rows(side: usize) -> impl Iterator<Item = (usize, usize, f64)> {
    let sqrt2 = std::f64::consts::SQRT_2;
    (0..side).flat_map(move |j| {
        (0..=j).map(move |i| (i, j, if i == j { 1.0 } else { sqrt2 }))
    })
}
