//! LMI modeling layer.
//!
//! Assembles feasibility/optimization problems over matrix decision
//! variables (with optional symmetry and sparsity masks), affine
//! positive-semidefinite constraints, scalar linear inequalities, and linear
//! objectives with absolute-value epigraph terms. Problems are lowered to a
//! conic program over PSD and nonnegative cones and handed to a pluggable
//! [`ConicBackend`].
//!
//! Strict matrix inequalities `M > 0` are modeled as `M >= eps * I` with the
//! problem-level margin [`LmiProblem::epsilon`] (default [`DEFAULT_EPSILON`]);
//! strict scalar inequalities use the same margin.

mod affine;
mod backend;

pub use affine::{AffineMatrix, AffineScalar};
pub use backend::{
    BackendStatus, ClarabelBackend, Cone, ConicBackend, ConicProgram, ConicSolution,
};

use std::collections::BTreeMap;
use std::time::Duration;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg;

/// Default strictness margin for inequalities written strictly.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Feasibility slack accepted when re-evaluating a reported solution.
pub const FEASIBILITY_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum LmiError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("expression is not symmetric (max deviation {0:.3e})")]
    NotSymmetric(f64),
    #[error("assignment covers {got} variables, problem has {want}")]
    AssignmentLength { got: usize, want: usize },
    #[error("entry ({row},{col}) of variable {name} is masked out or out of range")]
    MaskedEntry {
        name: String,
        row: usize,
        col: usize,
    },
    #[error("conic backend failure: {0}")]
    Backend(String),
}

/// Handle to a scalar decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

/// Handle to a registered matrix decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixVar(usize);

#[derive(Debug, Clone)]
struct MatrixVarInfo {
    name: String,
    nrows: usize,
    ncols: usize,
    symmetric: bool,
    /// Scalar variable backing each free entry. For symmetric variables only
    /// upper-triangle keys `(i, j)` with `i <= j` are stored.
    entries: BTreeMap<(usize, usize), usize>,
}

#[derive(Debug, Clone)]
struct PsdConstraint {
    label: String,
    expr: AffineMatrix,
    /// Lower shift: the lowered constraint is `expr - shift * I >= 0`.
    shift: f64,
}

#[derive(Debug, Clone)]
struct LinearConstraint {
    expr: AffineScalar,
    margin: f64,
}

/// Termination status mapped to the modeling layer's contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    IllPosed,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: Option<f64>,
    pub assignment: Vec<f64>,
    pub residual_primal: f64,
    pub residual_dual: f64,
    pub iterations: u32,
    pub wall_time: Duration,
    pub backend_status: String,
}

impl SolveReport {
    pub fn is_feasible(&self) -> bool {
        matches!(self.status, SolveStatus::Optimal | SolveStatus::Feasible)
    }
}

/// An assembled LMI problem.
#[derive(Debug, Clone, Default)]
pub struct LmiProblem {
    var_names: Vec<String>,
    bounds: Vec<(Option<f64>, Option<f64>)>,
    matrix_vars: Vec<MatrixVarInfo>,
    psd: Vec<PsdConstraint>,
    linear: Vec<LinearConstraint>,
    objective: Vec<(usize, f64)>,
    abs_terms: Vec<(AffineScalar, f64)>,
    epsilon: f64,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            ..Default::default()
        }
    }

    /// Overrides the strictness margin for this problem.
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        assert!(epsilon >= 0.0, "strictness margin must be nonnegative");
        self.epsilon = epsilon;
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    fn push_scalar(&mut self, name: String) -> usize {
        self.var_names.push(name);
        self.bounds.push((None, None));
        self.var_names.len() - 1
    }

    /// Registers a free scalar variable.
    pub fn scalar(&mut self, name: &str) -> VarId {
        VarId(self.push_scalar(name.to_string()))
    }

    /// Registers a symmetric `n x n` matrix variable.
    pub fn symmetric(&mut self, name: &str, n: usize) -> MatrixVar {
        self.matrix(name, n, n, true, None)
    }

    /// Registers a general `r x c` matrix variable.
    pub fn rect(&mut self, name: &str, r: usize, c: usize) -> MatrixVar {
        self.matrix(name, r, c, false, None)
    }

    /// Registers a matrix variable whose free entries are restricted to
    /// `mask`; all other entries are fixed to zero.
    pub fn masked(
        &mut self,
        name: &str,
        r: usize,
        c: usize,
        mask: &[(usize, usize)],
    ) -> MatrixVar {
        self.matrix(name, r, c, false, Some(mask))
    }

    fn matrix(
        &mut self,
        name: &str,
        nrows: usize,
        ncols: usize,
        symmetric: bool,
        mask: Option<&[(usize, usize)]>,
    ) -> MatrixVar {
        let mut entries = BTreeMap::new();
        let permitted = |i: usize, j: usize| match mask {
            None => true,
            Some(m) => m.contains(&(i, j)),
        };
        for i in 0..nrows {
            for j in 0..ncols {
                if symmetric && j < i {
                    continue;
                }
                if !permitted(i, j) {
                    continue;
                }
                let idx = self.push_scalar(format!("{name}[{i},{j}]"));
                entries.insert((i, j), idx);
            }
        }
        self.matrix_vars.push(MatrixVarInfo {
            name: name.to_string(),
            nrows,
            ncols,
            symmetric,
            entries,
        });
        MatrixVar(self.matrix_vars.len() - 1)
    }

    /// Scalar variable backing entry `(i, j)` of a matrix variable.
    pub fn entry(&self, var: MatrixVar, i: usize, j: usize) -> Result<VarId, LmiError> {
        let info = &self.matrix_vars[var.0];
        let key = if info.symmetric && j < i { (j, i) } else { (i, j) };
        info.entries
            .get(&key)
            .map(|&idx| VarId(idx))
            .ok_or_else(|| LmiError::MaskedEntry {
                name: info.name.clone(),
                row: i,
                col: j,
            })
    }

    /// Affine expression view of a matrix variable (masked entries are zero).
    pub fn matrix_expr(&self, var: MatrixVar) -> AffineMatrix {
        let info = &self.matrix_vars[var.0];
        let mut out = AffineMatrix::zeros(info.nrows, info.ncols);
        for (&(i, j), &idx) in &info.entries {
            *out.at_mut(i, j) = AffineScalar::variable(idx);
            if info.symmetric && i != j {
                *out.at_mut(j, i) = AffineScalar::variable(idx);
            }
        }
        out
    }

    pub fn scalar_expr(&self, var: VarId) -> AffineScalar {
        AffineScalar::variable(var.0)
    }

    /// Per-entry bounds on a scalar variable (enforced as nonneg rows).
    pub fn set_bounds(&mut self, var: VarId, lower: Option<f64>, upper: Option<f64>) {
        self.bounds[var.0] = (lower, upper);
    }

    /// `expr >= 0` (elementwise symmetric PSD sense), non-strict.
    pub fn add_psd(&mut self, label: &str, expr: AffineMatrix) -> Result<(), LmiError> {
        let expr = expr.symmetrized(1e-9)?;
        self.psd.push(PsdConstraint {
            label: label.to_string(),
            expr,
            shift: 0.0,
        });
        Ok(())
    }

    /// `expr > 0`, enforced as `expr >= epsilon * I`.
    pub fn add_psd_strict(&mut self, label: &str, expr: AffineMatrix) -> Result<(), LmiError> {
        let expr = expr.symmetrized(1e-9)?;
        self.psd.push(PsdConstraint {
            label: label.to_string(),
            expr,
            shift: self.epsilon,
        });
        Ok(())
    }

    /// `expr >= 0`.
    pub fn add_linear_ge(&mut self, expr: AffineScalar) {
        self.linear.push(LinearConstraint { expr, margin: 0.0 });
    }

    /// `expr > 0`, enforced as `expr >= epsilon`.
    pub fn add_linear_gt(&mut self, expr: AffineScalar) {
        self.linear.push(LinearConstraint {
            expr,
            margin: self.epsilon,
        });
    }

    /// Adds `expr` to the linear objective (constants are dropped).
    pub fn add_objective(&mut self, expr: &AffineScalar) {
        for &(idx, c) in expr.terms() {
            self.objective.push((idx, c));
        }
    }

    /// Adds `coeff * |expr|` to the objective through an epigraph variable.
    pub fn add_abs_objective(&mut self, expr: AffineScalar, coeff: f64) {
        assert!(coeff >= 0.0, "absolute-value weights must be nonnegative");
        if coeff > 0.0 && !expr.is_zero() {
            self.abs_terms.push((expr, coeff));
        }
    }

    pub fn has_objective(&self) -> bool {
        !self.objective.is_empty() || !self.abs_terms.is_empty()
    }

    pub fn psd_labels(&self) -> Vec<&str> {
        self.psd.iter().map(|c| c.label.as_str()).collect()
    }

    /// Lowers the problem to the standard conic form.
    pub fn lower(&self) -> ConicProgram {
        let n_base = self.n_vars();
        let n = n_base + self.abs_terms.len();
        let mut q = vec![0.0; n];
        for &(idx, c) in &self.objective {
            q[idx] += c;
        }
        for (k, (_, coeff)) in self.abs_terms.iter().enumerate() {
            q[n_base + k] += coeff;
        }

        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        let mut b: Vec<f64> = Vec::new();
        let mut cones: Vec<Cone> = Vec::new();
        let mut row = 0usize;

        // Nonnegative rows: s = b - A x >= 0 encodes expr >= margin via
        // b = constant - margin and A = -coefficients.
        let mut push_ge = |expr: &AffineScalar,
                           margin: f64,
                           extra: Option<(usize, f64)>,
                           triplets: &mut Vec<(usize, usize, f64)>,
                           b: &mut Vec<f64>,
                           row: &mut usize| {
            for &(idx, c) in expr.terms() {
                triplets.push((*row, idx, -c));
            }
            if let Some((idx, c)) = extra {
                triplets.push((*row, idx, -c));
            }
            b.push(expr.constant - margin);
            *row += 1;
        };

        let mut nonneg_rows = 0usize;
        for lc in &self.linear {
            push_ge(&lc.expr, lc.margin, None, &mut triplets, &mut b, &mut row);
            nonneg_rows += 1;
        }
        for (idx, &(lo, hi)) in self.bounds.iter().enumerate() {
            if let Some(lo) = lo {
                let expr = AffineScalar::term(idx, 1.0) + AffineScalar::constant(-lo);
                push_ge(&expr, 0.0, None, &mut triplets, &mut b, &mut row);
                nonneg_rows += 1;
            }
            if let Some(hi) = hi {
                let expr = AffineScalar::term(idx, -1.0) + AffineScalar::constant(hi);
                push_ge(&expr, 0.0, None, &mut triplets, &mut b, &mut row);
                nonneg_rows += 1;
            }
        }
        for (k, (expr, _)) in self.abs_terms.iter().enumerate() {
            let t = n_base + k;
            // t - expr >= 0 and t + expr >= 0
            push_ge(
                &expr.scaled(-1.0),
                0.0,
                Some((t, 1.0)),
                &mut triplets,
                &mut b,
                &mut row,
            );
            push_ge(
                &expr.scaled(1.0),
                0.0,
                Some((t, 1.0)),
                &mut triplets,
                &mut b,
                &mut row,
            );
            nonneg_rows += 2;
        }
        if nonneg_rows > 0 {
            cones.push(Cone::Nonnegative(nonneg_rows));
        }

        for c in &self.psd {
            let side = c.expr.nrows();
            for (i, j, scale) in backend::svec_rows(side) {
                let entry = c.expr.at(i, j);
                for &(idx, coeff) in entry.terms() {
                    triplets.push((row, idx, -coeff * scale));
                }
                let shift = if i == j { c.shift } else { 0.0 };
                b.push((entry.constant - shift) * scale);
                row += 1;
            }
            cones.push(Cone::PsdTriangle(side));
        }

        ConicProgram {
            n_vars: n,
            q,
            a_triplets: triplets,
            b,
            cones,
        }
    }

    /// Solves with the default Clarabel backend.
    pub fn solve_default(&self) -> Result<SolveReport, LmiError> {
        self.solve(&ClarabelBackend::default())
    }

    pub fn solve(&self, backend: &dyn ConicBackend) -> Result<SolveReport, LmiError> {
        let program = self.lower();
        let sol = backend.solve(&program)?;
        let status = match sol.status {
            BackendStatus::Solved => {
                if self.has_objective() {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::Feasible
                }
            }
            BackendStatus::AlmostSolved => SolveStatus::Feasible,
            BackendStatus::PrimalInfeasible => SolveStatus::Infeasible,
            BackendStatus::DualInfeasible | BackendStatus::NumericalTrouble => {
                SolveStatus::IllPosed
            }
        };
        let assignment: Vec<f64> = sol.x.iter().take(self.n_vars()).copied().collect();
        let objective = if matches!(status, SolveStatus::Optimal | SolveStatus::Feasible)
            && self.has_objective()
        {
            Some(sol.objective)
        } else {
            None
        };
        Ok(SolveReport {
            status,
            objective,
            assignment,
            residual_primal: sol.residual_primal,
            residual_dual: sol.residual_dual,
            iterations: sol.iterations,
            wall_time: sol.solve_time,
            backend_status: sol.status_detail,
        })
    }

    /// Smallest eigenvalue of each lowered PSD constraint
    /// (`expr - shift * I`) at the given assignment.
    pub fn evaluate(&self, assignment: &[f64]) -> Result<Vec<f64>, LmiError> {
        if assignment.len() != self.n_vars() {
            return Err(LmiError::AssignmentLength {
                got: assignment.len(),
                want: self.n_vars(),
            });
        }
        Ok(self
            .psd
            .iter()
            .map(|c| {
                let m = c.expr.eval(assignment);
                let shifted = &m - DMatrix::identity(m.nrows(), m.ncols()) * c.shift;
                linalg::lambda_min(&shifted)
            })
            .collect())
    }

    /// Extracts the value of a matrix variable from a report's assignment.
    pub fn value_of(&self, report: &SolveReport, var: MatrixVar) -> DMatrix<f64> {
        let info = &self.matrix_vars[var.0];
        let mut out = DMatrix::zeros(info.nrows, info.ncols);
        for (&(i, j), &idx) in &info.entries {
            out[(i, j)] = report.assignment[idx];
            if info.symmetric && i != j {
                out[(j, i)] = report.assignment[idx];
            }
        }
        out
    }

    pub fn scalar_value(&self, report: &SolveReport, var: VarId) -> f64 {
        report.assignment[var.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Lyapunov feasibility problem: P > 0 with -(A^T P + P A) > 0.
    fn lyapunov_problem(a: &DMatrix<f64>) -> (LmiProblem, MatrixVar) {
        let n = a.nrows();
        let mut prob = LmiProblem::new();
        let p = prob.symmetric("P", n);
        let p_expr = prob.matrix_expr(p);
        prob.add_psd("P_pos", p_expr.clone()).unwrap();
        let decay = p_expr
            .left_mul(&a.transpose())
            .unwrap()
            .add_scaled(&p_expr.right_mul(a).unwrap(), 1.0)
            .unwrap()
            .scale(-1.0);
        prob.add_psd_strict("lyapunov", decay).unwrap();
        (prob, p)
    }

    #[test]
    fn lyapunov_feasible_for_stable_a() {
        let a = DMatrix::identity(2, 2) * -1.0;
        let (prob, pvar) = lyapunov_problem(&a);
        let report = prob.solve_default().unwrap();
        assert!(report.is_feasible(), "status {:?}", report.status);
        let p = prob.value_of(&report, pvar);
        assert!(linalg::lambda_min(&p) >= -1e-9);
        // P = I is an admissible certificate; check the solved one satisfies
        // the constraints with the contract slack.
        let margins = prob.evaluate(&report.assignment).unwrap();
        for m in margins {
            assert!(m >= -FEASIBILITY_TOL, "constraint margin {m}");
        }
    }

    #[test]
    fn lyapunov_infeasible_for_unstable_a() {
        let a = DMatrix::identity(2, 2);
        let (prob, _) = lyapunov_problem(&a);
        let report = prob.solve_default().unwrap();
        assert_eq!(report.status, SolveStatus::Infeasible);
    }

    #[test]
    fn abs_epigraph_minimum() {
        // minimize |x| subject to x >= 3 -> objective 3.
        let mut prob = LmiProblem::new();
        let x = prob.scalar("x");
        prob.set_bounds(x, Some(3.0), None);
        prob.add_abs_objective(prob.scalar_expr(x), 1.0);
        let report = prob.solve_default().unwrap();
        assert_eq!(report.status, SolveStatus::Optimal);
        assert_relative_eq!(report.objective.unwrap(), 3.0, epsilon = 1e-6);
        assert_relative_eq!(prob.scalar_value(&report, x), 3.0, epsilon = 1e-6);
    }

    #[test]
    fn evaluate_reports_constraint_margins() {
        let a = DMatrix::identity(2, 2) * -1.0;
        let (prob, _) = lyapunov_problem(&a);
        // Identity assignment: P = I. Ordering of scalar vars for a
        // symmetric 2x2 is (0,0), (0,1), (1,1).
        let assignment = vec![1.0, 0.0, 1.0];
        let margins = prob.evaluate(&assignment).unwrap();
        // P-positivity (non-strict): lambda_min = 1.
        assert_relative_eq!(margins[0], 1.0, epsilon = 1e-12);
        // Decay constraint: -(A^T + A) = 2I, strict margin eps.
        assert_relative_eq!(margins[1], 2.0 - DEFAULT_EPSILON, epsilon = 1e-12);

        // Zero P: positivity margin is exactly 0 and the strict decay
        // constraint is violated by its margin.
        let zero = vec![0.0, 0.0, 0.0];
        let margins = prob.evaluate(&zero).unwrap();
        assert_relative_eq!(margins[0], 0.0, epsilon = 1e-15);
        assert!(margins[1] < 0.0);

        // An indefinite assignment violates positivity.
        let bad = vec![-1.0, 0.0, 1.0];
        let margins = prob.evaluate(&bad).unwrap();
        assert!(margins[0] < 0.0);
    }

    #[test]
    fn masked_entries_stay_zero() {
        let mut prob = LmiProblem::new();
        let q = prob.masked("Q", 2, 2, &[(0, 1)]);
        assert!(prob.entry(q, 1, 0).is_err());
        assert!(prob.entry(q, 0, 1).is_ok());
        let expr = prob.matrix_expr(q);
        assert!(expr.at(0, 0).is_zero());
        assert!(expr.at(1, 1).is_zero());
    }

    #[test]
    fn epigraph_matches_split_variable_lp() {
        // Random instances of min sum c_i |x_i| with box constraints,
        // cross-checked against a direct positive/negative split LP solved
        // through the raw conic interface.
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let n = rng.random_range(1..5usize);
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
            let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..1.5)).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.1..2.0)).collect();

            let mut prob = LmiProblem::new();
            for i in 0..n {
                let x = prob.scalar(&format!("x{i}"));
                prob.set_bounds(x, Some(lo[i]), Some(hi[i]));
                prob.add_abs_objective(prob.scalar_expr(x), c[i]);
            }
            let report = prob.solve_default().unwrap();
            assert!(report.is_feasible());

            // Split LP: x = u - v, u, v >= 0, min sum c (u + v),
            // lo <= u - v <= hi. Variables [u; v].
            let mut q = Vec::new();
            q.extend(c.iter());
            q.extend(c.iter());
            let mut trips = Vec::new();
            let mut b = Vec::new();
            let mut row = 0;
            for i in 0..n {
                // u_i >= 0, v_i >= 0
                trips.push((row, i, -1.0));
                b.push(0.0);
                row += 1;
                trips.push((row, n + i, -1.0));
                b.push(0.0);
                row += 1;
                // u - v >= lo
                trips.push((row, i, -1.0));
                trips.push((row, n + i, 1.0));
                b.push(-lo[i]);
                row += 1;
                // hi - (u - v) >= 0
                trips.push((row, i, 1.0));
                trips.push((row, n + i, -1.0));
                b.push(hi[i]);
                row += 1;
            }
            let lp = ConicProgram {
                n_vars: 2 * n,
                q,
                a_triplets: trips,
                b,
                cones: vec![Cone::Nonnegative(row)],
            };
            let oracle = ClarabelBackend::default().solve(&lp).unwrap();
            assert_eq!(oracle.status, BackendStatus::Solved);
            assert_relative_eq!(
                report.objective.unwrap(),
                oracle.objective,
                epsilon = 1e-6,
                max_relative = 1e-6
            );
        }
    }

    #[test]
    fn dump_contains_program_dimensions() {
        let mut prob = LmiProblem::new();
        let x = prob.scalar("x");
        prob.set_bounds(x, Some(0.0), None);
        let expr = AffineMatrix::identity_times_var(2, 0);
        prob.add_psd("id", expr).unwrap();
        let dump = prob.lower().dump();
        assert!(dump.starts_with("lmi-conic-dump v1"));
        assert!(dump.contains("vars 1"));
        assert!(dump.contains("cone nonneg 1"));
        assert!(dump.contains("cone psd 2"));
    }
}
