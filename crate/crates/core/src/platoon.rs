//! Vehicle longitudinal dynamics, feedback linearization, error-state
//! formulations, and controller gain structure.
//!
//! Two error formulations are supported. Formulation I couples vehicles
//! through weighted sums of pairwise position/velocity differences with
//! scalar weights (one per communication link, plus a leader weight);
//! formulation II measures every vehicle against the leader directly and
//! couples vehicles through full feedback rows on error differences. Both
//! close the loop as `e_i' = (A + B Lb_ii) e_i + sum_j K_ij e_j + w_i` with
//! the coupling blocks `K_ij` carrying a formulation-specific sparsity
//! pattern.

use nalgebra::{DMatrix, Matrix3, RowVector3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlatoonError {
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
    #[error("gain block ({i},{j}) violates the formulation structure at entry ({row},{col}) = {value:.3e}")]
    Structure {
        i: usize,
        j: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("vehicle {i} requires the error state of vehicle {j} (nonzero gain block) but it is unavailable")]
    TopologyViolation { i: usize, j: usize },
    #[error("gain set is for formulation {got:?}, expected {expected:?}")]
    FormulationMismatch {
        expected: Formulation,
        got: Formulation,
    },
}

/// Longitudinal parameters of one vehicle.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VehicleParams {
    /// Mass, kg.
    pub mass: f64,
    /// Engine time constant, s.
    pub tau: f64,
    /// Effective frontal area, m^2.
    pub frontal_area: f64,
    /// Aerodynamic drag coefficient.
    pub drag_coeff: f64,
    /// Rolling resistance coefficient.
    pub rolling_coeff: f64,
    /// Air density, kg/m^3.
    pub air_density: f64,
    /// Vehicle length, m.
    pub length: f64,
    /// Desired gap to the predecessor, m.
    pub gap: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1500.0,
            tau: 0.25,
            frontal_area: 2.2,
            drag_coeff: 0.35,
            rolling_coeff: 0.067,
            air_density: 0.78,
            length: 2.5,
            gap: 5.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), PlatoonError> {
        let checks = [
            ("mass", self.mass),
            ("tau", self.tau),
            ("frontal_area", self.frontal_area),
            ("air_density", self.air_density),
            ("length", self.length),
            ("gap", self.gap),
        ];
        for (name, v) in checks {
            if !(v > 0.0) {
                return Err(PlatoonError::InvalidParams(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Longitudinal state of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

/// Error triple of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorState {
    pub location: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

impl ErrorState {
    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.location, self.velocity, self.acceleration)
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }
}

/// Open-loop drift of the acceleration channel:
/// `-(1/tau) (a + C_r + (rho A_f C_d v / (2 m)) (v + 2 tau a))`.
pub fn drift(params: &VehicleParams, velocity: f64, acceleration: f64) -> f64 {
    let aero = params.air_density * params.frontal_area * params.drag_coeff * velocity
        / (2.0 * params.mass);
    -(acceleration + params.rolling_coeff + aero * (velocity + 2.0 * params.tau * acceleration))
        / params.tau
}

/// Feedback-linearizing actuator command: `m tau (-drift + g)`. Composed
/// with the vehicle dynamics this makes the acceleration derivative equal
/// the virtual input `g` exactly.
pub fn linearizing_input(params: &VehicleParams, velocity: f64, acceleration: f64, g: f64) -> f64 {
    params.mass * params.tau * (-drift(params, velocity, acceleration) + g)
}

/// State matrices of the linearized per-vehicle error dynamics.
pub fn triple_integrator() -> (Matrix3<f64>, Vector3<f64>) {
    (
        Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0),
        Vector3::new(0.0, 0.0, 1.0),
    )
}

/// Same matrices as dynamically sized values, for the LMI layer.
pub fn triple_integrator_dyn() -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 1., 0., 0., 0.]),
        DMatrix::from_column_slice(3, 1, &[0., 0., 1.]),
    )
}

/// Cumulative desired offsets behind the leader: `d_0 = 0` and
/// `d_m = sum_{k<=m} (L_k + gap_k)` over the follower parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonGeometry {
    offsets: Vec<f64>,
}

impl PlatoonGeometry {
    pub fn new(followers: &[VehicleParams]) -> Self {
        let mut offsets = Vec::with_capacity(followers.len() + 1);
        offsets.push(0.0);
        let mut acc = 0.0;
        for p in followers {
            acc += p.length + p.gap;
            offsets.push(acc);
        }
        Self { offsets }
    }

    /// `d_m`; index 0 is the leader.
    pub fn offset(&self, m: usize) -> f64 {
        self.offsets[m]
    }

    /// `d_ij = d_i - d_j`.
    pub fn separation(&self, i: usize, j: usize) -> f64 {
        self.offsets[i] - self.offsets[j]
    }

    /// Number of followers.
    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Desired absolute position of vehicle `m` for a leader at `x0`.
    pub fn slot(&self, x0: f64, m: usize) -> f64 {
        x0 - self.offsets[m]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Formulation {
    I,
    II,
}

impl Formulation {
    /// Permitted nonzero entries of an off-diagonal coupling block.
    pub fn off_diagonal_mask(&self) -> &'static [(usize, usize)] {
        match self {
            Formulation::I => &[(1, 2)],
            Formulation::II => &[(2, 0), (2, 1), (2, 2)],
        }
    }

    /// Permitted nonzero entries of a diagonal coupling block.
    pub fn diagonal_mask(&self) -> &'static [(usize, usize)] {
        match self {
            Formulation::I => &[(1, 2), (2, 0), (2, 1), (2, 2)],
            Formulation::II => &[(2, 0), (2, 1), (2, 2)],
        }
    }
}

/// Tolerance below which gain entries outside the structure mask are
/// accepted (and treated as zero).
pub const MASK_TOL: f64 = 1e-9;

fn check_block(
    block: &Matrix3<f64>,
    mask: &[(usize, usize)],
    i: usize,
    j: usize,
) -> Result<(), PlatoonError> {
    for r in 0..3 {
        for c in 0..3 {
            if !mask.contains(&(r, c)) && block[(r, c)].abs() > MASK_TOL {
                return Err(PlatoonError::Structure {
                    i,
                    j,
                    row: r,
                    col: c,
                    value: block[(r, c)],
                });
            }
        }
    }
    Ok(())
}

/// Formulation-specific controller parameters recovered from the coupling
/// blocks.
#[derive(Debug, Clone, PartialEq)]
pub enum ExtractedGains {
    /// Weights `kbar[i][j]` between followers (zero diagonal), leader
    /// weights, and the per-vehicle feedback row applied to the own error.
    I {
        leader_weights: Vec<f64>,
        weights: Vec<Vec<f64>>,
        global_rows: Vec<RowVector3<f64>>,
    },
    /// Feedback rows applied to error differences (`coupling_rows[i][j]`,
    /// diagonal unused) plus the per-vehicle row on the own error.
    II {
        coupling_rows: Vec<Vec<RowVector3<f64>>>,
        global_rows: Vec<RowVector3<f64>>,
    },
}

/// Full per-platoon gain set: local rows, coupling blocks, leader blocks,
/// and the extracted formulation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub formulation: Formulation,
    pub local_rows: Vec<RowVector3<f64>>,
    pub k: Vec<Vec<Matrix3<f64>>>,
    pub k_leader: Vec<Matrix3<f64>>,
    pub extracted: ExtractedGains,
}

impl GainSet {
    pub fn n(&self) -> usize {
        self.local_rows.len()
    }

    /// Directed communication edges implied by nonzero coupling blocks.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n() {
            for j in 0..self.n() {
                if i != j && self.k[i][j].iter().any(|v| v.abs() > MASK_TOL) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Rebuilds the coupling and leader blocks from the extracted
    /// parameters; used to confirm the extraction is lossless.
    pub fn rebuild_k(&self) -> (Vec<Vec<Matrix3<f64>>>, Vec<Matrix3<f64>>) {
        let n = self.n();
        let mut k = vec![vec![Matrix3::zeros(); n]; n];
        let mut k_leader = vec![Matrix3::zeros(); n];
        match &self.extracted {
            ExtractedGains::I {
                leader_weights,
                weights,
                global_rows,
            } => {
                for i in 0..n {
                    for (j, kk) in k[i].iter_mut().enumerate() {
                        if j != i {
                            kk[(1, 2)] = -weights[i][j];
                        }
                    }
                    k_leader[i][(1, 2)] = leader_weights[i] - 1.0;
                    k_leader[i].set_row(2, &global_rows[i]);
                }
            }
            ExtractedGains::II {
                coupling_rows,
                global_rows,
            } => {
                for i in 0..n {
                    for (j, kk) in k[i].iter_mut().enumerate() {
                        if j != i {
                            kk.set_row(2, &(-coupling_rows[i][j]));
                        }
                    }
                    k_leader[i].set_row(2, &global_rows[i]);
                }
            }
        }
        for i in 0..n {
            let mut diag = k_leader[i];
            for (j, kk) in k[i].iter().enumerate() {
                if j != i {
                    diag -= *kk;
                }
            }
            k[i][i] = diag;
        }
        (k, k_leader)
    }

    /// Verifies every stored block against the formulation mask and the
    /// diagonal identity `K_ii = K_i0 - sum_{j != i} K_ij`.
    pub fn structure_check(&self) -> Result<(), PlatoonError> {
        let n = self.n();
        for i in 0..n {
            for j in 0..n {
                let mask = if i == j {
                    self.formulation.diagonal_mask()
                } else {
                    self.formulation.off_diagonal_mask()
                };
                check_block(&self.k[i][j], mask, i, j)?;
            }
            check_block(&self.k_leader[i], self.formulation.diagonal_mask(), i, i)?;
            let mut expect = self.k_leader[i];
            for (j, kk) in self.k[i].iter().enumerate() {
                if j != i {
                    expect -= *kk;
                }
            }
            let dev = (expect - self.k[i][i]).abs().max();
            if dev > 1e-9 {
                return Err(PlatoonError::Structure {
                    i,
                    j: i,
                    row: 0,
                    col: 0,
                    value: dev,
                });
            }
        }
        Ok(())
    }

    /// Stacked closed-loop error-system matrix
    /// `blkdiag(A + B local_row_i) + [K_ij]`.
    pub fn closed_loop_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let (a, b) = triple_integrator();
        let mut out = DMatrix::zeros(3 * n, 3 * n);
        for i in 0..n {
            let acl = a + b * self.local_rows[i];
            for r in 0..3 {
                for c in 0..3 {
                    out[(3 * i + r, 3 * i + c)] = acl[(r, c)];
                }
            }
            for j in 0..n {
                for r in 0..3 {
                    for c in 0..3 {
                        out[(3 * i + r, 3 * j + c)] += self.k[i][j][(r, c)];
                    }
                }
            }
        }
        out
    }
}

impl GainSet {
    /// Restriction to a subset of platoon slots (for splitting): keeps the
    /// selected rows/columns of the coupling grid and recomputes the leader
    /// blocks so the diagonal blocks (the realized behavior) are unchanged.
    pub fn restrict(&self, keep: &[usize]) -> GainSet {
        let m = keep.len();
        let mut k = vec![vec![Matrix3::zeros(); m]; m];
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                k[a][b] = self.k[i][j];
            }
        }
        let local_rows: Vec<RowVector3<f64>> =
            keep.iter().map(|&i| self.local_rows[i]).collect();
        let mut k_leader = Vec::with_capacity(m);
        for (a, _) in keep.iter().enumerate() {
            let mut lead = k[a][a];
            for (b, _) in keep.iter().enumerate() {
                if b != a {
                    lead += k[a][b];
                }
            }
            k_leader.push(lead);
        }
        GainSet::from_parts(self.formulation, local_rows, k, k_leader)
    }

    /// Rebuilds a gain set from stored blocks without structure validation
    /// (used when reloading persisted results so that integrity checks can
    /// run on the raw data). The extracted parameters are recomputed from
    /// the given blocks.
    pub fn from_parts(
        formulation: Formulation,
        local_rows: Vec<RowVector3<f64>>,
        k: Vec<Vec<Matrix3<f64>>>,
        k_leader: Vec<Matrix3<f64>>,
    ) -> Self {
        let n = local_rows.len();
        let extracted = match formulation {
            Formulation::I => {
                let mut weights = vec![vec![0.0; n]; n];
                let mut leader_weights = Vec::with_capacity(n);
                let mut global_rows = Vec::with_capacity(n);
                for i in 0..n {
                    for j in 0..n {
                        if j != i {
                            weights[i][j] = -k[i][j][(1, 2)];
                        }
                    }
                    leader_weights.push(k_leader[i][(1, 2)] + 1.0);
                    global_rows.push(k_leader[i].row(2).into_owned());
                }
                ExtractedGains::I {
                    leader_weights,
                    weights,
                    global_rows,
                }
            }
            Formulation::II => {
                let mut coupling_rows = vec![vec![RowVector3::zeros(); n]; n];
                let mut global_rows = Vec::with_capacity(n);
                for i in 0..n {
                    for j in 0..n {
                        if j != i {
                            coupling_rows[i][j] = -k[i][j].row(2).into_owned();
                        }
                    }
                    global_rows.push(k_leader[i].row(2).into_owned());
                }
                ExtractedGains::II {
                    coupling_rows,
                    global_rows,
                }
            }
        };
        Self {
            formulation,
            local_rows,
            k,
            k_leader,
            extracted,
        }
    }
}

/// Recovers the formulation parameters from coupling blocks that satisfy
/// the structure mask (within [`MASK_TOL`]). The leader blocks follow from
/// the diagonal identity `K_i0 = K_ii + sum_{j != i} K_ij`.
pub fn extract_gains(
    k: &[Vec<Matrix3<f64>>],
    local_rows: &[RowVector3<f64>],
    formulation: Formulation,
) -> Result<GainSet, PlatoonError> {
    let n = k.len();
    assert_eq!(local_rows.len(), n, "one local row per vehicle");
    for (i, row) in k.iter().enumerate() {
        assert_eq!(row.len(), n, "coupling grid must be square");
        for (j, block) in row.iter().enumerate() {
            let mask = if i == j {
                formulation.diagonal_mask()
            } else {
                formulation.off_diagonal_mask()
            };
            check_block(block, mask, i, j)?;
        }
    }

    let mut k_leader = Vec::with_capacity(n);
    for i in 0..n {
        let mut lead = k[i][i];
        for (j, kk) in k[i].iter().enumerate() {
            if j != i {
                lead += *kk;
            }
        }
        k_leader.push(lead);
    }

    let extracted = match formulation {
        Formulation::I => {
            let mut weights = vec![vec![0.0; n]; n];
            let mut leader_weights = Vec::with_capacity(n);
            let mut global_rows = Vec::with_capacity(n);
            for i in 0..n {
                for j in 0..n {
                    if j != i {
                        weights[i][j] = -k[i][j][(1, 2)];
                    }
                }
                leader_weights.push(k_leader[i][(1, 2)] + 1.0);
                global_rows.push(k_leader[i].row(2).into_owned());
            }
            ExtractedGains::I {
                leader_weights,
                weights,
                global_rows,
            }
        }
        Formulation::II => {
            let mut coupling_rows = vec![vec![RowVector3::zeros(); n]; n];
            let mut global_rows = Vec::with_capacity(n);
            for i in 0..n {
                for j in 0..n {
                    if j != i {
                        coupling_rows[i][j] = -k[i][j].row(2).into_owned();
                    }
                }
                global_rows.push(k_leader[i].row(2).into_owned());
            }
            ExtractedGains::II {
                coupling_rows,
                global_rows,
            }
        }
    };
    Ok(GainSet {
        formulation,
        local_rows: local_rows.to_vec(),
        k: k.to_vec(),
        k_leader,
        extracted,
    })
}

/// Formulation-I error state of follower `i` (zero-based): weighted sums of
/// offset-corrected position and velocity differences against the leader and
/// the other followers, with the acceleration error taken against the
/// leader. The desired offsets enter as shifted coordinates `x + d` so that
/// vehicles sitting exactly in their slots produce a zero error.
pub fn error_state_i(
    i: usize,
    leader: &VehicleState,
    followers: &[VehicleState],
    gains: &GainSet,
    geometry: &PlatoonGeometry,
) -> Result<ErrorState, PlatoonError> {
    let ExtractedGains::I {
        leader_weights,
        weights,
        ..
    } = &gains.extracted
    else {
        return Err(PlatoonError::FormulationMismatch {
            expected: Formulation::I,
            got: gains.formulation,
        });
    };
    let me = &followers[i];
    let mine = me.position + geometry.offset(i + 1);
    let mut location = leader_weights[i] * (mine - leader.position);
    let mut velocity = leader_weights[i] * (me.velocity - leader.velocity);
    for (j, other) in followers.iter().enumerate() {
        if j == i {
            continue;
        }
        let w = weights[i][j];
        if w != 0.0 {
            location += w * (mine - (other.position + geometry.offset(j + 1)));
            velocity += w * (me.velocity - other.velocity);
        }
    }
    Ok(ErrorState {
        location,
        velocity,
        acceleration: me.acceleration - leader.acceleration,
    })
}

/// Formulation-II error state of follower `i`: deviation from the leader's
/// trajectory shifted by the desired separation (noiseless-leader
/// convention, so the leader disturbance terms vanish).
pub fn error_state_ii(
    i: usize,
    state: &VehicleState,
    leader: &VehicleState,
    geometry: &PlatoonGeometry,
) -> ErrorState {
    ErrorState {
        location: state.position - (leader.position - geometry.offset(i + 1)),
        velocity: state.velocity - leader.velocity,
        acceleration: state.acceleration - leader.acceleration,
    }
}

/// Virtual control input of follower `i` from the error states. Formulation
/// I uses only the own error (coupling lives inside the error definition);
/// formulation II also needs the neighbors' errors wherever the extracted
/// coupling row is nonzero.
pub fn control(
    i: usize,
    gains: &GainSet,
    errors: &[Option<ErrorState>],
) -> Result<f64, PlatoonError> {
    let own = errors[i].ok_or(PlatoonError::TopologyViolation { i, j: i })?;
    let local = (gains.local_rows[i] * own.as_vector())[(0, 0)];
    match &gains.extracted {
        ExtractedGains::I { global_rows, .. } => {
            Ok(local + (global_rows[i] * own.as_vector())[(0, 0)])
        }
        ExtractedGains::II {
            coupling_rows,
            global_rows,
        } => {
            // u_i = sum_j Kb_ij e_j with Kb_ii = L_ii + sum_{j != i} L_ij
            // and Kb_ij = -L_ij.
            let mut kb_ii = global_rows[i];
            for (j, row) in coupling_rows[i].iter().enumerate() {
                if j != i {
                    kb_ii += *row;
                }
            }
            let mut u = (kb_ii * own.as_vector())[(0, 0)];
            for (j, row) in coupling_rows[i].iter().enumerate() {
                if j == i || (row[0] == 0.0 && row[1] == 0.0 && row[2] == 0.0) {
                    continue;
                }
                let ej = errors[j].ok_or(PlatoonError::TopologyViolation { i, j })?;
                u += (-row * ej.as_vector())[(0, 0)];
            }
            Ok(local + u)
        }
    }
}
