//! Co-design of distributed controllers and inter-vehicle communication
//! topologies for longitudinal vehicle platoons.
//!
//! The library builds dissipativity-based linear matrix inequality (LMI)
//! problems for both centralized and decentralized (sequential, per-vehicle)
//! synthesis, extracts controller gains and a communication topology from the
//! solved interconnection blocks, and validates the designs in a nonlinear
//! closed-loop platoon simulator with merge/split scenarios and
//! string-stability metrics.
//!
//! Module map:
//! - [`blockmat`]: dense block-matrix algebra, network-matrix structure
//!   checks, the block element-wise rearrangement, and the sequential
//!   Schur-complement positive-definiteness recursion.
//! - [`lmi`]: a small LMI modeling layer lowered to a conic program solved by
//!   a pluggable backend (Clarabel by default).
//! - [`dissipativity`]: quadratic-supply-rate certification of LTI systems,
//!   local controller synthesis with passivity-index co-optimization, and
//!   networked dissipativity analysis/synthesis.
//! - [`platoon`]: vehicle longitudinal dynamics, feedback linearization,
//!   error-state formulations I and II, gain structure masks and extraction.
//! - [`codesign`]: the centralized pipeline, the decentralized sequential
//!   pipeline, merge/split orchestration, and string-stability certification.
//! - [`sim`]: fixed-step nonlinear closed-loop simulation with stochastic
//!   disturbances, a piecewise-linear leader profile, merge/split events, and
//!   metric extraction.
//!
//! With the default `parallel` feature, embarrassingly parallel batch
//! operations (per-vehicle local synthesis, batch simulation runs) fan out
//! over rayon; disabling the feature falls back to sequential loops with the
//! same API.

pub mod blockmat;
pub mod codesign;
pub mod dissipativity;
pub mod linalg;
pub mod lmi;
mod par;
pub mod platoon;
pub mod sim;
