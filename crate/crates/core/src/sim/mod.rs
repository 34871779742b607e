//! Fixed-step nonlinear closed-loop platoon simulation.
//!
//! Integrates the nonlinear vehicle dynamics under the feedback-linearizing
//! actuator command with classical fourth-order steps; the feedback law is
//! part of the stage derivative, so the linearizing cancellation is exact at
//! every stage. Stochastic disturbances are sampled once per step and held
//! constant across stages; the leader follows its piecewise-linear velocity
//! profile analytically (noiseless). Merge and split events re-run the
//! decentralized design machinery on a frozen snapshot at their timestamps.

mod export;

pub use export::{write_trace_csv, write_trace_svg};

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::codesign::{
    self, CodesignError, CostSpec, DecentralizedOptions, PlatoonLedger, SynthesisResult,
};
use crate::dissipativity::LocalSynthesisOptions;
use crate::par;
use crate::platoon::{
    control, drift, error_state_i, error_state_ii, linearizing_input, ErrorState, Formulation,
    GainSet, PlatoonError, PlatoonGeometry, VehicleParams, VehicleState,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("time {t} is outside the leader profile horizon [{lo}, {hi}]")]
    OutsideHorizon { t: f64, lo: f64, hi: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("scenario events require a decentralized design ledger")]
    EventsRequireLedger,
    #[error("event failed at t = {t}: {message}")]
    Event { t: f64, message: String },
    #[error(transparent)]
    Codesign(#[from] CodesignError),
    #[error(transparent)]
    Platoon(#[from] PlatoonError),
}

type Result<T> = std::result::Result<T, SimError>;

/// Piecewise-linear leader velocity profile; contiguous segments, continuous
/// velocity at breakpoints, right-continuous acceleration.
#[derive(Debug, Clone)]
pub struct LeaderProfile {
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    t0: f64,
    t1: f64,
    v0: f64,
    slope: f64,
    /// Distance covered before this segment starts.
    x0: f64,
}

impl LeaderProfile {
    /// Builds the profile from velocity breakpoints `(t, v)`, linearly
    /// interpolated. Times must be strictly increasing.
    pub fn from_breakpoints(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(SimError::InvalidScenario(
                "leader profile needs at least two breakpoints".into(),
            ));
        }
        let mut segments = Vec::with_capacity(points.len() - 1);
        let mut x0 = 0.0;
        for pair in points.windows(2) {
            let (t0, v0) = pair[0];
            let (t1, v1) = pair[1];
            if t1 <= t0 {
                return Err(SimError::InvalidScenario(
                    "leader profile breakpoints must be strictly increasing in time".into(),
                ));
            }
            let dt = t1 - t0;
            let slope = (v1 - v0) / dt;
            segments.push(Segment {
                t0,
                t1,
                v0,
                slope,
                x0,
            });
            x0 += v0 * dt + 0.5 * slope * dt * dt;
        }
        Ok(Self { segments })
    }

    /// The default speed-up / cruise / brake / cruise reference over 10 s:
    /// 0 to 30 m/s in 2 s, to 40 m/s by 4 s, hold to 6 s, down to 20 m/s by
    /// 8 s, hold to 10 s.
    pub fn standard() -> Self {
        Self::from_breakpoints(&[
            (0.0, 0.0),
            (2.0, 30.0),
            (4.0, 40.0),
            (6.0, 40.0),
            (8.0, 20.0),
            (10.0, 20.0),
        ])
        .expect("static profile is well formed")
    }

    pub fn constant(v: f64, horizon: f64) -> Self {
        Self::from_breakpoints(&[(0.0, v), (horizon, v)]).expect("constant profile")
    }

    pub fn domain(&self) -> (f64, f64) {
        (
            self.segments.first().unwrap().t0,
            self.segments.last().unwrap().t1,
        )
    }

    fn segment_at(&self, t: f64) -> Result<(&Segment, f64)> {
        let (lo, hi) = self.domain();
        // Absorb one-ulp grid accumulation at the horizon ends.
        let tol = 1e-9 * (1.0 + hi.abs());
        if t < lo - tol || t > hi + tol {
            return Err(SimError::OutsideHorizon { t, lo, hi });
        }
        let t = t.clamp(lo, hi);
        // Right-continuous: the segment starting at t wins, except at the
        // final instant.
        let idx = self
            .segments
            .iter()
            .position(|s| t < s.t1)
            .unwrap_or(self.segments.len() - 1);
        Ok((&self.segments[idx], t))
    }

    pub fn velocity(&self, t: f64) -> Result<f64> {
        let (s, t) = self.segment_at(t)?;
        Ok(s.v0 + s.slope * (t - s.t0))
    }

    /// Piecewise-constant acceleration, right-continuous at breakpoints.
    pub fn acceleration(&self, t: f64) -> Result<f64> {
        Ok(self.segment_at(t)?.0.slope)
    }

    /// Closed-form position for a start position `x0`.
    pub fn position(&self, x0: f64, t: f64) -> Result<f64> {
        let (s, t) = self.segment_at(t)?;
        let dt = t - s.t0;
        Ok(x0 + s.x0 + s.v0 * dt + 0.5 * s.slope * dt * dt)
    }

    pub fn state(&self, x0: f64, t: f64) -> Result<VehicleState> {
        Ok(VehicleState {
            position: self.position(x0, t)?,
            velocity: self.velocity(t)?,
            acceleration: self.acceleration(t)?,
        })
    }
}

/// Velocity of the default leader profile at `t`.
pub fn leader_reference(t: f64) -> Result<f64> {
    LeaderProfile::standard().velocity(t)
}

/// Stochastic disturbance specification: per-vehicle per-channel means drawn
/// uniformly from `mean_range` and standard deviations from `std_range` at
/// initialization, then one Gaussian sample per channel per step.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub seed: u64,
    pub mean_range: (f64, f64),
    pub std_range: (f64, f64),
}

impl NoiseSpec {
    /// The default disturbance model: means from `U(-0.5, 0.5)` and
    /// standard deviations from `U(0, 0.1)`.
    pub fn standard(seed: u64) -> Self {
        Self {
            seed,
            mean_range: (-0.5, 0.5),
            std_range: (0.0, 0.1),
        }
    }

    /// Disturbance-free runs (the seed still fixes initial-state jitter).
    pub fn none(seed: u64) -> Self {
        Self {
            seed,
            mean_range: (0.0, 0.0),
            std_range: (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone)]
pub enum EventKind {
    /// Insert a vehicle at a platoon position, re-running one local design
    /// plus one decentralized step on the frozen snapshot.
    Merge {
        params: VehicleParams,
        position: usize,
        p_scalar: f64,
    },
    /// Detach vehicles from `position` onward into a new platoon led by the
    /// vehicle at `position` (constant-velocity leader from the split time).
    Split { position: usize },
}

#[derive(Debug, Clone)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

/// Scenario description: vehicles, leader motion, disturbances, events, and
/// the integration grid.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub followers: Vec<VehicleParams>,
    pub leader: LeaderProfile,
    /// Leader start position.
    pub leader_start: f64,
    /// Length attributed to the leader for collision checks.
    pub leader_length: f64,
    pub noise: NoiseSpec,
    pub events: Vec<Event>,
    pub step: f64,
    pub horizon: f64,
    /// Draw cumulative `U(-1, 1)` spacing jitter for the initial positions;
    /// disabled runs start every vehicle exactly in its slot.
    pub initial_jitter: bool,
}

impl Scenario {
    /// Homogeneous platoon under the standard leader profile and noise model.
    pub fn standard(n: usize, seed: u64) -> Self {
        Self {
            followers: vec![VehicleParams::default(); n],
            leader: LeaderProfile::standard(),
            leader_start: 0.0,
            leader_length: VehicleParams::default().length,
            noise: NoiseSpec::standard(seed),
            events: Vec::new(),
            step: 1e-3,
            horizon: 10.0,
            initial_jitter: true,
        }
    }

    /// Noise-free equilibrium run: constant-speed leader, exact slots.
    pub fn equilibrium(n: usize, v: f64, horizon: f64) -> Self {
        Self {
            followers: vec![VehicleParams::default(); n],
            leader: LeaderProfile::constant(v, horizon),
            leader_start: 0.0,
            leader_length: VehicleParams::default().length,
            noise: NoiseSpec::none(0),
            events: Vec::new(),
            step: 1e-3,
            horizon,
            initial_jitter: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.followers.is_empty() {
            return Err(SimError::InvalidScenario("no follower vehicles".into()));
        }
        for p in &self.followers {
            p.validate()?;
        }
        if !(self.step > 0.0) || !(self.horizon > 0.0) {
            return Err(SimError::InvalidScenario(
                "step and horizon must be positive".into(),
            ));
        }
        let (lo, hi) = self.leader.domain();
        if lo > 0.0 || hi < self.horizon {
            return Err(SimError::InvalidScenario(format!(
                "leader profile domain [{lo}, {hi}] does not cover the horizon {}",
                self.horizon
            )));
        }
        for e in &self.events {
            if e.time < 0.0 || e.time > self.horizon {
                return Err(SimError::InvalidScenario(format!(
                    "event time {} outside the horizon",
                    e.time
                )));
            }
        }
        Ok(())
    }
}

/// Per-vehicle time series; vehicles merged mid-run carry NaN before their
/// join index.
#[derive(Debug, Clone)]
pub struct VehicleSeries {
    pub id: usize,
    pub joined_at: usize,
    /// Physical length, for spacing metrics.
    pub length: f64,
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub acceleration: Vec<f64>,
    pub error_location: Vec<f64>,
    pub error_velocity: Vec<f64>,
    pub error_acceleration: Vec<f64>,
    pub virtual_input: Vec<f64>,
    pub actuator_input: Vec<f64>,
    /// Disturbance samples entering the error system, one triple per step.
    pub disturbance: [Vec<f64>; 3],
}

impl VehicleSeries {
    fn new(id: usize, joined_at: usize, length: f64) -> Self {
        let pad = vec![f64::NAN; joined_at];
        Self {
            id,
            joined_at,
            length,
            position: pad.clone(),
            velocity: pad.clone(),
            acceleration: pad.clone(),
            error_location: pad.clone(),
            error_velocity: pad.clone(),
            error_acceleration: pad.clone(),
            virtual_input: pad.clone(),
            actuator_input: pad.clone(),
            disturbance: [pad.clone(), pad.clone(), pad],
        }
    }
}

#[derive(Debug, Clone)]
pub enum EventLog {
    Merge { t: f64, position: usize, id: usize },
    Split { t: f64, position: usize },
    Collision { t: f64, front: usize, back: usize },
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub time: Vec<f64>,
    pub leader_position: Vec<f64>,
    pub leader_velocity: Vec<f64>,
    pub leader_acceleration: Vec<f64>,
    pub vehicles: Vec<VehicleSeries>,
    pub events: Vec<EventLog>,
    /// Set when the run was cut short by non-finite states.
    pub aborted: Option<String>,
    pub step: f64,
    pub leader_length: f64,
}

impl SimTrace {
    pub fn collisions(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, EventLog::Collision { .. }))
            .count()
    }
}

/// Design handed to the simulator. Scenario events need the decentralized
/// ledger (and costs) to re-run design steps mid-run.
pub enum SimDesign<'a> {
    Fixed(&'a SynthesisResult),
    Adaptive {
        result: &'a SynthesisResult,
        ledger: &'a PlatoonLedger,
        costs: &'a CostSpec,
    },
}

enum LeaderMotion {
    Profile,
    /// Constant-velocity leader spawned by a split.
    Frozen { x: f64, v: f64, t0: f64 },
}

impl LeaderMotion {
    fn state(&self, profile: &LeaderProfile, start: f64, t: f64) -> Result<VehicleState> {
        match self {
            LeaderMotion::Profile => profile.state(start, t),
            LeaderMotion::Frozen { x, v, t0 } => Ok(VehicleState {
                position: x + v * (t - t0),
                velocity: *v,
                acceleration: 0.0,
            }),
        }
    }

    /// Acceleration-derivative sample over one step (zero except where the
    /// profile acceleration jumps within the step).
    fn jerk_sample(&self, profile: &LeaderProfile, t: f64, h: f64) -> f64 {
        match self {
            LeaderMotion::Profile => {
                let (lo, hi) = profile.domain();
                let a0 = profile.acceleration(t.clamp(lo, hi)).unwrap_or(0.0);
                let a1 = profile.acceleration((t + h).clamp(lo, hi)).unwrap_or(a0);
                (a1 - a0) / h
            }
            LeaderMotion::Frozen { .. } => 0.0,
        }
    }
}

struct SimPlatoon {
    leader: LeaderMotion,
    /// Vehicle ids, position order.
    members: Vec<usize>,
    gains: GainSet,
    geometry: PlatoonGeometry,
    ledger: Option<PlatoonLedger>,
}

struct SimVehicle {
    id: usize,
    params: VehicleParams,
    state: VehicleState,
    noise_mean: [f64; 3],
    noise_std: [f64; 3],
}

fn vehicle_rhs(
    params: &VehicleParams,
    state: &VehicleState,
    u_bar: f64,
    d: &[f64; 3],
) -> Vector3<f64> {
    Vector3::new(
        state.velocity + d[0],
        state.acceleration + d[1],
        drift(params, state.velocity, state.acceleration) + u_bar / (params.mass * params.tau)
            + d[2],
    )
}

/// Open-loop single-vehicle integration under the feedback-linearizing
/// actuator command with a prescribed virtual input `g(t)`; the returned
/// series includes the initial state. Disturbance-free.
pub fn integrate_single_vehicle(
    params: &VehicleParams,
    initial: VehicleState,
    g: impl Fn(f64) -> f64,
    step: f64,
    horizon: f64,
) -> Vec<VehicleState> {
    let steps = (horizon / step).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut s = initial;
    out.push(s);
    let d = [0.0; 3];
    for k in 0..steps {
        let t = k as f64 * step;
        let f = |tt: f64, st: &VehicleState| {
            let u = linearizing_input(params, st.velocity, st.acceleration, g(tt));
            vehicle_rhs(params, st, u, &d)
        };
        s = rk4_single(&f, t, s, step);
        out.push(s);
    }
    out
}

fn rk4_single(
    f: &impl Fn(f64, &VehicleState) -> Vector3<f64>,
    t: f64,
    s: VehicleState,
    h: f64,
) -> VehicleState {
    let add = |a: &VehicleState, k: &Vector3<f64>, scale: f64| VehicleState {
        position: a.position + scale * k[0],
        velocity: a.velocity + scale * k[1],
        acceleration: a.acceleration + scale * k[2],
    };
    let k1 = f(t, &s);
    let k2 = f(t + 0.5 * h, &add(&s, &k1, 0.5 * h));
    let k3 = f(t + 0.5 * h, &add(&s, &k2, 0.5 * h));
    let k4 = f(t + h, &add(&s, &k3, h));
    add(&s, &(k1 + k2 * 2.0 + k3 * 2.0 + k4), h / 6.0)
}

struct World {
    platoons: Vec<SimPlatoon>,
    vehicles: Vec<SimVehicle>,
    formulation: Formulation,
}

impl World {
    /// Error states of a platoon's members given a leader state snapshot.
    fn platoon_errors(
        &self,
        platoon: &SimPlatoon,
        states: &[VehicleState],
        leader: &VehicleState,
    ) -> Result<Vec<ErrorState>> {
        let mut errors = Vec::with_capacity(platoon.members.len());
        for (slot, _) in platoon.members.iter().enumerate() {
            let e = match self.formulation {
                Formulation::I => {
                    error_state_i(slot, leader, states, &platoon.gains, &platoon.geometry)?
                }
                Formulation::II => {
                    error_state_ii(slot, &states[slot], leader, &platoon.geometry)
                }
            };
            errors.push(e);
        }
        Ok(errors)
    }
}

/// Runs the closed-loop simulation. Scenarios with events need
/// [`SimDesign::Adaptive`]; the ledger is cloned and mutated internally.
pub fn run(scenario: &Scenario, design: &SimDesign<'_>) -> Result<SimTrace> {
    scenario.validate()?;
    let (result, ledger, costs) = match design {
        SimDesign::Fixed(result) => {
            if !scenario.events.is_empty() {
                return Err(SimError::EventsRequireLedger);
            }
            (*result, None, None)
        }
        SimDesign::Adaptive {
            result,
            ledger,
            costs,
        } => (*result, Some((*ledger).clone()), Some(*costs)),
    };
    let n = scenario.followers.len();
    if result.n() != n {
        return Err(SimError::InvalidScenario(format!(
            "design covers {} vehicles, scenario has {n}",
            result.n()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.noise.seed);
    let mut draw_noise = |rng: &mut ChaCha8Rng| -> ([f64; 3], [f64; 3]) {
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for c in 0..3 {
            mean[c] = if scenario.noise.mean_range.0 == scenario.noise.mean_range.1 {
                scenario.noise.mean_range.0
            } else {
                rng.random_range(scenario.noise.mean_range.0..scenario.noise.mean_range.1)
            };
            std[c] = if scenario.noise.std_range.0 == scenario.noise.std_range.1 {
                scenario.noise.std_range.0
            } else {
                rng.random_range(scenario.noise.std_range.0..scenario.noise.std_range.1)
            };
        }
        (mean, std)
    };

    // Initial states: slots behind the leader, optionally with cumulative
    // spacing jitter; velocities match the leader's initial reference.
    let geometry = PlatoonGeometry::new(&scenario.followers);
    let v0 = scenario.leader.velocity(0.0)?;
    let mut vehicles = Vec::with_capacity(n);
    let mut x_prev = scenario.leader_start;
    for (i, params) in scenario.followers.iter().enumerate() {
        let jitter = if scenario.initial_jitter {
            rng.random_range(-1.0..1.0)
        } else {
            0.0
        };
        let x = x_prev - (params.length + params.gap) - jitter;
        x_prev = x;
        let (noise_mean, noise_std) = draw_noise(&mut rng);
        vehicles.push(SimVehicle {
            id: i,
            params: params.clone(),
            state: VehicleState {
                position: x,
                velocity: v0,
                acceleration: 0.0,
            },
            noise_mean,
            noise_std,
        });
    }

    let mut world = World {
        platoons: vec![SimPlatoon {
            leader: LeaderMotion::Profile,
            members: (0..n).collect(),
            gains: result.gains.clone(),
            geometry,
            ledger,
        }],
        vehicles,
        formulation: result.formulation,
    };

    let steps = (scenario.horizon / scenario.step).round() as usize;
    let h = scenario.step;
    let mut trace = SimTrace {
        time: Vec::with_capacity(steps + 1),
        leader_position: Vec::with_capacity(steps + 1),
        leader_velocity: Vec::with_capacity(steps + 1),
        leader_acceleration: Vec::with_capacity(steps + 1),
        vehicles: (0..n)
            .map(|id| VehicleSeries::new(id, 0, scenario.followers[id].length))
            .collect(),
        events: Vec::new(),
        aborted: None,
        step: h,
        leader_length: scenario.leader_length,
    };
    let mut pending: Vec<Event> = scenario.events.clone();
    pending.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut next_event = 0usize;

    for k in 0..=steps {
        let t = k as f64 * h;

        // Apply events scheduled at or before this grid point.
        while next_event < pending.len() && pending[next_event].time <= t + 0.5 * h {
            let ev = pending[next_event].clone();
            next_event += 1;
            apply_event(
                &mut world,
                &mut trace,
                scenario,
                &ev,
                t,
                costs,
                &mut rng,
                &mut draw_noise,
            )?;
        }

        // Sample per-step disturbances (held across stages).
        let mut disturbances = vec![[0.0; 3]; world.vehicles.len()];
        for (v, d) in world.vehicles.iter().zip(disturbances.iter_mut()) {
            for c in 0..3 {
                *d = {
                    let mut dd = *d;
                    dd[c] = if v.noise_std[c] > 0.0 {
                        let dist = Normal::new(v.noise_mean[c], v.noise_std[c])
                            .expect("finite noise parameters");
                        dist.sample(&mut rng)
                    } else {
                        v.noise_mean[c]
                    };
                    dd
                };
            }
        }

        // Log the sample at t (errors, controls, disturbance channels).
        log_sample(&mut trace, &world, scenario, t, h, &disturbances)?;
        if trace.aborted.is_some() {
            break;
        }
        if k == steps {
            break;
        }

        // Advance every platoon with the control law inside the stage
        // derivative; disturbances are zero-order-held.
        for pi in 0..world.platoons.len() {
            step_platoon(&mut world, pi, scenario, t, h, &disturbances)?;
        }
    }
    Ok(trace)
}

#[allow(clippy::too_many_arguments)]
fn apply_event(
    world: &mut World,
    trace: &mut SimTrace,
    scenario: &Scenario,
    ev: &Event,
    t: f64,
    costs: Option<&CostSpec>,
    rng: &mut ChaCha8Rng,
    draw_noise: &mut impl FnMut(&mut ChaCha8Rng) -> ([f64; 3], [f64; 3]),
) -> Result<()> {
    let costs = costs.ok_or(SimError::EventsRequireLedger)?;
    match &ev.kind {
        EventKind::Merge {
            params,
            position,
            p_scalar,
        } => {
            let position = (*position).min(world.platoons[0].members.len());
            {
                let platoon = &mut world.platoons[0];
                let Some(ledger) = platoon.ledger.as_mut() else {
                    return Err(SimError::Event {
                        t,
                        message: "merge requires the platoon's design ledger".into(),
                    });
                };
                codesign::merge(
                    ledger,
                    params,
                    *p_scalar,
                    position,
                    costs,
                    &DecentralizedOptions::default(),
                    &LocalSynthesisOptions::default(),
                )
                .map_err(|e| SimError::Event {
                    t,
                    message: e.to_string(),
                })?;
                platoon.gains = ledger.gain_set().map_err(|e| SimError::Event {
                    t,
                    message: e.to_string(),
                })?;
            }

            // Spawn behind the predecessor (or the leader) at the desired
            // gap, matching its velocity.
            let (pred_x, pred_v) = if position == 0 {
                let ls = world.platoons[0].leader.state(
                    &scenario.leader,
                    scenario.leader_start,
                    t,
                )?;
                (ls.position, ls.velocity)
            } else {
                let pred = &world.vehicles[world.platoons[0].members[position - 1]];
                (pred.state.position, pred.state.velocity)
            };
            let id = world.vehicles.len();
            let (noise_mean, noise_std) = draw_noise(rng);
            world.vehicles.push(SimVehicle {
                id,
                params: params.clone(),
                state: VehicleState {
                    position: pred_x - (params.length + params.gap),
                    velocity: pred_v,
                    acceleration: 0.0,
                },
                noise_mean,
                noise_std,
            });
            world.platoons[0].members.insert(position, id);
            let member_params: Vec<VehicleParams> = world.platoons[0]
                .members
                .iter()
                .map(|&m| world.vehicles[m].params.clone())
                .collect();
            world.platoons[0].geometry = PlatoonGeometry::new(&member_params);
            trace
                .vehicles
                .push(VehicleSeries::new(id, trace.time.len(), params.length));
            trace.events.push(EventLog::Merge { t, position, id });
            Ok(())
        }
        EventKind::Split { position } => {
            let platoon = &mut world.platoons[0];
            if *position == 0 || *position >= platoon.members.len() {
                return Err(SimError::Event {
                    t,
                    message: format!(
                        "split position {position} must cut strictly inside the platoon"
                    ),
                });
            }
            let detached: Vec<usize> = platoon.members.split_off(*position);
            // The remaining platoon keeps its coupling blocks; leader blocks
            // shed the departed contributions implicitly by restricting the
            // gain set to the kept slots.
            let keep: Vec<usize> = (0..*position).collect();
            platoon.gains = platoon.gains.restrict(&keep);
            let member_params: Vec<VehicleParams> = platoon
                .members
                .iter()
                .map(|&m| world.vehicles[m].params.clone())
                .collect();
            platoon.geometry = PlatoonGeometry::new(&member_params);
            // Merging into a truncated ledger is not supported; drop it.
            platoon.ledger = None;

            // The first detached vehicle leads the new platoon at constant
            // velocity; the rest get a fresh decentralized design.
            let leader_id = detached[0];
            let leader_state = world.vehicles[leader_id].state;
            let followers: Vec<usize> = detached[1..].to_vec();
            let mut new_platoons: Vec<SimPlatoon> = Vec::new();
            if followers.is_empty() {
                new_platoons.push(SimPlatoon {
                    leader: LeaderMotion::Frozen {
                        x: leader_state.position,
                        v: leader_state.velocity,
                        t0: t,
                    },
                    members: Vec::new(),
                    gains: world.platoons[0].gains.restrict(&[]),
                    geometry: PlatoonGeometry::new(&[]),
                    ledger: None,
                });
            } else {
                let p = codesign::uniform_multipliers(followers.len());
                let certs = codesign::local_certificates(&p, &LocalSynthesisOptions::default())
                    .map_err(|e| SimError::Event {
                        t,
                        message: e.to_string(),
                    })?;
                let out = codesign::decentralized_codesign(
                    &certs,
                    world.formulation,
                    costs,
                    &DecentralizedOptions::default(),
                )
                .map_err(|e| SimError::Event {
                    t,
                    message: e.to_string(),
                })?;
                if out.partitions.len() != 1 {
                    return Err(SimError::Event {
                        t,
                        message: "split re-design fragmented further".into(),
                    });
                }
                let member_params: Vec<VehicleParams> = followers
                    .iter()
                    .map(|&m| world.vehicles[m].params.clone())
                    .collect();
                new_platoons.push(SimPlatoon {
                    leader: LeaderMotion::Frozen {
                        x: leader_state.position,
                        v: leader_state.velocity,
                        t0: t,
                    },
                    members: followers,
                    gains: out.partitions[0].result.gains.clone(),
                    geometry: PlatoonGeometry::new(&member_params),
                    ledger: Some(out.ledger),
                });
            }
            world.platoons.extend(new_platoons);
            trace.events.push(EventLog::Split {
                t,
                position: *position,
            });
            Ok(())
        }
    }
}

fn log_sample(
    trace: &mut SimTrace,
    world: &World,
    scenario: &Scenario,
    t: f64,
    h: f64,
    disturbances: &[[f64; 3]],
) -> Result<()> {
    trace.time.push(t);
    let lead0 = world.platoons[0]
        .leader
        .state(&scenario.leader, scenario.leader_start, t)?;
    trace.leader_position.push(lead0.position);
    trace.leader_velocity.push(lead0.velocity);
    trace.leader_acceleration.push(lead0.acceleration);

    let mut sampled: Vec<bool> = vec![false; world.vehicles.len()];
    for platoon in &world.platoons {
        if platoon.members.is_empty() {
            continue;
        }
        let leader = platoon
            .leader
            .state(&scenario.leader, scenario.leader_start, t)?;
        let states: Vec<VehicleState> = platoon
            .members
            .iter()
            .map(|&m| world.vehicles[m].state)
            .collect();
        let errors = world.platoon_errors(platoon, &states, &leader)?;
        let opts: Vec<Option<ErrorState>> = errors.iter().copied().map(Some).collect();
        let jerk = platoon.leader.jerk_sample(&scenario.leader, t, h);

        for (slot, &m) in platoon.members.iter().enumerate() {
            let vehicle = &world.vehicles[m];
            let g = control(slot, &platoon.gains, &opts)?;
            let u = linearizing_input(
                &vehicle.params,
                vehicle.state.velocity,
                vehicle.state.acceleration,
                g,
            );
            let d = &disturbances[m];
            // Disturbance entering the error system. Formulation I weights
            // pairwise noise differences; formulation II passes the raw
            // channels. The leader is noiseless; its acceleration jumps
            // enter the third channel as one-step pulses.
            let w = match &platoon.gains.extracted {
                crate::platoon::ExtractedGains::I {
                    leader_weights,
                    weights,
                    ..
                } => {
                    let mut w1 = leader_weights[slot] * d[0];
                    let mut w2 = leader_weights[slot] * d[1];
                    for (other_slot, &other_id) in platoon.members.iter().enumerate() {
                        if other_slot != slot {
                            let wij = weights[slot][other_slot];
                            if wij != 0.0 {
                                w1 += wij * (d[0] - disturbances[other_id][0]);
                                w2 += wij * (d[1] - disturbances[other_id][1]);
                            }
                        }
                    }
                    [w1, w2, d[2] - jerk]
                }
                crate::platoon::ExtractedGains::II { .. } => [d[0], d[1], d[2] - jerk],
            };

            let series = &mut trace.vehicles[m];
            series.position.push(vehicle.state.position);
            series.velocity.push(vehicle.state.velocity);
            series.acceleration.push(vehicle.state.acceleration);
            series.error_location.push(errors[slot].location);
            series.error_velocity.push(errors[slot].velocity);
            series.error_acceleration.push(errors[slot].acceleration);
            series.virtual_input.push(g);
            series.actuator_input.push(u);
            series.disturbance[0].push(w[0]);
            series.disturbance[1].push(w[1]);
            series.disturbance[2].push(w[2]);
            sampled[m] = true;

            if !vehicle.state.position.is_finite()
                || !vehicle.state.velocity.is_finite()
                || !vehicle.state.acceleration.is_finite()
            {
                trace.aborted = Some(format!("non-finite state of vehicle {m} at t = {t:.4}"));
            }
        }

        // Collision check along the platoon order (front to back).
        let mut front_pos = leader.position;
        let mut front_len = scenario.leader_length;
        let mut front_id = usize::MAX;
        for &m in &platoon.members {
            let x = world.vehicles[m].state.position;
            if front_pos - x <= front_len {
                let already = trace.events.iter().any(|e| {
                    matches!(e, EventLog::Collision { front, back, .. }
                        if *front == front_id && *back == m)
                });
                if !already {
                    trace.events.push(EventLog::Collision {
                        t,
                        front: front_id,
                        back: m,
                    });
                }
            }
            front_pos = x;
            front_len = world.vehicles[m].params.length;
            front_id = m;
        }
    }
    // Keep padded series aligned for vehicles outside any platoon membership
    // (split leaders keep logging their physical state).
    for (m, was_sampled) in sampled.iter().enumerate() {
        if !was_sampled {
            let vehicle = &world.vehicles[m];
            let series = &mut trace.vehicles[m];
            series.position.push(vehicle.state.position);
            series.velocity.push(vehicle.state.velocity);
            series.acceleration.push(vehicle.state.acceleration);
            series.error_location.push(f64::NAN);
            series.error_velocity.push(f64::NAN);
            series.error_acceleration.push(f64::NAN);
            series.virtual_input.push(f64::NAN);
            series.actuator_input.push(f64::NAN);
            series.disturbance[0].push(f64::NAN);
            series.disturbance[1].push(f64::NAN);
            series.disturbance[2].push(f64::NAN);
        }
    }
    Ok(())
}

fn step_platoon(
    world: &mut World,
    platoon_idx: usize,
    scenario: &Scenario,
    t: f64,
    h: f64,
    disturbances: &[[f64; 3]],
) -> Result<()> {
    let platoon = &world.platoons[platoon_idx];
    if platoon.members.is_empty() {
        // A detached singleton still moves: integrate its frozen-leader
        // motion implicitly (no members to advance).
        return Ok(());
    }
    let members = platoon.members.clone();
    let params: Vec<VehicleParams> = members
        .iter()
        .map(|&m| world.vehicles[m].params.clone())
        .collect();
    let d: Vec<[f64; 3]> = members.iter().map(|&m| disturbances[m]).collect();
    let mut states: Vec<VehicleState> = members
        .iter()
        .map(|&m| world.vehicles[m].state)
        .collect();

    // Stacked RK4 with the feedback law evaluated inside each stage.
    let derivative = |tt: f64, st: &[VehicleState]| -> Result<Vec<Vector3<f64>>> {
        let platoon = &world.platoons[platoon_idx];
        let leader = platoon
            .leader
            .state(&scenario.leader, scenario.leader_start, tt)?;
        let errors = world.platoon_errors(platoon, st, &leader)?;
        let opts: Vec<Option<ErrorState>> = errors.iter().copied().map(Some).collect();
        let mut out = Vec::with_capacity(st.len());
        for slot in 0..st.len() {
            let g = control(slot, &platoon.gains, &opts)?;
            let u = linearizing_input(
                &params[slot],
                st[slot].velocity,
                st[slot].acceleration,
                g,
            );
            out.push(vehicle_rhs(&params[slot], &st[slot], u, &d[slot]));
        }
        Ok(out)
    };
    let advance = |base: &[VehicleState], k: &[Vector3<f64>], scale: f64| -> Vec<VehicleState> {
        base.iter()
            .zip(k)
            .map(|(s, dk)| VehicleState {
                position: s.position + scale * dk[0],
                velocity: s.velocity + scale * dk[1],
                acceleration: s.acceleration + scale * dk[2],
            })
            .collect()
    };

    let k1 = derivative(t, &states)?;
    let k2 = derivative(t + 0.5 * h, &advance(&states, &k1, 0.5 * h))?;
    let k3 = derivative(t + 0.5 * h, &advance(&states, &k2, 0.5 * h))?;
    let k4 = derivative(t + h, &advance(&states, &k3, h))?;
    for slot in 0..states.len() {
        let incr = k1[slot] + k2[slot] * 2.0 + k3[slot] * 2.0 + k4[slot];
        states[slot] = VehicleState {
            position: states[slot].position + h / 6.0 * incr[0],
            velocity: states[slot].velocity + h / 6.0 * incr[1],
            acceleration: states[slot].acceleration + h / 6.0 * incr[2],
        };
    }
    for (slot, &m) in members.iter().enumerate() {
        world.vehicles[m].state = states[slot];
    }
    Ok(())
}

/// Runs independent scenarios against the same fixed design, fanned out over
/// rayon with the `parallel` feature.
pub fn run_batch(scenarios: &[Scenario], result: &SynthesisResult) -> Vec<Result<SimTrace>> {
    par::map_indexed(scenarios, |_, sc| run(sc, &SimDesign::Fixed(result)))
}

/// Aggregate trace metrics.
#[derive(Debug, Clone)]
pub struct Metrics {
    /// Per-vehicle L2 norm of the error triple.
    pub per_vehicle_error_l2: Vec<f64>,
    /// Stacked error L2 norm.
    pub error_l2: f64,
    /// Stacked disturbance L2 norm.
    pub disturbance_l2: f64,
    /// `error_l2 / disturbance_l2`, `None` for disturbance-free runs.
    pub empirical_gain: Option<f64>,
    /// Smallest front-bumper-to-front-bumper margin beyond the front
    /// vehicle's length, over all adjacent pairs and times.
    pub min_spacing: f64,
    /// Mean location error over the final tenth of the horizon.
    pub steady_state_offsets: Vec<f64>,
    /// Peak absolute location error per vehicle (report-only indicator of
    /// downstream attenuation).
    pub peak_location_errors: Vec<f64>,
}

fn trapezoid_l2(series: &[&[f64]], step: f64) -> f64 {
    // Integral of the squared stacked signal, NaN-padded samples skipped.
    let len = series.first().map_or(0, |s| s.len());
    let mut acc = 0.0;
    let sq = |k: usize| -> f64 {
        series
            .iter()
            .map(|s| {
                let v = s[k];
                if v.is_finite() {
                    v * v
                } else {
                    0.0
                }
            })
            .sum::<f64>()
    };
    if len < 2 {
        return 0.0;
    }
    let mut prev = sq(0);
    for k in 1..len {
        let cur = sq(k);
        acc += 0.5 * (prev + cur) * step;
        prev = cur;
    }
    acc.sqrt()
}

/// Computes the aggregate metrics of a completed trace.
pub fn metrics(trace: &SimTrace) -> Metrics {
    let step = trace.step;
    let mut per_vehicle_error_l2 = Vec::with_capacity(trace.vehicles.len());
    let mut error_channels: Vec<&[f64]> = Vec::new();
    let mut noise_channels: Vec<&[f64]> = Vec::new();
    for v in &trace.vehicles {
        per_vehicle_error_l2.push(trapezoid_l2(
            &[&v.error_location, &v.error_velocity, &v.error_acceleration],
            step,
        ));
        error_channels.push(&v.error_location);
        error_channels.push(&v.error_velocity);
        error_channels.push(&v.error_acceleration);
        noise_channels.push(&v.disturbance[0]);
        noise_channels.push(&v.disturbance[1]);
        noise_channels.push(&v.disturbance[2]);
    }
    let error_l2 = trapezoid_l2(&error_channels, step);
    let disturbance_l2 = trapezoid_l2(&noise_channels, step);
    let empirical_gain = if disturbance_l2 > 0.0 {
        Some(error_l2 / disturbance_l2)
    } else {
        None
    };

    // Min spacing over sorted positions at each sample.
    let mut min_spacing = f64::INFINITY;
    for k in 0..trace.time.len() {
        let mut column: Vec<(f64, f64)> =
            vec![(trace.leader_position[k], trace.leader_length)];
        for v in &trace.vehicles {
            let x = v.position[k];
            if x.is_finite() {
                column.push((x, v.length));
            }
        }
        column.sort_by(|a, b| b.0.total_cmp(&a.0));
        for pair in column.windows(2) {
            let gap = pair[0].0 - pair[1].0 - pair[0].1;
            min_spacing = min_spacing.min(gap);
        }
    }

    let len = trace.time.len();
    let tail = (len as f64 * 0.9) as usize;
    let mut steady_state_offsets = Vec::with_capacity(trace.vehicles.len());
    let mut peak_location_errors = Vec::with_capacity(trace.vehicles.len());
    for v in &trace.vehicles {
        let finite: Vec<f64> = v.error_location[tail.min(len)..]
            .iter()
            .copied()
            .filter(|x| x.is_finite())
            .collect();
        let mean = if finite.is_empty() {
            f64::NAN
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        steady_state_offsets.push(mean);
        peak_location_errors.push(
            v.error_location
                .iter()
                .filter(|x| x.is_finite())
                .fold(0.0f64, |m, x| m.max(x.abs())),
        );
    }

    Metrics {
        per_vehicle_error_l2,
        error_l2,
        disturbance_l2,
        empirical_gain,
        min_spacing,
        steady_state_offsets,
        peak_location_errors,
    }
}
