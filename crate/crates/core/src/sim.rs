//! Deterministic leader-follower simulation.
//!
//! Every agent is a double integrator driven by a PD tracker. Leaders track
//! the planner's desired positions; followers track the weighted sum of their
//! three in-neighbors' positions as seen in the snapshot taken at the previous
//! control tick. Followers never see `Q`, `d` or any agent outside their
//! in-neighbor set. Global desired positions are computed for logging only.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formation::{FormationMatrices, ReferenceConfig, Role};
use crate::kernel::{apply_at, KernelError};
use crate::phases::PhaseSchedule;
use crate::safety::{check_schedule_safety, SafetyReport};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
    #[error("snapshot for `{follower}` is missing neighbor `{neighbor}`")]
    MissingNeighbor { follower: String, neighbor: String },
    #[error("non-finite agent state")]
    NonFinite,
    #[error("agent `{agent}` diverged at t = {t} s (position {position:?})")]
    Diverged { agent: String, t: f64, position: [f64; 3] },
    #[error("schedule fails the safety check: min strain {} < bound {}", .0.min_strain_observed, .0.lambda_min_bound)]
    UnsafeSchedule(SafetyReport),
    #[error("agent `{0}` is not part of the formation")]
    UnknownAgent(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl AgentState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self { position, velocity: Vector3::zeros() }
    }

    fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    /// Integration step, seconds.
    pub dt: f64,
    /// Snapshot and reference update rate, Hz.
    pub control_rate: f64,
    /// Position gain, 1/s².
    pub kp: f64,
    /// Velocity gain, 1/s.
    pub kd: f64,
    /// Simulated time, seconds.
    pub duration: f64,
    /// Extra control ticks of latency on neighbor snapshots.
    pub delay_ticks: usize,
    /// Feed the finite-difference rate of each agent's own reference signal
    /// forward into the velocity term.
    pub velocity_feedforward: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        Self { dt: 1e-3, control_rate: 100.0, kp: 25.0, kd: 10.0, duration: 40.0, delay_ticks: 0, velocity_feedforward: false }
    }
}

impl SimParams {
    /// Number of integration steps per control tick.
    pub fn substeps(&self) -> Result<usize, SimError> {
        let bad = |msg: String| Err(SimError::InvalidParams(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.control_rate > 0.0 && self.control_rate.is_finite()) {
            return bad(format!("control_rate must be positive, got {}", self.control_rate));
        }
        if !(self.kp > 0.0 && self.kd > 0.0) {
            return bad(format!("gains must be positive, got kp = {}, kd = {}", self.kp, self.kd));
        }
        if !(self.duration >= 0.0) {
            return bad(format!("duration must be non-negative, got {}", self.duration));
        }
        let ratio = 1.0 / (self.dt * self.control_rate);
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * n {
            return bad(format!("control period 1/{} is not a whole number of dt = {} steps", self.control_rate, self.dt));
        }
        Ok(n as usize)
    }
}

/// Reference signal handed to an agent's tracker for one control period.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Reference {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl Reference {
    pub fn hold(position: Vector3<f64>) -> Self {
        Self { position, velocity: Vector3::zeros() }
    }
}

/// Weighted sum of the listed neighbors' positions from `snapshot`.
pub fn follower_reference(
    snapshot: &BTreeMap<String, Vector3<f64>>,
    neighbors: &[String; 3],
    weights: &[f64; 3],
) -> Result<Vector3<f64>, SimError> {
    let mut acc = Vector3::zeros();
    for (id, w) in neighbors.iter().zip(weights) {
        let r = snapshot
            .get(id)
            .ok_or_else(|| SimError::MissingNeighbor { follower: String::new(), neighbor: id.clone() })?;
        acc += r * *w;
    }
    Ok(acc)
}

/// One semi-implicit Euler step of `r̈ = kp (r_ref − r) + kd (ṙ_ref − ṙ)`.
pub fn agent_step(state: &AgentState, reference: &Reference, params: &SimParams) -> Result<AgentState, SimError> {
    let accel = (reference.position - state.position) * params.kp + (reference.velocity - state.velocity) * params.kd;
    let velocity = state.velocity + accel * params.dt;
    let next = AgentState { position: state.position + velocity * params.dt, velocity };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(SimError::NonFinite)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    /// Agent ids in matrix ordering.
    pub ids: Vec<String>,
    pub roles: Vec<Role>,
    pub times: Vec<f64>,
    /// `actual[tick][agent]`.
    pub actual: Vec<Vec<Vector3<f64>>>,
    /// Reference handed to each tracker at the tick.
    pub reference: Vec<Vec<Vector3<f64>>>,
    /// Global desired positions `Q a + d`.
    pub desired: Vec<Vec<Vector3<f64>>>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn agent_count(&self) -> usize {
        self.ids.len()
    }
}

/// Pre-run gate: the schedule must keep its strains above `bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyGate {
    pub bound: f64,
    pub d_min: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Added to the reference position of an agent to form its initial position.
    pub initial_offsets: BTreeMap<String, Vector3<f64>>,
    pub safety: Option<SafetyGate>,
}

pub fn run_simulation(
    cfg: &ReferenceConfig,
    matrices: &FormationMatrices,
    schedule: &PhaseSchedule,
    params: &SimParams,
    options: &RunOptions,
) -> Result<SimTrace, SimError> {
    let substeps = params.substeps()?;
    if let Some(gate) = options.safety {
        let report = check_schedule_safety(schedule, gate.bound, gate.d_min, params.control_rate);
        if !report.pass {
            return Err(SimError::UnsafeSchedule(report));
        }
    }

    let ids = matrices.order.clone();
    let n = ids.len();
    let index = |id: &str| matrices.index_of(id).ok_or_else(|| SimError::UnknownAgent(id.to_owned()));
    let roles: Vec<Role> = ids.iter().map(|id| cfg.agent(id).map(|a| a.role)).collect::<Option<_>>().ok_or_else(|| {
        SimError::UnknownAgent(ids.iter().find(|id| cfg.agent(id).is_none()).cloned().unwrap_or_default())
    })?;
    let anchors = cfg.ordered_positions();

    // (follower index, neighbor ids, weights)
    let followers: Vec<(usize, &[String; 3], &[f64; 3])> = matrices
        .weights
        .iter()
        .map(|c| Ok((index(&c.follower)?, &c.agents, &c.values)))
        .collect::<Result<_, SimError>>()?;
    let neighbor_indices: Vec<[usize; 3]> = followers
        .iter()
        .map(|(_, nbrs, _)| Ok([index(&nbrs[0])?, index(&nbrs[1])?, index(&nbrs[2])?]))
        .collect::<Result<_, SimError>>()?;

    let mut states: Vec<AgentState> = anchors.iter().map(|&a| AgentState::at_rest(a)).collect();
    for (id, offset) in &options.initial_offsets {
        states[index(id)?].position += offset;
    }

    let ticks = (params.duration * params.control_rate).round() as usize;
    let mut trace = SimTrace {
        ids: ids.clone(),
        roles: roles.clone(),
        times: Vec::with_capacity(ticks + 1),
        actual: Vec::with_capacity(ticks + 1),
        reference: Vec::with_capacity(ticks + 1),
        desired: Vec::with_capacity(ticks + 1),
    };
    let mut previous_refs: Option<Vec<Vector3<f64>>> = None;

    for k in 0..=ticks {
        let t = k as f64 / params.control_rate;
        let positions: Vec<Vector3<f64>> = states.iter().map(|s| s.position).collect();

        let (q, d) = schedule.transform_at(t)?;
        let desired: Vec<Vector3<f64>> = anchors.iter().map(|a| apply_at(&q, &d, a)).collect();

        let mut refs = vec![Vector3::zeros(); n];
        for i in 0..n {
            if roles[i] == Role::Leader {
                refs[i] = desired[i];
            }
        }
        let stale = k.saturating_sub(1 + params.delay_ticks);
        let snapshot = if stale < trace.actual.len() { &trace.actual[stale] } else { &positions };
        for ((fi, nbrs, weights), idx) in followers.iter().zip(&neighbor_indices) {
            let view: BTreeMap<String, Vector3<f64>> =
                nbrs.iter().zip(idx).map(|(id, &j)| (id.clone(), snapshot[j])).collect();
            refs[*fi] = follower_reference(&view, nbrs, weights).map_err(|e| match e {
                SimError::MissingNeighbor { neighbor, .. } => {
                    SimError::MissingNeighbor { follower: ids[*fi].clone(), neighbor }
                }
                other => other,
            })?;
        }

        let targets: Vec<Reference> = match (&previous_refs, params.velocity_feedforward) {
            (Some(prev), true) => refs
                .iter()
                .zip(prev)
                .map(|(r, p)| Reference { position: *r, velocity: (r - p) * params.control_rate })
                .collect(),
            _ => refs.iter().map(|&r| Reference::hold(r)).collect(),
        };

        trace.times.push(t);
        trace.actual.push(positions);
        trace.reference.push(refs.clone());
        trace.desired.push(desired);
        previous_refs = Some(refs);

        if k == ticks {
            break;
        }
        for _ in 0..substeps {
            for (i, state) in states.iter_mut().enumerate() {
                *state = agent_step(state, &targets[i], params).map_err(|_| SimError::Diverged {
                    agent: ids[i].clone(),
                    t,
                    position: [state.position.x, state.position.y, state.position.z],
                })?;
            }
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formation::{build_formation, table_one_config};
    use crate::phases::table_two_schedule;
    use approx::assert_abs_diff_eq;

    fn ids(names: [&str; 3]) -> [String; 3] {
        names.map(str::to_owned)
    }

    #[test]
    fn reference_partition_of_unity() {
        let one = Vector3::new(1.0, 1.0, 1.0);
        let snap: BTreeMap<String, Vector3<f64>> = ["a", "b", "c"].iter().map(|s| (s.to_string(), one)).collect();
        let r = follower_reference(&snap, &ids(["a", "b", "c"]), &[0.2, 0.3, 0.5]).unwrap();
        assert_abs_diff_eq!(r, one, epsilon = 1e-15);
    }

    #[test]
    fn reference_reproduces_cf2() {
        let cfg = table_one_config();
        let snap: BTreeMap<String, Vector3<f64>> =
            ["cf1", "cf3", "cf4"].iter().map(|s| (s.to_string(), cfg.reference_position(s).unwrap())).collect();
        let r = follower_reference(&snap, &ids(["cf1", "cf3", "cf4"]), &[0.5, 0.25, 0.25]).unwrap();
        assert_abs_diff_eq!(r, Vector3::new(0.0, 0.25, 1.0), epsilon = 1e-15);

        let v = Vector3::new(0.3, -1.2, 0.05);
        let shifted: BTreeMap<String, Vector3<f64>> = snap.iter().map(|(k, p)| (k.clone(), p + v)).collect();
        let rs = follower_reference(&shifted, &ids(["cf1", "cf3", "cf4"]), &[0.5, 0.25, 0.25]).unwrap();
        assert_abs_diff_eq!(rs - r, v, epsilon = 1e-15);
    }

    #[test]
    fn reference_missing_neighbor() {
        let snap = BTreeMap::from([("a".to_string(), Vector3::zeros())]);
        let err = follower_reference(&snap, &ids(["a", "b", "c"]), &[0.2, 0.3, 0.5]).unwrap_err();
        assert!(matches!(err, SimError::MissingNeighbor { neighbor, .. } if neighbor == "b"));
    }

    #[test]
    fn equilibrium_is_fixed() {
        let p = Vector3::new(0.1, 0.2, 1.0);
        let s = AgentState::at_rest(p);
        let next = agent_step(&s, &Reference::hold(p), &SimParams::default()).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn converges_to_constant_reference() {
        let params = SimParams::default();
        let target = Reference::hold(Vector3::new(1.0, -2.0, 1.5));
        let mut s = AgentState { position: Vector3::zeros(), velocity: Vector3::new(0.5, 0.0, -0.3) };
        // slow time constant is 1/5 s; run for 5 of them and then some
        for _ in 0..5000 {
            s = agent_step(&s, &target, &params).unwrap();
        }
        assert!((s.position - target.position).norm() < 1e-4);
        assert!(s.velocity.norm() < 1e-3);
    }

    #[test]
    fn critically_damped_step_has_no_overshoot() {
        let params = SimParams { kp: 25.0, kd: 10.0, ..SimParams::default() };
        let target = Reference::hold(Vector3::new(1.0, 0.0, 0.0));
        let mut s = AgentState::default();
        let mut worst = f64::NEG_INFINITY;
        let mut worst_gap: f64 = 0.0;
        for k in 1..=10_000 {
            s = agent_step(&s, &target, &params).unwrap();
            worst = worst.max(s.position.x);
            // closed form: 1 - (1 + ωt) e^{-ωt}, ω = 5
            let t = k as f64 * params.dt;
            let exact = 1.0 - (1.0 + 5.0 * t) * (-5.0 * t).exp();
            worst_gap = worst_gap.max((s.position.x - exact).abs());
        }
        assert!(worst <= 1.0 + 1e-6, "overshoot {}", worst - 1.0);
        assert!(worst_gap < 5e-3);
    }

    #[test]
    fn non_finite_is_reported() {
        let s = AgentState::at_rest(Vector3::new(f64::NAN, 0.0, 0.0));
        assert!(matches!(agent_step(&s, &Reference::default(), &SimParams::default()), Err(SimError::NonFinite)));
    }

    #[test]
    fn params_validation() {
        assert_eq!(SimParams::default().substeps().unwrap(), 10);
        assert!(SimParams { dt: 0.003, ..SimParams::default() }.substeps().is_err());
        assert!(SimParams { kp: 0.0, ..SimParams::default() }.substeps().is_err());
        assert!(SimParams { dt: -1.0, ..SimParams::default() }.substeps().is_err());
    }

    #[test]
    fn identity_hold_keeps_agents_still() {
        let cfg = table_one_config();
        let m = build_formation(&cfg).unwrap();
        let s = PhaseSchedule { phases: vec![], translation: None, altitude: 1.0 };
        let params = SimParams { duration: 2.0, ..SimParams::default() };
        let trace = run_simulation(&cfg, &m, &s, &params, &RunOptions::default()).unwrap();
        assert_eq!(trace.len(), 201);
        let anchors = cfg.ordered_positions();
        for tick in &trace.actual {
            for (p, a) in tick.iter().zip(&anchors) {
                assert_abs_diff_eq!(p, a, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn deterministic_and_finite() {
        let cfg = table_one_config();
        let m = build_formation(&cfg).unwrap();
        let s = table_two_schedule();
        let params = SimParams { duration: 12.0, ..SimParams::default() };
        let a = run_simulation(&cfg, &m, &s, &params, &RunOptions::default()).unwrap();
        let b = run_simulation(&cfg, &m, &s, &params, &RunOptions::default()).unwrap();
        assert_eq!(a, b);
        for tick in &a.actual {
            for p in tick {
                assert!(p.iter().all(|v| v.is_finite()));
                assert_abs_diff_eq!(p.z, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn unsafe_schedule_is_refused() {
        let cfg = table_one_config();
        let m = build_formation(&cfg).unwrap();
        let opts = RunOptions { safety: Some(SafetyGate { bound: 0.6, d_min: 0.5 }), ..RunOptions::default() };
        let err = run_simulation(&cfg, &m, &table_two_schedule(), &SimParams::default(), &opts).unwrap_err();
        assert!(matches!(err, SimError::UnsafeSchedule(_)));
    }
}
