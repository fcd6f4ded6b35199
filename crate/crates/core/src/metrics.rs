//! Post-run metrics: tracking error, separation, corridor clearance,
//! convergence and the strain-bound safety chain.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formation::{FormationMatrices, ReferenceConfig, Role};
use crate::phases::PhaseSchedule;
use crate::safety::{check_schedule_safety, min_reference_distance, min_scaling_bound};
use crate::sim::SimTrace;

/// Agents are modeled as circles of this radius in the plane.
pub const DEFAULT_AGENT_RADIUS: f64 = 0.065;

/// Final-window residual below which a run counts as converged.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-4;

/// Fraction of the post-schedule hold used as the convergence window.
pub const CONVERGENCE_WINDOW_FRACTION: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum HarnessError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("leader `{leader}` moves inside the convergence window [{t_start}, {t_end}]")]
    LeadersMoving { leader: String, t_start: f64, t_end: f64 },
    #[error("convergence window [{t_start}, {t_end}] contains no samples")]
    EmptyWindow { t_start: f64, t_end: f64 },
    #[error("corridor width must be positive, got {0}")]
    CorridorWidth(f64),
}

/// Axis-aligned channel `x ∈ [x_start, x_end]` between two walls parallel to x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corridor {
    pub x_start: f64,
    pub x_end: f64,
    pub width: f64,
    #[serde(default)]
    pub center_y: f64,
}

impl Corridor {
    pub fn new(x_start: f64, x_end: f64, width: f64, center_y: f64) -> Result<Self, HarnessError> {
        let c = Self { x_start, x_end, width, center_y };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.width > 0.0 {
            Ok(())
        } else {
            Err(HarnessError::CorridorWidth(self.width))
        }
    }

    pub fn walls(&self) -> (f64, f64) {
        (self.center_y - 0.5 * self.width, self.center_y + 0.5 * self.width)
    }

    fn spans(&self, x: f64) -> bool {
        x >= self.x_start && x <= self.x_end
    }
}

/// Minimum center-to-center distance over all ticks and agent pairs; `+∞`
/// when there are no pairs.
pub fn pairwise_min_distance(trace: &SimTrace) -> f64 {
    let mut best = f64::INFINITY;
    for tick in &trace.actual {
        for (i, a) in tick.iter().enumerate() {
            for b in &tick[i + 1..] {
                best = best.min((a - b).norm());
            }
        }
    }
    best
}

/// Minimum wall clearance, surface to wall, of agents inside the corridor's
/// x-span. Negative means penetration; `+∞` if no agent ever enters the span.
pub fn corridor_clearance(trace: &SimTrace, corridor: &Corridor, agent_radius: f64) -> f64 {
    let (low, high) = corridor.walls();
    trace
        .actual
        .iter()
        .flatten()
        .filter(|p| corridor.spans(p.x))
        .map(|p| (p.y - low).min(high - p.y) - agent_radius)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentTracking {
    pub id: String,
    pub max_error: f64,
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingErrors {
    pub per_agent: Vec<AgentTracking>,
    /// Largest `‖r_i − p_i‖` over agents and time.
    pub measured_delta: f64,
}

/// Tracking error of the actual positions against the global desired positions.
pub fn tracking_error_metrics(trace: &SimTrace) -> TrackingErrors {
    let mut per_agent: Vec<AgentTracking> =
        trace.ids.iter().map(|id| AgentTracking { id: id.clone(), max_error: 0.0, mean_error: 0.0 }).collect();
    for (actual, desired) in trace.actual.iter().zip(&trace.desired) {
        for ((entry, r), p) in per_agent.iter_mut().zip(actual).zip(desired) {
            let e = (r - p).norm();
            entry.max_error = entry.max_error.max(e);
            entry.mean_error += e;
        }
    }
    let ticks = trace.len().max(1) as f64;
    for entry in &mut per_agent {
        entry.mean_error /= ticks;
    }
    let measured_delta = per_agent.iter().map(|a| a.max_error).fold(0.0, f64::max);
    TrackingErrors { per_agent, measured_delta }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Convergence {
    pub converged: bool,
    /// Largest distance between a follower's window-mean position and its
    /// steady state `H x_L`.
    pub residual: f64,
}

/// Compares the mean follower positions over `[t_start, end]` with the
/// follower rows of `H x_L`, using the leaders' desired positions in the window.
pub fn convergence_check(
    trace: &SimTrace,
    matrices: &FormationMatrices,
    t_start: f64,
    tolerance: f64,
) -> Result<Convergence, HarnessError> {
    let t_end = *trace.times.last().ok_or(HarnessError::EmptyTrace)?;
    let window: Vec<usize> = (0..trace.len()).filter(|&k| trace.times[k] >= t_start - 1e-12).collect();
    let Some(&first) = window.first() else {
        return Err(HarnessError::EmptyWindow { t_start, t_end });
    };

    let leader_idx: Vec<usize> = (0..trace.agent_count()).filter(|&i| trace.roles[i] == Role::Leader).collect();
    for &i in &leader_idx {
        let p0 = trace.desired[first][i];
        if window.iter().any(|&k| (trace.desired[k][i] - p0).amax() > 1e-12) {
            return Err(HarnessError::LeadersMoving { leader: trace.ids[i].clone(), t_start, t_end });
        }
    }
    let leaders = [0, 1, 2].map(|j| leader_idx.get(j).map(|&i| trace.desired[first][i]).unwrap_or_default());
    let steady = matrices.steady_state(&leaders);

    let mut residual: f64 = 0.0;
    for i in (0..trace.agent_count()).filter(|&i| trace.roles[i] == Role::Follower) {
        let row = matrices.index_of(&trace.ids[i]).unwrap_or(i);
        let mean: Vector3<f64> = window.iter().map(|&k| trace.actual[k][i]).sum::<Vector3<f64>>() / window.len() as f64;
        residual = residual.max((mean - steady[row]).norm());
    }
    Ok(Convergence { converged: residual <= tolerance, residual })
}

/// Outcome of the strain-bound chain `δ → λ_min → min strain ≥ λ_min →
/// separation ≥ 2r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SafetyVerdict {
    pub lambda_min_required: f64,
    pub strain_condition: bool,
    pub separation_condition: bool,
    pub pass: bool,
}

pub fn safety_chain(measured_delta: f64, agent_radius: f64, d_min: f64, min_strain: f64, min_pairwise: f64) -> SafetyVerdict {
    let lambda_min_required = min_scaling_bound(measured_delta, agent_radius, d_min).unwrap_or(f64::INFINITY);
    let strain_condition = min_strain >= lambda_min_required;
    let separation_condition = min_pairwise >= 2.0 * agent_radius;
    SafetyVerdict {
        lambda_min_required,
        strain_condition,
        separation_condition,
        pass: strain_condition && separation_condition,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub measured_delta: f64,
    pub min_pairwise_distance: f64,
    pub min_corridor_clearance: f64,
    pub converged: bool,
    pub residual: Option<f64>,
    pub lambda_min_required: f64,
    pub min_strain_commanded: f64,
    pub safety_pass: bool,
}

impl RunMetrics {
    /// Safe, converged and clear of the corridor walls.
    pub fn passed(&self) -> bool {
        self.safety_pass && self.converged && self.min_corridor_clearance > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationSettings<'a> {
    pub matrices: &'a FormationMatrices,
    pub agent_radius: f64,
    pub corridor: Option<&'a Corridor>,
    pub control_rate: f64,
    pub convergence_tolerance: f64,
}

/// Window used by [`validate_run`]: the last 10% of the hold after the
/// schedule's final time. `None` if the trace ends before the schedule does.
pub fn convergence_window_start(trace: &SimTrace, schedule: &PhaseSchedule) -> Option<f64> {
    let end = *trace.times.last()?;
    let hold_start = schedule.end_time().max(trace.times[0]);
    (end > hold_start).then_some(end - CONVERGENCE_WINDOW_FRACTION * (end - hold_start))
}

pub fn validate_run(
    trace: &SimTrace,
    cfg: &ReferenceConfig,
    schedule: &PhaseSchedule,
    settings: &ValidationSettings<'_>,
) -> RunMetrics {
    let tracking = tracking_error_metrics(trace);
    let min_pairwise = pairwise_min_distance(trace);
    let clearance = settings
        .corridor
        .map(|c| corridor_clearance(trace, c, settings.agent_radius))
        .unwrap_or(f64::INFINITY);

    let d_min = min_reference_distance(cfg);
    let min_strain = check_schedule_safety(schedule, 0.0, d_min, settings.control_rate).min_strain_observed;
    let verdict = safety_chain(tracking.measured_delta, settings.agent_radius, d_min, min_strain, min_pairwise);

    let convergence = convergence_window_start(trace, schedule)
        .and_then(|t0| convergence_check(trace, settings.matrices, t0, settings.convergence_tolerance).ok());

    RunMetrics {
        measured_delta: tracking.measured_delta,
        min_pairwise_distance: min_pairwise,
        min_corridor_clearance: clearance,
        converged: convergence.is_some_and(|c| c.converged),
        residual: convergence.map(|c| c.residual),
        lambda_min_required: verdict.lambda_min_required,
        min_strain_commanded: min_strain,
        safety_pass: verdict.pass,
    }
}
