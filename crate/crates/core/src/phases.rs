//! Phase schedules and leader trajectory generation.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formation::ReferenceConfig;
use crate::kernel::{apply_at, assemble_jacobian, AtCoordinates, KernelError};

/// Tolerance for phase boundaries meeting in time and in coordinates.
pub const CONTINUITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("phase {index} has tf = {tf} not after t0 = {t0}")]
    EmptyPhase { index: usize, t0: f64, tf: f64 },
    #[error("phase {index} starts at {t0} but the previous phase ends at {prev_tf}")]
    Gap { index: usize, t0: f64, prev_tf: f64 },
    #[error("phase {index} does not start where phase {} ends", index - 1)]
    Discontinuous { index: usize },
    #[error("translation ramp has tf = {tf} not after t0 = {t0}")]
    EmptyRamp { t0: f64, tf: f64 },
    #[error("tick rate must be positive, got {0}")]
    TickRate(f64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Quintic step `β(s) = 6s⁵ − 15s⁴ + 10s³`.
///
/// Inputs outside `[0, 1]` are clamped.
pub fn quintic_blend(s: f64) -> f64 {
    let s = if (0.0..=1.0).contains(&s) {
        s
    } else {
        log::debug!("quintic_blend: clamping s = {s} into [0, 1]");
        s.clamp(0.0, 1.0)
    };
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub t0: f64,
    pub tf: f64,
    pub start: AtCoordinates,
    pub end: AtCoordinates,
}

impl Phase {
    pub fn coords_at(&self, t: f64) -> AtCoordinates {
        let s = ((t - self.t0) / (self.tf - self.t0)).clamp(0.0, 1.0);
        self.start.lerp(&self.end, quintic_blend(s))
    }
}

/// A planar translation blended over its own time span and added on top of the
/// phase coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslationRamp {
    pub t0: f64,
    pub tf: f64,
    pub start: [f64; 2],
    pub end: [f64; 2],
}

impl TranslationRamp {
    pub fn offset_at(&self, t: f64) -> [f64; 2] {
        let b = quintic_blend(((t - self.t0) / (self.tf - self.t0)).clamp(0.0, 1.0));
        [self.start[0] + b * (self.end[0] - self.start[0]), self.start[1] + b * (self.end[1] - self.start[1])]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhaseSchedule {
    pub phases: Vec<Phase>,
    pub translation: Option<TranslationRamp>,
    pub altitude: f64,
}

impl PhaseSchedule {
    pub fn new(phases: Vec<Phase>, translation: Option<TranslationRamp>, altitude: f64) -> Result<Self, ScheduleError> {
        let schedule = Self { phases, translation, altitude };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        for (index, p) in self.phases.iter().enumerate() {
            if !(p.tf > p.t0) {
                return Err(ScheduleError::EmptyPhase { index, t0: p.t0, tf: p.tf });
            }
            assemble_jacobian(&p.start)?;
            assemble_jacobian(&p.end)?;
            if index > 0 {
                let prev = &self.phases[index - 1];
                if (p.t0 - prev.tf).abs() > CONTINUITY_TOLERANCE {
                    return Err(ScheduleError::Gap { index, t0: p.t0, prev_tf: prev.tf });
                }
                let (a, b) = (prev.end, p.start);
                let gaps = [a.d1 - b.d1, a.d2 - b.d2, a.lambda1 - b.lambda1, a.lambda2 - b.lambda2, a.psi_d - b.psi_d, a.psi_r - b.psi_r];
                if gaps.iter().any(|g| g.abs() > CONTINUITY_TOLERANCE) {
                    return Err(ScheduleError::Discontinuous { index });
                }
            }
        }
        if let Some(r) = &self.translation {
            if !(r.tf > r.t0) {
                return Err(ScheduleError::EmptyRamp { t0: r.t0, tf: r.tf });
            }
        }
        Ok(())
    }

    /// Time at which the motion begins.
    pub fn start_time(&self) -> f64 {
        let phase = self.phases.first().map(|p| p.t0);
        let ramp = self.translation.map(|r| r.t0);
        match (phase, ramp) {
            (Some(a), Some(b)) => a.min(b),
            (a, b) => a.or(b).unwrap_or(0.0),
        }
    }

    /// Desired final time: all coordinates are constant afterwards.
    pub fn end_time(&self) -> f64 {
        let phase = self.phases.last().map(|p| p.tf);
        let ramp = self.translation.map(|r| r.tf);
        match (phase, ramp) {
            (Some(a), Some(b)) => a.max(b),
            (a, b) => a.or(b).unwrap_or(0.0),
        }
    }

    /// Blended coordinates at time `t`, held at the first start before the
    /// schedule and at the last end after it.
    pub fn coords_at(&self, t: f64) -> AtCoordinates {
        let mut c = match self.phases.as_slice() {
            [] => AtCoordinates::IDENTITY,
            [first, ..] if t <= first.t0 => first.start,
            [.., last] if t >= last.tf => last.end,
            phases => {
                // first phase whose end is after t
                let k = phases.partition_point(|p| p.tf <= t);
                phases[k.min(phases.len() - 1)].coords_at(t)
            }
        };
        if let Some(ramp) = &self.translation {
            let [dx, dy] = ramp.offset_at(t);
            c.d1 += dx;
            c.d2 += dy;
        }
        c
    }

    /// `(Q, d)` at time `t`.
    pub fn transform_at(&self, t: f64) -> Result<(Matrix3<f64>, Vector3<f64>), KernelError> {
        let c = self.coords_at(t);
        Ok((assemble_jacobian(&c)?.jacobian, c.translation()))
    }
}

/// Sample times `t0, t0 + 1/rate, …` up to and including `tf`.
pub fn tick_times(t0: f64, tf: f64, rate: f64) -> Vec<f64> {
    let n = ((tf - t0) * rate + 1e-9).floor().max(0.0) as usize;
    (0..=n).map(|k| t0 + k as f64 / rate).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderTrajectory {
    pub leader_ids: [String; 3],
    pub times: Vec<f64>,
    /// `positions[tick][leader]`.
    pub positions: Vec<[Vector3<f64>; 3]>,
}

/// Samples the desired leader positions `p_i(t) = Q(t) a_i + d(t)` from
/// `t = 0` to `until` (defaults to the schedule's end time).
pub fn leader_trajectory(
    schedule: &PhaseSchedule,
    cfg: &ReferenceConfig,
    tick_rate: f64,
    until: Option<f64>,
) -> Result<LeaderTrajectory, ScheduleError> {
    if !(tick_rate > 0.0) {
        return Err(ScheduleError::TickRate(tick_rate));
    }
    let leaders: Vec<_> = cfg.leaders().collect();
    let ids = [0, 1, 2].map(|k| leaders.get(k).map(|a| a.id.clone()).unwrap_or_default());
    let refs = [0, 1, 2].map(|k| leaders.get(k).map(|a| Vector3::new(a.x, a.y, cfg.altitude)).unwrap_or_default());

    let times = tick_times(0.0, until.unwrap_or_else(|| schedule.end_time()), tick_rate);
    let positions = times
        .iter()
        .map(|&t| {
            let (q, d) = schedule.transform_at(t)?;
            Ok(refs.map(|a| apply_at(&q, &d, &a)))
        })
        .collect::<Result<Vec<_>, KernelError>>()?;
    Ok(LeaderTrajectory { leader_ids: ids, times, positions })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

/// Altitude at time `t` of a quintic takeoff (`Up`, ground to `z_target`) or
/// landing (`Down`, `z_target` to ground) lasting `duration`.
pub fn altitude_at(z_target: f64, duration: f64, direction: Direction, t: f64) -> f64 {
    let b = quintic_blend(t / duration);
    match direction {
        Direction::Up => z_target * b,
        Direction::Down => z_target * (1.0 - b),
    }
}

/// Sampled altitude ramp as `(t, z)` pairs.
pub fn vertical_profile(z_target: f64, duration: f64, direction: Direction, tick_rate: f64) -> Result<Vec<(f64, f64)>, KernelError> {
    if !(duration > 0.0) {
        return Err(KernelError::Domain { name: "duration", requirement: "positive", value: duration });
    }
    if !(tick_rate > 0.0) {
        return Err(KernelError::Domain { name: "tick_rate", requirement: "positive", value: tick_rate });
    }
    Ok(tick_times(0.0, duration, tick_rate)
        .into_iter()
        .map(|t| (t, altitude_at(z_target, duration, direction, t)))
        .collect())
}

/// The three AT phases of the six-agent experiment with a 4 m +x translation
/// spread over all of them.
pub fn table_two_schedule() -> PhaseSchedule {
    let unit = AtCoordinates::IDENTITY;
    let contracted = AtCoordinates::shape(0.5, 0.5, 0.0, 0.0);
    let rotated = AtCoordinates::shape(0.5, 0.5, 0.0, 0.5);
    let deformed = AtCoordinates::shape(0.6, 0.9, 0.25, 0.5);
    PhaseSchedule {
        phases: vec![
            Phase { t0: 0.0, tf: 10.0, start: unit, end: contracted },
            Phase { t0: 10.0, tf: 20.0, start: contracted, end: rotated },
            Phase { t0: 20.0, tf: 30.0, start: rotated, end: deformed },
        ],
        translation: Some(TranslationRamp { t0: 0.0, tf: 30.0, start: [0.0, 0.0], end: [4.0, 0.0] }),
        altitude: 1.0,
    }
}
