//! Principal-strain safety bound and schedule certification.

use serde::Serialize;

use crate::formation::ReferenceConfig;
use crate::kernel::KernelError;
use crate::phases::{tick_times, PhaseSchedule};

/// Lower bound on the principal strains that keeps agents of radius
/// `radius`, tracking within `delta`, from colliding: `2(δ + r) / d_min`.
pub fn min_scaling_bound(delta: f64, radius: f64, d_min: f64) -> Result<f64, KernelError> {
    if !(d_min > 0.0) {
        return Err(KernelError::Domain { name: "d_min", requirement: "positive", value: d_min });
    }
    if !(delta >= 0.0) {
        return Err(KernelError::Domain { name: "delta", requirement: "non-negative", value: delta });
    }
    if !(radius >= 0.0) {
        return Err(KernelError::Domain { name: "radius", requirement: "non-negative", value: radius });
    }
    Ok(2.0 * (delta + radius) / d_min)
}

/// Minimum pairwise distance between reference positions; `+∞` with fewer
/// than two agents.
pub fn min_reference_distance(cfg: &ReferenceConfig) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in cfg.agents.iter().enumerate() {
        for b in &cfg.agents[i + 1..] {
            best = best.min((a.planar() - b.planar()).norm());
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyReport {
    pub d_min: f64,
    pub lambda_min_bound: f64,
    pub min_strain_observed: f64,
    pub pass: bool,
    pub violations: Vec<Interval>,
}

/// Samples `min(λ1, λ2)` across the schedule at `tick_rate` and compares it
/// with `bound`. `d_min` is carried through for reporting.
pub fn check_schedule_safety(schedule: &PhaseSchedule, bound: f64, d_min: f64, tick_rate: f64) -> SafetyReport {
    let mut times = tick_times(schedule.start_time(), schedule.end_time(), tick_rate);
    // phase boundaries are sampled even when they fall between ticks
    times.extend(schedule.phases.iter().flat_map(|p| [p.t0, p.tf]));
    times.sort_by(f64::total_cmp);
    times.dedup();

    let mut min_strain = f64::INFINITY;
    let mut violations: Vec<Interval> = Vec::new();
    let mut open: Option<Interval> = None;
    for t in times {
        let strain = schedule.coords_at(t).min_strain();
        min_strain = min_strain.min(strain);
        if strain < bound {
            match open.as_mut() {
                Some(iv) => iv.t_end = t,
                None => open = Some(Interval { t_start: t, t_end: t }),
            }
        } else if let Some(iv) = open.take() {
            violations.push(iv);
        }
    }
    violations.extend(open);

    SafetyReport {
        d_min,
        lambda_min_bound: bound,
        min_strain_observed: min_strain,
        pass: violations.is_empty(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formation::{table_one_config, AgentSpec, Role};
    use crate::kernel::AtCoordinates;
    use crate::phases::{table_two_schedule, Phase};
    use std::collections::BTreeMap;

    #[test]
    fn bound_arithmetic() {
        assert_eq!(min_scaling_bound(0.01, 0.065, 0.5).unwrap(), 0.3);
        assert_eq!(min_scaling_bound(0.0, 0.0, 0.7).unwrap(), 0.0);
        assert_eq!(min_scaling_bound(0.05, 0.05, 0.4).unwrap(), 0.5);
        assert!(min_scaling_bound(0.01, 0.065, 0.0).is_err());
        assert!(min_scaling_bound(-0.01, 0.065, 0.5).is_err());
    }

    #[test]
    fn reference_distances() {
        let mut cfg = table_one_config();
        assert_eq!(min_reference_distance(&cfg), 0.5);
        cfg.agents[3].x = 0.1;
        assert!((min_reference_distance(&cfg) - 0.35).abs() < 1e-15);

        let pair = ReferenceConfig {
            agents: vec![AgentSpec::new("a", Role::Leader, 0.0, 0.0), AgentSpec::new("b", Role::Leader, 0.6, 0.8)],
            altitude: 1.0,
            in_neighbors: BTreeMap::new(),
        };
        assert_eq!(min_reference_distance(&pair), 1.0);
    }

    #[test]
    fn table_two_passes() {
        let r = check_schedule_safety(&table_two_schedule(), 0.3, 0.5, 100.0);
        assert_eq!(r.min_strain_observed, 0.5);
        assert!(r.pass);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn deep_contraction_fails_with_interval() {
        let unit = AtCoordinates::IDENTITY;
        let squeezed = AtCoordinates::shape(0.2, 0.2, 0.0, 0.0);
        let s = PhaseSchedule {
            phases: vec![
                Phase { t0: 0.0, tf: 10.0, start: unit, end: squeezed },
                Phase { t0: 10.0, tf: 20.0, start: squeezed, end: unit },
            ],
            translation: None,
            altitude: 1.0,
        };
        let r = check_schedule_safety(&s, 0.3, 0.5, 100.0);
        assert!(!r.pass);
        assert_eq!(r.min_strain_observed, 0.2);
        assert_eq!(r.violations.len(), 1);
        let iv = r.violations[0];
        // β(s) = 7/8 solves 1 - 0.8 β = 0.3; symmetric around t = 10
        assert!(iv.t_start > 6.0 && iv.t_start < 10.0);
        assert!((iv.t_start + iv.t_end - 20.0).abs() < 0.011);
    }

    #[test]
    fn identity_schedule_passes_any_bound_up_to_one() {
        let s = PhaseSchedule { phases: vec![], translation: None, altitude: 1.0 };
        let r = check_schedule_safety(&s, 1.0, 0.5, 100.0);
        assert!(r.pass);
        assert_eq!(r.min_strain_observed, 1.0);
    }
}
