//! Random valid configurations and schedules for property tests.

use std::collections::BTreeMap;

use nalgebra::Vector2;
use rand::seq::index::sample;
use rand::Rng;

use crate::formation::{barycentric, validate_config, AgentSpec, ReferenceConfig, Role};
use crate::kernel::AtCoordinates;
use crate::phases::{Phase, PhaseSchedule, TranslationRamp};

/// Smallest barycentric coordinate a generated follower has in its neighbor
/// triangle.
pub const CONTAINMENT_MARGIN: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfigOptions {
    /// Total agent count, leaders included; at least 3.
    pub agents: usize,
    /// Neighbors may be any other agent, so follower cycles appear.
    pub allow_cycles: bool,
    /// Minimum distance between any two reference positions.
    pub min_spacing: f64,
}

impl Default for ConfigOptions {
    fn default() -> Self {
        Self { agents: 10, allow_cycles: false, min_spacing: 0.05 }
    }
}

fn leader_triangle<R: Rng>(rng: &mut R) -> [Vector2<f64>; 3] {
    let radius = rng.gen_range(1.0..3.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    [0.0, 1.0, 2.0].map(|k| {
        let theta = phase + k * std::f64::consts::TAU / 3.0 + rng.gen_range(-0.4..0.4);
        radius * Vector2::new(theta.cos(), theta.sin())
    })
}

fn interior_point<R: Rng>(rng: &mut R, tri: &[Vector2<f64>; 3]) -> Vector2<f64> {
    let raw = [rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0)];
    let sum: f64 = raw.iter().sum();
    tri.iter().zip(raw).map(|(v, w)| v * (w / sum)).sum()
}

fn contained(p: Vector2<f64>, tri: [Vector2<f64>; 3]) -> bool {
    barycentric(p, tri).is_some_and(|c| c.iter().all(|&x| x >= CONTAINMENT_MARGIN))
}

/// Draws a configuration accepted by `validate_config`. Leaders come first,
/// named `l0..l2`, followed by followers `f0..`.
pub fn random_config<R: Rng>(rng: &mut R, opts: &ConfigOptions) -> ReferenceConfig {
    assert!(opts.agents >= 3, "need at least the three leaders");
    loop {
        if let Some(cfg) = try_config(rng, opts) {
            if validate_config(&cfg).is_valid() {
                return cfg;
            }
        }
    }
}

fn try_config<R: Rng>(rng: &mut R, opts: &ConfigOptions) -> Option<ReferenceConfig> {
    let tri = leader_triangle(rng);
    let mut points: Vec<Vector2<f64>> = tri.to_vec();
    while points.len() < opts.agents {
        let p = (0..200)
            .map(|_| interior_point(rng, &tri))
            .find(|p| points.iter().all(|q| (p - q).norm() >= opts.min_spacing))?;
        points.push(p);
    }

    let ids: Vec<String> = (0..opts.agents)
        .map(|i| if i < 3 { format!("l{i}") } else { format!("f{}", i - 3) })
        .collect();
    let mut graph = BTreeMap::new();
    for i in 3..opts.agents {
        let pool: Vec<usize> = if opts.allow_cycles { (0..opts.agents).filter(|&j| j != i).collect() } else { (0..i).collect() };
        let pick = (0..200)
            .map(|_| {
                let s = sample(rng, pool.len(), 3);
                [pool[s.index(0)], pool[s.index(1)], pool[s.index(2)]]
            })
            .find(|t| contained(points[i], t.map(|j| points[j])))
            .unwrap_or([0, 1, 2]);
        graph.insert(ids[i].clone(), pick.iter().map(|&j| ids[j].clone()).collect());
    }

    let agents = points
        .iter()
        .zip(&ids)
        .enumerate()
        .map(|(i, (p, id))| AgentSpec::new(id, if i < 3 { Role::Leader } else { Role::Follower }, p.x, p.y))
        .collect();
    Some(ReferenceConfig { agents, altitude: 1.0, in_neighbors: graph })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleOptions {
    pub phases: usize,
    pub phase_duration: f64,
    pub lambda_range: (f64, f64),
    /// Limit on the translation over the whole schedule, per axis.
    pub max_translation: f64,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self { phases: 3, phase_duration: 10.0, lambda_range: (0.5, 1.2), max_translation: 2.0 }
    }
}

/// Draws a contiguous schedule starting from the identity.
pub fn random_schedule<R: Rng>(rng: &mut R, opts: &ScheduleOptions, altitude: f64) -> PhaseSchedule {
    let (lo, hi) = opts.lambda_range;
    let mut start = AtCoordinates::IDENTITY;
    let mut phases = Vec::with_capacity(opts.phases);
    for k in 0..opts.phases {
        let end = AtCoordinates::shape(
            rng.gen_range(lo..=hi),
            rng.gen_range(lo..=hi),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-1.0..1.0),
        );
        let t0 = k as f64 * opts.phase_duration;
        phases.push(Phase { t0, tf: t0 + opts.phase_duration, start, end });
        start = end;
    }
    let m = opts.max_translation;
    let translation = (m > 0.0).then(|| TranslationRamp {
        t0: 0.0,
        tf: opts.phases as f64 * opts.phase_duration,
        start: [0.0, 0.0],
        end: [rng.gen_range(-m..=m), rng.gen_range(-m..=m)],
    });
    PhaseSchedule { phases, translation, altitude }
}
