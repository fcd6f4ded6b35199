//! Scenario files.
//!
//! A scenario is a TOML document with the sections `formation`, `agents`,
//! `graph`, `phases`, `translation`, `safety`, `sim` and `corridor`. The
//! first four of `formation`, `agents`, `phases` and `safety` are required;
//! unknown keys anywhere are rejected. See `scenarios/default.scn` for the
//! six-agent experiment.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::formation::{build_formation, validate_config, AgentSpec, FormationError, FormationMatrices, ReferenceConfig};
use crate::kernel::AtCoordinates;
use crate::metrics::{validate_run, Corridor, RunMetrics, ValidationSettings, CONVERGENCE_TOLERANCE};
use crate::phases::{Phase, PhaseSchedule, TranslationRamp};
use crate::safety::{check_schedule_safety, min_reference_distance, min_scaling_bound, SafetyReport};
use crate::sim::{run_simulation, RunOptions, SafetyGate, SimError, SimParams, SimTrace};

pub const REQUIRED_SECTIONS: [&str; 4] = ["formation", "agents", "phases", "safety"];

const DEFAULT_SCENARIO: &str = include_str!("../../../scenarios/default.scn");

/// Text of the bundled six-agent scenario.
pub fn default_scenario_text() -> &'static str {
    DEFAULT_SCENARIO
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("syntax error in scenario:\n{}", join(.0))]
    Syntax(Vec<Diagnostic>),
    #[error("schema error in scenario:\n{}", join(.0))]
    Schema(Vec<Diagnostic>),
    #[error("invalid scenario:\n{}", join(.0))]
    Semantic(Vec<String>),
}

impl ScenarioError {
    /// Parse-level errors as opposed to semantic ones.
    pub fn is_parse_error(&self) -> bool {
        !matches!(self, ScenarioError::Semantic(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormationSection {
    pub altitude: f64,
}

fn one() -> f64 {
    1.0
}

/// Coordinates at a phase endpoint. `lambda3` is the fixed out-of-plane
/// strain and must equal 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseCoords {
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(default = "one")]
    pub lambda3: f64,
    #[serde(default)]
    pub psi_d: f64,
    #[serde(default)]
    pub psi_r: f64,
    #[serde(default)]
    pub d1: f64,
    #[serde(default)]
    pub d2: f64,
}

impl From<PhaseCoords> for AtCoordinates {
    fn from(c: PhaseCoords) -> Self {
        AtCoordinates { d1: c.d1, d2: c.d2, lambda1: c.lambda1, lambda2: c.lambda2, psi_d: c.psi_d, psi_r: c.psi_r }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub t0: f64,
    pub tf: f64,
    pub start: PhaseCoords,
    pub end: PhaseCoords,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetySection {
    pub agent_radius: f64,
    /// Tracking error budget used for the pre-run strain check.
    pub delta_budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub formation: FormationSection,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub graph: BTreeMap<String, Vec<String>>,
    pub phases: Vec<PhaseEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<TranslationRamp>,
    pub safety: SafetySection,
    #[serde(default)]
    pub sim: SimParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corridor: Option<Corridor>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, col)
}

fn diagnostic(text: &str, err: &toml::de::Error) -> Diagnostic {
    let (line, column) = match err.span() {
        Some(span) => {
            let (l, c) = line_col(text, span.start);
            (Some(l), Some(c))
        }
        None => (None, None),
    };
    Diagnostic { line, column, message: err.message().trim().to_owned() }
}

/// Syntax and schema checks only; the result may still describe an invalid
/// formation or schedule.
pub fn parse_scenario_unchecked(text: &str) -> Result<ScenarioFile, ScenarioError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| ScenarioError::Syntax(vec![diagnostic(text, &e)]))?;
    let missing: Vec<Diagnostic> = REQUIRED_SECTIONS
        .iter()
        .filter(|s| !table.contains_key(**s))
        .map(|s| Diagnostic { line: None, column: None, message: format!("missing required section `{s}`") })
        .collect();
    if !missing.is_empty() {
        return Err(ScenarioError::Schema(missing));
    }
    toml::from_str(text).map_err(|e| ScenarioError::Schema(vec![diagnostic(text, &e)]))
}

/// Parses and fully validates a scenario.
pub fn parse_scenario(text: &str) -> Result<ScenarioFile, ScenarioError> {
    let file = parse_scenario_unchecked(text)?;
    Scenario::from_file(file.clone())?;
    Ok(file)
}

impl ScenarioFile {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario fields are always representable in TOML")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn reference_config(&self) -> ReferenceConfig {
        ReferenceConfig {
            agents: self.agents.clone(),
            altitude: self.formation.altitude,
            in_neighbors: self.graph.clone(),
        }
    }

    pub fn schedule(&self) -> PhaseSchedule {
        PhaseSchedule {
            phases: self
                .phases
                .iter()
                .map(|p| Phase { t0: p.t0, tf: p.tf, start: p.start.into(), end: p.end.into() })
                .collect(),
            translation: self.translation,
            altitude: self.formation.altitude,
        }
    }
}

/// A validated scenario with its derived models.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub config: ReferenceConfig,
    pub schedule: PhaseSchedule,
    pub params: SimParams,
    pub matrices: FormationMatrices,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        Self::from_file(parse_scenario_unchecked(text)?)
    }

    pub fn default_experiment() -> Self {
        Self::parse(DEFAULT_SCENARIO).expect("bundled scenario is valid")
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self, ScenarioError> {
        let mut problems = Vec::new();
        let config = file.reference_config();
        let report = validate_config(&config);
        problems.extend(report.violations.iter().map(|v| v.to_string()));

        for (i, p) in file.phases.iter().enumerate() {
            for (which, c) in [("start", &p.start), ("end", &p.end)] {
                if c.lambda3 != 1.0 {
                    problems.push(format!("phase {i} {which}: lambda3 must be 1 for a planar transformation, got {}", c.lambda3));
                }
            }
        }
        let schedule = file.schedule();
        if let Err(e) = schedule.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = file.sim.substeps() {
            problems.push(e.to_string());
        }
        if let Some(c) = &file.corridor {
            if let Err(e) = c.validate() {
                problems.push(e.to_string());
            }
        }
        if !(file.safety.agent_radius >= 0.0 && file.safety.delta_budget >= 0.0) {
            problems.push("safety.agent_radius and safety.delta_budget must be non-negative".to_owned());
        }
        if !(file.formation.altitude.is_finite()) {
            problems.push("formation.altitude must be finite".to_owned());
        }
        if !problems.is_empty() {
            return Err(ScenarioError::Semantic(problems));
        }

        let matrices = build_formation(&config).map_err(|e| ScenarioError::Semantic(vec![e.to_string()]))?;
        Ok(Self { params: file.sim, file, config, schedule, matrices })
    }

    pub fn d_min(&self) -> f64 {
        min_reference_distance(&self.config)
    }

    /// `λ_min` from the scenario's tracking-error budget.
    pub fn strain_bound(&self) -> f64 {
        min_scaling_bound(self.file.safety.delta_budget, self.file.safety.agent_radius, self.d_min())
            .unwrap_or(f64::INFINITY)
    }

    pub fn check_safety(&self) -> SafetyReport {
        check_schedule_safety(&self.schedule, self.strain_bound(), self.d_min(), self.params.control_rate)
    }

    pub fn simulate(&self, skip_safety_check: bool) -> Result<SimTrace, SimError> {
        let safety = (!skip_safety_check).then(|| SafetyGate { bound: self.strain_bound(), d_min: self.d_min() });
        let options = RunOptions { safety, ..RunOptions::default() };
        run_simulation(&self.config, &self.matrices, &self.schedule, &self.params, &options)
    }

    pub fn metrics(&self, trace: &SimTrace) -> RunMetrics {
        let settings = ValidationSettings {
            matrices: &self.matrices,
            agent_radius: self.file.safety.agent_radius,
            corridor: self.file.corridor.as_ref(),
            control_rate: self.params.control_rate,
            convergence_tolerance: CONVERGENCE_TOLERANCE,
        };
        validate_run(trace, &self.config, &self.schedule, &settings)
    }
}

impl From<FormationError> for ScenarioError {
    fn from(e: FormationError) -> Self {
        ScenarioError::Semantic(vec![e.to_string()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formation::{table_one_config, Role};
    use crate::phases::table_two_schedule;

    #[test]
    fn default_matches_tables() {
        let s = Scenario::default_experiment();
        assert_eq!(s.config, table_one_config());
        assert_eq!(s.schedule, table_two_schedule());
        assert_eq!(s.params.kp, 25.0);
        assert_eq!(s.params.kd, 10.0);
        assert_eq!(s.file.corridor, Some(Corridor { x_start: 1.5, x_end: 2.5, width: 1.2, center_y: 0.0 }));
    }

    #[test]
    fn empty_file_lists_required_sections() {
        let ScenarioError::Schema(diags) = parse_scenario("").unwrap_err() else { panic!() };
        let msgs: Vec<_> = diags.iter().map(|d| d.message.as_str()).collect();
        assert_eq!(
            msgs,
            [
                "missing required section `formation`",
                "missing required section `agents`",
                "missing required section `phases`",
                "missing required section `safety`"
            ]
        );
    }

    #[test]
    fn syntax_error_has_line() {
        let text = "[formation]\naltitude = 1.0\n[[agents]\n";
        let ScenarioError::Syntax(diags) = parse_scenario(text).unwrap_err() else { panic!() };
        assert_eq!(diags[0].line, Some(3));
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = default_scenario_text().replace("delay_ticks = 0", "delay_ticks = 0\nwobble = 3");
        let err = parse_scenario(&text).unwrap_err();
        let ScenarioError::Schema(diags) = err else { panic!("{err}") };
        assert!(diags[0].message.contains("wobble"), "{}", diags[0].message);
        assert!(diags[0].line.is_some());
    }

    #[test]
    fn four_leaders_is_semantic_error() {
        let text = default_scenario_text().replacen("role = \"follower\"", "role = \"leader\"", 1);
        let ScenarioError::Semantic(msgs) = parse_scenario(&text).unwrap_err() else { panic!() };
        assert!(msgs.iter().any(|m| m.contains("expected exactly 3 leaders, found 4")), "{msgs:?}");
    }

    #[test]
    fn lambda3_must_be_one() {
        let text = default_scenario_text().replacen("lambda3 = 1.0", "lambda3 = 0.9", 1);
        let ScenarioError::Semantic(msgs) = parse_scenario(&text).unwrap_err() else { panic!() };
        assert!(msgs[0].contains("lambda3"));
    }

    #[test]
    fn round_trip_is_identity() {
        let file = parse_scenario(default_scenario_text()).unwrap();
        let again = parse_scenario(&file.to_toml()).unwrap();
        assert_eq!(file, again);
        assert_eq!(file.content_hash(), again.content_hash());
        assert_eq!(file.agents.iter().filter(|a| a.role == Role::Leader).count(), 3);
    }

    #[test]
    fn default_check_passes() {
        let s = Scenario::default_experiment();
        let r = s.check_safety();
        assert_eq!(r.d_min, 0.5);
        assert_eq!(r.lambda_min_bound, 0.3);
        assert_eq!(r.min_strain_observed, 0.5);
        assert!(r.pass);
    }
}
