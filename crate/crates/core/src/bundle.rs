//! Run bundles: CSV traces, JSON documents and a manifest.
//!
//! A bundle directory holds
//!
//! * `agent_<id>.csv` with columns `t,x,y,z,x_ref,y_ref,z_ref,x_des,y_des,z_des`,
//!   one row per control tick;
//! * `metrics.json`, `matrices.json`;
//! * `scenario.scn`, the resolved scenario after command-line overrides;
//! * `manifest.json` with the tool version and the SHA-256 of `scenario.scn`.
//!
//! Numbers in CSVs are printed with 9 significant digits. Non-finite values
//! in JSON are written as `null`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::formation::{
    build_matrices, compute_alpha, solve_follower_weights, spectral_report, validate_config, Coefficients, FormationError,
    FormationMatrices, ReferenceConfig, SpectralReport, ValidationReport,
};
use crate::metrics::RunMetrics;
use crate::phases::{altitude_at, Direction, LeaderTrajectory};
use crate::scenario::{parse_scenario_unchecked, ScenarioError, ScenarioFile};
use crate::sim::SimTrace;

pub const TOOL_NAME: &str = "affine-formation";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const AGENT_CSV_HEADER: [&str; 10] = ["t", "x", "y", "z", "x_ref", "y_ref", "z_ref", "x_des", "y_des", "z_des"];
pub const PLAN_CSV_HEADER: [&str; 5] = ["t", "agent_id", "x_d", "y_d", "z_d"];

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const MATRICES_FILE: &str = "matrices.json";
pub const SCENARIO_FILE: &str = "scenario.scn";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", .path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: {source}", .path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {message}", .path.display())]
    Malformed { path: PathBuf, message: String },
    #[error("{}: {source}", .path.display())]
    Scenario { path: PathBuf, source: ScenarioError },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BundleError + '_ {
    move |source| BundleError::Io { path: path.to_owned(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> BundleError + '_ {
    move |source| BundleError::Csv { path: path.to_owned(), source }
}

/// `printf("%.9g")` without the padding: 9 significant digits, trailing
/// zeros dropped, scientific notation for exponents below -4 or from 9 up.
pub fn format_sig9(v: f64) -> String {
    if v.is_nan() {
        return "nan".to_owned();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.to_owned();
    }
    if v == 0.0 {
        return "0".to_owned();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let out = trim_zeros(&format!("{v:.*}", (8 - exp) as usize)).to_owned();
        if out == "-0" {
            "0".to_owned()
        } else {
            out
        }
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn push_vec(row: &mut Vec<String>, v: &Vector3<f64>) {
    row.extend(v.iter().map(|&x| format_sig9(x)));
}

pub fn agent_csv_name(id: &str) -> String {
    format!("agent_{id}.csv")
}

/// Trace rows of one agent (index into `trace.ids`) as CSV.
pub fn write_agent_csv<W: Write>(out: W, trace: &SimTrace, agent: usize) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGENT_CSV_HEADER)?;
    for k in 0..trace.len() {
        let mut row = Vec::with_capacity(10);
        row.push(format_sig9(trace.times[k]));
        push_vec(&mut row, &trace.actual[k][agent]);
        push_vec(&mut row, &trace.reference[k][agent]);
        push_vec(&mut row, &trace.desired[k][agent]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a leader plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRow {
    pub t: f64,
    pub agent_id: String,
    pub position: Vector3<f64>,
}

/// Ramps for the segments before and after the transformation, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VerticalRamps {
    pub takeoff: Option<f64>,
    pub landing: Option<f64>,
}

/// Flattens a leader trajectory into plan rows. A takeoff ramp climbs from
/// the ground at the reference position and shifts the AT segment later by
/// its duration; a landing ramp descends from the final leader positions.
pub fn plan_rows(traj: &LeaderTrajectory, altitude: f64, ramps: VerticalRamps, tick_rate: f64) -> Vec<PlanRow> {
    let mut rows = Vec::new();
    let mut emit = |t: f64, k: usize, p: Vector3<f64>| {
        rows.push(PlanRow { t, agent_id: traj.leader_ids[k].clone(), position: p })
    };
    let ticks = |duration: f64| (duration * tick_rate).round() as usize;

    let mut offset = 0.0;
    if let (Some(duration), Some(first)) = (ramps.takeoff, traj.positions.first()) {
        for i in 0..ticks(duration) {
            let t = i as f64 / tick_rate;
            let z = altitude_at(altitude, duration, Direction::Up, t);
            for (k, p) in first.iter().enumerate() {
                emit(t, k, Vector3::new(p.x, p.y, z));
            }
        }
        offset = duration;
    }
    for (t, ps) in traj.times.iter().zip(&traj.positions) {
        for (k, p) in ps.iter().enumerate() {
            emit(t + offset, k, *p);
        }
    }
    if let (Some(duration), Some(last), Some(&t_end)) = (ramps.landing, traj.positions.last(), traj.times.last()) {
        for i in 1..=ticks(duration) {
            let t = i as f64 / tick_rate;
            let z = altitude_at(altitude, duration, Direction::Down, t);
            for (k, p) in last.iter().enumerate() {
                emit(t_end + offset + t, k, Vector3::new(p.x, p.y, z));
            }
        }
    }
    rows
}

pub fn write_plan_csv<W: Write>(out: W, rows: &[PlanRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PLAN_CSV_HEADER)?;
    for r in rows {
        let mut row = vec![format_sig9(r.t), r.agent_id.clone()];
        push_vec(&mut row, &r.position);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Row-major JSON view of the formation matrices with the spectral check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatricesDocument {
    pub order: Vec<String>,
    pub alpha: Vec<Coefficients>,
    pub weights: Vec<Coefficients>,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    #[serde(rename = "L")]
    pub l: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub theorem2: SpectralReport,
    pub validation: ValidationReport,
}

impl MatricesDocument {
    pub fn new(cfg: &ReferenceConfig, m: &FormationMatrices) -> Self {
        Self {
            order: m.order.clone(),
            alpha: m.alpha.clone(),
            weights: m.weights.clone(),
            w: rows_of(&m.w),
            l: rows_of(&m.l),
            h: rows_of(&m.h),
            theorem2: spectral_report(m),
            validation: validate_config(cfg),
        }
    }

    /// Builds the matrices even for a configuration that fails validation,
    /// as long as every coefficient triple can be solved. Used to report why
    /// a graph is rejected.
    pub fn diagnose(cfg: &ReferenceConfig) -> Result<Self, FormationError> {
        let alpha = compute_alpha(cfg)?;
        let weights = solve_follower_weights(cfg)?;
        let m = build_matrices(cfg, &weights, &alpha)?;
        Ok(Self::new(cfg, &m))
    }

    pub fn passed(&self) -> bool {
        self.validation.is_valid() && self.theorem2.passed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub scenario_sha256: String,
    pub skip_safety_check: bool,
    pub files: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BundleError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| BundleError::Json { path: path.to_owned(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Everything needed to write a bundle.
#[derive(Debug, Clone, Copy)]
pub struct BundleInput<'a> {
    pub scenario: &'a ScenarioFile,
    pub config: &'a ReferenceConfig,
    pub matrices: &'a FormationMatrices,
    pub trace: &'a SimTrace,
    pub metrics: &'a RunMetrics,
    pub skip_safety_check: bool,
}

/// Writes a bundle into `out_dir`, creating it if needed.
pub fn emit_bundle(input: &BundleInput<'_>, out_dir: &Path) -> Result<Manifest, BundleError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut files = Vec::new();

    let scenario_text = input.scenario.to_toml();
    let path = out_dir.join(SCENARIO_FILE);
    fs::write(&path, &scenario_text).map_err(io_err(&path))?;
    files.push(SCENARIO_FILE.to_owned());

    for (i, id) in input.trace.ids.iter().enumerate() {
        let name = agent_csv_name(id);
        let path = out_dir.join(&name);
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_agent_csv(io::BufWriter::new(file), input.trace, i).map_err(csv_err(&path))?;
        files.push(name);
    }

    write_json(&out_dir.join(METRICS_FILE), input.metrics)?;
    files.push(METRICS_FILE.to_owned());
    write_json(&out_dir.join(MATRICES_FILE), &MatricesDocument::new(input.config, input.matrices))?;
    files.push(MATRICES_FILE.to_owned());

    let manifest = Manifest {
        tool: TOOL_NAME.to_owned(),
        version: TOOL_VERSION.to_owned(),
        scenario: SCENARIO_FILE.to_owned(),
        scenario_sha256: sha256_hex(scenario_text.as_bytes()),
        skip_safety_check: input.skip_safety_check,
        files,
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// A bundle read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedBundle {
    pub manifest: Manifest,
    pub scenario: ScenarioFile,
    pub trace: SimTrace,
}

fn parse_cell(path: &Path, line: u64, cell: &str) -> Result<f64, BundleError> {
    let v = match cell {
        "nan" => f64::NAN,
        "inf" => f64::INFINITY,
        "-inf" => f64::NEG_INFINITY,
        _ => cell.parse().map_err(|_| BundleError::Malformed {
            path: path.to_owned(),
            message: format!("line {line}: not a number: {cell:?}"),
        })?,
    };
    Ok(v)
}

fn read_agent_csv(path: &Path) -> Result<Vec<[f64; 10]>, BundleError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(AGENT_CSV_HEADER) {
        return Err(BundleError::Malformed { path: path.to_owned(), message: format!("unexpected header {header:?}") });
    }
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(csv_err(path))?;
        let line = record.position().map_or(0, |p| p.line());
        let mut row = [0.0; 10];
        for (slot, cell) in row.iter_mut().zip(record.iter()) {
            *slot = parse_cell(path, line, cell)?;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Reads the manifest, scenario and agent CSVs of a bundle. The scenario is
/// checked against the manifest hash.
pub fn read_bundle(dir: &Path) -> Result<LoadedBundle, BundleError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| BundleError::Json { path: path.clone(), source })?;

    let path = dir.join(&manifest.scenario);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    if sha256_hex(text.as_bytes()) != manifest.scenario_sha256 {
        return Err(BundleError::Malformed { path, message: "scenario hash does not match the manifest".to_owned() });
    }
    let scenario = parse_scenario_unchecked(&text).map_err(|source| BundleError::Scenario { path: path.clone(), source })?;
    let config = scenario.reference_config();

    let mut trace = SimTrace { ids: Vec::new(), roles: Vec::new(), times: Vec::new(), actual: Vec::new(), reference: Vec::new(), desired: Vec::new() };
    for (n, i) in config.ordering().into_iter().enumerate() {
        let agent = &config.agents[i];
        let path = dir.join(agent_csv_name(&agent.id));
        let rows = read_agent_csv(&path)?;
        if n == 0 {
            trace.times = rows.iter().map(|r| r[0]).collect();
            trace.actual = vec![Vec::new(); rows.len()];
            trace.reference = vec![Vec::new(); rows.len()];
            trace.desired = vec![Vec::new(); rows.len()];
        } else if rows.len() != trace.times.len() || rows.iter().zip(&trace.times).any(|(r, &t)| r[0] != t) {
            return Err(BundleError::Malformed { path, message: "time column differs from the other agents".to_owned() });
        }
        for (k, r) in rows.iter().enumerate() {
            trace.actual[k].push(Vector3::new(r[1], r[2], r[3]));
            trace.reference[k].push(Vector3::new(r[4], r[5], r[6]));
            trace.desired[k].push(Vector3::new(r[7], r[8], r[9]));
        }
        trace.ids.push(agent.id.clone());
        trace.roles.push(agent.role);
    }
    Ok(LoadedBundle { manifest, scenario, trace })
}
