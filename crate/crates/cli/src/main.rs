use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use affine_formation::bundle::{emit_bundle, plan_rows, read_bundle, write_plan_csv, BundleInput, MatricesDocument, VerticalRamps};
use affine_formation::phases::leader_trajectory;
use affine_formation::safety::check_schedule_safety;
use affine_formation::scenario::{default_scenario_text, parse_scenario_unchecked, Scenario, ScenarioError, ScenarioFile};
use affine_formation::sim::SimError;
use affine_formation::{min_scaling_bound, RunMetrics};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

const OUT_ENV: &str = "AFFINE_FORMATION_OUT";

#[derive(Parser)]
#[command(name = "affine-formation", version, about = "Leader-follower affine formation planning and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Reserved. The simulation is deterministic, so any value is rejected.
    #[arg(long, global = true, hide = true)]
    seed: Option<String>,
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario file; the bundled six-agent scenario when omitted.
    #[arg(value_name = "SCENARIO", conflicts_with = "scenario")]
    path: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    scenario: Option<PathBuf>,
}

impl ScenarioArg {
    fn load(&self) -> Result<ScenarioFile, Failure> {
        let text = match self.path.as_ref().or(self.scenario.as_ref()) {
            Some(p) => fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
            None => default_scenario_text().to_owned(),
        };
        parse_scenario_unchecked(&text).map_err(Failure::from)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the leaders' desired trajectories as CSV.
    Plan {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Sample rate in Hz; defaults to the scenario's control rate.
        #[arg(long)]
        rate: Option<f64>,
        /// Prepend a climb from the ground lasting this many seconds.
        #[arg(long, value_name = "SECONDS")]
        takeoff: Option<f64>,
        /// Append a descent to the ground lasting this many seconds.
        #[arg(long, value_name = "SECONDS")]
        landing: Option<f64>,
    },
    /// Print the formation matrices and the stability check as JSON.
    Graph {
        #[command(flatten)]
        scenario: ScenarioArg,
    },
    /// Check the schedule's principal strains against the safety bound.
    Check {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Tracking error to use instead of the scenario's delta_budget.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Run the closed-loop simulation and write a run bundle.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        control_rate: Option<f64>,
        #[arg(long)]
        kp: Option<f64>,
        #[arg(long)]
        kd: Option<f64>,
        #[arg(long)]
        delay_ticks: Option<usize>,
        #[arg(long, env = OUT_ENV, default_value = "run")]
        out: PathBuf,
        #[arg(long)]
        skip_safety_check: bool,
    },
    /// Recompute the metrics of an existing run bundle.
    Validate {
        #[arg(value_name = "BUNDLE_DIR")]
        dir: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Validation(String),
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        if e.is_parse_error() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Validation(e.to_string()))?;
    let mut out = io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(Failure::Validation(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn validated(file: ScenarioFile) -> Result<Scenario, Failure> {
    Scenario::from_file(file).map_err(Failure::from)
}

fn verdict(metrics: &RunMetrics) -> Result<(), Failure> {
    if metrics.passed() {
        return Ok(());
    }
    let mut why = Vec::new();
    if !metrics.safety_pass {
        why.push("safety chain failed");
    }
    if !metrics.converged {
        why.push("formation did not converge");
    }
    if metrics.min_corridor_clearance <= 0.0 || metrics.min_corridor_clearance.is_nan() {
        why.push("corridor wall penetrated");
    }
    Err(Failure::Validation(why.join("; ")))
}

fn plan(scenario: &ScenarioArg, out: Option<&Path>, rate: Option<f64>, ramps: VerticalRamps) -> Result<(), Failure> {
    let s = validated(scenario.load()?)?;
    let rate = rate.unwrap_or(s.params.control_rate);
    let traj = leader_trajectory(&s.schedule, &s.config, rate, None).map_err(|e| Failure::Usage(e.to_string()))?;
    for d in [ramps.takeoff, ramps.landing].into_iter().flatten() {
        if d <= 0.0 || d.is_nan() {
            return Err(Failure::Usage(format!("ramp duration must be positive, got {d}")));
        }
    }
    let rows = plan_rows(&traj, s.config.altitude, ramps, rate);
    let result = match out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
            write_plan_csv(io::BufWriter::new(file), &rows).map_err(|e| format!("{}: {e}", path.display()))
        }
        None => write_plan_csv(io::stdout().lock(), &rows).map_err(|e| format!("stdout: {e}")),
    };
    result.map_err(Failure::Validation)
}

fn graph(scenario: &ScenarioArg) -> Result<(), Failure> {
    let cfg = scenario.load()?.reference_config();
    let doc = MatricesDocument::diagnose(&cfg).map_err(|e| {
        let report = affine_formation::validate_config(&cfg);
        Failure::Validation(if report.is_valid() { e.to_string() } else { format!("{e}\n{report}") })
    })?;
    print_json(&doc)?;
    if doc.passed() {
        return Ok(());
    }
    let mut why = Vec::new();
    if !doc.theorem2.passed {
        why.push(format!(
            "stability check failed: W is {}Hurwitz (max real part {:e})",
            if doc.theorem2.hurwitz { "" } else { "not " },
            doc.theorem2.max_real_part
        ));
    }
    if !doc.validation.is_valid() {
        why.push(doc.validation.to_string());
    }
    Err(Failure::Validation(why.join("\n")))
}

fn check(scenario: &ScenarioArg, delta: Option<f64>) -> Result<(), Failure> {
    let s = validated(scenario.load()?)?;
    let bound = match delta {
        Some(d) => min_scaling_bound(d, s.file.safety.agent_radius, s.d_min()).map_err(|e| Failure::Usage(e.to_string()))?,
        None => s.strain_bound(),
    };
    let report = check_schedule_safety(&s.schedule, bound, s.d_min(), s.params.control_rate);
    print_json(&report)?;
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Validation(format!(
            "min strain {} is below the bound {}",
            report.min_strain_observed, report.lambda_min_bound
        )))
    }
}

struct Overrides {
    dt: Option<f64>,
    control_rate: Option<f64>,
    kp: Option<f64>,
    kd: Option<f64>,
    delay_ticks: Option<usize>,
}

fn simulate(scenario: &ScenarioArg, o: Overrides, out: &Path, skip_safety_check: bool) -> Result<(), Failure> {
    let mut file = scenario.load()?;
    let sim = &mut file.sim;
    sim.dt = o.dt.unwrap_or(sim.dt);
    sim.control_rate = o.control_rate.unwrap_or(sim.control_rate);
    sim.kp = o.kp.unwrap_or(sim.kp);
    sim.kd = o.kd.unwrap_or(sim.kd);
    sim.delay_ticks = o.delay_ticks.unwrap_or(sim.delay_ticks);
    let s = validated(file)?;

    let trace = s.simulate(skip_safety_check).map_err(|e| match e {
        SimError::InvalidParams(_) => Failure::Usage(e.to_string()),
        _ => Failure::Validation(e.to_string()),
    })?;
    let metrics = s.metrics(&trace);
    let input = BundleInput {
        scenario: &s.file,
        config: &s.config,
        matrices: &s.matrices,
        trace: &trace,
        metrics: &metrics,
        skip_safety_check,
    };
    emit_bundle(&input, out).map_err(|e| Failure::Validation(e.to_string()))?;
    print_json(&metrics)?;
    verdict(&metrics)
}

fn validate(dir: &Path) -> Result<(), Failure> {
    let bundle = read_bundle(dir).map_err(|e| Failure::Usage(e.to_string()))?;
    let s = validated(bundle.scenario)?;
    let metrics = s.metrics(&bundle.trace);
    print_json(&metrics)?;
    verdict(&metrics)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.seed.is_some() {
        return Err(Failure::Usage("--seed is not supported: the simulation is deterministic".to_owned()));
    }
    match cli.command {
        Command::Plan { scenario, out, rate, takeoff, landing } => {
            plan(&scenario, out.as_deref(), rate, VerticalRamps { takeoff, landing })
        }
        Command::Graph { scenario } => graph(&scenario),
        Command::Check { scenario, delta } => check(&scenario, delta),
        Command::Simulate { scenario, dt, control_rate, kp, kd, delay_ticks, out, skip_safety_check } => {
            simulate(&scenario, Overrides { dt, control_rate, kp, kd, delay_ticks }, &out, skip_safety_check)
        }
        Command::Validate { dir } => validate(&dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
