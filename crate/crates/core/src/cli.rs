//! Command-line surface: `certify`, `plan`, `simulate`, `report` and
//! `generate`.
//!
//! Exit codes: 0 success, 1 usage, I/O or parse failure, 2 infeasible plan
//! or safety violation, 3 numerical failure during a run.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::export::{
    export_plot_data, recompute_report, write_monitor_csv, write_text, write_trajectory_csv, ExportError,
    RunManifest, MONITOR_FILE, PLAN_FILE, PLOT_DIR, REPORT_FILE, RUN_FILE, RUN_FORMAT, TRAJECTORY_FILE,
};
use crate::planner::{build_plan, DeploymentPlan, PlanError};
use crate::scenario::{parse_scenario, Scenario};
use crate::scenarios;
use crate::simulator::{run_closed_loop, MonitorLimits, SimConfig, SimOutput, OUTCOME_COMPLETED};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_UNSAFE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rtd", version, about = "Plan, certify and simulate quadcopter fleet deployments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the separation certificate; exit 2 if it is infeasible.
    Certify { scenario: PathBuf },
    /// Build the deployment plan and write it as JSON.
    Plan {
        scenario: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Write the plan even if the certificate is infeasible.
        #[arg(long)]
        allow_uncertified: bool,
    },
    /// Run the closed-loop fleet simulation and write logs and the safety report.
    Simulate {
        scenario: PathBuf,
        /// Use a previously written plan instead of planning afresh.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// Integration step, s.
        #[arg(long)]
        dt: Option<f64>,
        /// Override the deployment window length, s.
        #[arg(long)]
        window: Option<f64>,
        /// Record every n-th step in the trajectory log.
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        allow_uncertified: bool,
    },
    /// Re-derive the safety report of a `simulate` output directory.
    Report { dir: PathBuf },
    /// Write a bundled or randomized scenario file.
    Generate {
        kind: ScenarioKind,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of agents for random scenarios.
        #[arg(long, default_value_t = 20)]
        agents: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioKind {
    CuboidDisk,
    Letters,
    Random,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

impl From<ExportError> for Failure {
    fn from(e: ExportError) -> Self {
        Failure::new(EXIT_FAILURE, e)
    }
}

fn plan_failure(e: PlanError) -> Failure {
    match e {
        PlanError::InfeasiblePlan(c) => Failure::new(
            EXIT_UNSAFE,
            format!(
                "plan is not certified: margin {} m (pass --allow-uncertified to proceed)",
                c.margin
            ),
        ),
        other => Failure::new(EXIT_FAILURE, other),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    parse_scenario(path).map_err(|e| Failure::new(EXIT_FAILURE, e))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", dir.display())))
}

fn print(out: &mut dyn Write, text: &str) -> Result<(), Failure> {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::new(EXIT_FAILURE, format!("stdout: {e}")))
}

/// Parses `args` (including the program name) and runs the command,
/// writing results to `out`. Returns the process exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock())
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32, Failure> {
    match command {
        Command::Certify { scenario } => certify(&scenario, out),
        Command::Plan {
            scenario,
            out: path,
            allow_uncertified,
        } => {
            let mut s = load_scenario(&scenario)?;
            s.planner.allow_uncertified |= allow_uncertified;
            let plan = build_plan(&s).map_err(plan_failure)?;
            write_text(&path, &(plan.to_json() + "\n"))?;
            Ok(EXIT_OK)
        }
        Command::Simulate {
            scenario,
            plan,
            out: dir,
            dt,
            window,
            stride,
            allow_uncertified,
        } => {
            let mut s = load_scenario(&scenario)?;
            s.planner.allow_uncertified |= allow_uncertified;
            if let Some(d) = window {
                if !(d > 0.0 && d.is_finite()) {
                    return Err(Failure::new(EXIT_FAILURE, format!("--window must be positive, got {d}")));
                }
                s = scenarios::with_window(&s, d);
            }
            if let Some(dt) = dt {
                s.sim.dt = dt;
            }
            if let Some(k) = stride {
                s.sim.record_stride = k;
            }
            simulate(&s, plan.as_deref(), &dir)
        }
        Command::Report { dir } => {
            let report = recompute_report(&dir)?;
            print(out, &report.to_json())?;
            Ok(report_code(&report.outcome, report.all_ok))
        }
        Command::Generate {
            kind,
            out: path,
            seed,
            agents,
        } => {
            let s = match kind {
                ScenarioKind::CuboidDisk => scenarios::cuboid_disk(),
                ScenarioKind::Letters => scenarios::letters(),
                ScenarioKind::Random => scenarios::random_scenario(seed, agents),
            }
            .map_err(|e| Failure::new(EXIT_FAILURE, e))?;
            write_text(&path, &(s.to_json() + "\n"))?;
            Ok(EXIT_OK)
        }
    }
}

fn report_code(outcome: &str, all_ok: bool) -> i32 {
    if outcome != OUTCOME_COMPLETED {
        EXIT_NUMERICAL
    } else if all_ok {
        EXIT_OK
    } else {
        EXIT_UNSAFE
    }
}

fn certify(path: &Path, out: &mut dyn Write) -> Result<i32, Failure> {
    let mut s = load_scenario(path)?;
    s.planner.allow_uncertified = true;
    let plan = build_plan(&s).map_err(plan_failure)?;
    let mut text = serde_json::to_string_pretty(&plan.certificate).expect("certificate serializes");
    text.push('\n');
    print(out, &text)?;
    Ok(if plan.certificate.feasible { EXIT_OK } else { EXIT_UNSAFE })
}

fn load_plan(path: &Path, scenario: &Scenario) -> Result<DeploymentPlan, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display())))?;
    let plan =
        DeploymentPlan::from_json(&text).map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display())))?;
    plan.check_scenario(scenario)
        .map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display())))?;
    if !plan.certificate.feasible && !scenario.planner.allow_uncertified {
        return Err(plan_failure(PlanError::InfeasiblePlan(plan.certificate)));
    }
    Ok(plan)
}

fn write_outputs(
    dir: &Path,
    scenario: &Scenario,
    plan: &DeploymentPlan,
    config: &SimConfig,
    output: &SimOutput,
) -> Result<(), Failure> {
    write_trajectory_csv(&output.log, &dir.join(TRAJECTORY_FILE))?;
    write_monitor_csv(&output.samples, &dir.join(MONITOR_FILE))?;
    write_text(&dir.join(REPORT_FILE), &output.report.to_json())?;
    write_text(&dir.join(PLAN_FILE), &(plan.to_json() + "\n"))?;
    let manifest = RunManifest {
        format: RUN_FORMAT.into(),
        name: scenario.name.clone(),
        scenario_hash: plan.scenario_hash.clone(),
        agents: plan.agents(),
        dt: config.dt,
        t_start: config.t_start,
        t_end: config.t_end,
        steps: config.steps(),
        record_stride: config.record_stride,
        limits: MonitorLimits::from_scenario(scenario),
        outcome: output.report.outcome.clone(),
    };
    write_text(&dir.join(RUN_FILE), &manifest.to_json())?;
    match export_plot_data(&output.log, &dir.join(PLOT_DIR)) {
        Ok(_) | Err(ExportError::EmptyLog) => Ok(()),
        Err(e) => Err(e.into()),
    }
}

fn simulate(scenario: &Scenario, plan_path: Option<&Path>, dir: &Path) -> Result<i32, Failure> {
    let plan = match plan_path {
        Some(p) => load_plan(p, scenario)?,
        None => build_plan(scenario).map_err(plan_failure)?,
    };
    let config = SimConfig::from_scenario(scenario);
    config.validate().map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    create_dir(dir)?;
    log::info!(
        "simulating {} agents over [{}, {}] s with dt = {} s",
        plan.agents(),
        config.t_start,
        config.t_end,
        config.dt
    );
    match run_closed_loop(scenario, &plan, &config) {
        Ok(output) => {
            write_outputs(dir, scenario, &plan, &config, &output)?;
            let r = &output.report;
            if !r.all_ok {
                log::warn!(
                    "safety violated: rotor speed ok {}, tracking ok {}, separation ok {}",
                    r.rotor_speed_ok,
                    r.tracking_ok,
                    r.separation_ok
                );
            }
            Ok(report_code(&r.outcome, r.all_ok))
        }
        Err(abort) => {
            // keep whatever was logged before the failure for diagnosis
            write_outputs(dir, scenario, &plan, &config, &abort.output)?;
            let code = if abort.error.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_FAILURE
            };
            Err(Failure::new(code, abort.error))
        }
    }
}
