//! On-disk artifacts of a run: the strided trajectory log, the per-step
//! monitor log, the run manifest and plot-ready series.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back recovers every value bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulator::{
    AgentExtremum, MonitorLimits, MonitorSample, PairExtremum, RotorExtremum, SafetyReport, TrajectoryLog,
    OUTCOME_COMPLETED,
};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const MONITOR_FILE: &str = "monitor.csv";
pub const REPORT_FILE: &str = "safety_report.json";
pub const RUN_FILE: &str = "run.json";
pub const PLAN_FILE: &str = "plan.json";
pub const PLOT_DIR: &str = "plot";
pub const RUN_FORMAT: &str = "rtd-run/1";
pub const PLOT_FORMAT: &str = "rtd-plot/1";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("trajectory log has no records")]
    EmptyLog,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ExportError + '_ {
    move |source| ExportError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> ExportError {
    ExportError::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, ExportError> {
    csv::Writer::from_path(path).map_err(csv_err(path))
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn write_text(path: &Path, text: &str) -> Result<(), ExportError> {
    let mut f = BufWriter::new(File::create(path).map_err(io_err(path))?);
    f.write_all(text.as_bytes()).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

const STATE_COLUMNS: [&str; 14] = [
    "x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi", "phi_dot", "theta_dot", "psi_dot", "p", "p_dot",
];

/// One row per recorded step and agent: state, input, rotor speeds and the
/// desired position.
pub fn write_trajectory_csv(log: &TrajectoryLog, path: &Path) -> Result<(), ExportError> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["step", "t", "agent"];
    header.extend(STATE_COLUMNS);
    header.extend(["u_p", "u_phi", "u_theta", "u_psi", "w1", "w2", "w3", "w4", "x_d", "y_d", "z_d"]);
    w.write_record(&header).map_err(csv_err(path))?;
    for rec in &log.records {
        for (i, a) in rec.agents.iter().enumerate() {
            let mut row = vec![rec.step.to_string(), num(rec.t), i.to_string()];
            row.extend(a.state.to_array().map(num));
            row.extend(a.input.to_vector().iter().map(|v| num(*v)));
            row.extend(a.speeds.0.map(num));
            row.extend(a.desired.iter().map(|v| num(*v)));
            w.write_record(&row).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

const MONITOR_HEADER: [&str; 13] = [
    "step",
    "t",
    "max_rotor",
    "max_rotor_agent",
    "max_rotor_index",
    "max_hover_deviation",
    "max_hover_deviation_agent",
    "max_hover_deviation_index",
    "max_tracking",
    "max_tracking_agent",
    "min_distance",
    "min_distance_i",
    "min_distance_j",
];

/// One row per integration step with that step's extrema.
pub fn write_monitor_csv(samples: &[MonitorSample], path: &Path) -> Result<(), ExportError> {
    let mut w = csv_writer(path)?;
    w.write_record(MONITOR_HEADER).map_err(csv_err(path))?;
    for s in samples {
        let (d, i, j) = match s.min_distance {
            Some(p) => (num(p.value), p.agents[0].to_string(), p.agents[1].to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        w.write_record([
            s.step.to_string(),
            num(s.t),
            num(s.max_rotor.value),
            s.max_rotor.agent.to_string(),
            s.max_rotor.rotor.to_string(),
            num(s.max_hover_deviation.value),
            s.max_hover_deviation.agent.to_string(),
            s.max_hover_deviation.rotor.to_string(),
            num(s.max_tracking.value),
            s.max_tracking.agent.to_string(),
            d,
            i,
            j,
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_monitor_csv(path: &Path) -> Result<Vec<MonitorSample>, ExportError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(MONITOR_HEADER) {
        return Err(parse_err(path, "unexpected monitor header"));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let float = |k: usize| -> Result<f64, ExportError> {
            field(k)
                .parse::<f64>()
                .map_err(|e| parse_err(path, format!("row {}, column {}: {e}", line + 1, MONITOR_HEADER[k])))
        };
        let index = |k: usize| -> Result<usize, ExportError> {
            field(k)
                .parse::<usize>()
                .map_err(|e| parse_err(path, format!("row {}, column {}: {e}", line + 1, MONITOR_HEADER[k])))
        };
        let t = float(1)?;
        let min_distance = if field(10).is_empty() {
            None
        } else {
            Some(PairExtremum {
                value: float(10)?,
                t,
                agents: [index(11)?, index(12)?],
            })
        };
        out.push(MonitorSample {
            step: index(0)?,
            t,
            max_rotor: RotorExtremum {
                value: float(2)?,
                t,
                agent: index(3)?,
                rotor: index(4)?,
            },
            max_hover_deviation: RotorExtremum {
                value: float(5)?,
                t,
                agent: index(6)?,
                rotor: index(7)?,
            },
            max_tracking: AgentExtremum {
                value: float(8)?,
                t,
                agent: index(9)?,
            },
            min_distance,
        });
    }
    Ok(out)
}

/// Settings and outcome of a `simulate` run, enough to re-derive the
/// safety report from the monitor log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub name: String,
    pub scenario_hash: String,
    pub agents: usize,
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub steps: usize,
    pub record_stride: usize,
    pub limits: MonitorLimits,
    pub outcome: String,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self, ExportError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))?;
        if m.format != RUN_FORMAT {
            return Err(parse_err(path, format!("unsupported format {:?}", m.format)));
        }
        Ok(m)
    }
}

/// Rebuilds the safety report of a run directory from its monitor log.
pub fn recompute_report(dir: &Path) -> Result<SafetyReport, ExportError> {
    let manifest = RunManifest::read(&dir.join(RUN_FILE))?;
    let samples = read_monitor_csv(&dir.join(MONITOR_FILE))?;
    let mut report = SafetyReport::from_samples(manifest.limits, &samples);
    if manifest.outcome != OUTCOME_COMPLETED {
        let reason = manifest.outcome.strip_prefix("aborted: ").unwrap_or(&manifest.outcome);
        report.mark_aborted(reason);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub file: String,
    pub quantity: String,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotManifest {
    pub format: String,
    pub agents: usize,
    pub samples: usize,
    /// Every series file has a `t` column followed by `agent_0 ..`.
    pub series: Vec<PlotSeries>,
}

pub const PLOT_MANIFEST: &str = "manifest.json";

fn write_series(
    log: &TrajectoryLog,
    path: &Path,
    value: impl Fn(&crate::simulator::AgentRecord) -> f64,
) -> Result<(), ExportError> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..log.agents()).map(|i| format!("agent_{i}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for rec in &log.records {
        let mut row = vec![num(rec.t)];
        row.extend(rec.agents.iter().map(|a| num(value(a))));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Per-rotor speed series and per-axis position series, one column per
/// agent, plus `manifest.json` listing them. Returns the files written.
pub fn export_plot_data(log: &TrajectoryLog, dir: &Path) -> Result<Vec<PathBuf>, ExportError> {
    if log.is_empty() {
        return Err(ExportError::EmptyLog);
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut series = Vec::new();
    let mut files = Vec::new();
    for rotor in 0..4 {
        let name = format!("rotor_{}.csv", rotor + 1);
        let path = dir.join(&name);
        write_series(log, &path, |a| a.speeds.0[rotor])?;
        series.push(PlotSeries {
            file: name,
            quantity: format!("angular speed of rotor {}", rotor + 1),
            unit: "rad/s".into(),
        });
        files.push(path);
    }
    for (axis, label) in ["x", "y", "z"].iter().enumerate() {
        let name = format!("position_{label}.csv");
        let path = dir.join(&name);
        write_series(log, &path, |a| a.state.r[axis])?;
        series.push(PlotSeries {
            file: name,
            quantity: format!("position {label}"),
            unit: "m".into(),
        });
        files.push(path);
    }
    let manifest = PlotManifest {
        format: PLOT_FORMAT.into(),
        agents: log.agents(),
        samples: log.records.len(),
        series,
    };
    let path = dir.join(PLOT_MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest).expect("plot manifest serializes");
    text.push('\n');
    write_text(&path, &text)?;
    files.push(path);
    Ok(files)
}
