//! Closed-loop fleet simulation with per-step safety monitoring.
//!
//! Every step evaluates, for each agent, the desired state, the control
//! input, the rotor speeds realizing it and one RK4 step with the input
//! held constant. The monitor runs at every step; the trajectory log keeps
//! every `record_stride`-th step.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{control, design_gains, ControlError, FlatState, GainMatrix};
use crate::planner::DeploymentPlan;
use crate::quadrotor::{
    dynamics_rhs, rotor_speeds_from_control, ControlInput, QuadError, QuadParams, QuadState, RotorSpeeds, STATE_DIM,
};
use crate::scenario::Scenario;
use crate::trajectory::Deployment;

pub const REPORT_FORMAT: &str = "rtd-safety/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation settings: {0}")]
    Config(String),
    #[error("agent {agent} at t = {t} s: {source}")]
    Control {
        agent: usize,
        t: f64,
        #[source]
        source: ControlError,
    },
    #[error("agent {agent} at t = {t} s: {source}")]
    Rotor {
        agent: usize,
        t: f64,
        #[source]
        source: QuadError,
    },
    #[error("agent {agent} state became non-finite at t = {t} s")]
    NonFiniteState { agent: usize, t: f64 },
}

impl SimError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        !matches!(self, SimError::Config(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub record_stride: usize,
}

impl SimConfig {
    pub fn from_scenario(s: &Scenario) -> Self {
        let (t_start, t_end) = s.sim_span();
        Self {
            dt: s.sim.dt,
            t_start,
            t_end,
            record_stride: s.sim.record_stride,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > self.t_start) {
            return Err(SimError::Config(format!(
                "t_end {} must exceed t_start {}",
                self.t_end, self.t_start
            )));
        }
        if self.record_stride == 0 {
            return Err(SimError::Config("record_stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of integration steps; the span is rounded to whole steps.
    pub fn steps(&self) -> usize {
        ((self.t_end - self.t_start) / self.dt).round().max(1.0) as usize
    }

    pub fn time(&self, step: usize) -> f64 {
        self.t_start + step as f64 * self.dt
    }
}

/// One classical Runge-Kutta step with the input held constant.
pub fn rk4_step(x: &QuadState, u: &ControlInput, dt: f64, params: &QuadParams) -> QuadState {
    let a = x.to_array();
    let shift = |base: &[f64; STATE_DIM], k: &[f64; STATE_DIM], h: f64| {
        let mut out = *base;
        for i in 0..STATE_DIM {
            out[i] += h * k[i];
        }
        QuadState::from_array(&out)
    };
    let k1 = dynamics_rhs(x, u, params);
    let k2 = dynamics_rhs(&shift(&a, &k1, 0.5 * dt), u, params);
    let k3 = dynamics_rhs(&shift(&a, &k2, 0.5 * dt), u, params);
    let k4 = dynamics_rhs(&shift(&a, &k3, dt), u, params);
    let mut out = a;
    for i in 0..STATE_DIM {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    QuadState::from_array(&out)
}

/// Limits checked by the safety monitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorLimits {
    /// rad/s
    pub max_rotor_speed: f64,
    /// Tracking-error bound, m.
    pub delta: f64,
    /// Smallest admissible distance between two vehicles, m.
    pub min_distance: f64,
    /// Reference for rotor-speed deviations, rad/s.
    pub hover_rotor_speed: f64,
}

impl MonitorLimits {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            max_rotor_speed: s.quad.max_rotor_speed,
            delta: s.safety.delta,
            min_distance: s.safety.min_distance(),
            hover_rotor_speed: s.quad.hover_rotor_speed(),
        }
    }
}

/// Per-step extrema over the fleet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorSample {
    pub step: usize,
    pub t: f64,
    pub max_rotor: RotorExtremum,
    pub max_hover_deviation: RotorExtremum,
    pub max_tracking: AgentExtremum,
    /// `None` for a single vehicle.
    pub min_distance: Option<PairExtremum>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotorExtremum {
    pub value: f64,
    pub t: f64,
    pub agent: usize,
    pub rotor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentExtremum {
    pub value: f64,
    pub t: f64,
    pub agent: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairExtremum {
    pub value: f64,
    pub t: f64,
    pub agents: [usize; 2],
}

/// Fleet snapshot fed to the monitor.
pub struct StepView<'a> {
    pub step: usize,
    pub t: f64,
    pub positions: &'a [Vector3<f64>],
    pub desired: &'a [Vector3<f64>],
    pub speeds: &'a [RotorSpeeds],
}

pub fn safety_monitor(view: &StepView<'_>, limits: &MonitorLimits) -> MonitorSample {
    let t = view.t;
    let mut max_rotor = RotorExtremum {
        value: f64::NEG_INFINITY,
        t,
        agent: 0,
        rotor: 0,
    };
    let mut max_dev = max_rotor;
    for (agent, s) in view.speeds.iter().enumerate() {
        for (rotor, &w) in s.0.iter().enumerate() {
            if w > max_rotor.value {
                max_rotor = RotorExtremum { value: w, t, agent, rotor };
            }
            let dev = (w - limits.hover_rotor_speed).abs();
            if dev > max_dev.value {
                max_dev = RotorExtremum { value: dev, t, agent, rotor };
            }
        }
    }
    let mut max_tracking = AgentExtremum {
        value: f64::NEG_INFINITY,
        t,
        agent: 0,
    };
    for (agent, (r, d)) in view.positions.iter().zip(view.desired).enumerate() {
        let e = (r - d).norm();
        if e > max_tracking.value {
            max_tracking = AgentExtremum { value: e, t, agent };
        }
    }
    let mut min_distance: Option<PairExtremum> = None;
    let pos = view.positions;
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            let d = (pos[i] - pos[j]).norm();
            if min_distance.map_or(true, |m| d < m.value) {
                min_distance = Some(PairExtremum { value: d, t, agents: [i, j] });
            }
        }
    }
    MonitorSample {
        step: view.step,
        t,
        max_rotor,
        max_hover_deviation: max_dev,
        max_tracking,
        min_distance,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    /// `max_rotor_speed - peak rotor speed`, rad/s.
    pub rotor_speed: f64,
    /// `delta - peak tracking error`, m.
    pub tracking: f64,
    /// `closest approach - 2 epsilon`, m; absent for a single vehicle.
    pub separation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub format: String,
    pub outcome: String,
    pub steps: usize,
    pub limits: MonitorLimits,
    pub max_rotor_speed: Option<RotorExtremum>,
    pub max_hover_deviation: Option<RotorExtremum>,
    pub max_tracking_error: Option<AgentExtremum>,
    pub min_pairwise_distance: Option<PairExtremum>,
    pub rotor_speed_ok: bool,
    pub tracking_ok: bool,
    pub separation_ok: bool,
    pub all_ok: bool,
    pub margins: Option<Margins>,
}

pub const OUTCOME_COMPLETED: &str = "completed";

impl SafetyReport {
    pub fn new(limits: MonitorLimits) -> Self {
        Self {
            format: REPORT_FORMAT.to_string(),
            outcome: OUTCOME_COMPLETED.to_string(),
            steps: 0,
            limits,
            max_rotor_speed: None,
            max_hover_deviation: None,
            max_tracking_error: None,
            min_pairwise_distance: None,
            rotor_speed_ok: true,
            tracking_ok: true,
            separation_ok: true,
            all_ok: true,
            margins: None,
        }
    }

    /// Folds one monitor sample into the running extrema. Ties keep the
    /// earliest occurrence.
    pub fn update(&mut self, s: &MonitorSample) {
        fn keep_max<T: Copy>(slot: &mut Option<T>, cand: T, value: impl Fn(&T) -> f64) {
            if slot.as_ref().map_or(true, |cur| value(&cand) > value(cur)) {
                *slot = Some(cand);
            }
        }
        keep_max(&mut self.max_rotor_speed, s.max_rotor, |e| e.value);
        keep_max(&mut self.max_hover_deviation, s.max_hover_deviation, |e| e.value);
        keep_max(&mut self.max_tracking_error, s.max_tracking, |e| e.value);
        if let Some(d) = s.min_distance {
            keep_max(&mut self.min_pairwise_distance, d, |e| -e.value);
        }
        self.steps += 1;
        self.refresh();
    }

    fn refresh(&mut self) {
        let l = &self.limits;
        let peak_rotor = self.max_rotor_speed.map_or(0.0, |e| e.value);
        let peak_track = self.max_tracking_error.map_or(0.0, |e| e.value);
        self.rotor_speed_ok = peak_rotor <= l.max_rotor_speed;
        // the tracking bound is inclusive
        self.tracking_ok = peak_track <= l.delta;
        self.separation_ok = self.min_pairwise_distance.map_or(true, |e| e.value >= l.min_distance);
        self.all_ok = self.rotor_speed_ok && self.tracking_ok && self.separation_ok && self.outcome == OUTCOME_COMPLETED;
        self.margins = Some(Margins {
            rotor_speed: l.max_rotor_speed - peak_rotor,
            tracking: l.delta - peak_track,
            separation: self.min_pairwise_distance.map(|e| e.value - l.min_distance),
        });
    }

    pub fn from_samples<'a>(limits: MonitorLimits, samples: impl IntoIterator<Item = &'a MonitorSample>) -> Self {
        let mut r = Self::new(limits);
        for s in samples {
            r.update(s);
        }
        r
    }

    pub fn mark_aborted(&mut self, reason: &str) {
        self.outcome = format!("aborted: {reason}");
        self.refresh();
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentRecord {
    pub state: QuadState,
    pub input: ControlInput,
    pub speeds: RotorSpeeds,
    pub desired: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub t: f64,
    pub agents: Vec<AgentRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryLog {
    pub records: Vec<LogRecord>,
}

impl TrajectoryLog {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn agents(&self) -> usize {
        self.records.first().map_or(0, |r| r.agents.len())
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub log: TrajectoryLog,
    pub samples: Vec<MonitorSample>,
    pub report: SafetyReport,
    pub final_states: Vec<QuadState>,
}

/// A run that stopped on a numerical failure, with everything recorded so far.
#[derive(Debug, Clone)]
pub struct SimAbort {
    pub error: SimError,
    pub output: SimOutput,
}

/// Simulation inputs independent of the scenario file.
pub struct Fleet<'a> {
    pub deployment: Deployment<'a>,
    pub gains: &'a GainMatrix,
    pub params: &'a QuadParams,
    pub limits: MonitorLimits,
}

impl<'a> Fleet<'a> {
    /// Hover-consistent initial states on the desired trajectory at `t`.
    pub fn initial_states(&self, t: f64) -> Vec<QuadState> {
        let frame = self.deployment.frame(t);
        (0..self.deployment.plan.agents())
            .map(|i| {
                let d = self.deployment.desired(&frame, i).expect("agent index in range");
                let mut x = QuadState::hover(d.p.value(), d.psi.value(), self.params);
                x.v = d.p.derivative(1);
                x
            })
            .collect()
    }

    pub fn run(&self, config: &SimConfig, initial: Vec<QuadState>) -> Result<SimOutput, Box<SimAbort>> {
        let params = self.params;
        let n = self.deployment.plan.agents();
        let hover = RotorSpeeds::uniform(params.hover_rotor_speed());
        let mut states = initial;
        let mut prev = vec![hover; n];
        let mut desired = vec![Vector3::zeros(); n];
        let mut positions = vec![Vector3::zeros(); n];
        let mut inputs = vec![ControlInput::default(); n];
        let mut out = SimOutput {
            log: TrajectoryLog::default(),
            samples: Vec::with_capacity(config.steps() + 1),
            report: SafetyReport::new(self.limits),
            final_states: Vec::new(),
        };
        let abort = |mut out: SimOutput, states: &[QuadState], error: SimError| {
            out.report.mark_aborted(&error.to_string());
            out.final_states = states.to_vec();
            Box::new(SimAbort { error, output: out })
        };
        if let Err(e) = config.validate() {
            return Err(abort(out, &states, e));
        }
        let steps = config.steps();
        for k in 0..=steps {
            let t = config.time(k);
            let frame = self.deployment.frame(t);
            for i in 0..n {
                let x = &states[i];
                let d = self.deployment.desired(&frame, i).expect("agent index in range");
                let z_d = FlatState::from_jets(&d.p, &d.psi);
                let u = match control(x, &z_d, self.gains, params) {
                    Ok(c) => c.u,
                    Err(source) => return Err(abort(out, &states, SimError::Control { agent: i, t, source })),
                };
                let sol = match rotor_speeds_from_control(x, &u, params, &prev[i]) {
                    Ok(s) => s,
                    Err(source) => return Err(abort(out, &states, SimError::Rotor { agent: i, t, source })),
                };
                prev[i] = sol.speeds;
                inputs[i] = u;
                desired[i] = d.p.value();
                positions[i] = x.r;
            }
            let sample = safety_monitor(
                &StepView {
                    step: k,
                    t,
                    positions: &positions,
                    desired: &desired,
                    speeds: &prev,
                },
                &self.limits,
            );
            out.report.update(&sample);
            out.samples.push(sample);
            if k % config.record_stride == 0 || k == steps {
                out.log.records.push(LogRecord {
                    step: k,
                    t,
                    agents: (0..n)
                        .map(|i| AgentRecord {
                            state: states[i],
                            input: inputs[i],
                            speeds: prev[i],
                            desired: desired[i],
                        })
                        .collect(),
                });
            }
            if k < steps {
                for i in 0..n {
                    let next = rk4_step(&states[i], &inputs[i], config.dt, params);
                    if !next.is_finite() {
                        return Err(abort(out, &states, SimError::NonFiniteState { agent: i, t }));
                    }
                    states[i] = next;
                }
            }
        }
        out.final_states = states;
        Ok(out)
    }
}

/// Runs the whole fleet under `plan` from hover-consistent initial states.
pub fn run_closed_loop(scenario: &Scenario, plan: &DeploymentPlan, config: &SimConfig) -> Result<SimOutput, Box<SimAbort>> {
    let gains = design_gains(&scenario.controller.poles()).map_err(|e| {
        Box::new(SimAbort {
            error: SimError::Config(e.to_string()),
            output: SimOutput {
                log: TrajectoryLog::default(),
                samples: Vec::new(),
                report: SafetyReport::new(MonitorLimits::from_scenario(scenario)),
                final_states: Vec::new(),
            },
        })
    })?;
    let fleet = Fleet {
        deployment: Deployment::new(plan, &scenario.translation, scenario.controller.yaw_rad()),
        gains: &gains,
        params: &scenario.quad,
        limits: MonitorLimits::from_scenario(scenario),
    };
    log::info!(
        "simulating {} agents over [{}, {}] s at dt = {} s",
        plan.agents(),
        config.t_start,
        config.t_end,
        config.dt
    );
    fleet.run(config, fleet.initial_states(config.t_start))
}
