//! Scenario files: the single JSON input describing the fleet, both
//! formations, the rigid translation, timing, safety limits and solver
//! settings.
//!
//! Units: metres, seconds, radians, except `controller.yaw_deg` which is
//! authored in degrees.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::controller::PoleSet;
use crate::planner::DEFAULT_GRID;
use crate::quadrotor::QuadParams;
use crate::trajectory::{translation_schedule, RigidTranslation, TimeWindow};

pub const SCHEMA_VERSION: u32 = 1;

/// Smallest fleet the planner accepts.
pub const MIN_AGENTS: usize = 3;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormationFrame {
    /// Absolute inertial positions at the corresponding end of the window.
    #[default]
    Global,
    /// Offsets from the rigid displacement `d` at that instant.
    Relative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Formation {
    #[serde(default)]
    pub frame: FormationFrame,
    /// One `[x, y, z]` per agent, m.
    pub positions: Vec<[f64; 3]>,
}

impl Formation {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn relative(positions: Vec<[f64; 3]>) -> Self {
        Self {
            frame: FormationFrame::Relative,
            positions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyLimits {
    /// Tracking-error bound, m.
    pub delta: f64,
    /// Radius of the ball enclosing each vehicle, m.
    pub epsilon: f64,
}

impl SafetyLimits {
    /// Smallest admissible centre-to-centre distance, `2 epsilon`.
    pub fn min_distance(&self) -> f64 {
        2.0 * self.epsilon
    }
}

fn default_yaw_deg() -> f64 {
    0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(default = "default_position_poles")]
    pub position_poles: [f64; 4],
    #[serde(default = "default_yaw_poles")]
    pub yaw_poles: [f64; 2],
    /// Constant desired yaw, degrees.
    #[serde(default = "default_yaw_deg")]
    pub yaw_deg: f64,
}

fn default_position_poles() -> [f64; 4] {
    PoleSet::default().position
}

fn default_yaw_poles() -> [f64; 2] {
    PoleSet::default().yaw
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            position_poles: default_position_poles(),
            yaw_poles: default_yaw_poles(),
            yaw_deg: default_yaw_deg(),
        }
    }
}

impl ControllerConfig {
    pub fn poles(&self) -> PoleSet {
        PoleSet {
            position: self.position_poles,
            yaw: self.yaw_poles,
        }
    }

    pub fn yaw_rad(&self) -> f64 {
        self.yaw_deg.to_radians()
    }
}

fn default_dt() -> f64 {
    1e-3
}

fn default_stride() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    /// Integration step, s.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Defaults to the window start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_start: Option<f64>,
    /// Defaults to the window end.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    /// Record every `record_stride`-th step.
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            t_start: None,
            t_end: None,
            record_stride: default_stride(),
        }
    }
}

fn default_grid() -> usize {
    DEFAULT_GRID
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    /// Orientation grid resolution per angle.
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub allow_uncertified: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            allow_uncertified: false,
        }
    }
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub quad: QuadParams,
    pub initial_formation: Formation,
    pub final_formation: Formation,
    pub translation: RigidTranslation,
    pub window: TimeWindow,
    pub safety: SafetyLimits,
    pub controller: ControllerConfig,
    pub sim: SimSettings,
    pub planner: PlannerConfig,
}

/// On-disk layout; required fields are optional here so that their absence
/// is reported by name.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: Option<u32>,
    name: Option<String>,
    #[serde(default)]
    quad: QuadParams,
    initial_formation: Option<Formation>,
    final_formation: Option<Formation>,
    #[serde(default)]
    translation: RigidTranslation,
    window: Option<WindowFile>,
    safety: Option<SafetyFile>,
    #[serde(default)]
    controller: ControllerConfig,
    #[serde(default)]
    sim: SimSettings,
    #[serde(default)]
    planner: PlannerConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WindowFile {
    t_s: Option<f64>,
    t_f: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SafetyFile {
    delta: Option<f64>,
    epsilon: Option<f64>,
}

fn required<T>(value: Option<T>, field: &str) -> Result<T, ScenarioError> {
    value.ok_or_else(|| ScenarioError::Validation(format!("missing required field `{field}`")))
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation(msg.into())
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let raw: ScenarioFile = serde_json::from_str(text).map_err(|e| ScenarioError::Schema(e.to_string()))?;
        let window = required(raw.window, "window")?;
        let safety = required(raw.safety, "safety")?;
        let scenario = Scenario {
            schema_version: required(raw.schema_version, "schema_version")?,
            name: raw.name.unwrap_or_default(),
            quad: raw.quad,
            initial_formation: required(raw.initial_formation, "initial_formation")?,
            final_formation: required(raw.final_formation, "final_formation")?,
            translation: raw.translation,
            window: TimeWindow::new(required(window.t_s, "window.t_s")?, required(window.t_f, "window.t_f")?),
            safety: SafetyLimits {
                delta: required(safety.delta, "safety.delta")?,
                epsilon: required(safety.epsilon, "safety.epsilon")?,
            },
            controller: raw.controller,
            sim: raw.sim,
            planner: raw.planner,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for (name, value) in self.quad.named() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(invalid(format!("quad.{name} must be positive and finite, got {value}")));
            }
        }
        for (label, f) in [
            ("initial_formation", &self.initial_formation),
            ("final_formation", &self.final_formation),
        ] {
            if f.len() < MIN_AGENTS {
                return Err(invalid(format!("{label} needs at least {MIN_AGENTS} agents, got {}", f.len())));
            }
            if let Some(i) = f.positions.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
                return Err(invalid(format!("{label}.positions[{i}] is not finite")));
            }
        }
        if self.initial_formation.len() != self.final_formation.len() {
            return Err(invalid(format!(
                "initial_formation has {} agents but final_formation has {}",
                self.initial_formation.len(),
                self.final_formation.len()
            )));
        }
        let tr = &self.translation;
        if tr.d0.iter().chain(&tr.v0).chain(tr.v_final.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(invalid("translation values must be finite"));
        }
        let w = self.window;
        if !(w.t_s.is_finite() && w.t_f.is_finite()) {
            return Err(invalid("window times must be finite"));
        }
        if w.t_f <= w.t_s {
            return Err(invalid("time window empty"));
        }
        for (name, value) in [("safety.delta", self.safety.delta), ("safety.epsilon", self.safety.epsilon)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(invalid(format!("{name} must be positive and finite, got {value}")));
            }
        }
        for &p in self.controller.position_poles.iter().chain(&self.controller.yaw_poles) {
            if !(p < 0.0 && p.is_finite()) {
                return Err(invalid(format!("controller pole {p} must be negative")));
            }
        }
        if !self.controller.yaw_deg.is_finite() {
            return Err(invalid("controller.yaw_deg must be finite"));
        }
        if !(self.sim.dt > 0.0 && self.sim.dt.is_finite()) {
            return Err(invalid(format!("sim.dt must be positive, got {}", self.sim.dt)));
        }
        if self.sim.record_stride == 0 {
            return Err(invalid("sim.record_stride must be at least 1"));
        }
        let (t0, t1) = self.sim_span();
        if !(t0.is_finite() && t1.is_finite()) || t1 <= t0 {
            return Err(invalid(format!("simulation span [{t0}, {t1}] is empty")));
        }
        if self.planner.grid < 2 {
            return Err(invalid("planner.grid must be at least 2"));
        }
        Ok(())
    }

    pub fn agents(&self) -> usize {
        self.initial_formation.len()
    }

    /// `(t_start, t_end)` of the simulation, defaulting to the window.
    pub fn sim_span(&self) -> (f64, f64) {
        (
            self.sim.t_start.unwrap_or(self.window.t_s),
            self.sim.t_end.unwrap_or(self.window.t_f),
        )
    }

    pub fn displacement(&self, t: f64) -> Vector3<f64> {
        translation_schedule(t, &self.translation, &self.window).value()
    }

    fn relative_positions(&self, f: &Formation, t: f64) -> Vec<Vector3<f64>> {
        let d = match f.frame {
            FormationFrame::Global => self.displacement(t),
            FormationFrame::Relative => Vector3::zeros(),
        };
        f.positions.iter().map(|p| Vector3::from(*p) - d).collect()
    }

    /// `p_i - d(t_s)` for every agent.
    pub fn relative_start_positions(&self) -> Vec<Vector3<f64>> {
        self.relative_positions(&self.initial_formation, self.window.t_s)
    }

    /// `p_i - d(t_f)` for every agent.
    pub fn relative_final_positions(&self) -> Vec<Vector3<f64>> {
        self.relative_positions(&self.final_formation, self.window.t_f)
    }

    /// SHA-256 over the inputs that determine the deployment plan.
    pub fn planning_hash(&self) -> String {
        #[derive(Serialize)]
        struct PlanningInputs<'a> {
            initial_formation: &'a Formation,
            final_formation: &'a Formation,
            translation: &'a RigidTranslation,
            window: &'a TimeWindow,
            safety: &'a SafetyLimits,
            grid: usize,
        }
        let inputs = PlanningInputs {
            initial_formation: &self.initial_formation,
            final_formation: &self.final_formation,
            translation: &self.translation,
            window: &self.window,
            safety: &self.safety,
            grid: self.planner.grid,
        };
        let bytes = serde_json::to_vec(&inputs).expect("planning inputs serialize");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "schema_version": 1,
            "initial_formation": { "positions": [[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [6.0, 1.0, 0.0]] },
            "final_formation": { "positions": [[0.0, 0.0, 5.0], [3.0, 2.0, 5.0], [6.0, 0.0, 5.0]] },
            "window": { "t_s": 0.0, "t_f": 10.0 },
            "safety": { "delta": 0.1, "epsilon": 0.2 }
        })
    }

    #[test]
    fn defaults_applied() {
        let s = Scenario::from_json(&minimal().to_string()).unwrap();
        assert_eq!(s.quad, QuadParams::default());
        assert_eq!(s.quad.max_rotor_speed, 215.0);
        assert_eq!(s.sim.dt, 1e-3);
        assert_eq!(s.planner.grid, DEFAULT_GRID);
        assert_eq!(s.sim_span(), (0.0, 10.0));
        assert_eq!(s.controller.poles(), PoleSet::default());
    }

    #[test]
    fn missing_epsilon_is_named() {
        let mut v = minimal();
        v["safety"].as_object_mut().unwrap().remove("epsilon");
        let err = Scenario::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, ScenarioError::Validation(_)));
        assert!(err.to_string().contains("epsilon"), "{err}");
    }

    #[test]
    fn empty_window_rejected() {
        let mut v = minimal();
        v["window"]["t_f"] = serde_json::json!(0.0);
        let err = Scenario::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("time window empty"), "{err}");
    }

    #[test]
    fn type_errors_are_schema_errors() {
        let mut v = minimal();
        v["safety"]["delta"] = serde_json::json!("small");
        assert!(matches!(Scenario::from_json(&v.to_string()), Err(ScenarioError::Schema(_))));
        let mut v = minimal();
        v["unexpected"] = serde_json::json!(1);
        assert!(matches!(Scenario::from_json(&v.to_string()), Err(ScenarioError::Schema(_))));
    }

    #[test]
    fn too_few_agents_rejected() {
        let mut v = minimal();
        v["initial_formation"]["positions"] = serde_json::json!([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let err = Scenario::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("at least 3"), "{err}");
    }

    #[test]
    fn round_trip_is_identity() {
        let mut v = minimal();
        v["translation"] = serde_json::json!({ "d0": [1.5, 0.1, -3.0], "v0": [10.0, 0.0, 0.0], "mode": "blended", "v_final": [0.0, 1.0, 0.0] });
        v["controller"] = serde_json::json!({ "yaw_deg": 28.8 });
        v["sim"] = serde_json::json!({ "dt": 0.002, "t_end": 12.0, "record_stride": 7 });
        let s = Scenario::from_json(&v.to_string()).unwrap();
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(s, back);
        assert_eq!(s.to_json(), back.to_json());
        assert!((s.controller.yaw_rad() - 28.8f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn global_positions_are_made_relative() {
        let mut v = minimal();
        v["translation"] = serde_json::json!({ "d0": [0.0, 0.0, 0.0], "v0": [10.0, 0.0, 0.0] });
        let s = Scenario::from_json(&v.to_string()).unwrap();
        let fin = s.relative_final_positions();
        assert_eq!(fin[0], Vector3::new(-100.0, 0.0, 5.0));
        let start = s.relative_start_positions();
        assert_eq!(start[1], Vector3::new(3.0, 0.0, 0.0));
    }

    #[test]
    fn planning_hash_ignores_simulation_settings() {
        let s = Scenario::from_json(&minimal().to_string()).unwrap();
        let mut t = s.clone();
        t.sim.dt = 5e-4;
        t.quad.max_rotor_speed = 300.0;
        assert_eq!(s.planning_hash(), t.planning_hash());
        t.safety.delta = 0.2;
        assert_ne!(s.planning_hash(), t.planning_hash());
        assert_eq!(s.planning_hash().len(), 64);
    }
}
