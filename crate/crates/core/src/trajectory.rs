//! Temporal planning: the quintic blend, deployment-frame angle schedules,
//! leader/follower stations along `c1`, the transverse interpolation, the
//! rigid translation and their assembly into desired positions carrying
//! four exact time derivatives.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attitude::local_basis_jet;
use crate::jets::{Jet4, Jet4Vec3};
use crate::planner::DeploymentPlan;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("time {t} s is outside the deployment window [{t_s}, {t_f}] s")]
    OutOfWindow { t: f64, t_s: f64, t_f: f64 },
    #[error("unknown agent {0}")]
    UnknownAgent(usize),
}

/// Deployment window `[t_s, t_f]`, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub t_s: f64,
    pub t_f: f64,
}

impl TimeWindow {
    pub fn new(t_s: f64, t_f: f64) -> Self {
        Self { t_s, t_f }
    }

    pub fn duration(&self) -> f64 {
        self.t_f - self.t_s
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_s && t <= self.t_f
    }
}

/// Minimum-jerk blend `6 s^5 - 15 s^4 + 10 s^3`.
const SIGMA: [f64; 6] = [0.0, 0.0, 0.0, 10.0, -15.0, 6.0];

/// Antiderivative of the blend, `s^6 - 3 s^5 + 2.5 s^4`; integrates to 1/2.
const SIGMA_INTEGRAL: [f64; 7] = [0.0, 0.0, 0.0, 0.0, 2.5, -3.0, 1.0];

fn normalized_time(t: f64, w: &TimeWindow) -> Jet4 {
    Jet4::new([(t - w.t_s) / w.duration(), 1.0 / w.duration(), 0.0, 0.0, 0.0])
}

/// The blend and its time derivatives at `t` inside the window.
pub fn sigma_jet(t: f64, w: &TimeWindow) -> Result<Jet4, TrajectoryError> {
    if !w.contains(t) {
        return Err(TrajectoryError::OutOfWindow {
            t,
            t_s: w.t_s,
            t_f: w.t_f,
        });
    }
    Ok(normalized_time(t, w).polynomial(&SIGMA))
}

/// [`sigma_jet`] held at 0 before the window and at 1 after it.
pub fn sigma_clamped(t: f64, w: &TimeWindow) -> Jet4 {
    if t <= w.t_s {
        Jet4::constant(0.0)
    } else if t >= w.t_f {
        Jet4::constant(1.0)
    } else {
        normalized_time(t, w).polynomial(&SIGMA)
    }
}

/// Deployment-frame angles `(gamma, mu)` at `t`, blended by `sigma`.
pub fn angle_schedule(sigma: Jet4, plan: &DeploymentPlan) -> (Jet4, Jet4) {
    (
        sigma.lerp(plan.start.angles.gamma, plan.end.angles.gamma),
        sigma.lerp(plan.start.angles.mu, plan.end.angles.mu),
    )
}

/// Local coordinates of one agent in the deployment frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalCoords {
    pub u: Jet4,
    pub v: Jet4,
    pub w: Jet4,
}

/// Leader stations along `c1` at a given blend value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderStations {
    pub first: Jet4,
    pub last: Jet4,
}

pub fn leader_stations(sigma: Jet4, plan: &DeploymentPlan) -> LeaderStations {
    let (b1, bn) = (plan.ordering.first(), plan.ordering.last());
    LeaderStations {
        first: sigma.lerp(plan.local_start[b1][0], plan.local_final[b1][0]),
        last: sigma.lerp(plan.local_start[bn][0], plan.local_final[bn][0]),
    }
}

/// Local coordinates of `agent` given the blend and the leader stations.
pub fn local_coords(
    sigma: Jet4,
    leaders: &LeaderStations,
    plan: &DeploymentPlan,
    agent: usize,
) -> Result<LocalCoords, TrajectoryError> {
    if agent >= plan.agents() {
        return Err(TrajectoryError::UnknownAgent(agent));
    }
    let (s, f) = (plan.local_start[agent], plan.local_final[agent]);
    let u = if agent == plan.ordering.first() {
        leaders.first
    } else if agent == plan.ordering.last() {
        leaders.last
    } else {
        let beta = sigma.lerp(plan.weights.start[agent], plan.weights.end[agent]);
        leaders.first + beta * (leaders.last - leaders.first)
    };
    Ok(LocalCoords {
        u,
        v: sigma.lerp(s[1], f[1]),
        w: sigma.lerp(s[2], f[2]),
    })
}

/// Local coordinates of `agent` at time `t`; frozen outside the window.
pub fn local_schedule(t: f64, plan: &DeploymentPlan, agent: usize) -> Result<LocalCoords, TrajectoryError> {
    let w = TimeWindow::new(plan.t_s, plan.t_f);
    let sigma = sigma_clamped(t, &w);
    local_coords(sigma, &leader_stations(sigma, plan), plan, agent)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationMode {
    /// `d(t) = d0 + v0 t` throughout.
    #[default]
    Constant,
    /// Velocity `v0` before the window, `v_final` after it, blended inside.
    Blended,
}

/// Rigid-body displacement of the whole formation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidTranslation {
    /// Displacement at `t = 0`, m.
    #[serde(default)]
    pub d0: [f64; 3],
    /// Velocity before (and, in constant mode, after) the window, m/s.
    #[serde(default)]
    pub v0: [f64; 3],
    #[serde(default)]
    pub mode: TranslationMode,
    /// Velocity after the window in blended mode, m/s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_final: Option<[f64; 3]>,
}

impl RigidTranslation {
    pub fn constant(d0: Vector3<f64>, v0: Vector3<f64>) -> Self {
        Self {
            d0: d0.into(),
            v0: v0.into(),
            mode: TranslationMode::Constant,
            v_final: None,
        }
    }

    pub fn final_velocity(&self) -> [f64; 3] {
        match self.mode {
            TranslationMode::Constant => self.v0,
            TranslationMode::Blended => self.v_final.unwrap_or(self.v0),
        }
    }
}

pub fn translation_schedule(t: f64, tr: &RigidTranslation, w: &TimeWindow) -> Jet4Vec3 {
    let time = Jet4::time(t);
    let vf = tr.final_velocity();
    let blend = match tr.mode {
        TranslationMode::Constant => None,
        TranslationMode::Blended if vf == tr.v0 => None,
        TranslationMode::Blended => Some(if t <= w.t_s {
            Jet4::constant(0.0)
        } else if t >= w.t_f {
            // half the window at the mean velocity, then the final velocity
            Jet4::new([0.5 * w.duration() + (t - w.t_f), 1.0, 0.0, 0.0, 0.0])
        } else {
            normalized_time(t, w).polynomial(&SIGMA_INTEGRAL) * w.duration()
        }),
    };
    let axis = |i: usize| {
        let base = time * tr.v0[i] + Jet4::constant(tr.d0[i]);
        match blend {
            Some(b) => base + b * (vf[i] - tr.v0[i]),
            None => base,
        }
    };
    Jet4Vec3::new(axis(0), axis(1), axis(2))
}

/// Desired position with four derivatives, and desired yaw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesiredState {
    pub p: Jet4Vec3,
    pub psi: Jet4,
}

impl DesiredState {
    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.psi.is_finite()
    }
}

/// Quantities shared by every agent at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSample {
    pub t: f64,
    pub sigma: Jet4,
    pub gamma: Jet4,
    pub mu: Jet4,
    pub basis: [Jet4Vec3; 3],
    pub d: Jet4Vec3,
    pub leaders: LeaderStations,
}

/// A plan bound to its rigid translation and yaw reference.
#[derive(Debug, Clone, Copy)]
pub struct Deployment<'a> {
    pub plan: &'a DeploymentPlan,
    pub translation: &'a RigidTranslation,
    /// Constant desired yaw, rad.
    pub yaw: f64,
}

impl<'a> Deployment<'a> {
    pub fn new(plan: &'a DeploymentPlan, translation: &'a RigidTranslation, yaw: f64) -> Self {
        Self {
            plan,
            translation,
            yaw,
        }
    }

    pub fn window(&self) -> TimeWindow {
        TimeWindow::new(self.plan.t_s, self.plan.t_f)
    }

    pub fn frame(&self, t: f64) -> FrameSample {
        let w = self.window();
        let sigma = sigma_clamped(t, &w);
        let (gamma, mu) = angle_schedule(sigma, self.plan);
        FrameSample {
            t,
            sigma,
            gamma,
            mu,
            basis: local_basis_jet(gamma, mu),
            d: translation_schedule(t, self.translation, &w),
            leaders: leader_stations(sigma, self.plan),
        }
    }

    pub fn local(&self, frame: &FrameSample, agent: usize) -> Result<LocalCoords, TrajectoryError> {
        local_coords(frame.sigma, &frame.leaders, self.plan, agent)
    }

    /// `p = d + u c1 + v c2 + w c3`.
    pub fn desired(&self, frame: &FrameSample, agent: usize) -> Result<DesiredState, TrajectoryError> {
        let a = self.local(frame, agent)?;
        let [c1, c2, c3] = frame.basis;
        Ok(DesiredState {
            p: frame.d + c1.scale(a.u) + c2.scale(a.v) + c3.scale(a.w),
            psi: Jet4::constant(self.yaw),
        })
    }
}

pub fn desired_state(
    t: f64,
    plan: &DeploymentPlan,
    translation: &RigidTranslation,
    yaw: f64,
    agent: usize,
) -> Result<DesiredState, TrajectoryError> {
    let dep = Deployment::new(plan, translation, yaw);
    dep.desired(&dep.frame(t), agent)
}
