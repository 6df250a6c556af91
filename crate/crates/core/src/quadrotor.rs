//! Fourteen-state quadcopter model, angular-acceleration algebra, rotor
//! mixing and recovery of rotor speeds from control inputs.
//!
//! State order: `x, y, z, vx, vy, vz, phi, theta, psi, phi', theta', psi', p, p'`.
//! The angular velocity `omega` is kept in inertial components.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attitude::{body_axes, thrust_axis, BodyAngles, BodyAxes};

pub const STATE_DIM: usize = 14;

/// Below this `cos(theta)` the Euler-rate map is treated as singular.
pub const MIN_COS_THETA: f64 = 1e-6;

/// Squared rotor speeds in `[-NEGATIVE_SQUARE_TOL, 0)` are clamped to zero.
pub const NEGATIVE_SQUARE_TOL: f64 = 1e-9;

pub const ROTOR_TOLERANCE: f64 = 1e-9;
pub const ROTOR_MAX_ITER: usize = 50;

/// Residual the solver drives toward before returning; well below the
/// acceptance tolerance so the speeds themselves are accurate.
const ROTOR_POLISH: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("attitude near singularity: cos(theta) = {0:e}")]
    NearSingularAttitude(f64),
    #[error("infeasible thrust: rotor {rotor} needs squared speed {square:e}")]
    InfeasibleThrust { rotor: usize, square: f64 },
    #[error("rotor speed solve did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

fn default_m() -> f64 {
    0.5
}
fn default_g() -> f64 {
    9.81
}
fn default_l() -> f64 {
    0.25
}
fn default_jx() -> f64 {
    0.0196
}
fn default_jy() -> f64 {
    0.0196
}
fn default_jz() -> f64 {
    0.0264
}
fn default_jr() -> f64 {
    3.357e-5
}
fn default_b() -> f64 {
    3e-5
}
fn default_k() -> f64 {
    1.1e-6
}
fn default_max_rotor_speed() -> f64 {
    215.0
}

/// Vehicle parameters. SI units throughout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadParams {
    /// Mass, kg.
    #[serde(default = "default_m")]
    pub m: f64,
    /// Gravitational acceleration, m/s^2.
    #[serde(default = "default_g")]
    pub g: f64,
    /// Arm length, m.
    #[serde(default = "default_l")]
    pub l: f64,
    /// Principal moments of inertia, kg m^2.
    #[serde(default = "default_jx")]
    pub jx: f64,
    #[serde(default = "default_jy")]
    pub jy: f64,
    #[serde(default = "default_jz")]
    pub jz: f64,
    /// Rotor inertia, kg m^2.
    #[serde(default = "default_jr")]
    pub jr: f64,
    /// Thrust coefficient, N s^2/rad^2.
    #[serde(default = "default_b")]
    pub b: f64,
    /// Drag-torque coefficient, N m s^2/rad^2.
    #[serde(default = "default_k")]
    pub k: f64,
    /// Rotor speed limit, rad/s.
    #[serde(default = "default_max_rotor_speed")]
    pub max_rotor_speed: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            m: default_m(),
            g: default_g(),
            l: default_l(),
            jx: default_jx(),
            jy: default_jy(),
            jz: default_jz(),
            jr: default_jr(),
            b: default_b(),
            k: default_k(),
            max_rotor_speed: default_max_rotor_speed(),
        }
    }
}

impl QuadParams {
    pub fn inertia(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(self.jx, self.jy, self.jz))
    }

    pub fn hover_thrust(&self) -> f64 {
        self.m * self.g
    }

    /// `sqrt(m g / 4 b)`: the speed every rotor spins at in level hover.
    pub fn hover_rotor_speed(&self) -> f64 {
        (self.hover_thrust() / (4.0 * self.b)).sqrt()
    }

    /// Names and values of every parameter, for validation messages.
    pub fn named(&self) -> [(&'static str, f64); 10] {
        [
            ("m", self.m),
            ("g", self.g),
            ("l", self.l),
            ("jx", self.jx),
            ("jy", self.jy),
            ("jz", self.jz),
            ("jr", self.jr),
            ("b", self.b),
            ("k", self.k),
            ("max_rotor_speed", self.max_rotor_speed),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadState {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    pub angles: BodyAngles,
    /// Euler-angle rates `(phi', theta', psi')`.
    pub rates: Vector3<f64>,
    /// Total thrust, N.
    pub p: f64,
    pub p_dot: f64,
}

impl QuadState {
    /// Level, motionless hover at `r` with yaw `psi`.
    pub fn hover(r: Vector3<f64>, psi: f64, params: &QuadParams) -> Self {
        Self {
            r,
            v: Vector3::zeros(),
            angles: BodyAngles::new(0.0, 0.0, psi),
            rates: Vector3::zeros(),
            p: params.hover_thrust(),
            p_dot: 0.0,
        }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.r.x,
            self.r.y,
            self.r.z,
            self.v.x,
            self.v.y,
            self.v.z,
            self.angles.phi,
            self.angles.theta,
            self.angles.psi,
            self.rates.x,
            self.rates.y,
            self.rates.z,
            self.p,
            self.p_dot,
        ]
    }

    pub fn from_array(a: &[f64; STATE_DIM]) -> Self {
        Self {
            r: Vector3::new(a[0], a[1], a[2]),
            v: Vector3::new(a[3], a[4], a[5]),
            angles: BodyAngles::new(a[6], a[7], a[8]),
            rates: Vector3::new(a[9], a[10], a[11]),
            p: a[12],
            p_dot: a[13],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Inertial angular velocity `psi' k1 + theta' j2 + phi' i_b`.
    pub fn omega(&self) -> Vector3<f64> {
        let a = body_axes(&self.angles);
        omega_from_axes(&a, &self.rates)
    }
}

fn omega_from_axes(a: &BodyAxes, rates: &Vector3<f64>) -> Vector3<f64> {
    rates.z * a.k1 + rates.y * a.j2 + rates.x * a.ib
}

/// Thrust acceleration `u_p` (N/s^2) and Euler-angle accelerations (rad/s^2).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    pub u_p: f64,
    pub u_phi: f64,
    pub u_theta: f64,
    pub u_psi: f64,
}

impl ControlInput {
    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self {
            u_p: v[0],
            u_phi: v[1],
            u_theta: v[2],
            u_psi: v[3],
        }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.u_p, self.u_phi, self.u_theta, self.u_psi)
    }

    pub fn angular(&self) -> Vector3<f64> {
        Vector3::new(self.u_phi, self.u_theta, self.u_psi)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Rotor angular speeds, rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RotorSpeeds(pub [f64; 4]);

impl RotorSpeeds {
    pub fn uniform(w: f64) -> Self {
        Self([w; 4])
    }

    pub fn squares(&self) -> Vector4<f64> {
        Vector4::from(self.0.map(|w| w * w))
    }

    /// Residual speed in the gyroscopic term, `-w1 + w2 - w3 + w4`.
    pub fn varpi_r(&self) -> f64 {
        -self.0[0] + self.0[1] - self.0[2] + self.0[3]
    }

    pub fn max(&self) -> (usize, f64) {
        let mut best = (0, self.0[0]);
        for (j, &w) in self.0.iter().enumerate().skip(1) {
            if w > best.1 {
                best = (j, w);
            }
        }
        best
    }
}

/// Time derivative of the state vector.
pub fn dynamics_rhs(x: &QuadState, u: &ControlInput, params: &QuadParams) -> [f64; STATE_DIM] {
    let kb = thrust_axis(&x.angles);
    let acc = (x.p / params.m) * kb - Vector3::new(0.0, 0.0, params.g);
    [
        x.v.x,
        x.v.y,
        x.v.z,
        acc.x,
        acc.y,
        acc.z,
        x.rates.x,
        x.rates.y,
        x.rates.z,
        u.u_phi,
        u.u_theta,
        u.u_psi,
        x.p_dot,
        u.u_p,
    ]
}

/// Angular acceleration split as `omega' = B1 * (u_phi, u_theta, u_psi) + B2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularAccel {
    pub omega: Vector3<f64>,
    pub omega_dot: Vector3<f64>,
    pub b1: Matrix3<f64>,
    pub b2: Vector3<f64>,
}

/// `B1 = [i_b j2 k1]` and the rate-product term `B2` for the given state.
pub fn rate_terms(x: &QuadState) -> Result<(BodyAxes, Matrix3<f64>, Vector3<f64>), QuadError> {
    let ct = x.angles.theta.cos();
    if ct.abs() < MIN_COS_THETA {
        return Err(QuadError::NearSingularAttitude(ct));
    }
    let a = body_axes(&x.angles);
    let [pd, td, sd] = [x.rates.x, x.rates.y, x.rates.z];
    let b1 = Matrix3::from_columns(&[a.ib, a.j2, a.k1]);
    let b2 = td * sd * a.k1.cross(&a.j1) + pd * (sd * a.k1 + td * a.j2).cross(&a.i2);
    Ok((a, b1, b2))
}

pub fn angular_accel(x: &QuadState, u: &ControlInput) -> Result<AngularAccel, QuadError> {
    let (a, b1, b2) = rate_terms(x)?;
    Ok(AngularAccel {
        omega: omega_from_axes(&a, &x.rates),
        omega_dot: b1 * u.angular() + b2,
        b1,
        b2,
    })
}

/// Maps squared rotor speeds to `(p, tau_phi, tau_theta, tau_psi)`.
pub fn mixer_matrix(params: &QuadParams) -> Matrix4<f64> {
    let (b, bl, k) = (params.b, params.b * params.l, params.k);
    Matrix4::new(
        b, b, b, b, //
        0.0, -bl, 0.0, bl, //
        -bl, 0.0, bl, 0.0, //
        -k, k, -k, k,
    )
}

pub fn mixer_forward(speeds: &RotorSpeeds, params: &QuadParams) -> Vector4<f64> {
    mixer_matrix(params) * speeds.squares()
}

/// Inverts the mixer: squared speeds producing thrust and body torques.
pub fn mixer_inverse(wrench: &Vector4<f64>, params: &QuadParams) -> Vector4<f64> {
    let (p, tf, tt, ts) = (wrench[0], wrench[1], wrench[2], wrench[3]);
    let (b, bl, k) = (params.b, params.b * params.l, params.k);
    // rotors 1,3 and 2,4 split the thrust according to the yaw torque
    let odd = 0.5 * (p / b - ts / k); // w1^2 + w3^2
    let even = 0.5 * (p / b + ts / k); // w2^2 + w4^2
    Vector4::new(
        0.5 * (odd - tt / bl),
        0.5 * (even - tf / bl),
        0.5 * (odd + tt / bl),
        0.5 * (even + tf / bl),
    )
}

/// Coefficients of the quadratic rotor-speed system
/// `H1 * w^2 + H2 * w + H3 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorSystem {
    pub h1: Matrix4<f64>,
    pub h2: Matrix4<f64>,
    pub h3: Vector4<f64>,
}

impl RotorSystem {
    pub fn new(x: &QuadState, u: &ControlInput, params: &QuadParams) -> Result<Self, QuadError> {
        let (a, b1, b2) = rate_terms(x)?;
        let omega = omega_from_axes(&a, &x.rates);
        let j = params.inertia();

        let mut block = Matrix4::identity();
        block.fixed_view_mut::<3, 3>(1, 1).copy_from(&b1);
        let h1 = block * mixer_matrix(params);

        let gyro = params.jr * omega.cross(&a.kb);
        let mut h2 = Matrix4::zeros();
        for (col, sign) in [1.0, -1.0, 1.0, -1.0].into_iter().enumerate() {
            h2.fixed_view_mut::<3, 1>(1, col).copy_from(&(sign * gyro));
        }

        let torque = j * (b1 * u.angular()) + j * b2 + omega.cross(&(j * omega));
        // the thrust row balances the current thrust, not its second derivative
        let h3 = Vector4::new(-x.p, -torque.x, -torque.y, -torque.z);
        Ok(Self { h1, h2, h3 })
    }

    pub fn residual(&self, speeds: &RotorSpeeds) -> Vector4<f64> {
        self.h1 * speeds.squares() + self.h2 * Vector4::from(speeds.0) + self.h3
    }

    /// Residual infinity norm scaled by `max(1, |H3|_inf)`.
    pub fn scaled_residual(&self, speeds: &RotorSpeeds) -> f64 {
        self.residual(speeds).amax() / self.h3.amax().max(1.0)
    }
}

/// Output of [`rotor_speeds_from_control`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorSolution {
    pub speeds: RotorSpeeds,
    pub iterations: usize,
    pub residual: f64,
}

fn sqrt_checked(squares: &Vector4<f64>) -> Result<RotorSpeeds, QuadError> {
    let mut out = [0.0; 4];
    for (j, &s) in squares.iter().enumerate() {
        if s >= 0.0 {
            out[j] = s.sqrt();
        } else if s >= -NEGATIVE_SQUARE_TOL {
            out[j] = 0.0;
        } else {
            return Err(QuadError::InfeasibleThrust { rotor: j, square: s });
        }
    }
    Ok(RotorSpeeds(out))
}

/// Solves the quadratic rotor-speed system by fixed-point iteration seeded
/// with `prev`, finishing with damped Newton steps if the iteration stalls.
pub fn rotor_speeds_from_control(
    x: &QuadState,
    u: &ControlInput,
    params: &QuadParams,
    prev: &RotorSpeeds,
) -> Result<RotorSolution, QuadError> {
    let sys = RotorSystem::new(x, u, params)?;
    let lu = sys.h1.lu();
    let fixed_point = |w: &RotorSpeeds| {
        lu.solve(&(-(sys.h3 + sys.h2 * Vector4::from(w.0))))
            .expect("mixer with nonsingular attitude is invertible")
    };

    // an infeasible iterate is only reported if Newton cannot reach a root
    let mut infeasible = None;
    let mut speeds = match sqrt_checked(&fixed_point(prev)) {
        Ok(s) => s,
        Err(e) => {
            infeasible = Some(e);
            RotorSpeeds::uniform(params.hover_rotor_speed())
        }
    };
    let mut residual = sys.scaled_residual(&speeds);
    let mut iterations = 1;
    while infeasible.is_none() && residual > ROTOR_POLISH && iterations < ROTOR_MAX_ITER {
        let next = match sqrt_checked(&fixed_point(&speeds)) {
            Ok(s) => s,
            Err(e) => {
                infeasible = Some(e);
                break;
            }
        };
        let next_residual = sys.scaled_residual(&next);
        iterations += 1;
        if next_residual >= 0.5 * residual {
            // slow contraction: hand over to Newton
            break;
        }
        speeds = next;
        residual = next_residual;
    }
    while residual > ROTOR_POLISH && iterations < ROTOR_MAX_ITER {
        let w = Vector4::from(speeds.0);
        let jac = sys.h1 * Matrix4::from_diagonal(&(2.0 * w)) + sys.h2;
        let step = jac
            .lu()
            .solve(&sys.residual(&speeds))
            .ok_or(QuadError::NoConvergence { iterations, residual })?;
        // backtrack until the step stays nonnegative and reduces the residual
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let next = w - lambda * step;
            if next.iter().all(|v| *v >= 0.0) {
                let candidate = RotorSpeeds(next.into());
                let r = sys.scaled_residual(&candidate);
                if r < residual {
                    accepted = Some((candidate, r));
                    break;
                }
            }
            lambda *= 0.5;
        }
        iterations += 1;
        let Some((next, next_residual)) = accepted else {
            break;
        };
        speeds = next;
        residual = next_residual;
        if lambda * step.amax() <= 1e-13 * w.amax().max(1.0) {
            break;
        }
    }
    if residual > ROTOR_TOLERANCE || !residual.is_finite() {
        return Err(infeasible.unwrap_or(QuadError::NoConvergence { iterations, residual }));
    }
    Ok(RotorSolution {
        speeds,
        iterations,
        residual,
    })
}

/// Body torque vector `T = B1 * (tau_phi, tau_theta, tau_psi)` produced by
/// the given rotor speeds.
pub fn body_torque(x: &QuadState, speeds: &RotorSpeeds, params: &QuadParams) -> Result<Vector3<f64>, QuadError> {
    let (_, b1, _) = rate_terms(x)?;
    let w = mixer_forward(speeds, params);
    Ok(b1 * Vector3::new(w[1], w[2], w[3]))
}

/// `J omega' + omega x (J omega) + Jr omega x (w_r k_b) - T`; zero when the
/// rotor speeds realize the commanded rotational motion.
pub fn rotational_residual(
    x: &QuadState,
    u: &ControlInput,
    speeds: &RotorSpeeds,
    params: &QuadParams,
) -> Result<Vector3<f64>, QuadError> {
    let acc = angular_accel(x, u)?;
    let j = params.inertia();
    let kb = thrust_axis(&x.angles);
    let torque = body_torque(x, speeds, params)?;
    Ok(j * acc.omega_dot
        + acc.omega.cross(&(j * acc.omega))
        + params.jr * acc.omega.cross(&(speeds.varpi_r() * kb))
        - torque)
}
