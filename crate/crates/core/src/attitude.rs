//! Euler-angle kinematics: 3-2-1 direction cosine matrices, the deployment
//! frame basis, quadcopter body axes and the Euler-rate map.
//!
//! Conventions: a [`Dcm`] maps inertial components to rotated-frame
//! components, so its rows are the rotated axes written in inertial
//! coordinates. All vectors returned here are inertial unless the name says
//! otherwise.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::jets::{Jet4, Jet4Vec3};

/// A 3x3 direction cosine matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dcm(pub Matrix3<f64>);

impl Dcm {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Row `h` as an inertial vector (the `h`-th rotated axis).
    pub fn row_vector(&self, h: usize) -> Vector3<f64> {
        self.0.row(h).transpose()
    }

    /// Largest entry of `|D^T D - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).amax()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }
}

/// Deployment-frame angles (second and third Euler angles; the first is zero).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameAngles {
    pub gamma: f64,
    pub mu: f64,
}

impl FrameAngles {
    pub fn new(gamma: f64, mu: f64) -> Self {
        Self { gamma, mu }
    }
}

/// Vehicle roll, pitch and yaw.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyAngles {
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
}

impl BodyAngles {
    pub fn new(phi: f64, theta: f64, psi: f64) -> Self {
        Self { phi, theta, psi }
    }
}

/// 3-2-1 Euler direction cosine matrix.
pub fn euler_dcm(x1: f64, x2: f64, x3: f64) -> Dcm {
    let (s1, c1) = x1.sin_cos();
    let (s2, c2) = x2.sin_cos();
    let (s3, c3) = x3.sin_cos();
    Dcm(Matrix3::new(
        c2 * c3,
        c2 * s3,
        -s2,
        s1 * s2 * c3 - c1 * s3,
        s1 * s2 * s3 + c1 * c3,
        s1 * c2,
        c1 * s2 * c3 + s1 * s3,
        c1 * s2 * s3 - s1 * c3,
        c1 * c2,
    ))
}

/// The deployment-frame rotation `R_D(gamma, mu)`; its rows are the frame
/// axes `c1, c2, c3` in inertial coordinates.
pub fn frame_rotation(angles: FrameAngles) -> Dcm {
    euler_dcm(0.0, angles.gamma, angles.mu)
}

/// Unit vectors `(c1, c2, c3)` of the deployment frame.
pub fn local_basis(angles: FrameAngles) -> [Vector3<f64>; 3] {
    let r = frame_rotation(angles);
    [r.row_vector(0), r.row_vector(1), r.row_vector(2)]
}

/// [`local_basis`] propagated through time-varying angles.
pub fn local_basis_jet(gamma: Jet4, mu: Jet4) -> [Jet4Vec3; 3] {
    let (sg, cg) = gamma.sin_cos();
    let (sm, cm) = mu.sin_cos();
    let zero = Jet4::constant(0.0);
    [
        Jet4Vec3::new(cg * cm, cg * sm, -sg),
        Jet4Vec3::new(-sm, cm, zero),
        Jet4Vec3::new(sg * cm, sg * sm, cg),
    ]
}

/// The intermediate and final triads of the yaw-pitch-roll sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyAxes {
    pub i1: Vector3<f64>,
    pub j1: Vector3<f64>,
    pub k1: Vector3<f64>,
    pub i2: Vector3<f64>,
    pub j2: Vector3<f64>,
    pub k2: Vector3<f64>,
    pub ib: Vector3<f64>,
    pub jb: Vector3<f64>,
    pub kb: Vector3<f64>,
}

pub fn body_axes(angles: &BodyAngles) -> BodyAxes {
    let (sf, cf) = angles.phi.sin_cos();
    let (st, ct) = angles.theta.sin_cos();
    let (sp, cp) = angles.psi.sin_cos();
    BodyAxes {
        i1: Vector3::new(cp, sp, 0.0),
        j1: Vector3::new(-sp, cp, 0.0),
        k1: Vector3::new(0.0, 0.0, 1.0),
        i2: Vector3::new(ct * cp, ct * sp, -st),
        j2: Vector3::new(-sp, cp, 0.0),
        k2: Vector3::new(st * cp, st * sp, ct),
        ib: Vector3::new(ct * cp, ct * sp, -st),
        jb: Vector3::new(cp * sf * st - cf * sp, cf * cp + sf * sp * st, ct * sf),
        kb: Vector3::new(sf * sp + cf * cp * st, cf * sp * st - sf * cp, cf * ct),
    }
}

/// Thrust direction `k_b` alone; hot path of the dynamics.
#[inline]
pub fn thrust_axis(angles: &BodyAngles) -> Vector3<f64> {
    let (sf, cf) = angles.phi.sin_cos();
    let (st, ct) = angles.theta.sin_cos();
    let (sp, cp) = angles.psi.sin_cos();
    Vector3::new(sf * sp + cf * cp * st, cf * sp * st - sf * cp, cf * ct)
}

/// Body angular velocity derived from Euler angles and their rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerRateMap {
    /// Angular velocity in inertial components, `psi' k1 + theta' j2 + phi' i_b`.
    pub omega: Vector3<f64>,
    /// The same vector in body components, `Gamma * (phi', theta', psi')`.
    pub omega_body: Vector3<f64>,
    /// Euler-rate-to-body-rate matrix. `det = cos(theta)`.
    pub gamma: Matrix3<f64>,
}

pub fn rate_matrix(angles: &BodyAngles) -> Matrix3<f64> {
    let (sf, cf) = angles.phi.sin_cos();
    let (st, ct) = angles.theta.sin_cos();
    Matrix3::new(1.0, 0.0, -st, 0.0, cf, ct * sf, 0.0, -sf, cf * ct)
}

pub fn euler_rate_map(angles: &BodyAngles, rates: Vector3<f64>) -> EulerRateMap {
    let axes = body_axes(angles);
    let gamma = rate_matrix(angles);
    EulerRateMap {
        omega: rates.z * axes.k1 + rates.y * axes.j2 + rates.x * axes.ib,
        omega_body: gamma * rates,
        gamma,
    }
}
