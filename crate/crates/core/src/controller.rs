//! Feedback-linearizing trajectory tracker.
//!
//! The flat outputs are position (relative degree four) and yaw (relative
//! degree two). With `z = (r, r', r'', r''', psi, psi')` the input map
//! `u = M1^-1 (K (z_d - z) - M2)` turns the closed loop into four decoupled
//! integrator chains under state feedback.

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, SMatrix, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attitude::BodyAngles;
use crate::jets::{Jet4, Jet4Vec3};
use crate::quadrotor::{rate_terms, ControlInput, QuadError, QuadParams, QuadState};

pub const FLAT_DIM: usize = 14;

/// Thrust below `P_MIN_FRACTION * m * g` is treated as singular.
pub const P_MIN_FRACTION: f64 = 0.05;

pub const MIN_DECOUPLING_DET: f64 = 1e-9;

pub type FlatVector = SVector<f64, FLAT_DIM>;
pub type Gain = SMatrix<f64, 4, FLAT_DIM>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("singular decoupling matrix: det {det:e}, thrust {p} N")]
    SingularDecoupling { det: f64, p: f64 },
    #[error(transparent)]
    Attitude(#[from] QuadError),
    #[error("requested pole {0} is not in the open left half-plane")]
    UnstableRequest(f64),
    #[error("closed loop is not Hurwitz: eigenvalue with real part {0}")]
    NotHurwitz(f64),
}

/// Flat outputs and their derivatives up to the input-free order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlatState {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
    pub j: Vector3<f64>,
    pub psi: f64,
    pub psi_dot: f64,
}

impl FlatState {
    /// Desired flat state from position and yaw jets.
    pub fn from_jets(p: &Jet4Vec3, psi: &Jet4) -> Self {
        Self {
            r: p.derivative(0),
            v: p.derivative(1),
            a: p.derivative(2),
            j: p.derivative(3),
            psi: psi.value(),
            psi_dot: psi.derivative(1),
        }
    }

    pub fn to_vector(&self) -> FlatVector {
        let mut z = FlatVector::zeros();
        for (block, vec) in [self.r, self.v, self.a, self.j].iter().enumerate() {
            z.fixed_rows_mut::<3>(3 * block).copy_from(vec);
        }
        z[12] = self.psi;
        z[13] = self.psi_dot;
        z
    }
}

pub fn flat_state(x: &QuadState, params: &QuadParams) -> FlatState {
    let kb = crate::attitude::thrust_axis(&x.angles);
    let omega = x.omega();
    FlatState {
        r: x.r,
        v: x.v,
        a: (x.p / params.m) * kb - Vector3::new(0.0, 0.0, params.g),
        j: (x.p_dot * kb + x.p * omega.cross(&kb)) / params.m,
        psi: x.angles.psi,
        psi_dot: x.rates.z,
    }
}

/// `(r'''', psi'') = M1 * u + M2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoupling {
    pub m1: Matrix4<f64>,
    pub m2: Vector4<f64>,
    pub det: f64,
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn decoupling(x: &QuadState, params: &QuadParams) -> Result<Decoupling, ControlError> {
    let (axes, b1, b2) = rate_terms(x)?;
    let p_min = P_MIN_FRACTION * params.hover_thrust();
    let kb = axes.kb;
    let omega = x.rates.z * axes.k1 + x.rates.y * axes.j2 + x.rates.x * axes.ib;
    let m = params.m;

    let mut m1 = Matrix4::zeros();
    m1.fixed_view_mut::<3, 1>(0, 0).copy_from(&(kb / m));
    // (B1 u) x k_b = -[k_b]x B1 u
    m1.fixed_view_mut::<3, 3>(0, 1)
        .copy_from(&(-(x.p / m) * skew(&kb) * b1));
    m1[(3, 3)] = 1.0;

    let wk = omega.cross(&kb);
    let pos = (2.0 * x.p_dot * wk + x.p * b2.cross(&kb) + x.p * omega.cross(&wk)) / m;
    let m2 = Vector4::new(pos.x, pos.y, pos.z, 0.0);

    let det = m1.determinant();
    if x.p < p_min || det.abs() < MIN_DECOUPLING_DET || !det.is_finite() {
        return Err(ControlError::SingularDecoupling { det, p: x.p });
    }
    Ok(Decoupling { m1, m2, det })
}

/// Chain poles for the three position axes and yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoleSet {
    pub position: [f64; 4],
    pub yaw: [f64; 2],
}

impl Default for PoleSet {
    fn default() -> Self {
        Self {
            position: [-2.0, -2.4, -2.8, -3.2],
            yaw: [-3.0, -3.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    pub k: Gain,
    /// Gains on `(e, e', e'', e''')` for each position axis.
    pub position: [f64; 4],
    /// Gains on `(e, e')` for yaw.
    pub yaw: [f64; 2],
    /// Closed-loop eigenvalues found at construction, `(re, im)`.
    pub eigenvalues: Vec<(f64, f64)>,
}

/// Integrator chain of length `n` in controllable canonical form.
fn chain(n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    (a, b)
}

/// Single-input pole placement by Ackermann's formula,
/// `K = e_n^T C^-1 phi(A)` with `phi` the desired characteristic polynomial.
pub fn ackermann(a: &DMatrix<f64>, b: &DVector<f64>, poles: &[f64]) -> Result<DVector<f64>, ControlError> {
    let n = a.nrows();
    assert_eq!(poles.len(), n, "one pole per state");
    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for i in 0..n {
        ctrb.set_column(i, &col);
        col = a * &col;
    }
    // phi(s) = prod (s - lambda), coefficients from highest to constant
    let mut coeffs = vec![1.0];
    for &p in poles {
        let mut next = vec![0.0; coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= p * c;
        }
        coeffs = next;
    }
    let mut phi = DMatrix::zeros(n, n);
    for &c in &coeffs {
        phi = phi * a + DMatrix::identity(n, n) * c;
    }
    let inv = ctrb
        .try_inverse()
        .expect("integrator chain is controllable");
    let row = inv.row(n - 1) * phi;
    Ok(row.transpose())
}

/// Full flat-state system matrices `(A_SF, B_SF)`.
pub fn flat_system() -> (SMatrix<f64, FLAT_DIM, FLAT_DIM>, SMatrix<f64, FLAT_DIM, 4>) {
    let mut a = SMatrix::<f64, FLAT_DIM, FLAT_DIM>::zeros();
    for i in 0..9 {
        a[(i, i + 3)] = 1.0;
    }
    a[(12, 13)] = 1.0;
    let mut b = SMatrix::<f64, FLAT_DIM, 4>::zeros();
    for i in 0..3 {
        b[(9 + i, i)] = 1.0;
    }
    b[(13, 3)] = 1.0;
    (a, b)
}

pub fn design_gains(poles: &PoleSet) -> Result<GainMatrix, ControlError> {
    for &p in poles.position.iter().chain(&poles.yaw) {
        if !(p < 0.0) || !p.is_finite() {
            return Err(ControlError::UnstableRequest(p));
        }
    }
    let (a4, b4) = chain(4);
    let kp = ackermann(&a4, &b4, &poles.position)?;
    let (a2, b2) = chain(2);
    let ky = ackermann(&a2, &b2, &poles.yaw)?;

    let mut k = Gain::zeros();
    for axis in 0..3 {
        for order in 0..4 {
            k[(axis, axis + 3 * order)] = kp[order];
        }
    }
    k[(3, 12)] = ky[0];
    k[(3, 13)] = ky[1];

    // the closed loop is three copies of the position chain plus the yaw chain
    let mut eigenvalues = Vec::with_capacity(FLAT_DIM);
    for (a, b, gain, copies) in [(&a4, &b4, &kp, 3), (&a2, &b2, &ky, 1)] {
        let closed = a - b * gain.transpose();
        let schur = Schur::try_new(closed, 1e-14, 10_000).ok_or(ControlError::NotHurwitz(f64::NAN))?;
        for _ in 0..copies {
            eigenvalues.extend(schur.complex_eigenvalues().iter().map(|c| (c.re, c.im)));
        }
    }
    if let Some(&(re, _)) = eigenvalues.iter().find(|(re, _)| !(*re < 0.0)) {
        return Err(ControlError::NotHurwitz(re));
    }
    Ok(GainMatrix {
        k,
        position: [kp[0], kp[1], kp[2], kp[3]],
        yaw: [ky[0], ky[1]],
        eigenvalues,
    })
}

/// Control input together with the virtual input it realizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub u: ControlInput,
    /// Commanded `(r'''', psi'')`.
    pub v: Vector4<f64>,
    pub det: f64,
}

/// Virtual input `v = K (z_d - z)`, exploiting the block structure of `K`.
pub fn virtual_input(gains: &GainMatrix, z: &FlatState, z_d: &FlatState) -> Vector4<f64> {
    let [k0, k1, k2, k3] = gains.position;
    let pos = k0 * (z_d.r - z.r) + k1 * (z_d.v - z.v) + k2 * (z_d.a - z.a) + k3 * (z_d.j - z.j);
    let yaw = gains.yaw[0] * (z_d.psi - z.psi) + gains.yaw[1] * (z_d.psi_dot - z.psi_dot);
    Vector4::new(pos.x, pos.y, pos.z, yaw)
}

pub fn control(
    x: &QuadState,
    z_d: &FlatState,
    gains: &GainMatrix,
    params: &QuadParams,
) -> Result<ControlOutput, ControlError> {
    let dec = decoupling(x, params)?;
    let z = flat_state(x, params);
    let v = virtual_input(gains, &z, z_d);
    let u = dec
        .m1
        .lu()
        .solve(&(v - dec.m2))
        .ok_or(ControlError::SingularDecoupling { det: dec.det, p: x.p })?;
    Ok(ControlOutput {
        u: ControlInput::from_vector(&u),
        v,
        det: dec.det,
    })
}

/// Level hover at `r` with yaw `psi` as a flat state.
pub fn hover_flat(r: Vector3<f64>, psi: f64) -> FlatState {
    FlatState {
        r,
        psi,
        ..FlatState::default()
    }
}

/// `det M1 = p^2 cos(phi) / m^3`, vanishing at zero thrust or ninety degrees roll.
pub fn decoupling_determinant(angles: &BodyAngles, p: f64, params: &QuadParams) -> f64 {
    p * p * angles.phi.cos() / params.m.powi(3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(angles: [f64; 3], rates: [f64; 3], p: f64, p_dot: f64) -> QuadState {
        QuadState {
            r: Vector3::new(1.0, -2.0, 3.0),
            v: Vector3::new(0.5, 0.0, -0.3),
            angles: BodyAngles::new(angles[0], angles[1], angles[2]),
            rates: Vector3::from(rates),
            p,
            p_dot,
        }
    }

    #[test]
    fn hover_flat_state_is_at_rest() {
        let params = QuadParams::default();
        let x = QuadState::hover(Vector3::new(1.0, 2.0, 3.0), 0.0, &params);
        let z = flat_state(&x, &params);
        assert!(z.a.norm() < 1e-15 && z.j.norm() < 1e-15);
    }

    #[test]
    fn thrust_rate_gives_vertical_jerk() {
        let params = QuadParams::default();
        let mut x = QuadState::hover(Vector3::zeros(), 0.0, &params);
        x.p_dot = 1.0;
        let z = flat_state(&x, &params);
        assert!((z.j - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn hover_decoupling() {
        let params = QuadParams::default();
        let x = QuadState::hover(Vector3::zeros(), 0.4, &params);
        let d = decoupling(&x, &params).unwrap();
        assert!((d.m1.column(0) - Vector4::new(0.0, 0.0, 2.0, 0.0)).norm() < 1e-15);
        assert_eq!(d.m2, Vector4::zeros());
        assert_eq!(d.m1.row(3), nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn zero_thrust_is_singular() {
        let params = QuadParams::default();
        let mut x = QuadState::hover(Vector3::zeros(), 0.0, &params);
        x.p = 0.0;
        assert!(matches!(
            decoupling(&x, &params),
            Err(ControlError::SingularDecoupling { .. })
        ));
    }

    #[test]
    fn ninety_degree_roll_is_singular() {
        let params = QuadParams::default();
        let x = state([std::f64::consts::FRAC_PI_2, 0.1, 0.0], [0.0; 3], 5.0, 0.0);
        assert!(matches!(
            decoupling(&x, &params),
            Err(ControlError::SingularDecoupling { .. })
        ));
    }

    #[test]
    fn gains_from_polynomial_expansion() {
        let g = design_gains(&PoleSet {
            position: [-1.0, -2.0, -3.0, -4.0],
            yaw: [-1.0, -1.0],
        })
        .unwrap();
        assert_eq!(g.position, [24.0, 50.0, 35.0, 10.0]);
        assert_eq!(g.yaw, [1.0, 2.0]);
        assert_eq!(g.k[(1, 1)], 24.0);
        assert_eq!(g.k[(1, 4)], 50.0);
        assert_eq!(g.k[(1, 7)], 35.0);
        assert_eq!(g.k[(1, 10)], 10.0);
        assert_eq!(g.k[(3, 12)], 1.0);
        assert_eq!(g.k[(3, 13)], 2.0);
    }

    #[test]
    fn default_poles_place_eigenvalues() {
        let poles = PoleSet::default();
        let g = design_gains(&poles).unwrap();
        let mut re: Vec<f64> = g.eigenvalues.iter().map(|e| e.0).collect();
        re.sort_by(f64::total_cmp);
        let mut want: Vec<f64> = poles
            .position
            .iter()
            .flat_map(|&p| [p, p, p])
            .chain(poles.yaw)
            .collect();
        want.sort_by(f64::total_cmp);
        for (a, b) in re.iter().zip(&want) {
            assert!((a - b).abs() < 1e-8, "{:?} vs {:?}", re, want);
        }
        assert!(g.eigenvalues.iter().all(|e| e.1.abs() < 1e-8));
    }

    #[test]
    fn unstable_poles_rejected() {
        let bad = PoleSet {
            position: [-1.0, -2.0, 0.0, -4.0],
            yaw: [-1.0, -2.0],
        };
        assert_eq!(design_gains(&bad).unwrap_err(), ControlError::UnstableRequest(0.0));
    }

    #[test]
    fn equilibrium_needs_no_input() {
        let params = QuadParams::default();
        let gains = design_gains(&PoleSet::default()).unwrap();
        let x = QuadState::hover(Vector3::new(0.0, 0.0, 5.0), 0.0, &params);
        let out = control(&x, &hover_flat(x.r, 0.0), &gains, &params).unwrap();
        assert!(out.u.to_vector().norm() < 1e-15);
    }

    #[test]
    fn altitude_offset_commands_climb() {
        let params = QuadParams::default();
        let gains = design_gains(&PoleSet::default()).unwrap();
        let x = QuadState::hover(Vector3::zeros(), 0.0, &params);
        let out = control(&x, &hover_flat(Vector3::new(0.0, 0.0, 1.0), 0.0), &gains, &params).unwrap();
        assert!(out.u.u_p > 0.0);
    }

    proptest! {
        #[test]
        fn determinant_closed_form(
            a in proptest::array::uniform3(-1.2f64..1.2),
            r in proptest::array::uniform3(-2.0f64..2.0),
            p in 1.0f64..9.0,
            pd in -3.0f64..3.0,
        ) {
            let params = QuadParams::default();
            let x = state(a, r, p, pd);
            let d = decoupling(&x, &params).unwrap();
            let expect = decoupling_determinant(&x.angles, p, &params);
            prop_assert!((d.det - expect).abs() <= 1e-9 * expect.abs().max(1.0));
        }

        #[test]
        fn control_realizes_virtual_input(
            a in proptest::array::uniform3(-0.8f64..0.8),
            r in proptest::array::uniform3(-2.0f64..2.0),
            p in 2.0f64..8.0,
            pd in -3.0f64..3.0,
            off in proptest::array::uniform3(-1.0f64..1.0),
        ) {
            let params = QuadParams::default();
            let gains = design_gains(&PoleSet::default()).unwrap();
            let x = state(a, r, p, pd);
            let mut zd = flat_state(&x, &params);
            zd.r += Vector3::from(off);
            zd.psi += 0.1;
            let out = control(&x, &zd, &gains, &params).unwrap();
            let d = decoupling(&x, &params).unwrap();
            let realized = d.m1 * out.u.to_vector() + d.m2;
            prop_assert!((realized - out.v).norm() <= 1e-9 * out.v.norm().max(1.0));
            let full = gains.k * (zd.to_vector() - flat_state(&x, &params).to_vector());
            prop_assert!((full - out.v).norm() <= 1e-12 * out.v.norm().max(1.0));
        }
    }
}
