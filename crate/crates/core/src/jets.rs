//! Order-4 jets: a value carried together with its first four time derivatives.
//!
//! Coefficient `k` of a [`Jet4`] is the `k`-th derivative d^k/dt^k (not the
//! Taylor coefficient divided by `k!`). Products follow the Leibniz rule and
//! function composition follows Faa di Bruno's formula, both truncated after
//! the fourth derivative.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use nalgebra::Vector3;

/// Highest derivative order carried by a jet.
pub const ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet4 {
    pub c: [f64; ORDER + 1],
}

impl Jet4 {
    pub const fn new(c: [f64; ORDER + 1]) -> Self {
        Self { c }
    }

    /// A quantity that does not change with time.
    pub const fn constant(value: f64) -> Self {
        Self {
            c: [value, 0.0, 0.0, 0.0, 0.0],
        }
    }

    /// The jet of the time variable itself evaluated at `t`.
    pub const fn time(t: f64) -> Self {
        Self {
            c: [t, 1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn derivative(&self, order: usize) -> f64 {
        self.c[order]
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|v| v.is_finite())
    }

    pub fn scale(self, k: f64) -> Self {
        Self {
            c: self.c.map(|v| v * k),
        }
    }

    /// Re-expresses the jet against a rescaled clock `t = a * tau + b`,
    /// returning the derivatives with respect to `tau`.
    pub fn rescale_time(self, a: f64) -> Self {
        let mut c = self.c;
        let mut f = 1.0;
        for v in c.iter_mut() {
            *v *= f;
            f *= a;
        }
        Self { c }
    }

    /// Composes an outer scalar function with this jet given the outer
    /// function's derivatives `f[0..=4]` evaluated at `self.value()`.
    pub fn compose(self, f: [f64; ORDER + 1]) -> Self {
        let [_, g1, g2, g3, g4] = self.c;
        let g1_2 = g1 * g1;
        Self {
            c: [
                f[0],
                f[1] * g1,
                f[2] * g1_2 + f[1] * g2,
                f[3] * g1_2 * g1 + 3.0 * f[2] * g1 * g2 + f[1] * g3,
                f[4] * g1_2 * g1_2
                    + 6.0 * f[3] * g1_2 * g2
                    + f[2] * (3.0 * g2 * g2 + 4.0 * g1 * g3)
                    + f[1] * g4,
            ],
        }
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose([s, c, -s, -c, s])
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose([c, -s, -c, s, c])
    }

    /// Returns `(sin, cos)` sharing one trigonometric evaluation.
    pub fn sin_cos(self) -> (Self, Self) {
        let (s, c) = self.c[0].sin_cos();
        (self.compose([s, c, -s, -c, s]), self.compose([c, -s, -c, s, c]))
    }

    /// Evaluates `sum coeffs[k] * x^k` by Horner's rule.
    pub fn polynomial(self, coeffs: &[f64]) -> Self {
        let mut acc = Jet4::constant(0.0);
        for &a in coeffs.iter().rev() {
            acc = acc * self + Jet4::constant(a);
        }
        acc
    }

    /// Linear blend `(1 - s) * a + s * b` with constant endpoints.
    pub fn lerp(self, a: f64, b: f64) -> Self {
        let mut out = self.scale(b - a);
        out.c[0] += a;
        out
    }
}

impl Index<usize> for Jet4 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.c[i]
    }
}

impl Add for Jet4 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut c = self.c;
        for (a, b) in c.iter_mut().zip(rhs.c) {
            *a += b;
        }
        Self { c }
    }
}

impl AddAssign for Jet4 {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for Jet4 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Neg for Jet4 {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            c: self.c.map(|v| -v),
        }
    }
}

impl Mul for Jet4 {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let a = self.c;
        let b = rhs.c;
        Self {
            c: [
                a[0] * b[0],
                a[1] * b[0] + a[0] * b[1],
                a[2] * b[0] + 2.0 * a[1] * b[1] + a[0] * b[2],
                a[3] * b[0] + 3.0 * (a[2] * b[1] + a[1] * b[2]) + a[0] * b[3],
                a[4] * b[0]
                    + 4.0 * (a[3] * b[1] + a[1] * b[3])
                    + 6.0 * a[2] * b[2]
                    + a[0] * b[4],
            ],
        }
    }
}

impl Mul<f64> for Jet4 {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.scale(rhs)
    }
}

/// Three jets forming a time-varying 3-vector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet4Vec3 {
    pub x: Jet4,
    pub y: Jet4,
    pub z: Jet4,
}

impl Jet4Vec3 {
    pub const fn new(x: Jet4, y: Jet4, z: Jet4) -> Self {
        Self { x, y, z }
    }

    pub fn constant(v: Vector3<f64>) -> Self {
        Self::new(
            Jet4::constant(v.x),
            Jet4::constant(v.y),
            Jet4::constant(v.z),
        )
    }

    /// The `order`-th derivative as a plain vector.
    pub fn derivative(&self, order: usize) -> Vector3<f64> {
        Vector3::new(self.x.c[order], self.y.c[order], self.z.c[order])
    }

    pub fn value(&self) -> Vector3<f64> {
        self.derivative(0)
    }

    pub fn scale(self, k: Jet4) -> Self {
        Self::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn dot(self, rhs: Self) -> Jet4 {
        self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Jet4Vec3 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Jet4Vec3 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use crate::test_support::fd::central_derivatives;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-12)
    }

    #[test]
    fn constant_times_time() {
        let out = Jet4::constant(2.0) * Jet4::time(3.0);
        assert_eq!(out.c, [6.0, 2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn sin_of_time_at_zero() {
        let out = Jet4::time(0.0).sin();
        let expect = [0.0, 1.0, 0.0, -1.0, 0.0];
        for k in 0..5 {
            assert!((out.c[k] - expect[k]).abs() < 1e-15, "{:?}", out);
        }
    }

    #[test]
    fn sin_of_t_squared_matches_finite_differences() {
        // jet of t^2 at t = 1
        let g = Jet4::new([1.0, 2.0, 2.0, 0.0, 0.0]);
        let out = g.sin();
        let fd = central_derivatives(|t| (t * t).sin(), 1.0, 1e-2);
        assert!((out.c[0] - 1f64.sin()).abs() < 1e-15);
        for k in 0..4 {
            assert!(
                rel(fd[k], out.c[k + 1]) < 1e-6,
                "order {}: fd {} jet {}",
                k + 1,
                fd[k],
                out.c[k + 1]
            );
        }
    }

    #[test]
    fn time_rescale() {
        // f(t) = t^2 at t = 3, rescaled by a = 2 gives d/dtau of (2 tau)^2.
        let j = Jet4::time(3.0) * Jet4::time(3.0);
        let r = j.rescale_time(2.0);
        assert_eq!(r.c, [9.0, 12.0, 8.0, 0.0, 0.0]);
    }

    #[test]
    fn polynomial_matches_product() {
        let t = Jet4::time(0.7);
        let p = t.polynomial(&[1.0, -2.0, 0.0, 3.0]);
        let q = Jet4::constant(1.0) - t * 2.0 + t * t * t * 3.0;
        for k in 0..5 {
            assert!((p.c[k] - q.c[k]).abs() < 1e-14);
        }
    }

    fn poly_jet(coeffs: [f64; 5], t: f64) -> (Jet4, impl Fn(f64) -> f64) {
        let f = move |x: f64| coeffs.iter().rev().fold(0.0, |acc, &a| acc * x + a);
        (Jet4::time(t).polynomial(&coeffs), f)
    }

    proptest! {
        #[test]
        fn product_rule_matches_finite_differences(
            a in proptest::array::uniform5(-2.0f64..2.0),
            b in proptest::array::uniform5(-2.0f64..2.0),
            t in -1.0f64..1.0,
        ) {
            let (ja, fa) = poly_jet(a, t);
            let (jb, fb) = poly_jet(b, t);
            let prod = ja * jb;
            // degree-8 product: the eighth-order stencil is exact up to rounding
            let fd = central_derivatives(|s| fa(s) * fb(s), t, 0.25);
            for k in 0..4 {
                let scale = prod.c[k + 1].abs().max(1.0);
                prop_assert!((fd[k] - prod.c[k + 1]).abs() / scale < 1e-9,
                    "order {} fd {} jet {}", k + 1, fd[k], prod.c[k + 1]);
            }
        }

        #[test]
        fn pythagorean_identity_holds_at_every_order(
            c in proptest::array::uniform5(-3.0f64..3.0),
        ) {
            let (s, co) = Jet4::new(c).sin_cos();
            let one = s * s + co * co;
            prop_assert!((one.c[0] - 1.0).abs() < 1e-10);
            for k in 1..5 {
                prop_assert!(one.c[k].abs() < 1e-10, "order {}: {}", k, one.c[k]);
            }
        }
    }
}
