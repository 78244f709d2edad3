//! Plain 2-vectors and 2x2 matrices.
//!
//! Target values live in the plane even when the physical target dimension
//! is one; scalar problems keep the second component at exactly zero, so no
//! code path needs to branch on the dimension.

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the cross product; positive when `o` is
    /// counterclockwise from `self`.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn scale(self, t: f64) -> Vec2 {
        Vec2::new(t * self.x, t * self.y)
    }

    /// Unit vector in the same direction; `None` for vectors shorter than
    /// `tiny`.
    pub fn unit(self, tiny: f64) -> Option<Vec2> {
        let n = self.norm();
        if n <= tiny {
            None
        } else {
            Some(self.scale(1.0 / n))
        }
    }

    /// Counterclockwise rotation by a quarter turn.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn from_polar(r: f64, theta: f64) -> Vec2 {
        Vec2::new(r * theta.cos(), r * theta.sin())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self).scale(t)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, t: f64) -> Vec2 {
        self.scale(t)
    }
}

/// Row-major 2x2 matrix.  Used for rotations and for the Hessian of the
/// potential at a well.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
    };

    pub fn rotation(theta: f64) -> Mat2 {
        let (s, c) = theta.sin_cos();
        Mat2 {
            a: c,
            b: -s,
            c: s,
            d: c,
        }
    }

    /// Rotation by `2 pi / k`, with exact entries for the quarter-turn
    /// divisors so that sign symmetries hold to the last bit.
    pub fn rotation_fraction(k: usize) -> Mat2 {
        match k {
            1 => Mat2::IDENTITY,
            2 => Mat2 {
                a: -1.0,
                b: 0.0,
                c: 0.0,
                d: -1.0,
            },
            4 => Mat2 {
                a: 0.0,
                b: -1.0,
                c: 1.0,
                d: 0.0,
            },
            _ => Mat2::rotation(2.0 * std::f64::consts::PI / k as f64),
        }
    }

    pub fn apply(&self, v: Vec2) -> Vec2 {
        Vec2::new(self.a * v.x + self.b * v.y, self.c * v.x + self.d * v.y)
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2 {
            a: self.a,
            b: self.c,
            c: self.b,
            d: self.d,
        }
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        Mat2 {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }

    /// Integer power; panics only through stack depth, so fine for the small
    /// exponents used here.
    pub fn pow(&self, k: i64) -> Mat2 {
        let mut out = Mat2::IDENTITY;
        let base = if k >= 0 { *self } else { self.transpose() };
        // rotations are orthogonal, so the transpose is the inverse
        for _ in 0..k.unsigned_abs() {
            out = out.mul(&base);
        }
        out
    }

    /// Eigenvalues of a symmetric matrix, ascending.
    pub fn sym_eigenvalues(&self) -> (f64, f64) {
        let half_tr = 0.5 * (self.a + self.d);
        let det = self.a * self.d - self.b * self.c;
        let disc = (half_tr * half_tr - det).max(0.0).sqrt();
        (half_tr - disc, half_tr + disc)
    }
}

/// Least-squares line fit `y ~ intercept + slope * x`.
///
/// Returns `None` when fewer than two points are supplied or the abscissae
/// are degenerate.
pub fn line_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= f64::EPSILON * n * mx.abs().max(1.0).powi(2) {
        return None;
    }
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rotation_is_orthogonal() {
        let r = Mat2::rotation(0.7);
        let p = r.mul(&r.transpose());
        assert_abs_diff_eq!(p.a, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.b, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.d, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rotation_power_matches_angle_sum() {
        let r = Mat2::rotation(2.0 * std::f64::consts::PI / 3.0);
        let r2 = r.pow(2);
        let direct = Mat2::rotation(4.0 * std::f64::consts::PI / 3.0);
        assert_abs_diff_eq!(r2.a, direct.a, epsilon = 1e-14);
        assert_abs_diff_eq!(r2.c, direct.c, epsilon = 1e-14);
        let back = r.pow(-1).apply(r.apply(Vec2::new(0.3, -1.2)));
        assert_abs_diff_eq!(back.x, 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(back.y, -1.2, epsilon = 1e-14);
    }

    #[test]
    fn sym_eigenvalues_of_diagonal() {
        let m = Mat2 {
            a: 2.0,
            b: 0.0,
            c: 0.0,
            d: 5.0,
        };
        let (lo, hi) = m.sym_eigenvalues();
        assert_abs_diff_eq!(lo, 2.0);
        assert_abs_diff_eq!(hi, 5.0);
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        let (b, m) = line_fit(&xs, &ys).unwrap();
        assert_abs_diff_eq!(b, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m, -0.5, epsilon = 1e-12);
    }
}
