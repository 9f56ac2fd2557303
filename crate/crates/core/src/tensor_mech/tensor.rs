use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use super::DomainError;

pub type Vec3 = [f64; 3];

/// Row-major 3x3 second-order tensor.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Tensor3(pub [[f64; 3]; 3]);

impl Tensor3 {
    pub const ZERO: Tensor3 = Tensor3([[0.0; 3]; 3]);
    pub const IDENTITY: Tensor3 = Tensor3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_diag(d: Vec3) -> Self {
        let mut t = Self::ZERO;
        for i in 0..3 {
            t.0[i][i] = d[i];
        }
        t
    }

    pub fn from_rows(rows: [Vec3; 3]) -> Self {
        Tensor3(rows)
    }

    /// `a ⊗ b`, i.e. `T_ij = a_i b_j`.
    pub fn outer(a: &Vec3, b: &Vec3) -> Self {
        let mut t = Self::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                t.0[i][j] = a[i] * b[j];
            }
        }
        t
    }

    pub fn row(&self, i: usize) -> Vec3 {
        self.0[i]
    }

    pub fn col(&self, j: usize) -> Vec3 {
        [self.0[0][j], self.0[1][j], self.0[2][j]]
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Tensor3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Inverse via the adjugate; `None` when the determinant vanishes.
    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let m = &self.0;
        let inv_d = 1.0 / d;
        Some(Tensor3([
            [
                (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_d,
                (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_d,
                (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_d,
            ],
            [
                (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_d,
                (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_d,
                (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_d,
            ],
            [
                (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_d,
                (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_d,
                (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_d,
            ],
        ]))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut t = *self;
        for row in t.0.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        t
    }

    pub fn mul_vec(&self, v: &Vec3) -> Vec3 {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// `Fᵀ F`.
    pub fn right_cauchy_green(&self) -> Self {
        let f = &self.0;
        let mut c = Self::ZERO;
        for i in 0..3 {
            for j in i..3 {
                let v = f[0][i] * f[0][j] + f[1][i] * f[1][j] + f[2][i] * f[2][j];
                c.0[i][j] = v;
                c.0[j][i] = v;
            }
        }
        c
    }

    pub fn norm_frobenius(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Symmetry within `rel_tol` relative to the largest entry.
    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let m = &self.0;
        (m[0][1] - m[1][0]).abs() <= rel_tol * scale
            && (m[0][2] - m[2][0]).abs() <= rel_tol * scale
            && (m[1][2] - m[2][1]).abs() <= rel_tol * scale
    }

    /// Positive definiteness of a symmetric tensor by leading principal minors.
    pub fn is_positive_definite(&self) -> bool {
        let m = &self.0;
        let m1 = m[0][0];
        let m2 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        m1 > 0.0 && m2 > 0.0 && self.det() > 0.0
    }

    pub fn check_spd(&self) -> Result<(), DomainError> {
        if !self.0.iter().flatten().all(|v| v.is_finite()) {
            return Err(DomainError::NonFinite);
        }
        if !self.is_symmetric(1e-12) {
            return Err(DomainError::NotSymmetric);
        }
        if !self.is_positive_definite() {
            return Err(DomainError::NotPositiveDefinite);
        }
        Ok(())
    }

    pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }
}

impl Index<(usize, usize)> for Tensor3 {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for Tensor3 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.0[i][j]
    }
}

impl Add for Tensor3 {
    type Output = Tensor3;
    fn add(mut self, rhs: Tensor3) -> Tensor3 {
        self += rhs;
        self
    }
}

impl AddAssign for Tensor3 {
    fn add_assign(&mut self, rhs: Tensor3) {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] += rhs.0[i][j];
            }
        }
    }
}

impl Sub for Tensor3 {
    type Output = Tensor3;
    fn sub(mut self, rhs: Tensor3) -> Tensor3 {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] -= rhs.0[i][j];
            }
        }
        self
    }
}

impl Neg for Tensor3 {
    type Output = Tensor3;
    fn neg(self) -> Tensor3 {
        self.scale(-1.0)
    }
}

impl Mul for Tensor3 {
    type Output = Tensor3;
    fn mul(self, rhs: Tensor3) -> Tensor3 {
        let mut out = Tensor3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] = self.0[i][0] * rhs.0[0][j]
                    + self.0[i][1] * rhs.0[1][j]
                    + self.0[i][2] * rhs.0[2][j];
            }
        }
        out
    }
}

/// Deformation gradient; construction enforces `det F > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefGradient(Tensor3);

impl DefGradient {
    pub fn new(f: Tensor3) -> Result<Self, DomainError> {
        let j = f.det();
        if !j.is_finite() {
            return Err(DomainError::NonFinite);
        }
        if j <= 0.0 {
            return Err(DomainError::NonPositiveJacobian(j));
        }
        Ok(DefGradient(f))
    }

    pub fn identity() -> Self {
        DefGradient(Tensor3::IDENTITY)
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn jacobian(&self) -> f64 {
        self.0.det()
    }

    pub fn right_cauchy_green(&self) -> Tensor3 {
        self.0.right_cauchy_green()
    }
}

pub fn norm3(v: &Vec3) -> f64 {
    Tensor3::dot(v, v).sqrt()
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn sub3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale3(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let a = Tensor3([[2.0, 0.3, 0.1], [0.0, 1.5, -0.2], [0.4, 0.0, 1.1]]);
        let p = a * a.inverse().unwrap();
        assert!((p - Tensor3::IDENTITY).max_abs() < 1e-14);
    }

    #[test]
    fn singular_has_no_inverse() {
        let a = Tensor3::outer(&[1.0, 2.0, 3.0], &[0.0, 1.0, 0.0]);
        assert!(a.inverse().is_none());
    }

    #[test]
    fn def_gradient_rejects_inversion() {
        let f = Tensor3::from_diag([1.0, 1.0, -0.1]);
        assert!(matches!(
            DefGradient::new(f),
            Err(DomainError::NonPositiveJacobian(_))
        ));
    }

    #[test]
    fn cauchy_green_is_symmetric() {
        let f = Tensor3([[1.1, 0.2, 0.05], [0.0, 0.9, 0.3], [0.1, -0.2, 1.2]]);
        let c = f.right_cauchy_green();
        assert_eq!(c, c.transpose());
        assert!(c.is_positive_definite());
        assert!(((f.transpose() * f) - c).max_abs() < 1e-15);
    }
}
