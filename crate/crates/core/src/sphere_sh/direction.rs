//! Unit direction vectors on the sphere.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance on `x^2 + y^2 + z^2 - 1` accepted by [`UnitDirection::new`].
const NORM_TOL: f64 = 1e-12;

/// A point on the unit sphere. Downstream code treats antipodal pairs
/// `(v, -v)` as the same fiber axis; see [`UnitDirection::axis_angle_to`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct UnitDirection {
    x: f64,
    y: f64,
    z: f64,
}

impl UnitDirection {
    /// Builds a direction, requiring the input to already be unit length
    /// (squared norm within 1e-12 of one).
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let sq = x * x + y * y + z * z;
        if !(sq.is_finite() && (sq - 1.0).abs() <= NORM_TOL) {
            return Err(Error::InvalidArgument(format!(
                "direction ({x}, {y}, {z}) is not unit length (|v|^2 = {sq})"
            )));
        }
        Ok(Self { x, y, z })
    }

    /// Normalizes an arbitrary non-zero vector onto the sphere.
    pub fn normalize(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize near-zero vector ({x}, {y}, {z})"
            )));
        }
        Ok(Self { x: x / n, y: y / n, z: z / n })
    }

    pub const fn x_axis() -> Self {
        Self { x: 1.0, y: 0.0, z: 0.0 }
    }

    pub const fn y_axis() -> Self {
        Self { x: 0.0, y: 1.0, z: 0.0 }
    }

    pub const fn z_axis() -> Self {
        Self { x: 0.0, y: 0.0, z: 1.0 }
    }

    /// Polar angle theta from +z and azimuth phi.
    pub fn from_spherical(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Self { x: st * cp, y: st * sp, z: ct }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(&self, other: &Self) -> [f64; 3] {
        [
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        ]
    }

    pub fn neg(&self) -> Self {
        Self { x: -self.x, y: -self.y, z: -self.z }
    }

    /// Angle in radians ignoring sign: `arccos(|a . b|)`, in `[0, pi/2]`.
    pub fn axis_angle_to(&self, other: &Self) -> f64 {
        self.dot(other).abs().clamp(0.0, 1.0).acos()
    }

    /// Plain angle in radians, in `[0, pi]`.
    pub fn angle_to(&self, other: &Self) -> f64 {
        self.dot(other).clamp(-1.0, 1.0).acos()
    }

    /// Resolves the antipodal ambiguity: flips so z > 0, with z = 0 ties
    /// broken by y > 0 then x >= 0.
    pub fn canonical_axis(&self) -> Self {
        let flip = self.z < 0.0
            || (self.z == 0.0 && (self.y < 0.0 || (self.y == 0.0 && self.x < 0.0)));
        if flip {
            self.neg()
        } else {
            *self
        }
    }

    /// Two unit vectors completing an orthonormal frame with `self`.
    pub fn orthonormal_frame(&self) -> (Self, Self) {
        // Pick the seed axis least aligned with self to avoid degeneracy.
        let seed = if self.x.abs() <= self.y.abs() && self.x.abs() <= self.z.abs() {
            Self::x_axis()
        } else if self.y.abs() <= self.z.abs() {
            Self::y_axis()
        } else {
            Self::z_axis()
        };
        let c = self.cross(&seed);
        let u = Self::normalize(c[0], c[1], c[2]).expect("frame seed is non-degenerate");
        let w = self.cross(&u);
        let v = Self::new(w[0], w[1], w[2]).unwrap_or_else(|_| {
            Self::normalize(w[0], w[1], w[2]).expect("cross of orthonormal pair")
        });
        (u, v)
    }
}

impl TryFrom<[f64; 3]> for UnitDirection {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        // Accept small rounding from serialized text and renormalize.
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if (n2 - 1.0).abs() <= 1e-6 {
            Self::normalize(v[0], v[1], v[2])
        } else {
            Self::new(v[0], v[1], v[2])
        }
    }
}

impl From<UnitDirection> for [f64; 3] {
    fn from(d: UnitDirection) -> Self {
        d.as_array()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_unit() {
        assert!(UnitDirection::new(1.0, 1.0, 0.0).is_err());
        assert!(UnitDirection::new(0.0, 0.0, 0.0).is_err());
        assert!(UnitDirection::new(f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn normalize_recovers_unit() {
        let d = UnitDirection::normalize(3.0, 4.0, 0.0).unwrap();
        assert!((d.x() - 0.6).abs() < 1e-15);
        assert!((d.y() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn axis_angle_is_antipodal() {
        let a = UnitDirection::z_axis();
        let b = a.neg();
        assert!(a.axis_angle_to(&b) < 1e-12);
        let c = UnitDirection::x_axis();
        assert!((a.axis_angle_to(&c) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn canonical_axis_flips_lower_hemisphere() {
        let d = UnitDirection::normalize(0.3, -0.2, -0.5).unwrap();
        let c = d.canonical_axis();
        assert!(c.z() > 0.0);
        assert!(c.axis_angle_to(&d) < 1e-12);
        // z = 0 tie broken by y.
        let e = UnitDirection::normalize(0.6, -0.8, 0.0).unwrap();
        assert!(e.canonical_axis().y() > 0.0);
    }

    #[test]
    fn frame_is_orthonormal() {
        let d = UnitDirection::normalize(0.4, -0.1, 0.9).unwrap();
        let (u, v) = d.orthonormal_frame();
        assert!(d.dot(&u).abs() < 1e-12);
        assert!(d.dot(&v).abs() < 1e-12);
        assert!(u.dot(&v).abs() < 1e-12);
    }
}
