//! Rotation arithmetic on SO(3) and the generalized addition used by the
//! recursive estimator.
//!
//! Rotations are unit quaternions `(w, x, y, z)` with the Hamilton product.
//! `a.compose(&b)` is the rotation "apply `b`, then `a`", matching the
//! matrix product `R_a R_b`. Tangent vectors are axis-angle increments.
//!
//! The estimator increment is applied on the left: `R' = exp(δr) ∘ R`.
//! Every caller in this crate (estimator, losses, environment integration)
//! uses that single convention.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::estimator::Estimate;

pub type Vec3 = [f64; 3];

/// Small 3-vector helpers; the crate keeps its geometry on plain arrays.
pub mod v3 {
    use super::Vec3;

    #[inline]
    pub fn add(a: Vec3, b: Vec3) -> Vec3 {
        [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
    }

    #[inline]
    pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }

    #[inline]
    pub fn scale(a: Vec3, s: f64) -> Vec3 {
        [a[0] * s, a[1] * s, a[2] * s]
    }

    #[inline]
    pub fn dot(a: Vec3, b: Vec3) -> f64 {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    #[inline]
    pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }

    #[inline]
    pub fn norm(a: Vec3) -> f64 {
        dot(a, a).sqrt()
    }

    pub fn normalize(a: Vec3) -> Vec3 {
        let n = norm(a);
        if n > 0.0 {
            scale(a, 1.0 / n)
        } else {
            a
        }
    }
}

/// Below this angle exp/log switch to their series expansions.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Axis-angle increment in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Tangent3(pub Vec3);

impl Tangent3 {
    pub const ZERO: Tangent3 = Tangent3([0.0; 3]);

    pub fn norm(&self) -> f64 {
        v3::norm(self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Builds a quaternion from raw components, normalized and canonicalized.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        UnitQuaternion { w, x, y, z }.normalized().canonical()
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        quat_exp(Tangent3(v3::scale(v3::normalize(axis), angle)))
    }

    pub fn vector(&self) -> Vec3 {
        [self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Self::IDENTITY;
        }
        UnitQuaternion { w: self.w / n, x: self.x / n, y: self.y / n, z: self.z / n }
    }

    /// Sign representative with `w >= 0`; when `w == 0` the first nonzero
    /// vector component is made non-negative.
    pub fn canonical(self) -> Self {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else if self.x != 0.0 {
            self.x < 0.0
        } else if self.y != 0.0 {
            self.y < 0.0
        } else {
            self.z < 0.0
        };
        if flip {
            UnitQuaternion { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
        } else {
            self
        }
    }

    pub fn conjugate(&self) -> Self {
        UnitQuaternion { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn inverse(&self) -> Self {
        self.conjugate()
    }

    /// Raw Hamilton product, no renormalization.
    pub fn hamilton(&self, b: &Self) -> Self {
        let a = self;
        UnitQuaternion {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }

    pub fn compose(&self, b: &Self) -> Self {
        quat_compose(*self, *b)
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let u = self.vector();
        let t = v3::scale(v3::cross(u, v), 2.0);
        v3::add(v3::add(v, v3::scale(t, self.w)), v3::cross(u, t))
    }

    /// Row-major rotation matrix.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Approximate equality up to the quaternion double cover.
    pub fn same_rotation(&self, other: &Self, tol: f64) -> bool {
        let a = self.canonical().to_array();
        let b = other.canonical().to_array();
        a.iter().zip(b.iter()).all(|(p, q)| (p - q).abs() <= tol)
    }
}

pub fn quat_compose(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion {
    a.hamilton(&b).normalized().canonical()
}

/// Exponential map from an axis-angle vector to a unit quaternion.
pub fn quat_exp(t: Tangent3) -> UnitQuaternion {
    let [a, b, c] = t.0;
    let theta2 = a * a + b * b + c * c;
    let theta = theta2.sqrt();
    let (w, s) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
    } else {
        let half = 0.5 * theta;
        (half.cos(), half.sin() / theta)
    };
    UnitQuaternion { w, x: s * a, y: s * b, z: s * c }.normalized().canonical()
}

/// Logarithm map; the result has norm in `[0, π]`.
pub fn quat_log(q: UnitQuaternion) -> Tangent3 {
    let q = q.canonical();
    let v = q.vector();
    let n = v3::norm(v);
    let factor = if n < SMALL_ANGLE * 0.5 {
        // 2 atan(n / w) / n
        (2.0 / q.w) * (1.0 - n * n / (3.0 * q.w * q.w))
    } else {
        2.0 * n.atan2(q.w) / n
    };
    Tangent3(v3::scale(v, factor))
}

/// Minimal rotation angle between two orientations, in `[0, π]`.
pub fn geodesic_distance(a: UnitQuaternion, b: UnitQuaternion) -> f64 {
    let r = a.conjugate().hamilton(&b);
    let n = v3::norm(r.vector());
    2.0 * n.atan2(r.w.abs())
}

/// First two columns of the rotation matrix, stacked column-wise.
pub fn rotation_to_6d(q: UnitQuaternion) -> [f64; 6] {
    let m = q.to_matrix();
    [m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]]
}

/// `goal⁻¹ ∘ current`.
pub fn relative_rotation(goal: UnitQuaternion, current: UnitQuaternion) -> UnitQuaternion {
    quat_compose(goal.inverse(), current)
}

/// Tangent-space increment of the augmented estimator state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateIncrement {
    pub dx: Vec3,
    pub dr: Tangent3,
    pub dv: Vec3,
    pub dw: Vec3,
    pub dl: Vec<f64>,
}

impl StateIncrement {
    pub fn zero(latent_dim: usize) -> Self {
        StateIncrement {
            dx: [0.0; 3],
            dr: Tangent3::ZERO,
            dv: [0.0; 3],
            dw: [0.0; 3],
            dl: vec![0.0; latent_dim],
        }
    }

    pub fn dim(&self) -> usize {
        12 + self.dl.len()
    }

    /// Flat layout `[dx, dr, dv, dw, dl]`.
    pub fn from_slice(v: &[f64]) -> Self {
        assert!(v.len() >= 12, "increment needs at least 12 entries");
        StateIncrement {
            dx: [v[0], v[1], v[2]],
            dr: Tangent3([v[3], v[4], v[5]]),
            dv: [v[6], v[7], v[8]],
            dw: [v[9], v[10], v[11]],
            dl: v[12..].to_vec(),
        }
    }
}

/// Generalized addition `s ⊞ δ`. Latent entries are added raw; the
/// estimator applies its own squash afterwards.
pub fn boxplus(s: &Estimate, d: &StateIncrement) -> Estimate {
    assert_eq!(s.latent.len(), d.dl.len(), "latent dimension mismatch");
    Estimate {
        x: v3::add(s.x, d.dx),
        r: quat_compose(quat_exp(d.dr), s.r),
        v: v3::add(s.v, d.dv),
        w: v3::add(s.w, d.dw),
        latent: s.latent.iter().zip(&d.dl).map(|(a, b)| a + b).collect(),
    }
}

/// The 24 rotations of the cube, sorted lexicographically on canonical
/// `(w, x, y, z)`.
pub fn octahedral_group() -> Vec<UnitQuaternion> {
    const TOL: f64 = 1e-6;
    let h = FRAC_1_SQRT_2;
    let generators = [
        UnitQuaternion::new(h, h, 0.0, 0.0),
        UnitQuaternion::new(h, 0.0, h, 0.0),
        UnitQuaternion::new(h, 0.0, 0.0, h),
    ];
    let mut group = vec![UnitQuaternion::IDENTITY];
    let mut frontier = vec![UnitQuaternion::IDENTITY];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for g in &frontier {
            for gen in &generators {
                let candidate = quat_compose(*gen, *g);
                if !group.iter().any(|e| e.same_rotation(&candidate, TOL)) {
                    group.push(candidate);
                    next.push(candidate);
                }
            }
        }
        frontier = next;
    }
    // Snap to exact values so ordering does not depend on rounding noise.
    let snap = |c: f64| {
        for exact in [0.0, 0.5, h, 1.0] {
            if (c.abs() - exact).abs() < TOL {
                return exact.copysign(c) + 0.0;
            }
        }
        c
    };
    let mut group: Vec<UnitQuaternion> = group
        .into_iter()
        .map(|q| {
            let q = q.canonical();
            UnitQuaternion { w: snap(q.w), x: snap(q.x), y: snap(q.y), z: snap(q.z) }.canonical()
        })
        .collect();
    group.sort_by(|a, b| {
        a.to_array()
            .partial_cmp(&b.to_array())
            .expect("finite quaternion components")
    });
    group
}

/// Index of `q` in the octahedral group, if it is one of its elements.
pub fn octahedral_index(q: UnitQuaternion) -> Option<usize> {
    octahedral_group().iter().position(|g| g.same_rotation(&q, 1e-6))
}
