//! Rigid poses, rotation metrics and analytic signed distances between
//! sphere and capsule primitives.
//!
//! Angles are radians throughout. Spheres are handled as capsules whose two
//! endpoints coincide, so every distance query reduces to a segment-segment
//! closest-point problem.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate orientation input: {0}")]
    DegenerateInput(&'static str),
}

/// Tolerance under which two 6d columns are taken as already orthonormal.
const ORTHONORMAL_TOL: f64 = 1e-12;

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix without checking orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rotation of `angle` about the unit vector `axis` (Rodrigues).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let k = axis.normalize();
        let kx = skew(&k);
        Rotation(Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos()))
    }

    /// Rotation from a (not necessarily normalized) quaternion `(w, x, y, z)`.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        let (w, x, y, z) = (w / n, x / n, y / n, z / n);
        Rotation(Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn col(&self, i: usize) -> Vec3 {
        self.0.column(i).into_owned()
    }

    pub fn x_axis(&self) -> Vec3 {
        self.col(0)
    }

    pub fn z_axis(&self) -> Vec3 {
        self.col(2)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Frobenius norm of `RᵀR − I` and determinant, for invariant checks.
    pub fn orthonormality_error(&self) -> (f64, f64) {
        let e = (self.0.transpose() * self.0 - Matrix3::identity()).norm();
        (e, self.0.determinant())
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let (e, det) = self.orthonormality_error();
        e < tol && (det - 1.0).abs() < tol
    }

    /// First two columns, the continuous 6-value orientation encoding.
    pub fn to_6d(&self) -> [f64; 6] {
        let m = &self.0;
        [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
    }

    /// Re-derives the rotation from its own 6d encoding. Idempotent, so a
    /// canonical rotation survives a 6d save/load cycle bit for bit.
    pub fn canonical(&self) -> Self {
        rotation_from_6d(&self.to_6d()).unwrap_or(*self)
    }

    /// Axis-angle vector `ω` with `exp([ω]×) = self`.
    pub fn log(&self) -> Vec3 {
        let m = &self.0;
        let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        let angle = cos.acos();
        let v = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
        if angle < 1e-9 {
            return v * 0.5;
        }
        if std::f64::consts::PI - angle < 1e-6 {
            // Near π the skew part vanishes; recover the axis from the symmetric part.
            let b = (m + Matrix3::identity()) * 0.5;
            let mut best = 0;
            for i in 1..3 {
                if b[(i, i)] > b[(best, best)] {
                    best = i;
                }
            }
            let mut axis: Vec3 = b.column(best).into_owned();
            axis /= axis.norm().max(1e-300);
            if axis.dot(&v) < 0.0 {
                axis = -axis;
            }
            return axis * angle;
        }
        v * (angle / (2.0 * angle.sin()))
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Gram-Schmidt reconstruction of a rotation from its first two columns.
pub fn rotation_from_6d(r: &[f64; 6]) -> Result<Rotation, GeometryError> {
    if r.iter().any(|x| !x.is_finite()) {
        return Err(GeometryError::DegenerateInput("non-finite component"));
    }
    let u = Vec3::new(r[0], r[1], r[2]);
    let v = Vec3::new(r[3], r[4], r[5]);
    let (c1, c2) = if (u.norm_squared() - 1.0).abs() < ORTHONORMAL_TOL
        && (v.norm_squared() - 1.0).abs() < ORTHONORMAL_TOL
        && u.dot(&v).abs() < ORTHONORMAL_TOL
    {
        (u, v)
    } else {
        let nu = u.norm();
        if nu < 1e-12 {
            return Err(GeometryError::DegenerateInput("first vector is zero"));
        }
        let c1 = u / nu;
        let w = v - c1 * c1.dot(&v);
        let nw = w.norm();
        if nw < 1e-9 * v.norm().max(1e-300) || nw < 1e-12 {
            return Err(GeometryError::DegenerateInput("vectors are parallel"));
        }
        (c1, w / nw)
    };
    let c3 = c1.cross(&c2);
    Ok(Rotation(Matrix3::from_columns(&[c1, c2, c3])))
}

/// Cosine argument `(Tr(Raᵀ Rb) − 1) / 2` of the relative rotation angle.
pub fn relative_cosine(ra: &Rotation, rb: &Rotation) -> f64 {
    ((ra.0.transpose() * rb.0).trace() - 1.0) / 2.0
}

/// Exact geodesic angle between two rotations, in `[0, π]`.
pub fn rotation_angle(ra: &Rotation, rb: &Rotation) -> f64 {
    relative_cosine(ra, rb).clamp(-1.0, 1.0).acos()
}

/// Arccos of a cosine clamped to `[−1+ε, 1−ε]` with `ε = 1 − cos(clip)`,
/// returning the value and its derivative with respect to the cosine.
/// The derivative is zero wherever the clamp is active.
pub fn clipped_arccos(cosine: f64, clip_rad: f64) -> (f64, f64) {
    let eps = 1.0 - clip_rad.cos();
    let lo = -1.0 + eps;
    let hi = 1.0 - eps;
    if cosine >= hi {
        (clip_rad, 0.0)
    } else if cosine <= lo {
        (std::f64::consts::PI - clip_rad, 0.0)
    } else {
        (cosine.acos(), -1.0 / (1.0 - cosine * cosine).sqrt())
    }
}

/// Angle with the trace clamped so that arccos never sees ±1. Never below
/// the clip angle; only meant for loss evaluation.
pub fn rotation_angle_clipped(ra: &Rotation, rb: &Rotation, clip_deg: f64) -> f64 {
    clipped_arccos(relative_cosine(ra, rb), clip_deg.to_radians()).0
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub position: Vec3,
    pub rotation: Rotation,
}

impl Pose {
    pub fn new(position: Vec3, rotation: Rotation) -> Self {
        Pose { position, rotation }
    }

    pub fn identity() -> Self {
        Pose::default()
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Pose::new(Vec3::new(x, y, z), Rotation::identity())
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Pose::new(Vec3::zeros(), rotation)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.inverse();
        Pose::new(-(rt.apply(&self.position)), rt)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.apply(p) + self.position
    }

    pub fn compose(&self, child: &Pose) -> Pose {
        compose(self, child)
    }
}

/// `parent ∘ child`: child expressed in the parent frame.
pub fn compose(parent: &Pose, child: &Pose) -> Pose {
    Pose {
        position: parent.rotation.apply(&child.position) + parent.position,
        rotation: parent.rotation * child.rotation,
    }
}

#[derive(Serialize, Deserialize)]
struct PoseDoc {
    position: [f64; 3],
    orientation6d: [f64; 6],
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PoseDoc {
            position: [self.position.x, self.position.y, self.position.z],
            orientation6d: self.rotation.to_6d(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = PoseDoc::deserialize(d)?;
        let rotation = rotation_from_6d(&doc.orientation6d).map_err(serde::de::Error::custom)?;
        Ok(Pose::new(Vec3::from(doc.position), rotation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    pub fn new(a: Vec3, b: Vec3, radius: f64) -> Self {
        Capsule { a, b, radius }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

impl From<Sphere> for Capsule {
    fn from(s: Sphere) -> Capsule {
        Capsule::new(s.center, s.center, s.radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere(Sphere),
    Capsule(Capsule),
}

impl Shape {
    pub fn as_capsule(&self) -> Capsule {
        match *self {
            Shape::Sphere(s) => s.into(),
            Shape::Capsule(c) => c,
        }
    }

    pub fn radius(&self) -> f64 {
        match self {
            Shape::Sphere(s) => s.radius,
            Shape::Capsule(c) => c.radius,
        }
    }

    pub fn translated(&self, t: &Vec3) -> Shape {
        match *self {
            Shape::Sphere(s) => Shape::Sphere(Sphere { center: s.center + t, ..s }),
            Shape::Capsule(c) => Shape::Capsule(Capsule::new(c.a + t, c.b + t, c.radius)),
        }
    }

    pub fn transformed(&self, pose: &Pose) -> Shape {
        match *self {
            Shape::Sphere(s) => Shape::Sphere(Sphere { center: pose.transform_point(&s.center), ..s }),
            Shape::Capsule(c) => Shape::Capsule(Capsule::new(
                pose.transform_point(&c.a),
                pose.transform_point(&c.b),
                c.radius,
            )),
        }
    }
}

/// Closest points between segments `[p1, q1]` and `[p2, q2]`, returned as
/// segment parameters `(s, t)`. Parallel segments tie-break by starting from
/// the midpoint of the first segment.
pub fn closest_segment_params(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> (f64, f64) {
    const EPS: f64 = 1e-14;
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    if a <= EPS && e <= EPS {
        return (0.0, 0.0);
    }
    if a <= EPS {
        return (0.0, (f / e).clamp(0.0, 1.0));
    }
    let c = d1.dot(&r);
    if e <= EPS {
        return ((-c / a).clamp(0.0, 1.0), 0.0);
    }
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom > EPS * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.5 };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    (s, t)
}

/// Signed distance and its gradient with respect to the four axis endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceGrad {
    pub value: f64,
    /// Gradients w.r.t. endpoints `a`, `b` of the first shape.
    pub first: [Vec3; 2],
    /// Gradients w.r.t. endpoints `a`, `b` of the second shape.
    pub second: [Vec3; 2],
}

pub fn capsule_distance_with_grad(x: &Capsule, y: &Capsule) -> DistanceGrad {
    let (s, t) = closest_segment_params(&x.a, &x.b, &y.a, &y.b);
    let cx = x.a + (x.b - x.a) * s;
    let cy = y.a + (y.b - y.a) * t;
    let diff = cx - cy;
    let dist = diff.norm();
    // At an axis intersection any unit direction is a subgradient; zero is used.
    let n = if dist > 0.0 { diff / dist } else { Vec3::zeros() };
    DistanceGrad {
        value: dist - x.radius - y.radius,
        first: [n * (1.0 - s), n * s],
        second: [-n * (1.0 - t), -n * t],
    }
}

pub fn capsule_distance(x: &Capsule, y: &Capsule) -> f64 {
    let (s, t) = closest_segment_params(&x.a, &x.b, &y.a, &y.b);
    let cx = x.a + (x.b - x.a) * s;
    let cy = y.a + (y.b - y.a) * t;
    (cx - cy).norm() - x.radius - y.radius
}

/// Separation between two shapes; negative iff they penetrate.
pub fn signed_distance(a: &Shape, b: &Shape) -> f64 {
    match (a, b) {
        (Shape::Sphere(x), Shape::Sphere(y)) => (x.center - y.center).norm() - x.radius - y.radius,
        _ => capsule_distance(&a.as_capsule(), &b.as_capsule()),
    }
}

/// Distance from a point to a shape surface (negative inside).
pub fn point_distance(p: &Vec3, shape: &Shape) -> f64 {
    capsule_distance(&Capsule::new(*p, *p, 0.0), &shape.as_capsule())
}

/// Wraps an angle to `[−π, π]`.
pub fn wrap_angle(q: f64) -> f64 {
    use std::f64::consts::PI;
    if (-PI..=PI).contains(&q) {
        return q;
    }
    let w = (q + PI).rem_euclid(2.0 * PI) - PI;
    if w < -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn compose_identity_inverse_and_translation() {
        let p = Pose::new(Vec3::new(0.1, -0.4, 2.0), Rotation::from_axis_angle(&Vec3::new(1.0, 2.0, 3.0), 0.7));
        let left = compose(&Pose::identity(), &p);
        assert!((left.position - p.position).norm() < 1e-15);
        assert!((left.rotation.matrix() - p.rotation.matrix()).norm() < 1e-15);

        let id = compose(&p, &p.inverse());
        assert!(id.position.norm() < 1e-12);
        assert!((id.rotation.matrix() - Matrix3::identity()).norm() < 1e-12);

        let t = compose(&Pose::translation(0.0, 0.0, 0.3), &Pose::translation(0.2, 0.0, 0.0));
        assert!((t.position - Vec3::new(0.2, 0.0, 0.3)).norm() < 1e-15);
        assert!(t.rotation.is_valid(1e-9));
    }

    #[test]
    fn six_d_examples() {
        let r = rotation_from_6d(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(r, Rotation::identity());
        let r = rotation_from_6d(&[2.0, 0.0, 0.0, 0.0, 3.0, 0.0]).unwrap();
        assert!((r.matrix() - Matrix3::identity()).norm() < 1e-15);
        // col1 = (0,1,0); (1,1,0) minus its projection is (1,0,0); col3 = col1 × col2.
        let r = rotation_from_6d(&[0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((r.col(0) - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert!((r.col(1) - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((r.col(2) - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn six_d_degenerate_inputs_rejected() {
        assert!(rotation_from_6d(&[0.0; 6]).is_err());
        assert!(rotation_from_6d(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).is_err());
        assert!(rotation_from_6d(&[1.0, 0.0, 0.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn canonical_rotation_is_idempotent() {
        for i in 0..50 {
            let r = Rotation::from_quaternion(0.3 + i as f64, -0.2, 0.9, 0.1 * i as f64).canonical();
            let again = rotation_from_6d(&r.to_6d()).unwrap();
            assert_eq!(r, again);
        }
    }

    #[test]
    fn rotation_angle_examples() {
        let i = Rotation::identity();
        assert_eq!(rotation_angle(&i, &i), 0.0);
        assert!(approx(rotation_angle(&i, &Rotation::rot_z(PI)), PI, 1e-7));
        assert!(approx(rotation_angle(&Rotation::rot_x(0.3), &Rotation::rot_x(0.7)), 0.4, 1e-12));
    }

    #[test]
    fn clipped_angle_examples() {
        let i = Rotation::identity();
        let clip = 0.2_f64.to_radians();
        assert!(approx(rotation_angle_clipped(&i, &i, 0.2), clip, 1e-15));
        assert!(approx(rotation_angle_clipped(&i, &i, 0.2), 0.003491, 1e-6));
        // Lower end clamps at −1 + ε, i.e. arccos gives π − clip.
        assert!(approx(rotation_angle_clipped(&i, &Rotation::rot_z(PI), 0.2), PI - clip, 1e-12));
        let one = 1.0_f64.to_radians();
        assert!(approx(rotation_angle_clipped(&i, &Rotation::rot_z(one), 0.2), one, 1e-12));
    }

    #[test]
    fn clipped_arccos_gradient_is_finite_everywhere() {
        for k in 0..=2000 {
            let x = -1.0 + k as f64 * 1e-3;
            let (v, g) = clipped_arccos(x, 0.2_f64.to_radians());
            assert!(v.is_finite() && g.is_finite());
        }
    }

    #[test]
    fn log_recovers_axis_angle() {
        let axis = Vec3::new(0.3, -0.5, 0.8).normalize();
        for &angle in &[1e-12, 0.1, 1.0, 3.0, PI - 1e-9] {
            let r = Rotation::from_axis_angle(&axis, angle);
            let w = r.log();
            assert!((w - axis * angle).norm() < 1e-6, "angle {angle}: {w:?}");
        }
    }

    #[test]
    fn signed_distance_examples() {
        let a = Shape::Sphere(Sphere { center: Vec3::zeros(), radius: 0.2 });
        let b = Shape::Sphere(Sphere { center: Vec3::new(1.0, 0.0, 0.0), radius: 0.3 });
        assert!(approx(signed_distance(&a, &b), 0.5, 1e-15));

        let s = Shape::Sphere(Sphere { center: Vec3::new(0.0, 0.0, 0.2), radius: 0.1 });
        let c = Shape::Capsule(Capsule::new(Vec3::zeros(), Vec3::new(0.0, 0.0, 0.5), 0.1));
        assert!(approx(signed_distance(&s, &c), -0.2, 1e-15));
    }

    #[test]
    fn coincident_capsule_matches_sphere() {
        let c = Shape::Capsule(Capsule::new(Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.1, 0.2, 0.3), 0.25));
        let s1 = Shape::Sphere(Sphere { center: Vec3::new(0.1, 0.2, 0.3), radius: 0.25 });
        let s2 = Shape::Sphere(Sphere { center: Vec3::new(-0.7, 0.4, 1.1), radius: 0.15 });
        assert!(approx(signed_distance(&c, &s2), signed_distance(&s1, &s2), 1e-12));
    }

    #[test]
    fn parallel_segments_tie_break_is_a_closest_pair() {
        let p1 = Vec3::new(0.0, 0.0, 0.0);
        let q1 = Vec3::new(1.0, 0.0, 0.0);
        let p2 = Vec3::new(0.2, 0.5, 0.0);
        let q2 = Vec3::new(0.6, 0.5, 0.0);
        let (s, t) = closest_segment_params(&p1, &q1, &p2, &q2);
        let d = ((p1 + (q1 - p1) * s) - (p2 + (q2 - p2) * t)).norm();
        assert!(approx(d, 0.5, 1e-15));
        assert!(approx(s, 0.5, 1e-15));
    }

    #[test]
    fn wrap_angle_range() {
        for k in -100..100 {
            let q = wrap_angle(k as f64 * 0.37);
            assert!((-PI..=PI).contains(&q));
            assert!(approx(q.sin(), (k as f64 * 0.37).sin(), 1e-12));
        }
    }
}
