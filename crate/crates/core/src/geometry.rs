//! Quadric and conic algebra for ellipsoid landmarks.
//!
//! Landmarks are stored as dual quadrics `Q* = T diag(r1², r2², r3², -1) Tᵀ`
//! and projected into the image as dual conics `C* = P Q* Pᵀ` with
//! `P = K [R | t]`. Projected conics are decomposed into [`Ellipse`]s, which
//! are compared against bounding-box ellipses with a polygon IoU.
//!
//! Nothing here checks cheirality: a quadric behind the camera still projects
//! to a conic. Callers that care must cull by camera-frame depth.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::OnceLock;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of vertices used to approximate an ellipse in [`ellipse_iou`].
pub const ELLIPSE_POLYGON_VERTICES: usize = 64;

const QUATERNION_NORM_TOLERANCE: f64 = 1e-9;
const DEGENERATE_CONIC_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("quaternion norm {0} is not within 1e-9 of 1")]
    NonUnitQuaternion(f64),
    #[error("ellipsoid radii must be strictly positive and finite, got {0:?}")]
    InvalidRadii([f64; 3]),
    #[error("invalid camera intrinsics: {0}")]
    InvalidCamera(String),
    #[error("invalid bounding box [{0}, {1}, {2}, {3}]")]
    InvalidBBox(f64, f64, f64, f64),
    #[error("invalid ellipse: {0}")]
    InvalidEllipse(String),
    #[error("projected conic has its center at infinity")]
    DegenerateProjection,
    #[error("conic is not an ellipse")]
    NotAnEllipse,
}

fn checked_unit_quaternion(q: Quaternion<f64>) -> Result<UnitQuaternion<f64>, GeometryError> {
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
        return Err(GeometryError::NonUnitQuaternion(norm));
    }
    Ok(unit_quaternion(q))
}

/// Normalizes `q`, leaving it bit-for-bit unchanged when it is already unit
/// to rounding so stored rotations survive a write/read cycle.
pub fn unit_quaternion(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    if (q.norm_squared() - 1.0).abs() <= 4.0 * f64::EPSILON {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::new_normalize(q)
    }
}

/// An ellipsoid in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    center: Vector3<f64>,
    radii: Vector3<f64>,
    rotation: UnitQuaternion<f64>,
}

impl Ellipsoid {
    /// `rotation` maps the ellipsoid frame to the world frame and must have
    /// unit norm (to 1e-9).
    pub fn new(
        center: Vector3<f64>,
        radii: Vector3<f64>,
        rotation: Quaternion<f64>,
    ) -> Result<Self, GeometryError> {
        if radii.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(GeometryError::InvalidRadii([radii.x, radii.y, radii.z]));
        }
        let rotation = checked_unit_quaternion(rotation)?;
        Ok(Self {
            center,
            radii,
            rotation,
        })
    }

    pub fn sphere(center: Vector3<f64>, radius: f64) -> Result<Self, GeometryError> {
        Self::new(
            center,
            Vector3::repeat(radius),
            Quaternion::identity(),
        )
    }

    pub fn center(&self) -> &Vector3<f64> {
        &self.center
    }

    pub fn radii(&self) -> &Vector3<f64> {
        &self.radii
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    /// Rigid transform from the ellipsoid frame to the world frame.
    pub fn frame(&self) -> Matrix4<f64> {
        let mut t = Matrix4::identity();
        t.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.to_rotation_matrix().matrix());
        t.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.center);
        t
    }
}

/// Dual form of a quadric surface, a symmetric 4×4 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualQuadric(pub Matrix4<f64>);

impl DualQuadric {
    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    /// Center of the quadric, `Q[0..3][3] / Q[3][3]`.
    pub fn center(&self) -> Vector3<f64> {
        let q = &self.0;
        Vector3::new(q[(0, 3)], q[(1, 3)], q[(2, 3)]) / q[(3, 3)]
    }

    /// Tangent-plane incidence `πᵀ Q* π` for a plane `π = (n, d)`.
    pub fn plane_incidence(&self, plane: &nalgebra::Vector4<f64>) -> f64 {
        plane.dot(&(self.0 * plane))
    }

    /// Applies a rigid (or any projective) point transform `H`: `H Q* Hᵀ`.
    pub fn transformed(&self, h: &Matrix4<f64>) -> Self {
        let q = h * self.0 * h.transpose();
        DualQuadric(symmetrize4(&q))
    }
}

/// Pinhole intrinsics plus image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(GeometryError::InvalidCamera("principal point must be finite".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidCamera(format!(
                "image size must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a camera-frame point to pixels. No depth check.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }
}

/// World-to-camera rigid transform: `x_cam = R x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseWC {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl PoseWC {
    pub fn new(rotation: Quaternion<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        Ok(Self {
            rotation: checked_unit_quaternion(rotation)?,
            translation,
        })
    }

    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::from_parts(UnitQuaternion::identity(), Vector3::zeros())
    }

    /// Builds the world-to-camera pose from a camera-to-world pose
    /// (camera orientation and position in the world).
    pub fn from_camera_to_world(rotation: UnitQuaternion<f64>, position: Vector3<f64>) -> Self {
        let r_wc = rotation.inverse();
        Self::from_parts(r_wc, -(r_wc * position))
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self::from_parts(inv, -(inv * self.translation))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &PoseWC) -> Self {
        Self::from_parts(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.to_rotation_matrix().matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `[R | t]`.
    pub fn extrinsics(&self) -> Matrix3x4<f64> {
        self.matrix().fixed_view::<3, 4>(0, 0).into_owned()
    }

    /// Angle of the relative rotation between two poses, radians.
    pub fn rotation_angle_to(&self, other: &PoseWC) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }
}

/// An ellipse with `a ≥ b > 0` and major-axis angle in `(-π/2, π/2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    center: Vector2<f64>,
    semi_axes: Vector2<f64>,
    angle: f64,
}

fn wrap_half_turn(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(PI);
    if a > FRAC_PI_2 {
        a -= PI;
    }
    // rem_euclid maps -π/2 to π/2, keep the interval half-open on the left
    if a <= -FRAC_PI_2 {
        a += PI;
    }
    a
}

impl Ellipse {
    /// Builds an ellipse, swapping axes (and rotating by π/2) when `b > a`.
    pub fn new(center: Vector2<f64>, a: f64, b: f64, angle: f64) -> Result<Self, GeometryError> {
        if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
            return Err(GeometryError::InvalidEllipse(format!(
                "semi-axes must be positive, got ({a}, {b})"
            )));
        }
        if !(center.x.is_finite() && center.y.is_finite() && angle.is_finite()) {
            return Err(GeometryError::InvalidEllipse("non-finite parameters".into()));
        }
        let (a, b, angle) = if b > a {
            (b, a, angle + FRAC_PI_2)
        } else {
            (a, b, angle)
        };
        Ok(Self {
            center,
            semi_axes: Vector2::new(a, b),
            angle: wrap_half_turn(angle),
        })
    }

    pub fn center(&self) -> &Vector2<f64> {
        &self.center
    }

    pub fn semi_axes(&self) -> &Vector2<f64> {
        &self.semi_axes
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn area(&self) -> f64 {
        PI * self.semi_axes.x * self.semi_axes.y
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let d = p - self.center;
        let (s, c) = self.angle.sin_cos();
        let u = c * d.x + s * d.y;
        let v = -s * d.x + c * d.y;
        let (a, b) = (self.semi_axes.x, self.semi_axes.y);
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    }

    /// Dual conic `H diag(a², b², -1) Hᵀ`, normalized so `C*[2][2] = -1`.
    pub fn to_dual_conic(&self) -> Matrix3<f64> {
        let (s, c) = self.angle.sin_cos();
        let h = Matrix3::new(c, -s, self.center.x, s, c, self.center.y, 0.0, 0.0, 1.0);
        let d = Matrix3::from_diagonal(&Vector3::new(
            self.semi_axes.x.powi(2),
            self.semi_axes.y.powi(2),
            -1.0,
        ));
        symmetrize3(&(h * d * h.transpose()))
    }

    /// Counter-clockwise polygon with `n` vertices on the ellipse boundary.
    pub fn polygon(&self, n: usize) -> Vec<Vector2<f64>> {
        let (s, c) = self.angle.sin_cos();
        let vertex = |(cos_t, sin_t): (f64, f64)| {
            let (u, v) = (self.semi_axes.x * cos_t, self.semi_axes.y * sin_t);
            Vector2::new(self.center.x + c * u - s * v, self.center.y + s * u + c * v)
        };
        if n == ELLIPSE_POLYGON_VERTICES {
            unit_circle_64().iter().copied().map(vertex).collect()
        } else {
            (0..n).map(|k| unit_circle_point(k, n)).map(vertex).collect()
        }
    }

    /// Half width and half height of the axis-aligned bounding box.
    pub fn half_extents(&self) -> Vector2<f64> {
        let (s, c) = self.angle.sin_cos();
        let (a, b) = (self.semi_axes.x, self.semi_axes.y);
        Vector2::new(
            ((a * c).powi(2) + (b * s).powi(2)).sqrt(),
            ((a * s).powi(2) + (b * c).powi(2)).sqrt(),
        )
    }
}

fn unit_circle_point(k: usize, n: usize) -> (f64, f64) {
    let t = 2.0 * PI * k as f64 / n as f64;
    (t.cos(), t.sin())
}

fn unit_circle_64() -> &'static [(f64, f64); ELLIPSE_POLYGON_VERTICES] {
    static TABLE: OnceLock<[(f64, f64); ELLIPSE_POLYGON_VERTICES]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(|k| unit_circle_point(k, ELLIPSE_POLYGON_VERTICES)))
}

/// Axis-aligned bounding box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, GeometryError> {
        let finite = [xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite());
        if !finite || xmin >= xmax || ymin >= ymax {
            return Err(GeometryError::InvalidBBox(xmin, ymin, xmax, ymax));
        }
        Ok(Self {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Tight axis-aligned box around an ellipse.
    pub fn around_ellipse(e: &Ellipse) -> Self {
        let h = e.half_extents();
        let (hw, hh) = (h.x, h.y);
        Self {
            xmin: e.center.x - hw,
            ymin: e.center.y - hh,
            xmax: e.center.x + hw,
            ymax: e.center.y + hh,
        }
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.xmin, b.ymin, b.xmax, b.ymax]
    }
}

fn symmetrize3(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

fn symmetrize4(m: &Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}

pub fn ellipsoid_to_dual_quadric(e: &Ellipsoid) -> DualQuadric {
    let t = e.frame();
    let r = e.radii();
    let d = Matrix4::from_diagonal(&nalgebra::Vector4::new(r.x * r.x, r.y * r.y, r.z * r.z, -1.0));
    let q = symmetrize4(&(t * d * t.transpose()));
    // T is rigid so Q[3][3] is already -1; divide anyway to pin rounding.
    let q = q / -q[(3, 3)];
    DualQuadric(q)
}

/// Projects a dual quadric to a dual conic, normalized so `C*[2][2] = -1`.
pub fn project_dual_quadric(
    q: &DualQuadric,
    pose: &PoseWC,
    cam: &Camera,
) -> Result<Matrix3<f64>, GeometryError> {
    let p = cam.k() * pose.extrinsics();
    let c = symmetrize3(&(p * q.0 * p.transpose()));
    let w = c[(2, 2)];
    if !w.is_finite() || w.abs() < DEGENERATE_CONIC_EPS {
        return Err(GeometryError::DegenerateProjection);
    }
    Ok(c / -w)
}

/// Decomposes a dual conic into an ellipse.
///
/// The conic is first scaled so `C*[2][2] = -1`. Then `C* = [[M - c cᵀ, -c], [-cᵀ, -1]]`
/// where `c` is the center and `M = R diag(a², b²) Rᵀ`.
pub fn dual_conic_to_ellipse(c: &Matrix3<f64>) -> Result<Ellipse, GeometryError> {
    let w = c[(2, 2)];
    if !w.is_finite() || w.abs() < DEGENERATE_CONIC_EPS {
        return Err(GeometryError::DegenerateProjection);
    }
    let c = symmetrize3(c) / -w;
    let center = Vector2::new(-c[(0, 2)], -c[(1, 2)]);
    let m00 = c[(0, 0)] + center.x * center.x;
    let m01 = c[(0, 1)] + center.x * center.y;
    let m11 = c[(1, 1)] + center.y * center.y;

    // closed-form eigen-decomposition of the symmetric 2×2 block
    let mean = 0.5 * (m00 + m11);
    let diff = 0.5 * (m00 - m11);
    let radius = (diff * diff + m01 * m01).sqrt();
    let l_major = mean + radius;
    let l_minor = mean - radius;
    if !(l_minor > 0.0 && l_major.is_finite()) {
        return Err(GeometryError::NotAnEllipse);
    }
    let angle = 0.5 * (2.0 * m01).atan2(m00 - m11);
    Ellipse::new(center, l_major.sqrt(), l_minor.sqrt(), angle).map_err(|_| GeometryError::NotAnEllipse)
}

/// Ellipse inscribed in a bounding box.
pub fn bbox_to_ellipse(b: &BBox) -> Ellipse {
    let (w, h) = (b.width(), b.height());
    Ellipse::new(b.center(), 0.5 * w, 0.5 * h, 0.0).expect("bbox invariants give positive axes")
}

/// Area of a simple polygon (positive when counter-clockwise).
pub fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (i, p) in poly.iter().enumerate() {
        let q = &poly[(i + 1) % poly.len()];
        acc += p.x * q.y - q.x * p.y;
    }
    0.5 * acc
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Sutherland–Hodgman clipping of `subject` against a convex counter-clockwise `clip`.
pub fn clip_convex_polygon(subject: &[Vector2<f64>], clip: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let Some((lo, hi)) = bounds(subject) else {
        return Vec::new();
    };
    let corners = [lo, Vector2::new(hi.x, lo.y), hi, Vector2::new(lo.x, hi.y)];
    let mut output: Vec<Vector2<f64>> = Vec::with_capacity(subject.len() + clip.len());
    output.extend_from_slice(subject);
    let mut input: Vec<Vector2<f64>> = Vec::with_capacity(subject.len() + clip.len());
    for (i, a) in clip.iter().enumerate() {
        if output.is_empty() {
            break;
        }
        let b = if i + 1 == clip.len() { &clip[0] } else { &clip[i + 1] };
        let edge = b - a;
        let side = |p: &Vector2<f64>| cross2(&edge, &(p - a));
        // the subject's bounding box lies inside this half-plane: nothing to cut
        if corners.iter().all(|c| side(c) >= 0.0) {
            continue;
        }
        std::mem::swap(&mut input, &mut output);
        output.clear();
        let mut prev = input[input.len() - 1];
        let mut s_prev = side(&prev);
        for &cur in input.iter() {
            let s_cur = side(&cur);
            if s_cur >= 0.0 {
                if s_prev < 0.0 {
                    output.push(prev + (cur - prev) * (s_prev / (s_prev - s_cur)));
                }
                output.push(cur);
            } else if s_prev >= 0.0 {
                output.push(prev + (cur - prev) * (s_prev / (s_prev - s_cur)));
            }
            prev = cur;
            s_prev = s_cur;
        }
    }
    output
}

fn bounds(poly: &[Vector2<f64>]) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let first = *poly.first()?;
    Some(poly.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
}

fn ellipse_order(a: &Ellipse, b: &Ellipse) -> Ordering {
    let ka = [a.center.x, a.center.y, a.semi_axes.x, a.semi_axes.y, a.angle];
    let kb = [b.center.x, b.center.y, b.semi_axes.x, b.semi_axes.y, b.angle];
    ka.iter()
        .zip(kb.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Intersection over union of two ellipses via 64-gon approximation.
///
/// Arguments are put in a canonical order first so the result is exactly
/// symmetric.
pub fn ellipse_iou(e1: &Ellipse, e2: &Ellipse) -> f64 {
    let (e1, e2) = match ellipse_order(e1, e2) {
        Ordering::Greater => (e2, e1),
        _ => (e1, e2),
    };
    if (e1.center - e2.center).norm() > e1.semi_axes.x + e2.semi_axes.x {
        return 0.0;
    }
    let (h1, h2) = (e1.half_extents(), e2.half_extents());
    let gap = (e1.center - e2.center).abs() - h1 - h2;
    if gap.x >= 0.0 || gap.y >= 0.0 {
        return 0.0;
    }
    let p1 = e1.polygon(ELLIPSE_POLYGON_VERTICES);
    let p2 = e2.polygon(ELLIPSE_POLYGON_VERTICES);
    let a1 = polygon_area(&p1);
    let a2 = polygon_area(&p2);
    let inter = polygon_area(&clip_convex_polygon(&p1, &p2)).max(0.0);
    let union = a1 + a2 - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
