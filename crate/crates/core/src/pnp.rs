//! Perspective-3-Point from landmark centers and bounding-box centers.
//!
//! Grunert's formulation: with unit bearings `j_i`, depths `s_i` and the
//! substitution `s2 = u·s1`, `s3 = v·s1`, the law of cosines on the three
//! sides yields a quartic in `v`. Each admissible real root gives depths, the
//! depths are polished with Gauss-Newton on the three cosine constraints, and
//! the pose follows from aligning the world and camera triangles.

use nalgebra::{DMatrix, Matrix3, UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{
    bbox_to_ellipse, dual_conic_to_ellipse, ellipse_iou, project_dual_quadric, BBox, Camera,
    DualQuadric, PoseWC,
};

const MIN_TRIANGLE_AREA: f64 = 1e-9;
const MIN_PIXEL_SEPARATION: f64 = 1e-6;
const ROOT_IMAG_TOLERANCE: f64 = 1e-8;
const QUARTIC_NEWTON_STEPS: usize = 2;
const DEPTH_REFINE_STEPS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("degenerate sample: {0}")]
    DegenerateSample(&'static str),
    #[error("P3P polynomial has no real root")]
    NoRealSolution,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence3D2D {
    /// Landmark ellipsoid center, meters.
    pub world_point: Vector3<f64>,
    /// Bounding-box center, pixels.
    pub pixel: Vector2<f64>,
}

impl Correspondence3D2D {
    pub fn new(world_point: Vector3<f64>, pixel: Vector2<f64>) -> Self {
        Self { world_point, pixel }
    }

    /// Pixel lies within the image extended by a 50% margin on every side.
    pub fn within_margin(&self, cam: &Camera) -> bool {
        let (w, h) = (cam.width as f64, cam.height as f64);
        (-0.5 * w..=1.5 * w).contains(&self.pixel.x) && (-0.5 * h..=1.5 * h).contains(&self.pixel.y)
    }
}

pub fn pixel_to_bearing(pixel: &Vector2<f64>, cam: &Camera) -> Vector3<f64> {
    Vector3::new((pixel.x - cam.cx) / cam.fx, (pixel.y - cam.cy) / cam.fy, 1.0).normalize()
}

/// Real roots of `coeffs[0]·x^d + … + coeffs[d]`, leading zeros stripped.
fn real_polynomial_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Vec::new();
    }
    let first = match coeffs.iter().position(|c| c.abs() > 1e-14 * scale) {
        Some(i) => i,
        None => return Vec::new(),
    };
    let poly: Vec<f64> = coeffs[first..].iter().map(|c| c / coeffs[first]).collect();
    let degree = poly.len() - 1;
    if degree == 0 {
        return Vec::new();
    }

    let mut companion = DMatrix::<f64>::zeros(degree, degree);
    for j in 0..degree {
        companion[(0, j)] = -poly[j + 1];
    }
    for i in 1..degree {
        companion[(i, i - 1)] = 1.0;
    }

    let eval = |x: f64| poly.iter().fold(0.0, |acc, c| acc * x + c);
    let deriv = |x: f64| {
        poly[..degree]
            .iter()
            .enumerate()
            .fold(0.0, |acc, (i, c)| acc * x + c * (degree - i) as f64)
    };

    companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() < ROOT_IMAG_TOLERANCE)
        .map(|z| {
            let mut x = z.re;
            for _ in 0..QUARTIC_NEWTON_STEPS {
                let d = deriv(x);
                if d == 0.0 {
                    break;
                }
                let step = eval(x) / d;
                if step.is_finite() {
                    x -= step;
                }
            }
            x
        })
        .collect()
}

/// Squared-side residuals of the three law-of-cosines constraints.
struct DepthSystem {
    /// squared sides opposite each vertex pair: (1,2), (1,3), (2,3)
    d12: f64,
    d13: f64,
    d23: f64,
    cos12: f64,
    cos13: f64,
    cos23: f64,
}

impl DepthSystem {
    fn residual(&self, s: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            s.x * s.x + s.y * s.y - 2.0 * s.x * s.y * self.cos12 - self.d12,
            s.x * s.x + s.z * s.z - 2.0 * s.x * s.z * self.cos13 - self.d13,
            s.y * s.y + s.z * s.z - 2.0 * s.y * s.z * self.cos23 - self.d23,
        )
    }

    fn refine(&self, mut s: Vector3<f64>) -> Vector3<f64> {
        let mut r = self.residual(&s);
        for _ in 0..DEPTH_REFINE_STEPS {
            if r.abs().sum() < 1e-15 * (self.d12 + self.d13 + self.d23) {
                break;
            }
            let j = Matrix3::new(
                2.0 * s.x - 2.0 * s.y * self.cos12,
                2.0 * s.y - 2.0 * s.x * self.cos12,
                0.0,
                2.0 * s.x - 2.0 * s.z * self.cos13,
                0.0,
                2.0 * s.z - 2.0 * s.x * self.cos13,
                0.0,
                2.0 * s.y - 2.0 * s.z * self.cos23,
                2.0 * s.z - 2.0 * s.y * self.cos23,
            );
            let Some(step) = j.lu().solve(&r) else { break };
            let next = s - step;
            let r_next = self.residual(&next);
            if r_next.abs().sum() >= r.abs().sum() {
                break;
            }
            s = next;
            r = r_next;
        }
        s
    }
}

/// Rigid transform mapping the world triangle onto the camera triangle.
fn align_triangles(world: &[Vector3<f64>; 3], cam: &[Vector3<f64>; 3]) -> Option<PoseWC> {
    let frame = |p: &[Vector3<f64>; 3]| -> Option<Matrix3<f64>> {
        let e1 = (p[1] - p[0]).try_normalize(1e-12)?;
        let n = (p[1] - p[0]).cross(&(p[2] - p[0])).try_normalize(1e-12)?;
        let e2 = n.cross(&e1);
        Some(Matrix3::from_columns(&[e1, e2, n]))
    };
    let fw = frame(world)?;
    let fc = frame(cam)?;
    let r = fc * fw.transpose();
    let rotation = UnitQuaternion::from_matrix(&r);
    let cw = (world[0] + world[1] + world[2]) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    Some(PoseWC::from_parts(rotation, cc - rotation * cw))
}

/// Solves P3P for three 3D-2D correspondences.
///
/// Returns every admissible pose (0 to 4) with all three points in front of
/// the camera, in ascending order of the quartic root. `NoRealSolution` is
/// reserved for a quartic without real roots; real roots that fail
/// cheirality give an empty list.
pub fn solve_p3p(c: &[Correspondence3D2D; 3], cam: &Camera) -> Result<Vec<PoseWC>, PnpError> {
    let x = [c[0].world_point, c[1].world_point, c[2].world_point];
    let area = 0.5 * (x[1] - x[0]).cross(&(x[2] - x[0])).norm();
    if !(area > MIN_TRIANGLE_AREA) {
        return Err(PnpError::DegenerateSample("collinear world points"));
    }
    for (i, k) in [(0, 1), (0, 2), (1, 2)] {
        if (c[i].pixel - c[k].pixel).norm() <= MIN_PIXEL_SEPARATION {
            return Err(PnpError::DegenerateSample("coincident pixels"));
        }
    }

    let j = [
        pixel_to_bearing(&c[0].pixel, cam),
        pixel_to_bearing(&c[1].pixel, cam),
        pixel_to_bearing(&c[2].pixel, cam),
    ];
    let a2 = (x[1] - x[2]).norm_squared();
    let b2 = (x[0] - x[2]).norm_squared();
    let c2 = (x[0] - x[1]).norm_squared();
    let cos_a = j[1].dot(&j[2]);
    let cos_b = j[0].dot(&j[2]);
    let cos_g = j[0].dot(&j[1]);

    let p = (a2 - c2) / b2;
    let q = (a2 + c2) / b2;
    let coeffs = [
        (p - 1.0).powi(2) - 4.0 * c2 / b2 * cos_a * cos_a,
        4.0 * (p * (1.0 - p) * cos_b - (1.0 - q) * cos_a * cos_g + 2.0 * c2 / b2 * cos_a * cos_a * cos_b),
        2.0 * (p * p - 1.0 + 2.0 * p * p * cos_b * cos_b + 2.0 * (b2 - c2) / b2 * cos_a * cos_a
            - 4.0 * q * cos_a * cos_b * cos_g
            + 2.0 * (b2 - a2) / b2 * cos_g * cos_g),
        4.0 * (-p * (1.0 + p) * cos_b + 2.0 * a2 / b2 * cos_g * cos_g * cos_b - (1.0 - q) * cos_a * cos_g),
        (1.0 + p).powi(2) - 4.0 * a2 / b2 * cos_g * cos_g,
    ];

    let mut roots = real_polynomial_roots(&coeffs);
    if roots.is_empty() {
        return Err(PnpError::NoRealSolution);
    }
    roots.sort_by(|l, r| l.total_cmp(r));

    let system = DepthSystem {
        d12: c2,
        d13: b2,
        d23: a2,
        cos12: cos_g,
        cos13: cos_b,
        cos23: cos_a,
    };

    let mut depths: Vec<Vector3<f64>> = Vec::with_capacity(4);
    for v in roots {
        if !(v > 0.0) {
            continue;
        }
        let denom = 1.0 + v * v - 2.0 * v * cos_b;
        if !(denom > 0.0) {
            continue;
        }
        let s1 = (b2 / denom).sqrt();
        // u² - 2u·cosγ + 1 - c²/s1² = 0; keep the branch consistent with side a
        let disc = cos_g * cos_g - 1.0 + c2 / (s1 * s1);
        if disc < -1e-9 {
            continue;
        }
        let root = disc.max(0.0).sqrt();
        let best = [cos_g + root, cos_g - root]
            .into_iter()
            .filter(|u| *u > 0.0)
            .map(|u| {
                let s = Vector3::new(s1, u * s1, v * s1);
                (system.residual(&s).z.abs(), s)
            })
            .min_by(|l, r| l.0.total_cmp(&r.0));
        let Some((_, s)) = best else { continue };
        let s = system.refine(s);
        if s.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            continue;
        }
        let scale = (a2 + b2 + c2).sqrt();
        if system.residual(&s).abs().max() > 1e-10 * scale * scale {
            continue;
        }
        if depths.iter().any(|d| (d - s).norm() <= 1e-9 * s.norm()) {
            continue;
        }
        depths.push(s);
    }

    let poses = depths
        .into_iter()
        .filter_map(|s| {
            let pc = [j[0] * s.x, j[1] * s.y, j[2] * s.z];
            align_triangles(&x, &pc)
        })
        .filter(|pose| x.iter().all(|p| pose.transform_point(p).z > 0.0))
        .collect();
    Ok(poses)
}

/// One sampled correspondence as seen by pose selection.
#[derive(Debug, Clone, Copy)]
pub struct SampledLandmark<'a> {
    pub quadric: &'a DualQuadric,
    pub bbox: &'a BBox,
}

/// Sum of IoUs between bbox ellipses and projected landmarks under `pose`.
/// Projections that are not ellipses contribute 0.
pub fn sample_overlap(pose: &PoseWC, sampled: &[SampledLandmark<'_>], cam: &Camera) -> f64 {
    sampled
        .iter()
        .map(|s| {
            project_dual_quadric(s.quadric, pose, cam)
                .and_then(|c| dual_conic_to_ellipse(&c))
                .map(|e| ellipse_iou(&bbox_to_ellipse(s.bbox), &e))
                .unwrap_or(0.0)
        })
        .sum()
}

/// Picks the pose whose projections best overlap the sampled boxes.
/// Returns the winning index; ties go to the lowest index.
///
/// # Panics
/// If `poses` is empty.
pub fn select_pose(poses: &[PoseWC], sampled: &[SampledLandmark<'_>], cam: &Camera) -> usize {
    assert!(!poses.is_empty(), "select_pose needs at least one pose");
    if poses.len() == 1 {
        return 0;
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, pose) in poses.iter().enumerate() {
        let score = sample_overlap(pose, sampled, cam);
        if score > best.1 {
            best = (i, score);
        }
    }
    best.0
}
