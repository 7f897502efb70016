//! Camera geometry: pinhole back-projection, 3D line fitting, the gravity-
//! derived attitude, the camera -> world -> stair frame chain, and step
//! measurement from stair-frame edge anchors.
//!
//! Conventions. The camera frame follows the depth-sensor convention:
//! x right, y **down**, z forward, so a level camera measures gravity as
//! `(0, +g, 0)`. The world frame has y **up** (opposite gravity) and z equal
//! to the horizontal projection of the camera's forward axis; x completes a
//! right-handed basis (it points to the viewer's left). The stair frame
//! shares the world's vertical and rotates about it so stair lines run
//! parallel to x; tread depth then lies along z and step height along y.

use crate::grid::LineClass;
use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("focal lengths must be positive, got fx={0}, fy={1}")]
    BadFocal(f64, f64),
    #[error("depth {0} must be positive and finite")]
    BadDepth(f64),
    #[error("point with z = {0} cannot be projected")]
    BehindCamera(f64),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("3D line fit is degenerate: all points share one z")]
    ZeroZVariance,
    #[error("line with x-z slope {0} is parallel to the YOZ plane")]
    NoYozIntersection(f64),
    #[error("gravity vector has zero magnitude")]
    ZeroGravity,
    #[error("attitude (pitch {pitch}, roll {roll}) has no gravity direction")]
    BadAttitude { pitch: f64, roll: f64 },
    #[error("camera forward axis is vertical (|pitch| = pi/2): yaw undefined")]
    GimbalLock,
    #[error("the two points coincide; no direction")]
    CoincidentPoints,
    #[error("line is vertical in the world frame; yaw undefined")]
    VerticalLine,
    #[error("empty input")]
    EmptyInput,
}

/// Camera intrinsics plus the gravity vector measured in the camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Gravity in the camera frame (m/s^2); `(0, +g, 0)` when level.
    pub gravity: [f64; 3],
    #[serde(default = "default_image_dims")]
    pub image_dims: (u32, u32),
}

fn default_image_dims() -> (u32, u32) {
    (512, 512)
}

impl CameraRig {
    pub fn validate(&self) -> Result<(), GeomError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(GeomError::BadFocal(self.fx, self.fy));
        }
        if self.gravity_vector().norm() == 0.0 {
            return Err(GeomError::ZeroGravity);
        }
        Ok(())
    }

    pub fn gravity_vector(&self) -> Vector3<f64> {
        Vector3::new(self.gravity[0], self.gravity[1], self.gravity[2])
    }
}

/// Camera attitude angles in radians. Pitch and roll come from gravity
/// (positive pitch = camera tilted downward); yaw is not observable from
/// gravity and is filled in later from stair-line directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attitude {
    pub pitch: f64,
    pub roll: f64,
    pub yaw: f64,
}

/// A 3D line written as two functions of z: `x = k1*z + b1`,
/// `y = k2*z + b2` (the intersection of two planes). `residual` is the RMS
/// distance of the fitted points to the line in these coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line3DParams {
    pub k1: f64,
    pub b1: f64,
    pub k2: f64,
    pub b2: f64,
    pub residual: f64,
}

impl Line3DParams {
    /// Point on the line at the given z.
    pub fn point_at(&self, z: f64) -> Point3<f64> {
        Point3::new(self.k1 * z + self.b1, self.k2 * z + self.b2, z)
    }

    /// Direction vector `(k1, k2, 1)`.
    pub fn direction(&self) -> Vector3<f64> {
        Vector3::new(self.k1, self.k2, 1.0)
    }
}

/// One stair line reduced to a single representative 3D point (its
/// intersection with the camera's x=0 plane, transported through the frame
/// chain), plus the line's class when known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeAnchor {
    pub point: Point3<f64>,
    pub cls: Option<LineClass>,
}

/// Whether the staircase rises or falls away from the camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StairDirection {
    Ascending,
    Descending,
}

/// Metric size of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDims {
    pub width_m: f64,
    pub height_m: f64,
}

/// Back-projects a pixel with known depth into the camera frame.
pub fn backproject(
    pixel: (f64, f64),
    depth: f64,
    rig: &CameraRig,
) -> Result<Point3<f64>, GeomError> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(GeomError::BadDepth(depth));
    }
    let (u, v) = pixel;
    Ok(Point3::new((u - rig.cx) * depth / rig.fx, (v - rig.cy) * depth / rig.fy, depth))
}

/// Projects a camera-frame point to pixel coordinates.
pub fn project(point: &Point3<f64>, rig: &CameraRig) -> Result<(f64, f64), GeomError> {
    if point.z <= 0.0 {
        return Err(GeomError::BehindCamera(point.z));
    }
    Ok((rig.fx * point.x / point.z + rig.cx, rig.fy * point.y / point.z + rig.cy))
}

/// Fits a 3D line as two independent least-squares problems: x on z and
/// y on z. Requires at least two points and nonzero z-variance (a stair
/// line seen exactly square-on collapses to constant z and must be handled
/// by the caller).
pub fn fit_line_3d(points: &[Point3<f64>]) -> Result<Line3DParams, GeomError> {
    if points.len() < 2 {
        return Err(GeomError::TooFewPoints { needed: 2, got: points.len() });
    }
    let n = points.len() as f64;
    let mean_z = points.iter().map(|p| p.z).sum::<f64>() / n;
    let mean_x = points.iter().map(|p| p.x).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mut szz = 0.0;
    let mut szx = 0.0;
    let mut szy = 0.0;
    for p in points {
        let dz = p.z - mean_z;
        szz += dz * dz;
        szx += dz * (p.x - mean_x);
        szy += dz * (p.y - mean_y);
    }
    if szz == 0.0 {
        return Err(GeomError::ZeroZVariance);
    }
    let k1 = szx / szz;
    let k2 = szy / szz;
    let b1 = mean_x - k1 * mean_z;
    let b2 = mean_y - k2 * mean_z;
    let mut sq = 0.0;
    for p in points {
        sq += (p.x - (k1 * p.z + b1)).powi(2) + (p.y - (k2 * p.z + b2)).powi(2);
    }
    Ok(Line3DParams { k1, b1, k2, b2, residual: (sq / n).sqrt() })
}

/// Intersection of a fitted line with the camera's YOZ plane (x = 0):
/// `(0, (k1*b2 - k2*b1)/k1, -b1/k1)`. Errors when the line is parallel to
/// the plane.
pub fn yoz_intersection(params: &Line3DParams) -> Result<Point3<f64>, GeomError> {
    if params.k1.abs() < 1e-9 {
        return Err(GeomError::NoYozIntersection(params.k1));
    }
    Ok(Point3::new(
        0.0,
        (params.k1 * params.b2 - params.k2 * params.b1) / params.k1,
        -params.b1 / params.k1,
    ))
}

/// Pitch and roll from the gravity vector measured in the camera frame:
/// `pitch = asin(gz/|g|)`, `roll = asin(-gx/|g|)`. Positive pitch means the
/// camera is tilted downward (gravity leaks into the forward axis). Yaw is
/// returned as 0; it cannot be observed from gravity.
pub fn attitude_from_gravity(gravity: &Vector3<f64>) -> Result<Attitude, GeomError> {
    let norm = gravity.norm();
    if norm == 0.0 {
        return Err(GeomError::ZeroGravity);
    }
    let pitch = (gravity.z / norm).clamp(-1.0, 1.0).asin();
    let roll = (-gravity.x / norm).clamp(-1.0, 1.0).asin();
    Ok(Attitude { pitch, roll, yaw: 0.0 })
}

/// Gravity vector in the camera frame for a given attitude — the inverse of
/// [`attitude_from_gravity`]. The y component is nonnegative (the camera
/// never looks from upside down here).
pub fn gravity_from_attitude(
    pitch: f64,
    roll: f64,
    magnitude: f64,
) -> Result<Vector3<f64>, GeomError> {
    let (sp, sr) = (pitch.sin(), roll.sin());
    let rest = 1.0 - sp * sp - sr * sr;
    if rest < 0.0 {
        return Err(GeomError::BadAttitude { pitch, roll });
    }
    Ok(magnitude * Vector3::new(-sr, rest.sqrt(), sp))
}

/// Rotation from the camera frame into the gravity-aligned world frame.
///
/// The frame is defined by an axis contract rather than an Euler recipe:
/// world y is straight up (so the measured gravity direction maps exactly to
/// `(0, -1, 0)`), world z is the horizontal projection of the camera forward
/// axis, and world x completes a right-handed basis. The contract is
/// unambiguous for every attitude except a straight-down/straight-up camera.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldRotation {
    rot: Rotation3<f64>,
}

impl WorldRotation {
    pub fn from_attitude(pitch: f64, roll: f64) -> Result<Self, GeomError> {
        let gravity = gravity_from_attitude(pitch, roll, 1.0)?;
        Self::from_gravity(&gravity)
    }

    pub fn from_gravity(gravity: &Vector3<f64>) -> Result<Self, GeomError> {
        let norm = gravity.norm();
        if norm == 0.0 {
            return Err(GeomError::ZeroGravity);
        }
        let up = -gravity / norm;
        let forward = Vector3::z();
        let z_h = forward - up * forward.dot(&up);
        if z_h.norm() < 1e-9 {
            return Err(GeomError::GimbalLock);
        }
        let z_w = Unit::new_normalize(z_h);
        let x_w = up.cross(&z_w);
        let m = Matrix3::from_rows(&[x_w.transpose(), up.transpose(), z_w.transpose()]);
        Ok(WorldRotation { rot: Rotation3::from_matrix_unchecked(m) })
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rot * p
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rot * v
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rot
    }
}

/// Rotates a camera-frame point into the world frame for the given attitude.
pub fn camera_to_world(
    point: &Point3<f64>,
    pitch: f64,
    roll: f64,
) -> Result<Point3<f64>, GeomError> {
    Ok(WorldRotation::from_attitude(pitch, roll)?.transform_point(point))
}

/// Yaw of a stair line from two world-frame points on it: the signed angle
/// between the line's horizontal direction and the world x axis. The
/// direction is normalized to positive x so both endpoint orders agree.
pub fn yaw_from_line(p1: &Point3<f64>, p2: &Point3<f64>) -> Result<f64, GeomError> {
    let d = p2 - p1;
    if d.norm() == 0.0 {
        return Err(GeomError::CoincidentPoints);
    }
    let (mut dx, mut dz) = (d.x, d.z);
    if dx.abs() < 1e-12 && dz.abs() < 1e-12 {
        return Err(GeomError::VerticalLine);
    }
    if dx < 0.0 || (dx == 0.0 && dz < 0.0) {
        dx = -dx;
        dz = -dz;
    }
    Ok(dz.atan2(dx))
}

/// Arithmetic mean of per-line yaw estimates.
pub fn mean_yaw(yaws: &[f64]) -> Result<f64, GeomError> {
    if yaws.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    Ok(yaws.iter().sum::<f64>() / yaws.len() as f64)
}

/// Rotates a world-frame point into the stair frame: a right-handed rotation
/// about the shared vertical axis that turns stair lines parallel to x.
pub fn world_to_stair(point: &Point3<f64>, yaw: f64) -> Point3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), yaw) * point
}

/// Decides ascending vs descending. Any concave (inner) edge visible means
/// the camera faces an ascending flight; a purely convex set of edges means
/// descending. If no class information survives, the vertical trend of the
/// anchors with distance decides (rising anchors = ascending) — a heuristic
/// that needs at least two anchors at distinct depths.
pub fn classify_direction(anchors: &[EdgeAnchor]) -> Result<StairDirection, GeomError> {
    if anchors.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    if anchors.iter().any(|a| a.cls == Some(LineClass::Concave)) {
        return Ok(StairDirection::Ascending);
    }
    if anchors.iter().any(|a| a.cls == Some(LineClass::Convex)) {
        return Ok(StairDirection::Descending);
    }
    if anchors.len() < 2 {
        return Err(GeomError::TooFewPoints { needed: 2, got: anchors.len() });
    }
    let n = anchors.len() as f64;
    let mean_z = anchors.iter().map(|a| a.point.z).sum::<f64>() / n;
    let mean_y = anchors.iter().map(|a| a.point.y).sum::<f64>() / n;
    let mut szz = 0.0;
    let mut szy = 0.0;
    for a in anchors {
        let dz = a.point.z - mean_z;
        szz += dz * dz;
        szy += dz * (a.point.y - mean_y);
    }
    if szz == 0.0 {
        return Err(GeomError::ZeroZVariance);
    }
    if szy / szz > 0.0 {
        Ok(StairDirection::Ascending)
    } else {
        Ok(StairDirection::Descending)
    }
}

/// Absolute consecutive differences of the stair-frame anchor coordinates,
/// with components below `omega` discarded: the surviving z-differences are
/// the tread widths, the y-differences the riser heights. (Ascending flights
/// see both edges of each step, so half the raw differences are the
/// near-zero artifacts this filter removes.)
pub fn span_components(points: &[Point3<f64>], omega: f64) -> (Vec<f64>, Vec<f64>) {
    let mut widths = Vec::new();
    let mut heights = Vec::new();
    for pair in points.windows(2) {
        let dz = (pair[1].z - pair[0].z).abs();
        let dy = (pair[1].y - pair[0].y).abs();
        if dz >= omega {
            widths.push(dz);
        }
        if dy >= omega {
            heights.push(dy);
        }
    }
    (widths, heights)
}

/// Pairs the filtered width/height components of [`span_components`] into
/// per-step dimensions, near to far. The k-th surviving width joins the k-th
/// surviving height; a trailing unpaired component is dropped.
pub fn measure_steps(points: &[Point3<f64>], omega: f64) -> Result<Vec<StepDims>, GeomError> {
    if points.len() < 2 {
        return Err(GeomError::TooFewPoints { needed: 2, got: points.len() });
    }
    let (widths, heights) = span_components(points, omega);
    Ok(widths
        .into_iter()
        .zip(heights)
        .map(|(width_m, height_m)| StepDims { width_m, height_m })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rig() -> CameraRig {
        CameraRig {
            fx: 500.0,
            fy: 480.0,
            cx: 256.0,
            cy: 250.0,
            gravity: [0.0, 9.81, 0.0],
            image_dims: (512, 512),
        }
    }

    #[test]
    fn backproject_reference_points() {
        let r = rig();
        let p = backproject((256.0, 250.0), 2.0, &r).unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 2.0));
        let p = backproject((506.0, 250.0), 1.0, &r).unwrap();
        assert!((p.x - 0.5).abs() < 1e-12);
        assert!(matches!(
            backproject((0.0, 0.0), 0.0, &r).unwrap_err(),
            GeomError::BadDepth(_)
        ));
        assert!(backproject((0.0, 0.0), -1.0, &r).is_err());
    }

    #[test]
    fn rig_json_round_trips_with_default_dims() {
        let json = r#"{"fx":500,"fy":480,"cx":256,"cy":250,"gravity":[0,9.81,0]}"#;
        let r: CameraRig = serde_json::from_str(json).unwrap();
        assert_eq!(r.image_dims, (512, 512));
        r.validate().unwrap();
        let bad = CameraRig { fx: -1.0, ..r };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fit_line_3d_exact_cases() {
        let pts: Vec<Point3<f64>> =
            [1.0, 2.0, 3.0].iter().map(|&z| Point3::new(2.0 * z + 1.0, -z + 4.0, z)).collect();
        let l = fit_line_3d(&pts).unwrap();
        assert!((l.k1 - 2.0).abs() < 1e-12);
        assert!((l.b1 - 1.0).abs() < 1e-12);
        assert!((l.k2 + 1.0).abs() < 1e-12);
        assert!((l.b2 - 4.0).abs() < 1e-12);
        assert!(l.residual < 1e-12);

        let pts: Vec<Point3<f64>> =
            [0.5, 1.5, 2.5].iter().map(|&z| Point3::new(0.0, 1.0, z)).collect();
        let l = fit_line_3d(&pts).unwrap();
        assert_eq!((l.k1, l.b1, l.k2, l.b2), (0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn fit_line_3d_degenerate_inputs() {
        assert!(matches!(
            fit_line_3d(&[Point3::new(0.0, 0.0, 1.0)]).unwrap_err(),
            GeomError::TooFewPoints { .. }
        ));
        let flat = [Point3::new(0.0, 0.0, 2.0), Point3::new(1.0, 1.0, 2.0)];
        assert_eq!(fit_line_3d(&flat).unwrap_err(), GeomError::ZeroZVariance);
    }

    #[test]
    fn fit_line_3d_matches_normal_equation_oracle() {
        let pts: Vec<Point3<f64>> = (0..25)
            .map(|i| {
                let z = 1.0 + i as f64 * 0.1;
                let nx = ((i * 31 % 17) as f64 - 8.0) * 0.01;
                let ny = ((i * 77 % 13) as f64 - 6.0) * 0.01;
                Point3::new(0.8 * z - 0.3 + nx, -0.2 * z + 1.1 + ny, z)
            })
            .collect();
        let l = fit_line_3d(&pts).unwrap();
        // Oracle: raw (uncentered) normal equations solved by Cramer's rule.
        let n = pts.len() as f64;
        let sz: f64 = pts.iter().map(|p| p.z).sum();
        let szz: f64 = pts.iter().map(|p| p.z * p.z).sum();
        let det = n * szz - sz * sz;
        for (vals, k, b) in [
            (pts.iter().map(|p| p.x).collect::<Vec<_>>(), l.k1, l.b1),
            (pts.iter().map(|p| p.y).collect::<Vec<_>>(), l.k2, l.b2),
        ] {
            let sv: f64 = vals.iter().sum();
            let szv: f64 = pts.iter().zip(&vals).map(|(p, v)| p.z * v).sum();
            let k_o = (n * szv - sz * sv) / det;
            let b_o = (sv - k_o * sz) / n;
            assert!((k - k_o).abs() < 1e-9);
            assert!((b - b_o).abs() < 1e-9);
        }
    }

    #[test]
    fn yoz_intersection_reference_points() {
        let p = yoz_intersection(&Line3DParams { k1: 2.0, b1: 1.0, k2: -1.0, b2: 4.0, residual: 0.0 })
            .unwrap();
        assert!((p - Point3::new(0.0, 4.5, -0.5)).norm() < 1e-12);
        let p = yoz_intersection(&Line3DParams { k1: 1.0, b1: 0.0, k2: 0.0, b2: 3.0, residual: 0.0 })
            .unwrap();
        assert!((p - Point3::new(0.0, 3.0, 0.0)).norm() < 1e-12);
        assert!(matches!(
            yoz_intersection(&Line3DParams { k1: 1e-12, b1: 1.0, k2: 0.0, b2: 0.0, residual: 0.0 }),
            Err(GeomError::NoYozIntersection(_))
        ));
    }

    #[test]
    fn yoz_point_satisfies_both_line_equations() {
        let l = Line3DParams { k1: 0.7, b1: -0.2, k2: 0.3, b2: 1.5, residual: 0.0 };
        let p = yoz_intersection(&l).unwrap();
        assert!((p.x - (l.k1 * p.z + l.b1)).abs() < 1e-12);
        assert!((p.y - (l.k2 * p.z + l.b2)).abs() < 1e-12);
    }

    #[test]
    fn attitude_from_gravity_reference_cases() {
        let a = attitude_from_gravity(&Vector3::new(0.0, 9.81, 0.0)).unwrap();
        assert_eq!((a.pitch, a.roll), (0.0, 0.0));
        let d = 10f64.to_radians();
        let a = attitude_from_gravity(&Vector3::new(0.0, 9.81 * d.cos(), 9.81 * d.sin())).unwrap();
        assert!((a.pitch - d).abs() < 1e-9);
        assert!(a.roll.abs() < 1e-9);
        let r = 5f64.to_radians();
        let a = attitude_from_gravity(&Vector3::new(-9.81 * r.sin(), 9.81 * r.cos(), 0.0)).unwrap();
        assert!((a.roll - r).abs() < 1e-9);
        assert!(a.pitch.abs() < 1e-9);
        assert_eq!(
            attitude_from_gravity(&Vector3::zeros()).unwrap_err(),
            GeomError::ZeroGravity
        );
    }

    #[test]
    fn level_camera_world_transform_flips_y() {
        let p = camera_to_world(&Point3::new(0.0, 1.0, 2.0), 0.0, 0.0).unwrap();
        assert!((p - Point3::new(0.0, -1.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn pitched_camera_lowers_the_forward_axis() {
        // +pitch = camera tilted downward, so a point straight ahead sits
        // below the camera's horizontal plane: world y = -|p| sin(pitch).
        let d = 10f64.to_radians();
        let p = camera_to_world(&Point3::new(0.0, 0.0, 3.0), d, 0.0).unwrap();
        assert!((p.y - (-3.0 * d.sin())).abs() < 1e-12);
        assert!((p.z - 3.0 * d.cos()).abs() < 1e-12);
        assert!(p.x.abs() < 1e-12);
    }

    #[test]
    fn world_rotation_honors_the_axis_contract() {
        for (pitch, roll) in [(0.2, 0.1), (-0.3, 0.05), (0.35, -0.2), (0.0, 0.0)] {
            let g = gravity_from_attitude(pitch, roll, 9.81).unwrap();
            let w = WorldRotation::from_gravity(&g).unwrap();
            // Gravity maps to straight down.
            let g_w = w.transform_vector(&g.normalize());
            assert!((g_w - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
            // The forward axis lands in the y-z plane with no x component
            // and positive z (horizontal projection of forward).
            let f_w = w.transform_vector(&Vector3::z());
            assert!(f_w.x.abs() < 1e-12);
            assert!(f_w.z > 0.0);
            // Proper rotation: determinant +1.
            assert!((w.rotation().matrix().determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gimbal_lock_and_bad_attitude_are_errors() {
        let e = camera_to_world(&Point3::origin(), std::f64::consts::FRAC_PI_2, 0.0).unwrap_err();
        assert_eq!(e, GeomError::GimbalLock);
        assert!(matches!(
            gravity_from_attitude(1.2, 1.2, 9.81).unwrap_err(),
            GeomError::BadAttitude { .. }
        ));
    }

    #[test]
    fn yaw_reference_directions() {
        let y = yaw_from_line(&Point3::new(0.0, 0.0, 2.0), &Point3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!(y, 0.0);
        let y = yaw_from_line(&Point3::origin(), &Point3::new(1.0, 0.0, 0.5)).unwrap();
        assert!((y - 0.5f64.atan2(1.0)).abs() < 1e-12);
        assert!((y - 0.46364760900080615).abs() < 1e-9);
        // Endpoint order must not matter.
        let y2 = yaw_from_line(&Point3::new(1.0, 0.0, 0.5), &Point3::origin()).unwrap();
        assert_eq!(y, y2);
        assert_eq!(
            yaw_from_line(&Point3::origin(), &Point3::origin()).unwrap_err(),
            GeomError::CoincidentPoints
        );
        assert_eq!(
            yaw_from_line(&Point3::origin(), &Point3::new(0.0, 1.0, 0.0)).unwrap_err(),
            GeomError::VerticalLine
        );
    }

    #[test]
    fn mean_yaw_averages() {
        let m = mean_yaw(&[1f64.to_radians(), 3f64.to_radians()]).unwrap();
        assert!((m - 2f64.to_radians()).abs() < 1e-12);
        assert_eq!(mean_yaw(&[]).unwrap_err(), GeomError::EmptyInput);
    }

    #[test]
    fn stair_rotation_reference_cases() {
        let p = Point3::new(0.3, -0.7, 1.9);
        assert_eq!(world_to_stair(&p, 0.0), p);
        let q = world_to_stair(&Point3::new(1.0, 5.0, 0.0), std::f64::consts::FRAC_PI_2);
        assert!((q - Point3::new(0.0, 5.0, -1.0)).norm() < 1e-9);
    }

    #[test]
    fn computed_yaw_aligns_lines_with_stair_x() {
        for yaw_true in [-0.25f64, 0.0, 0.1, 0.4] {
            let d = Vector3::new(yaw_true.cos(), 0.0, yaw_true.sin());
            let p1 = Point3::new(0.1, 0.5, 2.0);
            let p2 = p1 + 0.8 * d;
            let yaw = yaw_from_line(&p1, &p2).unwrap();
            assert!((yaw - yaw_true).abs() < 1e-12);
            let d_s = world_to_stair(&Point3::from(d), yaw) - Point3::origin();
            assert!(d_s.z.abs() < 1e-12, "stair-frame direction keeps z={}", d_s.z);
        }
    }

    #[test]
    fn direction_classification_rules() {
        let at = |y: f64, z: f64, cls: Option<LineClass>| EdgeAnchor {
            point: Point3::new(0.0, y, z),
            cls,
        };
        let mixed = [
            at(0.1, 1.0, Some(LineClass::Convex)),
            at(0.2, 1.3, Some(LineClass::Concave)),
            at(0.3, 1.6, Some(LineClass::Convex)),
        ];
        assert_eq!(classify_direction(&mixed).unwrap(), StairDirection::Ascending);
        let convex = [at(0.1, 1.0, Some(LineClass::Convex)), at(0.2, 1.3, Some(LineClass::Convex))];
        assert_eq!(classify_direction(&convex).unwrap(), StairDirection::Descending);
        // Unlabeled anchors falling away from the camera: descending.
        let falling = [at(0.0, 1.0, None), at(-0.15, 1.3, None), at(-0.3, 1.6, None)];
        assert_eq!(classify_direction(&falling).unwrap(), StairDirection::Descending);
        let rising = [at(0.0, 1.0, None), at(0.15, 1.3, None)];
        assert_eq!(classify_direction(&rising).unwrap(), StairDirection::Ascending);
        assert_eq!(classify_direction(&[]).unwrap_err(), GeomError::EmptyInput);
    }

    #[test]
    fn step_measurement_filters_and_pairs() {
        let pts = [
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(0.0, 0.15, 1.0),
            Point3::new(0.0, 0.15, 1.3),
            Point3::new(0.0, 0.30, 1.3),
        ];
        let (widths, heights) = span_components(&pts, 0.05);
        assert_eq!(widths.len(), 1);
        assert!((widths[0] - 0.3).abs() < 1e-12);
        assert_eq!(heights.len(), 2);
        assert!((heights[0] - 0.15).abs() < 1e-12 && (heights[1] - 0.15).abs() < 1e-12);
        let steps = measure_steps(&pts, 0.05).unwrap();
        assert_eq!(steps.len(), 1);
        assert!((steps[0].width_m - 0.3).abs() < 1e-12);
        assert!((steps[0].height_m - 0.15).abs() < 1e-12);
    }

    #[test]
    fn step_measurement_edge_cases() {
        let two = [Point3::new(0.0, 0.0, 1.0), Point3::new(0.0, 0.149, 1.3)];
        let steps = measure_steps(&two, 0.05).unwrap();
        assert_eq!(steps.len(), 1);
        assert!((steps[0].width_m - 0.3).abs() < 1e-9);
        assert!((steps[0].height_m - 0.149).abs() < 1e-12);
        // Sub-threshold components vanish entirely.
        let tiny = [Point3::new(0.0, 0.0, 1.0), Point3::new(0.0, 0.04, 1.04)];
        assert!(measure_steps(&tiny, 0.05).unwrap().is_empty());
        assert!(matches!(
            measure_steps(&tiny[..1], 0.05),
            Err(GeomError::TooFewPoints { .. })
        ));
    }

    proptest! {
        #[test]
        fn reprojection_round_trips(u in 0.0f64..512.0, v in 0.0f64..512.0, z in 0.1f64..10.0) {
            let r = rig();
            let p = backproject((u, v), z, &r).unwrap();
            let (u2, v2) = project(&p, &r).unwrap();
            prop_assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9);
        }

        #[test]
        fn gravity_attitude_round_trips(
            pitch in -0.85f64..0.85, roll in -0.4f64..0.4, mag in 1.0f64..20.0
        ) {
            let g = gravity_from_attitude(pitch, roll, mag).unwrap();
            let a = attitude_from_gravity(&g).unwrap();
            prop_assert!((a.pitch - pitch).abs() < 1e-9);
            prop_assert!((a.roll - roll).abs() < 1e-9);
        }

        #[test]
        fn frame_chain_is_an_isometry(
            pitch in -0.6f64..0.6, roll in -0.3f64..0.3, yaw in -0.5f64..0.5,
            ax in -2.0f64..2.0, ay in -2.0f64..2.0, az in 0.5f64..5.0,
            bx in -2.0f64..2.0, by in -2.0f64..2.0, bz in 0.5f64..5.0,
        ) {
            let w = WorldRotation::from_attitude(pitch, roll).unwrap();
            let a = Point3::new(ax, ay, az);
            let b = Point3::new(bx, by, bz);
            let chain = |p: &Point3<f64>| world_to_stair(&w.transform_point(p), yaw);
            let d0 = (a - b).norm();
            let d1 = (chain(&a) - chain(&b)).norm();
            prop_assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
            // Norms preserved too (rotations fix the origin).
            prop_assert!((chain(&a).coords.norm() - a.coords.norm()).abs() < 1e-9);
        }

        #[test]
        fn stair_rotation_preserves_y(
            x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0, yaw in -1.5f64..1.5
        ) {
            let p = world_to_stair(&Point3::new(x, y, z), yaw);
            prop_assert!((p.y - y).abs() < 1e-12);
        }

        #[test]
        fn step_measurement_survives_point_reversal(
            n in 2usize..6, w in 0.28f64..0.35, h in 0.11f64..0.17
        ) {
            let pts: Vec<Point3<f64>> = (0..n)
                .map(|k| Point3::new(0.0, h * k as f64, 1.0 + w * k as f64))
                .collect();
            let fwd = measure_steps(&pts, 0.05).unwrap();
            let rev: Vec<Point3<f64>> = pts.iter().rev().copied().collect();
            let mut bwd = measure_steps(&rev, 0.05).unwrap();
            bwd.reverse();
            prop_assert_eq!(fwd.len(), bwd.len());
            for (a, b) in fwd.iter().zip(&bwd) {
                prop_assert!((a.width_m - b.width_m).abs() < 1e-12);
                prop_assert!((a.height_m - b.height_m).abs() < 1e-12);
            }
        }
    }
}
