//! Rigid transforms, the Rodrigues rotation map, the C-arm perspective model
//! and the coordinate-frame conversions between detector pixels, network
//! pixels and the centered registration frame.
//!
//! Frames used throughout the crate:
//!
//! * **world**: millimetres, origin at the X-ray source. Landmarks loaded from
//!   voxel space are centered on the volume and pushed along `+y` by the
//!   volume displacement (see [`voxel_to_world`]), so world `y` is depth.
//! * **camera**: world axes re-labelled by an [`AxisMap`] so that `z` is the
//!   optical axis. The default map sends world `y -> z`, `x -> x`, `z -> -y`.
//! * **detector**: pixels, origin at the top-left corner, `v` pointing down.
//! * **registration**: detector pixels shifted so the detector center is the
//!   origin, with `v` pointing up. Observations and projections are compared
//!   in this frame.

use nalgebra::{Matrix2x3, Matrix3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Perspective division never divides by a depth smaller than this (mm).
pub const MIN_DEPTH: f64 = 1e-3;

/// Below this rotation angle the first-order series `I + [r]x` is used.
pub const SMALL_ANGLE: f64 = 1e-8;

/// 6-DoF rigid transform: axis-angle rotation (radians) and translation (mm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    /// Builds a pose from a rotation vector given in degrees.
    pub fn from_degrees(rotation_deg: [f64; 3], translation_mm: [f64; 3]) -> Self {
        Self::new(
            Vector3::from(rotation_deg).map(f64::to_radians),
            Vector3::from(translation_mm),
        )
    }

    pub fn rotation_degrees(&self) -> [f64; 3] {
        self.rotation.map(f64::to_degrees).into()
    }

    /// `(r_x, r_y, r_z, t_x, t_y, t_z)`
    pub fn to_array(&self) -> [f64; 6] {
        let r = &self.rotation;
        let t = &self.translation;
        [r.x, r.y, r.z, t.x, t.y, t.z]
    }

    pub fn from_array(p: [f64; 6]) -> Self {
        Self::new(
            Vector3::new(p[0], p[1], p[2]),
            Vector3::new(p[3], p[4], p[5]),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn rotation_matrix(&self) -> Result<Matrix3<f64>> {
        rodrigues(&self.rotation)
    }
}

/// Cross-product matrix: `skew(a) * b == a x b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix of an axis-angle vector.
///
/// `R = I + sin(a) K + (1 - cos(a)) K^2` with `a = |r|` and `K = skew(r / a)`.
/// For `a < 1e-8` the first-order series `I + skew(r)` is returned instead.
pub fn rodrigues(r: &Vector3<f64>) -> Result<Matrix3<f64>> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(invalid(format!("rotation vector is not finite: {r:?}")));
    }
    let angle = r.norm();
    if angle < SMALL_ANGLE {
        return Ok(Matrix3::identity() + skew(r));
    }
    let k = skew(&(r / angle));
    Ok(Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos()))
}

/// Partial derivatives `dR/dr_i` of [`rodrigues`], one matrix per component.
///
/// Uses `dR/dr_i = (r_i [r]x + [r x (I - R) e_i]x) R / |r|^2`, and the
/// derivative of the first-order branch (`dR/dr_i = [e_i]x`) near zero.
pub fn rodrigues_derivatives(r: &Vector3<f64>, rot: &Matrix3<f64>) -> [Matrix3<f64>; 3] {
    let theta2 = r.norm_squared();
    let mut out = [Matrix3::zeros(); 3];
    if r.norm() < SMALL_ANGLE {
        for (i, d) in out.iter_mut().enumerate() {
            *d = skew(&Vector3::ith(i, 1.0));
        }
        return out;
    }
    let skew_r = skew(r);
    let i_minus_r = Matrix3::identity() - rot;
    for (i, d) in out.iter_mut().enumerate() {
        let col = r.cross(&i_minus_r.column(i).into_owned());
        *d = (skew_r * r[i] + skew(&col)) * rot / theta2;
    }
    out
}

/// `R p + t`
pub fn transform_point(pose: &Pose, p: &Point3<f64>) -> Result<Point3<f64>> {
    let rot = pose.rotation_matrix()?;
    Ok(rot * p + pose.translation)
}

/// Source-to-detector geometry of an isotropic flat-panel detector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    /// Source-to-detector distance (mm).
    pub sdd: f64,
    /// Detector pixel pitch (mm/px).
    pub pixel_spacing: f64,
    /// Principal point in detector pixels.
    pub principal_point: [f64; 2],
    /// Width and height in pixels.
    pub image_size: [u32; 2],
}

impl Default for CameraIntrinsics {
    /// SDD 1020 mm, 0.5 mm/px, 768 x 768 detector, principal point at `W/2`.
    fn default() -> Self {
        Self {
            sdd: 1020.0,
            pixel_spacing: 0.5,
            principal_point: [384.0, 384.0],
            image_size: [768, 768],
        }
    }
}

impl CameraIntrinsics {
    pub fn new(
        sdd: f64,
        pixel_spacing: f64,
        principal_point: [f64; 2],
        image_size: [u32; 2],
    ) -> Result<Self> {
        let intr = Self {
            sdd,
            pixel_spacing,
            principal_point,
            image_size,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Intrinsics with the principal point at the detector center.
    pub fn centered(sdd: f64, pixel_spacing: f64, width: u32, height: u32) -> Result<Self> {
        Self::new(
            sdd,
            pixel_spacing,
            [f64::from(width) / 2.0, f64::from(height) / 2.0],
            [width, height],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sdd.is_finite() && self.sdd > 0.0) {
            return Err(invalid(format!("sdd must be > 0, got {}", self.sdd)));
        }
        if !(self.pixel_spacing.is_finite() && self.pixel_spacing > 0.0) {
            return Err(invalid(format!(
                "pixel_spacing must be > 0, got {}",
                self.pixel_spacing
            )));
        }
        if self.image_size.iter().any(|&s| s < 1) {
            return Err(invalid("image_size components must be >= 1"));
        }
        if !self.principal_point.iter().all(|c| c.is_finite()) {
            return Err(invalid("principal point is not finite"));
        }
        Ok(())
    }

    /// Focal length in pixels, `sdd / pixel_spacing`.
    pub fn focal_length(&self) -> f64 {
        self.sdd / self.pixel_spacing
    }

    /// The 3x3 intrinsic matrix `K`.
    pub fn matrix(&self) -> Matrix3<f64> {
        let f = self.focal_length();
        let [cu, cv] = self.principal_point;
        Matrix3::new(f, 0.0, cu, 0.0, f, cv, 0.0, 0.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        f64::from(self.image_size[0])
    }

    pub fn height(&self) -> f64 {
        f64::from(self.image_size[1])
    }
}

/// Projects a camera-frame point to detector pixels.
///
/// The depth is clamped to [`MIN_DEPTH`] before the division, so the output
/// is finite for every finite input.
pub fn project_point(intr: &CameraIntrinsics, p_cam: &Point3<f64>) -> Point2<f64> {
    let f = intr.focal_length();
    let [cu, cv] = intr.principal_point;
    let z = p_cam.z.max(MIN_DEPTH);
    Point2::new((f * p_cam.x + cu * z) / z, (f * p_cam.y + cv * z) / z)
}

/// [`project_point`] together with its 2x3 Jacobian with respect to `p_cam`.
///
/// When the depth is clamped the third column is zero.
pub fn project_point_jacobian(
    intr: &CameraIntrinsics,
    p_cam: &Point3<f64>,
) -> (Point2<f64>, Matrix2x3<f64>) {
    let f = intr.focal_length();
    let uv = project_point(intr, p_cam);
    let clamped = p_cam.z < MIN_DEPTH;
    let z = p_cam.z.max(MIN_DEPTH);
    let (du_dz, dv_dz) = if clamped {
        (0.0, 0.0)
    } else {
        (-f * p_cam.x / (z * z), -f * p_cam.y / (z * z))
    };
    let jac = Matrix2x3::new(f / z, 0.0, du_dz, 0.0, f / z, dv_dz);
    (uv, jac)
}

/// Signed axis permutation taking world coordinates to camera coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisMap(Matrix3<f64>);

impl AxisMap {
    /// World `x -> x`, world `z -> -y`, world `y -> z` (depth).
    pub const REGISTRATION: AxisMap = AxisMap(Matrix3::new(
        1.0, 0.0, 0.0, //
        0.0, 0.0, -1.0, //
        0.0, 1.0, 0.0,
    ));

    /// Camera frame equal to the world frame.
    pub const IDENTITY: AxisMap = AxisMap(Matrix3::new(
        1.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, //
        0.0, 0.0, 1.0,
    ));

    /// Accepts any signed permutation matrix with determinant +1.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let is_signed_perm = m.row_iter().all(|row| {
            row.iter().filter(|v| v.abs() == 1.0).count() == 1
                && row.iter().filter(|v| **v == 0.0).count() == 2
        }) && (m.transpose() * m - Matrix3::identity()).norm() == 0.0;
        if !is_signed_perm || m.determinant() != 1.0 {
            return Err(invalid("axis map must be a proper signed permutation"));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        self.0 * p
    }
}

impl Default for AxisMap {
    fn default() -> Self {
        Self::REGISTRATION
    }
}

fn check_finite<'a>(values: impl IntoIterator<Item = &'a f64>, what: &str) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{what} contains non-finite coordinates")))
    }
}

/// Ordered 3D landmarks in world millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet3D(Vec<Point3<f64>>);

impl LandmarkSet3D {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        check_finite(points.iter().flat_map(|p| p.coords.iter()), "3D landmark set")?;
        Ok(Self(points))
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Singular values of the centered point cloud divided by `sqrt(N)`,
    /// i.e. standard deviations along the principal axes, descending.
    pub fn principal_spread(&self) -> Vector3<f64> {
        let n = self.0.len().max(1) as f64;
        let centroid = self.0.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
        let cov = self.0.iter().fold(Matrix3::zeros(), |acc, p| {
            let d = p.coords - centroid;
            acc + d * d.transpose()
        }) / n;
        let mut ev: Vec<f64> = cov
            .symmetric_eigenvalues()
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        Vector3::new(ev[0], ev[1], ev[2])
    }

    /// Requires at least three points that are not collinear.
    pub fn check_registrable(&self, tol_mm: f64) -> Result<()> {
        if self.0.len() < 3 {
            return Err(invalid(format!(
                "registration needs at least 3 landmarks, got {}",
                self.0.len()
            )));
        }
        if self.principal_spread()[1] <= tol_mm {
            return Err(invalid("3D landmarks are collinear"));
        }
        Ok(())
    }

    /// Requires the points to span all three dimensions.
    pub fn check_non_coplanar(&self, tol_mm: f64) -> Result<()> {
        self.check_registrable(tol_mm)?;
        let spread = self.principal_spread();
        if spread[2] <= tol_mm {
            return Err(invalid(format!(
                "3D landmarks are coplanar (out-of-plane spread {:.3e} mm <= {tol_mm} mm)",
                spread[2]
            )));
        }
        Ok(())
    }
}

/// Ordered 2D landmarks in pixels, index-aligned with a [`LandmarkSet3D`].
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet2D(Vec<Point2<f64>>);

impl LandmarkSet2D {
    pub fn new(points: Vec<Point2<f64>>) -> Result<Self> {
        check_finite(points.iter().flat_map(|p| p.coords.iter()), "2D landmark set")?;
        Ok(Self(points))
    }

    pub fn points(&self) -> &[Point2<f64>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn from_trusted(points: Vec<Point2<f64>>) -> Self {
        Self(points)
    }
}

/// CT volume placement: `world = (voxel - center) * spacing + (0, vtd, 0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeFrame {
    /// Volume center in voxels.
    pub center: [f64; 3],
    /// Voxel spacing in mm.
    pub spacing: [f64; 3],
    /// Displacement added to world `y` (mm).
    pub vtd: f64,
}

impl VolumeFrame {
    /// World position of the volume center, `(0, vtd, 0)`.
    pub fn center_world(&self) -> Point3<f64> {
        Point3::new(0.0, self.vtd, 0.0)
    }
}

impl Default for VolumeFrame {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            spacing: [1.0; 3],
            vtd: 800.0,
        }
    }
}

impl VolumeFrame {
    pub fn validate(&self) -> Result<()> {
        if !self.spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(invalid(format!(
                "voxel spacing must be > 0, got {:?}",
                self.spacing
            )));
        }
        if !(self.center.iter().all(|c| c.is_finite()) && self.vtd.is_finite()) {
            return Err(invalid("volume frame is not finite"));
        }
        Ok(())
    }
}

/// Maps voxel coordinates to world millimetres, see [`VolumeFrame`].
pub fn voxel_to_world(voxels: &[Point3<f64>], frame: &VolumeFrame) -> Result<LandmarkSet3D> {
    frame.validate()?;
    check_finite(voxels.iter().flat_map(|p| p.coords.iter()), "voxel coordinates")?;
    let c = Vector3::from(frame.center);
    let s = Vector3::from(frame.spacing);
    let points = voxels
        .iter()
        .map(|v| {
            let mut w = (v.coords - c).component_mul(&s);
            w.y += frame.vtd;
            Point3::from(w)
        })
        .collect();
    LandmarkSet3D::new(points)
}

/// Network-frame pixels to the centered, y-up registration frame.
///
/// Scales by `det_size / net_size`, subtracts `det_size / 2` from `u`, and
/// maps `v` to `-(v - det_size / 2)`.
pub fn detector_to_registration(
    l: &LandmarkSet2D,
    net_size: f64,
    det_size: f64,
) -> Result<LandmarkSet2D> {
    check_sizes(net_size, det_size)?;
    let scale = det_size / net_size;
    let half = det_size / 2.0;
    Ok(LandmarkSet2D::from_trusted(
        l.points()
            .iter()
            .map(|p| Point2::new(p.x * scale - half, -(p.y * scale - half)))
            .collect(),
    ))
}

/// Exact algebraic inverse of [`detector_to_registration`].
pub fn registration_to_detector(
    l: &LandmarkSet2D,
    net_size: f64,
    det_size: f64,
) -> Result<LandmarkSet2D> {
    check_sizes(net_size, det_size)?;
    let scale = net_size / det_size;
    let half = det_size / 2.0;
    Ok(LandmarkSet2D::from_trusted(
        l.points()
            .iter()
            .map(|p| Point2::new((p.x + half) * scale, (half - p.y) * scale))
            .collect(),
    ))
}

fn check_sizes(net_size: f64, det_size: f64) -> Result<()> {
    if !(net_size.is_finite() && net_size > 0.0 && det_size.is_finite() && det_size > 0.0) {
        return Err(invalid(format!(
            "image sizes must be > 0, got net {net_size}, detector {det_size}"
        )));
    }
    Ok(())
}

/// Detector pixel to registration frame, using the detector's own size.
pub(crate) fn center_detector_pixel(intr: &CameraIntrinsics, uv: &Point2<f64>) -> Point2<f64> {
    Point2::new(uv.x - intr.width() / 2.0, -(uv.y - intr.height() / 2.0))
}

/// `R (p - pivot) + pivot + t`: the pose rotates about `pivot` instead of
/// the world origin.
pub fn transform_point_about(pose: &Pose, p: &Point3<f64>, pivot: &Point3<f64>) -> Result<Point3<f64>> {
    let rot = pose.rotation_matrix()?;
    Ok(pivot + rot * (p - pivot) + pose.translation)
}

/// Full landmark projection model: intrinsics, world-to-camera axis map and
/// the point the pose rotates about.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projector {
    pub intrinsics: CameraIntrinsics,
    pub axes: AxisMap,
    /// Rotation center in world mm. The origin reproduces [`transform_point`].
    pub pivot: Point3<f64>,
}

impl Projector {
    pub fn new(intrinsics: CameraIntrinsics) -> Self {
        Self {
            intrinsics,
            axes: AxisMap::default(),
            pivot: Point3::origin(),
        }
    }

    pub fn with_axes(mut self, axes: AxisMap) -> Self {
        self.axes = axes;
        self
    }

    pub fn with_pivot(mut self, pivot: Point3<f64>) -> Self {
        self.pivot = pivot;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        check_finite(self.pivot.coords.iter(), "pivot")
    }

    /// Camera-frame position of `p` for a precomputed rotation matrix.
    pub fn to_camera(&self, rot: &Matrix3<f64>, t: &Vector3<f64>, p: &Point3<f64>) -> Point3<f64> {
        self.axes.apply(&(self.pivot + rot * (p - self.pivot) + t))
    }

    /// Registration-frame position of a camera-frame point.
    pub fn image_point(&self, cam: &Point3<f64>) -> Point2<f64> {
        center_detector_pixel(&self.intrinsics, &project_point(&self.intrinsics, cam))
    }

    /// Projects world landmarks under `pose` into the registration frame.
    pub fn project(&self, pose: &Pose, landmarks: &LandmarkSet3D) -> Result<LandmarkSet2D> {
        if landmarks.is_empty() {
            return Err(invalid("cannot project an empty landmark set"));
        }
        if !pose.is_finite() {
            return Err(invalid("pose is not finite"));
        }
        self.validate()?;
        let rot = pose.rotation_matrix()?;
        let points = landmarks
            .points()
            .iter()
            .map(|p| self.image_point(&self.to_camera(&rot, &pose.translation, p)))
            .collect();
        LandmarkSet2D::new(points)
    }
}

/// Projects world landmarks under `pose` into the registration frame, using
/// the default axis map and rotating about the world origin.
pub fn project_landmarks(
    pose: &Pose,
    intr: &CameraIntrinsics,
    landmarks: &LandmarkSet3D,
) -> Result<LandmarkSet2D> {
    Projector::new(*intr).project(pose, landmarks)
}
