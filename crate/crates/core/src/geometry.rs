//! Pinhole camera model, SE(3) poses and back-projection.
//!
//! Depth pixels are lifted into world-frame points either one at a time
//! ([`backproject_pixel`]) or as a whole frame in a single 4x4 * 4xN product
//! ([`backproject_frame`]). Both paths evaluate
//!
//! ```text
//! p_world = z * T_wc * K_h^-1 * (u, v, 1, 1/z)^T
//! ```
//!
//! with `T_wc` the camera-to-world transform and `K_h` the homogeneous
//! intrinsics matrix. The inverse of `K_h` is closed-form, so no numeric
//! inversion happens per frame.

use nalgebra::{Matrix3, Matrix4, Point3, UnitQuaternion, Vector3, Vector4};
use thiserror::Error;

use crate::grid::DepthMap;

/// Default depth cutoff in meters; pixels beyond it are dropped.
pub const DEFAULT_MAX_RANGE: f64 = 50.0;

/// Intrinsics with |fx| or |fy| below this are not invertible.
const DEGENERATE_FOCAL: f64 = 1e-12;

/// Per-entry tolerance for the rotation orthonormality check.
const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("degenerate intrinsics: fx={fx}, fy={fy}")]
    DegenerateIntrinsics { fx: f64, fy: f64 },
    #[error("rotation is not a proper orthonormal matrix: {0}")]
    InvalidRotation(String),
    #[error("invalid depth {0} (must be finite and > 0)")]
    InvalidDepth(f64),
    #[error("dimension mismatch: camera is {expected_w}x{expected_h}, frame is {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("stride must be >= 1")]
    InvalidStride,
}

/// Pinhole intrinsics: focal lengths, principal point and skew, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    /// Zero-skew intrinsics. Fails when a focal length or a dimension is not
    /// positive.
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        Self::with_skew(fx, fy, cx, cy, 0.0, width, height)
    }

    pub fn with_skew(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        skew: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if fx <= 0.0 || fy <= 0.0 || !fx.is_finite() || !fy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        if !cx.is_finite() || !cy.is_finite() || !skew.is_finite() {
            return Err(GeometryError::InvalidIntrinsics(
                "cx, cy and skew must be finite".into(),
            ));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            skew,
            width,
            height,
        })
    }

    /// A principal point outside the frame is legal but suspicious; callers
    /// that load user configs should warn when this returns false.
    pub fn principal_point_in_frame(&self) -> bool {
        self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64
    }

    /// The homogeneous 4x4 intrinsics matrix `K_h`:
    ///
    /// ```text
    /// | fx  s  cx  0 |
    /// |  0 fy  cy  0 |
    /// |  0  0   1  0 |
    /// |  0  0   0  1 |
    /// ```
    pub fn homogeneous_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m[(0, 0)] = self.fx;
        m[(0, 1)] = self.skew;
        m[(0, 2)] = self.cx;
        m[(1, 1)] = self.fy;
        m[(1, 2)] = self.cy;
        m
    }

    /// Closed-form inverse of [`Self::homogeneous_matrix`]:
    ///
    /// ```text
    /// | 1/fx  -s/(fx*fy)  (s*cy - cx*fy)/(fx*fy)  0 |
    /// |    0        1/fy                  -cy/fy  0 |
    /// |    0           0                       1  0 |
    /// |    0           0                       0  1 |
    /// ```
    pub fn inverse_matrix(&self) -> Result<Matrix4<f64>, GeometryError> {
        if self.fx.abs() < DEGENERATE_FOCAL || self.fy.abs() < DEGENERATE_FOCAL {
            return Err(GeometryError::DegenerateIntrinsics {
                fx: self.fx,
                fy: self.fy,
            });
        }
        let mut m = Matrix4::identity();
        m[(0, 0)] = 1.0 / self.fx;
        m[(0, 1)] = -self.skew / (self.fx * self.fy);
        m[(0, 2)] = (self.skew * self.cy - self.cx * self.fy) / (self.fx * self.fy);
        m[(1, 1)] = 1.0 / self.fy;
        m[(1, 2)] = -self.cy / self.fy;
        Ok(m)
    }
}

/// Axis convention of the source camera frame.
///
/// The projection math assumes x-right, y-down, z-forward ([`Rdf`]). Datasets
/// whose camera frames differ get a fixed axis permutation inserted between
/// the intrinsics inverse and the pose.
///
/// [`Rdf`]: CameraConvention::Rdf
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CameraConvention {
    /// x-right, y-down, z-forward (standard pinhole).
    #[default]
    Rdf,
    /// x-forward, y-left, z-up (ROS body frame).
    Flu,
    /// x-right, y-up, z-backward (OpenGL).
    Rub,
}

impl CameraConvention {
    /// Permutation taking standard pinhole camera coordinates into this
    /// convention's camera frame, embedded homogeneously.
    pub fn matrix(&self) -> Matrix4<f64> {
        match self {
            CameraConvention::Rdf => Matrix4::identity(),
            CameraConvention::Flu => Matrix4::new(
                0.0, 0.0, 1.0, 0.0, //
                -1.0, 0.0, 0.0, 0.0, //
                0.0, -1.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ),
            CameraConvention::Rub => Matrix4::new(
                1.0, 0.0, 0.0, 0.0, //
                0.0, -1.0, 0.0, 0.0, //
                0.0, 0.0, -1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rdf" => Some(CameraConvention::Rdf),
            "flu" => Some(CameraConvention::Flu),
            "rub" => Some(CameraConvention::Rub),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CameraConvention::Rdf => "rdf",
            CameraConvention::Flu => "flu",
            CameraConvention::Rub => "rub",
        }
    }
}

/// Rigid camera-to-world transform (`T_wc`).
///
/// Multiplying a camera-frame point by this pose yields the world-frame
/// point; no extra inversion takes place anywhere downstream, so trajectory
/// files are expected to store camera-to-world poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl PoseSE3 {
    /// Validates that `rotation` is orthonormal (`R^T R = I` within 1e-9 per
    /// entry) with determinant +1 within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let gram = rotation.transpose() * rotation;
        let residual = gram - Matrix3::identity();
        if residual.iter().any(|e| e.abs() > ROTATION_TOL) {
            return Err(GeometryError::InvalidRotation(format!(
                "R^T R deviates from identity by up to {:e}",
                residual.iter().fold(0.0f64, |a, e| a.max(e.abs()))
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::InvalidRotation(format!(
                "determinant is {det}, expected +1"
            )));
        }
        if translation.iter().any(|t| !t.is_finite()) {
            return Err(GeometryError::InvalidRotation(
                "translation must be finite".into(),
            ));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Unit quaternions always produce a proper rotation, so this cannot fail.
    pub fn from_quaternion(q: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: q.to_rotation_matrix().into_inner(),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    /// Homogeneous 4x4 form `[R t; 0 1]`.
    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `(R, t)^-1 = (R^T, -R^T t)`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Composition `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }
}

impl std::ops::Mul for PoseSE3 {
    type Output = PoseSE3;

    fn mul(self, rhs: PoseSE3) -> PoseSE3 {
        self.compose(&rhs)
    }
}

/// Knobs for frame back-projection.
#[derive(Debug, Clone)]
pub struct BackprojectOptions {
    /// Depths beyond this (meters) are dropped.
    pub max_range: f64,
    /// Take every `stride`-th pixel in both axes.
    pub stride: usize,
    pub convention: CameraConvention,
}

impl Default for BackprojectOptions {
    fn default() -> Self {
        Self {
            max_range: DEFAULT_MAX_RANGE,
            stride: 1,
            convention: CameraConvention::Rdf,
        }
    }
}

/// The 4xN right-hand-side of the batched projection: one column
/// `(u, v, 1, 1/z)` per retained pixel, stored column-contiguous.
#[derive(Debug, Clone)]
pub struct PixelBatch {
    columns: Vec<Vector4<f64>>,
    depths: Vec<f64>,
    pixel_indices: Vec<usize>,
    dropped: usize,
}

impl PixelBatch {
    /// Collects the retained pixels of a depth map in row-major order.
    ///
    /// Pixels with non-finite depth, depth <= 0 or depth > `max_range` are
    /// filtered out and counted in [`Self::dropped`].
    pub fn from_depth(depth: &DepthMap, options: &BackprojectOptions) -> Result<Self, GeometryError> {
        if options.stride == 0 {
            return Err(GeometryError::InvalidStride);
        }
        let stride = options.stride;
        let width = depth.width();
        let capacity = depth.len() / (stride * stride) + 1;
        let mut columns = Vec::with_capacity(capacity);
        let mut depths = Vec::with_capacity(capacity);
        let mut pixel_indices = Vec::with_capacity(capacity);
        let mut dropped = 0usize;
        let data = depth.as_slice();
        for v in (0..depth.height()).step_by(stride) {
            let row = &data[v * width..(v + 1) * width];
            for u in (0..width).step_by(stride) {
                let z = row[u];
                if !z.is_finite() || z <= 0.0 || z > options.max_range {
                    dropped += 1;
                    continue;
                }
                columns.push(Vector4::new(u as f64, v as f64, 1.0, 1.0 / z));
                depths.push(z);
                pixel_indices.push(v * width + u);
            }
        }
        Ok(Self {
            columns,
            depths,
            pixel_indices,
            dropped,
        })
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Count of visited pixels that were filtered out.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn columns(&self) -> &[Vector4<f64>] {
        &self.columns
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn pixel_indices(&self) -> &[usize] {
        &self.pixel_indices
    }
}

/// World-frame points in homogeneous form, parallel to the source-pixel
/// indices they came from. The fourth coordinate is renormalized to exactly 1.
#[derive(Debug, Clone)]
pub struct WorldPointBatch {
    points: Vec<Vector4<f64>>,
    pixel_indices: Vec<usize>,
    dropped: usize,
}

impl WorldPointBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Count of visited pixels filtered out before batching.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn homogeneous(&self) -> &[Vector4<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point3<f64> {
        Point3::new(self.points[i].x, self.points[i].y, self.points[i].z)
    }

    /// Row-major linear index of the source pixel for each point.
    pub fn pixel_indices(&self) -> &[usize] {
        &self.pixel_indices
    }

    pub fn iter_points(&self) -> impl Iterator<Item = Point3<f64>> + '_ {
        self.points.iter().map(|p| Point3::new(p.x, p.y, p.z))
    }
}

/// Back-projects a single pixel: the top three entries of
/// `z * T_wc * K_h^-1 * (u, v, 1, 1/z)^T`.
pub fn backproject_pixel(
    k: &CameraIntrinsics,
    pose: &PoseSE3,
    u: f64,
    v: f64,
    z: f64,
) -> Result<Point3<f64>, GeometryError> {
    if !z.is_finite() || z <= 0.0 {
        return Err(GeometryError::InvalidDepth(z));
    }
    let m = pose.matrix() * k.inverse_matrix()?;
    let p = m * Vector4::new(u, v, 1.0, 1.0 / z) * z;
    Ok(Point3::new(p.x, p.y, p.z))
}

/// Back-projects a whole depth map with one 4x4 * 4xN product.
///
/// Retained points come out in source-pixel row-major order and agree with
/// the per-pixel path to within floating-point noise. Filtering, the matrix
/// product and the z-scaling are fused into a single sweep; the arithmetic
/// per column is identical to [`backproject_batch`], so results match it
/// bit for bit without materializing the pixel matrix.
pub fn backproject_frame(
    k: &CameraIntrinsics,
    pose: &PoseSE3,
    depth: &DepthMap,
    options: &BackprojectOptions,
) -> Result<WorldPointBatch, GeometryError> {
    if depth.width() != k.width || depth.height() != k.height {
        return Err(GeometryError::DimensionMismatch {
            expected_w: k.width,
            expected_h: k.height,
            got_w: depth.width(),
            got_h: depth.height(),
        });
    }
    if options.stride == 0 {
        return Err(GeometryError::InvalidStride);
    }
    let m = pose.matrix() * options.convention.matrix() * k.inverse_matrix()?;
    let r = top_rows(&m);
    let stride = options.stride;
    let width = depth.width();
    let capacity = depth.len() / (stride * stride) + 1;
    let mut points = Vec::with_capacity(capacity);
    let mut pixel_indices = Vec::with_capacity(capacity);
    let mut dropped = 0usize;
    let data = depth.as_slice();
    for v in (0..depth.height()).step_by(stride) {
        let row = &data[v * width..(v + 1) * width];
        for u in (0..width).step_by(stride) {
            let z = row[u];
            if !z.is_finite() || z <= 0.0 || z > options.max_range {
                dropped += 1;
                continue;
            }
            points.push(project_column(&r, u as f64, v as f64, z));
            pixel_indices.push(v * width + u);
        }
    }
    Ok(WorldPointBatch {
        points,
        pixel_indices,
        dropped,
    })
}

/// Top three rows of the projection matrix; the bottom row is (0,0,0,1).
fn top_rows(m: &Matrix4<f64>) -> [[f64; 4]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(0, 3)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(1, 3)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)], m[(2, 3)]],
    ]
}

/// One column of the batched product: z * M * (u, v, 1, 1/z), with the
/// fourth coordinate pinned to exactly 1.
#[inline]
fn project_column(r: &[[f64; 4]; 3], u: f64, v: f64, z: f64) -> Vector4<f64> {
    let c = [u, v, 1.0, 1.0 / z];
    let dot = |row: &[f64; 4]| row[0] * c[0] + row[1] * c[1] + row[2] * c[2] + row[3] * c[3];
    Vector4::new(z * dot(&r[0]), z * dot(&r[1]), z * dot(&r[2]), 1.0)
}

/// The matrix stage: applies `T_wc * P * K_h^-1` to every column, then the
/// element-wise z-scaling.
pub fn backproject_batch(
    k: &CameraIntrinsics,
    pose: &PoseSE3,
    convention: CameraConvention,
    batch: &PixelBatch,
) -> Result<WorldPointBatch, GeometryError> {
    let m = pose.matrix() * convention.matrix() * k.inverse_matrix()?;
    let r = top_rows(&m);
    let mut points = Vec::with_capacity(batch.len());
    for (col, &z) in batch.columns.iter().zip(&batch.depths) {
        points.push(project_column(&r, col.x, col.y, z));
    }
    Ok(WorldPointBatch {
        points,
        pixel_indices: batch.pixel_indices.clone(),
        dropped: batch.dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{RngExt, SeedableRng};

    fn random_intrinsics(rng: &mut StdRng) -> CameraIntrinsics {
        CameraIntrinsics::with_skew(
            rng.random_range(50.0..2000.0),
            rng.random_range(50.0..2000.0),
            rng.random_range(0.0..640.0),
            rng.random_range(0.0..480.0),
            rng.random_range(-5.0..5.0),
            640,
            480,
        )
        .unwrap()
    }

    pub(crate) fn random_pose(rng: &mut StdRng) -> PoseSE3 {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let q = UnitQuaternion::from_scaled_axis(axis);
        let t = Vector3::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        );
        PoseSE3::from_quaternion(q, t)
    }

    #[test]
    fn homogeneous_matrix_unit_camera_is_identity() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 1).unwrap();
        assert_eq!(k.homogeneous_matrix(), Matrix4::identity());
        assert_eq!(k.inverse_matrix().unwrap(), Matrix4::identity());
    }

    #[test]
    fn homogeneous_matrix_places_entries() {
        let k = CameraIntrinsics::new(320.0, 320.0, 320.0, 240.0, 640, 480).unwrap();
        let m = k.homogeneous_matrix();
        assert_eq!(m[(0, 0)], 320.0);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(0, 2)], 320.0);
        assert_eq!(m[(1, 1)], 320.0);
        assert_eq!(m[(1, 2)], 240.0);
        assert_eq!(m[(2, 2)], 1.0);
        assert_eq!(m[(3, 3)], 1.0);
        assert_eq!(m[(3, 0)], 0.0);
        assert_eq!(m[(2, 3)], 0.0);
    }

    #[test]
    fn closed_form_inverse_hand_expanded() {
        // With s = 0 the first two rows reduce to (1/fx, 0, -cx/fx, 0) and
        // (0, 1/fy, -cy/fy, 0).
        let k = CameraIntrinsics::new(320.0, 240.0, 160.0, 120.0, 640, 480).unwrap();
        let inv = k.inverse_matrix().unwrap();
        assert_eq!(inv[(0, 0)], 1.0 / 320.0);
        assert_eq!(inv[(0, 1)], 0.0);
        assert_eq!(inv[(0, 2)], -160.0 / 320.0);
        assert_eq!(inv[(1, 1)], 1.0 / 240.0);
        assert_eq!(inv[(1, 2)], -120.0 / 240.0);
    }

    #[test]
    fn closed_form_inverse_matches_numeric_inverse() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let k = random_intrinsics(&mut rng);
            let closed = k.inverse_matrix().unwrap();
            let numeric = k.homogeneous_matrix().try_inverse().unwrap();
            let product = k.homogeneous_matrix() * closed;
            for r in 0..4 {
                for c in 0..4 {
                    assert!((closed[(r, c)] - numeric[(r, c)]).abs() < 1e-12);
                    let expected = if r == c { 1.0 } else { 0.0 };
                    assert!((product[(r, c)] - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn degenerate_focal_lengths_rejected() {
        // Construction already rejects non-positive focal lengths.
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 1, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0, 1, 1).is_err());
        // Sub-threshold positives pass construction but cannot be inverted.
        let k = CameraIntrinsics::new(1e-13, 1.0, 0.0, 0.0, 1, 1).unwrap();
        assert!(matches!(
            k.inverse_matrix(),
            Err(GeometryError::DegenerateIntrinsics { .. })
        ));
    }

    #[test]
    fn backproject_principal_ray() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap();
        let p = backproject_pixel(&k, &PoseSE3::identity(), 0.0, 0.0, 5.0).unwrap();
        assert_relative_eq!(p, Point3::new(0.0, 0.0, 5.0), epsilon = 1e-15);
    }

    #[test]
    fn backproject_off_center_pixel() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 200, 200).unwrap();
        let p = backproject_pixel(&k, &PoseSE3::identity(), 150.0, 50.0, 2.0).unwrap();
        assert_relative_eq!(p, Point3::new(2.0, 0.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn backproject_pure_translation_adds_offset() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 200, 200).unwrap();
        let t = Vector3::new(1.5, -2.0, 0.25);
        let pose = PoseSE3::from_translation(t);
        let base = backproject_pixel(&k, &PoseSE3::identity(), 31.0, 77.0, 3.5).unwrap();
        let moved = backproject_pixel(&k, &pose, 31.0, 77.0, 3.5).unwrap();
        assert_relative_eq!(moved, Point3::from(base.coords + t), epsilon = 1e-12);
    }

    #[test]
    fn backproject_rejects_invalid_depth() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 1).unwrap();
        for z in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                backproject_pixel(&k, &PoseSE3::identity(), 0.0, 0.0, z),
                Err(GeometryError::InvalidDepth(_))
            ));
        }
    }

    #[test]
    fn frame_batch_matches_per_pixel_loop() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let k = CameraIntrinsics::with_skew(
                rng.random_range(10.0..50.0),
                rng.random_range(10.0..50.0),
                8.0,
                6.0,
                rng.random_range(-2.0..2.0),
                16,
                12,
            )
            .unwrap();
            let pose = random_pose(&mut rng);
            let mut depth = DepthMap::filled(16, 12, 0.0);
            for v in 0..12 {
                for u in 0..16 {
                    *depth.at_mut(u, v) = rng.random_range(0.1..10.0);
                }
            }
            let batch =
                backproject_frame(&k, &pose, &depth, &BackprojectOptions::default()).unwrap();
            assert_eq!(batch.len(), 16 * 12);
            for i in 0..batch.len() {
                let idx = batch.pixel_indices()[i];
                let (u, v) = (idx % 16, idx / 16);
                let z = *depth.at(u, v);
                let oracle = backproject_pixel(&k, &pose, u as f64, v as f64, z).unwrap();
                let got = batch.point(i);
                for a in 0..3 {
                    let rel = (got[a] - oracle[a]).abs() / oracle[a].abs().max(1.0);
                    assert!(rel < 1e-9, "coord {a}: {} vs {}", got[a], oracle[a]);
                }
            }
        }
    }

    #[test]
    fn frame_filters_invalid_depths_and_conserves_counts() {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4).unwrap();
        let mut depth = DepthMap::filled(4, 4, 1.0);
        *depth.at_mut(0, 0) = 0.0;
        *depth.at_mut(1, 0) = -3.0;
        *depth.at_mut(2, 1) = f64::NAN;
        *depth.at_mut(3, 3) = 100.0; // beyond max_range
        let batch =
            backproject_frame(&k, &PoseSE3::identity(), &depth, &BackprojectOptions::default())
                .unwrap();
        assert_eq!(batch.len(), 12);
        assert_eq!(batch.dropped(), 4);
        assert_eq!(batch.len() + batch.dropped(), 16);
    }

    #[test]
    fn all_invalid_depth_map_yields_empty_batch() {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4).unwrap();
        let depth = DepthMap::filled(4, 4, 0.0);
        let batch =
            backproject_frame(&k, &PoseSE3::identity(), &depth, &BackprojectOptions::default())
                .unwrap();
        assert!(batch.is_empty());
        assert_eq!(batch.dropped(), 16);
    }

    #[test]
    fn frame_dimension_mismatch_rejected() {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 8, 8).unwrap();
        let depth = DepthMap::filled(4, 4, 1.0);
        assert!(matches!(
            backproject_frame(&k, &PoseSE3::identity(), &depth, &BackprojectOptions::default()),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rigid_motion_consistency() {
        // Back-projecting with pose T equals back-projecting with identity
        // and transforming the points by T afterwards.
        let mut rng = StdRng::seed_from_u64(23);
        let k = CameraIntrinsics::new(40.0, 40.0, 16.0, 12.0, 32, 24).unwrap();
        let pose = random_pose(&mut rng);
        let mut depth = DepthMap::filled(32, 24, 0.0);
        for v in 0..24 {
            for u in 0..32 {
                *depth.at_mut(u, v) = rng.random_range(0.5..20.0);
            }
        }
        let opts = BackprojectOptions::default();
        let direct = backproject_frame(&k, &pose, &depth, &opts).unwrap();
        let staged = backproject_frame(&k, &PoseSE3::identity(), &depth, &opts).unwrap();
        for i in 0..direct.len() {
            let moved = pose.transform_point(&staged.point(i));
            assert_relative_eq!(direct.point(i), moved, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn homogeneous_coordinate_is_exactly_one() {
        let mut rng = StdRng::seed_from_u64(31);
        let k = CameraIntrinsics::new(40.0, 40.0, 16.0, 12.0, 32, 24).unwrap();
        let pose = random_pose(&mut rng);
        let mut depth = DepthMap::filled(32, 24, 0.0);
        for v in 0..24 {
            for u in 0..32 {
                *depth.at_mut(u, v) = rng.random_range(0.001..49.0);
            }
        }
        let batch = backproject_frame(&k, &pose, &depth, &BackprojectOptions::default()).unwrap();
        for p in batch.homogeneous() {
            assert_eq!(p.w, 1.0);
        }
    }

    #[test]
    fn fused_frame_path_matches_staged_batch_path_bitwise() {
        let mut rng = StdRng::seed_from_u64(37);
        let k = CameraIntrinsics::with_skew(35.0, 29.0, 16.0, 12.0, 0.7, 32, 24).unwrap();
        let pose = random_pose(&mut rng);
        let mut depth = DepthMap::filled(32, 24, 0.0);
        for v in 0..24 {
            for u in 0..32 {
                *depth.at_mut(u, v) = rng.random_range(-1.0..30.0);
            }
        }
        let opts = BackprojectOptions {
            stride: 3,
            ..Default::default()
        };
        let fused = backproject_frame(&k, &pose, &depth, &opts).unwrap();
        let staged = backproject_batch(
            &k,
            &pose,
            opts.convention,
            &PixelBatch::from_depth(&depth, &opts).unwrap(),
        )
        .unwrap();
        assert_eq!(fused.len(), staged.len());
        assert_eq!(fused.dropped(), staged.dropped());
        assert_eq!(fused.pixel_indices(), staged.pixel_indices());
        for (a, b) in fused.homogeneous().iter().zip(staged.homogeneous()) {
            for i in 0..4 {
                assert_eq!(a[i].to_bits(), b[i].to_bits());
            }
        }
    }

    #[test]
    fn stride_subsamples_pixels() {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4).unwrap();
        let depth = DepthMap::filled(4, 4, 2.0);
        let opts = BackprojectOptions {
            stride: 2,
            ..Default::default()
        };
        let batch = backproject_frame(&k, &PoseSE3::identity(), &depth, &opts).unwrap();
        assert_eq!(batch.len(), 4);
        assert_eq!(batch.pixel_indices(), &[0, 2, 8, 10]);
    }

    #[test]
    fn zero_stride_rejected() {
        let depth = DepthMap::filled(4, 4, 2.0);
        let opts = BackprojectOptions {
            stride: 0,
            ..Default::default()
        };
        assert!(matches!(
            PixelBatch::from_depth(&depth, &opts),
            Err(GeometryError::InvalidStride)
        ));
    }

    #[test]
    fn pose_validation_rejects_improper_rotations() {
        let scaled = Matrix3::identity() * 1.01;
        assert!(PoseSE3::new(scaled, Vector3::zeros()).is_err());
        let mut mirrored = Matrix3::identity();
        mirrored[(2, 2)] = -1.0;
        assert!(PoseSE3::new(mirrored, Vector3::zeros()).is_err());
        assert!(PoseSE3::new(Matrix3::identity(), Vector3::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn pose_inverse_and_compose_round_trip() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let round = pose.compose(&pose.inverse());
            assert_relative_eq!(round.rotation(), &Matrix3::identity(), epsilon = 1e-12);
            assert_relative_eq!(round.translation(), &Vector3::zeros(), epsilon = 1e-10);
        }
    }

    #[test]
    fn convention_matrices_are_rotations() {
        for conv in [CameraConvention::Rdf, CameraConvention::Flu, CameraConvention::Rub] {
            let m = conv.matrix().fixed_view::<3, 3>(0, 0).into_owned();
            assert_relative_eq!(m.determinant(), 1.0, epsilon = 1e-15);
            assert_relative_eq!(m.transpose() * m, Matrix3::identity(), epsilon = 1e-15);
        }
    }

    #[test]
    fn convention_permutes_camera_axes() {
        // With identity pose, a pinhole ray (x, y, z) comes out as
        // (z, -x, -y) under flu and (x, -y, -z) under rub.
        let k = CameraIntrinsics::new(10.0, 10.0, 5.0, 5.0, 10, 10).unwrap();
        let depth = DepthMap::filled(10, 10, 3.0);
        let project = |conv| {
            let opts = BackprojectOptions {
                convention: conv,
                ..Default::default()
            };
            backproject_frame(&k, &PoseSE3::identity(), &depth, &opts).unwrap()
        };
        let rdf = project(CameraConvention::Rdf);
        let flu = project(CameraConvention::Flu);
        let rub = project(CameraConvention::Rub);
        for i in 0..rdf.len() {
            let p = rdf.point(i);
            assert_relative_eq!(flu.point(i), Point3::new(p.z, -p.x, -p.y), epsilon = 1e-12);
            assert_relative_eq!(rub.point(i), Point3::new(p.x, -p.y, -p.z), epsilon = 1e-12);
        }
    }

    #[test]
    fn principal_point_bounds_check() {
        let k = CameraIntrinsics::new(100.0, 100.0, 700.0, 240.0, 640, 480).unwrap();
        assert!(!k.principal_point_in_frame());
        let k = CameraIntrinsics::new(100.0, 100.0, 320.0, 240.0, 640, 480).unwrap();
        assert!(k.principal_point_in_frame());
    }
}
