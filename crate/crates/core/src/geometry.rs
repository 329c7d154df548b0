//! Pinhole camera, pose algebra, global position hints and similarity alignment.
//!
//! Units are fixed across the crate: meters in camera space, pixels in image
//! space, degrees for angular errors. NOCS-space quantities are dimensionless.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Tolerance used when validating that a matrix is a proper rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Pinhole intrinsics without distortion.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let intr = Self { fx, fy, cx, cy };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::invalid(format!(
                "focal lengths must be positive and center finite, got fx={} fy={} cx={} cy={}",
                self.fx, self.fy, self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// Normalized ray `((u - cx) / fx, (v - cy) / fy)` through a pixel.
    pub fn ray(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.cx) / self.fx, (v - self.cy) / self.fy)
    }
}

/// Axis-aligned 2D box in pixel coordinates: left, top, right, bottom.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox2D {
    pub l: f64,
    pub t: f64,
    pub r: f64,
    pub b: f64,
}

impl BBox2D {
    pub fn new(l: f64, t: f64, r: f64, b: f64) -> Result<Self> {
        let bbox = Self { l, t, r, b };
        bbox.validate()?;
        Ok(bbox)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > self.l && self.b > self.t) {
            return Err(Error::invalid(format!(
                "degenerate box l={} t={} r={} b={}",
                self.l, self.t, self.r, self.b
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.r - self.l
    }

    pub fn height(&self) -> f64 {
        self.b - self.t
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.l && u <= self.r && v >= self.t && v <= self.b
    }

    /// Position of a pixel relative to the box, `(0, 0)` at the top-left
    /// corner and `(1, 1)` at the bottom-right.
    pub fn normalize(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.l) / self.width(), (v - self.t) / self.height())
    }
}

/// Normalized global position hints: box size and box corners expressed in
/// focal-length-normalized camera coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ngph(pub [f64; 6]);

impl Ngph {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Encodes a detection box and camera intrinsics as
/// `[fx/(r-l), fy/(b-t), (l-cx)/fx, (t-cy)/fy, (r-cx)/fx, (b-cy)/fy]`.
pub fn ngph_encode(bbox: &BBox2D, intr: &CameraIntrinsics) -> Result<Ngph> {
    bbox.validate()?;
    intr.validate()?;
    Ok(Ngph([
        intr.fx / (bbox.r - bbox.l),
        intr.fy / (bbox.b - bbox.t),
        (bbox.l - intr.cx) / intr.fx,
        (bbox.t - intr.cy) / intr.fy,
        (bbox.r - intr.cx) / intr.fx,
        (bbox.b - intr.cy) / intr.fy,
    ]))
}

/// Similarity transform from canonical object space to camera space:
/// `x_cam = scale * rotation * x_obj + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, scale: f64) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
            scale,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !is_rotation(&self.rotation, ROTATION_TOLERANCE) {
            return Err(Error::invalid("pose rotation is not a proper rotation"));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::invalid(format!("pose scale must be positive, got {}", self.scale)));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("pose translation is not finite"));
        }
        Ok(())
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn transform_cloud(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud.points.iter().map(|p| self.transform(p)).collect(),
        }
    }

    /// Rotation row-major as nine values.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }
}

/// `RᵀR = I` and `det R = +1` within `tol`.
pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    if !r.iter().all(|v| v.is_finite()) {
        return false;
    }
    let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
    orth <= tol && (r.determinant() - 1.0).abs() <= tol
}

/// Rotation about the x axis by `angle` radians.
pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Rotation about the y axis by `angle` radians.
pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation about the z axis by `angle` radians.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// A non-empty set of finite 3D points. Which space the points live in
/// (camera or NOCS) is tracked by the caller.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if !points.iter().all(|p| p.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("point cloud contains non-finite coordinates"));
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Result<Self> {
        Self::new(rows.iter().map(|r| Vector3::new(r[0], r[1], r[2])).collect())
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vector3<f64>> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    /// Per-axis `(min, max)` bounds.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn extent(&self) -> Vector3<f64> {
        let (lo, hi) = self.bounds();
        hi - lo
    }
}

/// Sampled object pixels with their depths. Pixel coordinates are in the
/// original image frame.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthPatch {
    pixels: Vec<[f64; 2]>,
    depths: Vec<f64>,
}

impl DepthPatch {
    pub fn new(pixels: Vec<[f64; 2]>, depths: Vec<f64>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::invalid("depth patch must contain at least one pixel"));
        }
        if pixels.len() != depths.len() {
            return Err(Error::invalid(format!(
                "depth patch has {} pixels but {} depths",
                pixels.len(),
                depths.len()
            )));
        }
        if let Some(z) = depths.iter().find(|z| !(**z > 0.0) || !z.is_finite()) {
            return Err(Error::invalid(format!("depth must be positive and finite, got {z}")));
        }
        if !pixels.iter().all(|p| p[0].is_finite() && p[1].is_finite()) {
            return Err(Error::invalid("pixel coordinates must be finite"));
        }
        Ok(Self { pixels, depths })
    }

    pub fn pixels(&self) -> &[[f64; 2]] {
        &self.pixels
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Replaces the depths, keeping the pixels.
    pub fn with_depths(&self, depths: Vec<f64>) -> Result<Self> {
        Self::new(self.pixels.clone(), depths)
    }

    pub fn inside(&self, bbox: &BBox2D) -> bool {
        self.pixels.iter().all(|p| bbox.contains(p[0], p[1]))
    }
}

/// Lifts each pixel to `(Z (u-cx)/fx, Z (v-cy)/fy, Z)`.
pub fn back_project(patch: &DepthPatch, intr: &CameraIntrinsics) -> Result<PointCloud> {
    intr.validate()?;
    let points = patch
        .pixels
        .iter()
        .zip(&patch.depths)
        .map(|(px, &z)| {
            if !(z > 0.0) {
                return Err(Error::invalid(format!("non-positive depth {z}")));
            }
            let (rx, ry) = intr.ray(px[0], px[1]);
            Ok(Vector3::new(z * rx, z * ry, z))
        })
        .collect::<Result<Vec<_>>>()?;
    PointCloud::new(points)
}

/// Pinhole projection; every point must lie in front of the camera.
pub fn project(points: &PointCloud, intr: &CameraIntrinsics) -> Result<DepthPatch> {
    intr.validate()?;
    let mut pixels = Vec::with_capacity(points.len());
    let mut depths = Vec::with_capacity(points.len());
    for p in &points.points {
        if !(p.z > 0.0) {
            return Err(Error::invalid(format!("point behind the camera (z = {})", p.z)));
        }
        pixels.push([intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy]);
        depths.push(p.z);
    }
    DepthPatch::new(pixels, depths)
}

/// Least-squares similarity transform mapping `source` onto `target`
/// (closed form via SVD of the cross-covariance, reflection corrected).
pub fn umeyama_align(source: &PointCloud, target: &PointCloud) -> Result<Pose> {
    let n = source.len();
    if n != target.len() {
        return Err(Error::invalid(format!(
            "point count mismatch: source {} vs target {}",
            n,
            target.len()
        )));
    }
    if n < 3 {
        return Err(Error::invalid(format!("alignment needs at least 3 points, got {n}")));
    }
    let nf = n as f64;
    let mu_s = source.centroid();
    let mu_t = target.centroid();

    let mut cov = Matrix3::zeros();
    let mut src_cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.points.iter().zip(&target.points) {
        let ds = s - mu_s;
        let dt = t - mu_t;
        cov += dt * ds.transpose();
        src_cov += ds * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov /= nf;
    src_cov /= nf;
    var_s /= nf;

    // Rank of the source spread: collinear or coincident points leave the
    // rotation about their common axis undetermined.
    let mut eig = src_cov.symmetric_eigenvalues().as_slice().to_vec();
    eig.sort_by(|a, b| b.total_cmp(a));
    if !(eig[0] > 0.0) || eig[1] <= 1e-12 * eig[0] {
        return Err(Error::Degenerate(
            "source points are collinear or coincident (covariance rank < 2)".into(),
        ));
    }

    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let mut sigma = svd.singular_values;

    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        // Flip the factor paired with the smallest singular value.
        let (min_idx, _) = sigma.argmin();
        d[min_idx] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&d) * v_t;
    sigma.component_mul_assign(&d);
    let scale = sigma.sum() / var_s;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Degenerate(format!("recovered non-positive scale {scale}")));
    }
    let translation = mu_t - scale * rotation * mu_s;
    Ok(Pose {
        rotation,
        translation,
        scale,
    })
}

/// Geodesic rotation error in degrees. For objects symmetric about their
/// canonical y axis only the tilt of that axis counts.
pub fn rotation_error_deg(pred: &Pose, gt: &Pose, symmetric_about_y: bool) -> f64 {
    let angle = if symmetric_about_y {
        let a: Vector3<f64> = pred.rotation.column(1).into();
        let b: Vector3<f64> = gt.rotation.column(1).into();
        let a = a.normalize();
        let b = b.normalize();
        // Same value as arccos(a·b) but well conditioned near 0.
        a.cross(&b).norm().atan2(a.dot(&b).clamp(-1.0, 1.0))
    } else {
        let q = pred.rotation.transpose() * gt.rotation;
        let cos = ((q.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        let skew = q - q.transpose();
        let sin = (skew.norm() / (2.0 * std::f64::consts::SQRT_2)).clamp(0.0, 1.0);
        sin.atan2(cos)
    };
    angle.to_degrees()
}

pub fn translation_error_m(pred: &Pose, gt: &Pose) -> f64 {
    (pred.translation - gt.translation).norm()
}
