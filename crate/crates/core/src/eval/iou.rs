//! Exact intersection-over-union of oriented 3D boxes.
//!
//! Box A is represented as a closed polytope (six quads, outward winding)
//! and clipped against each of box B's six half-spaces. Each clip keeps the
//! inside part of every face and closes the hole with a cap polygon built
//! from the on-plane vertices. Volume comes from the divergence theorem over
//! a fan triangulation of the faces.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{rot_y, Pose};

const PLANE_EPS: f64 = 1e-12;

/// Oriented box: centered at `pose.translation`, axes along the columns of
/// `pose.rotation`, full side lengths `size` in meters. `pose.scale` plays no
/// role in the box geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox3D {
    pub pose: Pose,
    pub size: Vector3<f64>,
}

impl OrientedBox3D {
    pub fn new(pose: Pose, size: Vector3<f64>) -> Result<Self> {
        if size.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("box size must be positive, got {size:?}")));
        }
        pose.validate()?;
        Ok(Self { pose, size })
    }

    /// Box for a NOCS-space extent placed by a similarity pose; metric size
    /// is `pose.scale * nocs_extent`.
    pub fn from_nocs_extent(pose: Pose, nocs_extent: Vector3<f64>) -> Result<Self> {
        Self::new(pose, nocs_extent * pose.scale)
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.pose.rotation
    }

    pub fn volume(&self) -> f64 {
        self.size.x * self.size.y * self.size.z
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let local = self.pose.rotation.transpose() * (p - self.pose.translation);
        (0..3).all(|k| local[k].abs() <= 0.5 * self.size[k])
    }

    /// Corner `k` (bit 0: x, bit 1: y, bit 2: z; set bit means the positive side).
    pub fn corner(&self, k: usize) -> Vector3<f64> {
        let h = self.size * 0.5;
        let local = Vector3::new(
            if k & 1 != 0 { h.x } else { -h.x },
            if k & 2 != 0 { h.y } else { -h.y },
            if k & 4 != 0 { h.z } else { -h.z },
        );
        self.pose.rotation * local + self.pose.translation
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        std::array::from_fn(|k| self.corner(k))
    }

    /// Outward half-spaces `n·x <= d`.
    fn half_spaces(&self) -> [(Vector3<f64>, f64); 6] {
        let c = self.pose.translation;
        let h = self.size * 0.5;
        std::array::from_fn(|i| {
            let axis = i / 2;
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let n: Vector3<f64> = self.pose.rotation.column(axis) * sign;
            (n, n.dot(&c) + h[axis])
        })
    }

    fn faces(&self) -> Vec<Vec<Vector3<f64>>> {
        let v = self.corners();
        // Quads wound counter-clockwise seen from outside.
        const FACES: [[usize; 4]; 6] = [
            [1, 3, 7, 5], // +x
            [0, 4, 6, 2], // -x
            [2, 6, 7, 3], // +y
            [0, 1, 5, 4], // -y
            [4, 5, 7, 6], // +z
            [0, 2, 3, 1], // -z
        ];
        FACES.iter().map(|f| f.iter().map(|&k| v[k]).collect()).collect()
    }

    /// Same box translated by `-origin`.
    fn shifted(&self, origin: &Vector3<f64>) -> Self {
        let mut b = *self;
        b.pose.translation -= origin;
        b
    }
}

/// Exact IoU in `[0, 1]`.
pub fn iou3d(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    // Work near the origin to keep the volume sums well conditioned.
    let origin = a.center();
    let a = a.shifted(&origin);
    let b = b.shifted(&origin);
    let inter = intersection_volume(&a, &b);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// IoU after spinning `pred` about its own y axis to best match `gt`'s
/// orientation, for categories whose shape is symmetric about y.
pub fn iou3d_symmetric_y(pred: &OrientedBox3D, gt: &OrientedBox3D) -> f64 {
    let m = gt.pose.rotation.transpose() * pred.pose.rotation;
    let phi = (m[(2, 0)] - m[(0, 2)]).atan2(m[(0, 0)] + m[(2, 2)]);
    let mut spun = *pred;
    spun.pose.rotation = pred.pose.rotation * rot_y(phi);
    iou3d(&spun, gt).max(iou3d(pred, gt))
}

pub fn intersection_volume(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let mut faces = a.faces();
    for (n, d) in b.half_spaces() {
        faces = clip_polytope(&faces, &n, d);
        if faces.is_empty() {
            return 0.0;
        }
    }
    polytope_volume(&faces).max(0.0)
}

fn clip_polytope(faces: &[Vec<Vector3<f64>>], n: &Vector3<f64>, d: f64) -> Vec<Vec<Vector3<f64>>> {
    let scale = 1.0 + d.abs();
    let eps = PLANE_EPS * scale;
    let mut out = Vec::with_capacity(faces.len() + 1);
    let mut on_plane: Vec<Vector3<f64>> = Vec::new();

    for face in faces {
        let dist: Vec<f64> = face.iter().map(|p| n.dot(p) - d).collect();
        if dist.iter().all(|&s| s.abs() <= eps) {
            // Lies on the clipping plane; replaced by the cap below.
            on_plane.extend(face.iter().copied());
            continue;
        }
        let mut clipped = Vec::with_capacity(face.len() + 2);
        for i in 0..face.len() {
            let j = (i + 1) % face.len();
            let (p, q) = (face[i], face[j]);
            let (dp, dq) = (dist[i], dist[j]);
            let p_in = dp <= eps;
            let q_in = dq <= eps;
            if p_in {
                clipped.push(p);
                if dp.abs() <= eps {
                    on_plane.push(p);
                }
            }
            if (dp < -eps && dq > eps) || (dp > eps && dq < -eps) {
                let t = dp / (dp - dq);
                let x = p + (q - p) * t;
                clipped.push(x);
                on_plane.push(x);
            }
            let _ = q_in;
        }
        if clipped.len() >= 3 {
            out.push(clipped);
        }
    }

    if out.is_empty() {
        return out;
    }
    if let Some(cap) = cap_polygon(&on_plane, n) {
        out.push(cap);
    }
    out
}

/// Orders on-plane points counter-clockwise around the outward normal `n`
/// and drops duplicates.
fn cap_polygon(points: &[Vector3<f64>], n: &Vector3<f64>) -> Option<Vec<Vector3<f64>>> {
    if points.len() < 3 {
        return None;
    }
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    let mut tagged: Vec<(f64, Vector3<f64>)> = points
        .iter()
        .map(|p| {
            let r = p - centroid;
            (r.dot(&e2).atan2(r.dot(&e1)), *p)
        })
        .collect();
    tagged.sort_by(|a, b| a.0.total_cmp(&b.0));

    let span = points.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max);
    let tol = 1e-12 * (1.0 + span);
    let mut poly: Vec<Vector3<f64>> = Vec::with_capacity(tagged.len());
    for (_, p) in tagged {
        if poly.last().is_none_or(|q: &Vector3<f64>| (p - q).norm() > tol) {
            poly.push(p);
        }
    }
    while poly.len() > 1 && (poly[0] - poly[poly.len() - 1]).norm() <= tol {
        poly.pop();
    }
    (poly.len() >= 3).then_some(poly)
}

fn polytope_volume(faces: &[Vec<Vector3<f64>>]) -> f64 {
    let mut six_v = 0.0;
    for face in faces {
        let v0 = face[0];
        for k in 1..face.len() - 1 {
            six_v += v0.dot(&face[k].cross(&face[k + 1]));
        }
    }
    six_v / 6.0
}
