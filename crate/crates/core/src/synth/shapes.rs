//! Parametric surface families standing in for category meshes.
//!
//! Every family samples points (with outward normals) on a surface inside
//! the cube `[-0.5, 0.5]^3`; instance sizes are applied afterwards by
//! per-axis scaling.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ShapeFamily {
    /// Closed cylinder about y. Above `shoulder` (in `[-0.5, 0.5]`) the
    /// radius tapers linearly to `neck_radius` at the top.
    Cylinder { shoulder: f64, neck_radius: f64 },
    /// Thick-walled hemispherical bowl opening towards +y.
    BowlHemisphere,
    Box,
    /// Thin base plate with a hinged lid rising from its back edge.
    BoxWithHinge,
    /// Closed cylinder with a handle loop on the +x side.
    CylinderWithHandle,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
}

fn sp(position: Vector3<f64>, normal: Vector3<f64>) -> SurfacePoint {
    SurfacePoint { position, normal: normal.normalize() }
}

impl ShapeFamily {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SurfacePoint {
        match *self {
            ShapeFamily::Cylinder { shoulder, neck_radius } => cylinder(rng, shoulder, neck_radius),
            ShapeFamily::BowlHemisphere => bowl(rng),
            ShapeFamily::Box => box_face(rng),
            ShapeFamily::BoxWithHinge => hinge(rng),
            ShapeFamily::CylinderWithHandle => {
                if rng.random::<f64>() < 0.15 {
                    handle(rng)
                } else {
                    cylinder(rng, 0.5, 0.5)
                }
            }
        }
    }

    /// The eight corners of the family's bounding cube are exact surface
    /// points only for the box.
    pub fn has_corners(&self) -> bool {
        matches!(self, ShapeFamily::Box)
    }
}

fn cylinder_radius(y: f64, shoulder: f64, neck: f64) -> f64 {
    if y <= shoulder || shoulder >= 0.5 {
        0.5
    } else {
        0.5 + (neck - 0.5) * (y - shoulder) / (0.5 - shoulder)
    }
}

fn cylinder<R: Rng + ?Sized>(rng: &mut R, shoulder: f64, neck: f64) -> SurfacePoint {
    let a = rng.random::<f64>() * TAU;
    let (s, c) = a.sin_cos();
    let part = rng.random::<f64>();
    if part < 0.7 {
        let y = rng.random::<f64>() - 0.5;
        let r = cylinder_radius(y, shoulder, neck);
        let slope = if y > shoulder && shoulder < 0.5 { (0.5 - neck) / (0.5 - shoulder) } else { 0.0 };
        sp(Vector3::new(r * c, y, r * s), Vector3::new(c, slope, s))
    } else if part < 0.85 {
        let r = 0.5 * rng.random::<f64>().sqrt();
        sp(Vector3::new(r * c, -0.5, r * s), -Vector3::y())
    } else {
        let r = cylinder_radius(0.5, shoulder, neck) * rng.random::<f64>().sqrt();
        sp(Vector3::new(r * c, 0.5, r * s), Vector3::y())
    }
}

fn bowl<R: Rng + ?Sized>(rng: &mut R) -> SurfacePoint {
    // Outer and inner hemispheres (radius 0.5 and 0.45 in xz, depth 1.0 and
    // 0.9 in y) joined by a rim ring at y = 0.5.
    let a = rng.random::<f64>() * TAU;
    let (s, c) = a.sin_cos();
    let part = rng.random::<f64>();
    if part < 0.9 {
        let outer = part < 0.5;
        let (rr, depth) = if outer { (0.5, 1.0) } else { (0.45, 0.9) };
        // Uniform on the hemisphere via cos(polar) ~ U(0, 1).
        let cp = rng.random::<f64>();
        let spn = (1.0 - cp * cp).sqrt();
        let pos = Vector3::new(rr * spn * c, 0.5 - depth * cp, rr * spn * s);
        let n = Vector3::new(spn * c / rr, -cp / depth, spn * s / rr);
        sp(pos, if outer { n } else { -n })
    } else {
        let r = 0.45 + 0.05 * rng.random::<f64>();
        sp(Vector3::new(r * c, 0.5, r * s), Vector3::y())
    }
}

fn box_face<R: Rng + ?Sized>(rng: &mut R) -> SurfacePoint {
    let axis = rng.random_range(0..3);
    let sign = if rng.random::<bool>() { 0.5 } else { -0.5 };
    let mut p = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
    p[axis] = sign;
    let mut n = Vector3::zeros();
    n[axis] = sign.signum();
    sp(p, n)
}

const PLATE: f64 = 0.04;
const LID_LEAN: f64 = 0.15;

fn hinge<R: Rng + ?Sized>(rng: &mut R) -> SurfacePoint {
    let x = rng.random::<f64>() - 0.5;
    let s = rng.random::<f64>();
    let part = rng.random::<f64>();
    if part < 0.5 {
        // Base plate, top and bottom faces.
        let z = s - 0.5;
        if part < 0.25 {
            sp(Vector3::new(x, -0.5 + PLATE, z), Vector3::y())
        } else {
            sp(Vector3::new(x, -0.5, z), -Vector3::y())
        }
    } else {
        // Lid leaning back from the hinge at z = -0.5, front and back faces.
        let y = -0.5 + s;
        let z = -0.5 - LID_LEAN * s;
        let front = Vector3::new(0.0, LID_LEAN, 1.0);
        if part < 0.75 {
            sp(Vector3::new(x, y, z + PLATE), front)
        } else {
            sp(Vector3::new(x, y, z), -front)
        }
    }
}

fn handle<R: Rng + ?Sized>(rng: &mut R) -> SurfacePoint {
    // Tube of radius 0.05 around a half-ring of radius 0.2 centered at (0.5, 0).
    let b = (rng.random::<f64>() - 0.5) * PI;
    let a = rng.random::<f64>() * TAU;
    let center = Vector3::new(0.5 + 0.2 * b.cos(), 0.25 * b.sin(), 0.0);
    let radial = Vector3::new(b.cos(), b.sin(), 0.0);
    let n = radial * a.cos() + Vector3::z() * a.sin();
    sp(center + n * 0.05, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const FAMILIES: [ShapeFamily; 5] = [
        ShapeFamily::Cylinder { shoulder: 0.15, neck_radius: 0.18 },
        ShapeFamily::BowlHemisphere,
        ShapeFamily::Box,
        ShapeFamily::BoxWithHinge,
        ShapeFamily::CylinderWithHandle,
    ];

    #[test]
    fn normals_are_unit_and_points_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for f in FAMILIES {
            for _ in 0..500 {
                let p = f.sample(&mut rng);
                assert!((p.normal.norm() - 1.0).abs() < 1e-12);
                assert!(p.position.iter().all(|v| v.is_finite() && v.abs() <= 0.8));
            }
        }
    }

    #[test]
    fn plain_cylinder_stays_in_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = ShapeFamily::Cylinder { shoulder: 0.5, neck_radius: 0.5 };
        for _ in 0..1000 {
            let p = f.sample(&mut rng).position;
            assert!(p.x * p.x + p.z * p.z <= 0.25 + 1e-12);
        }
    }
}
