//! Synthetic category, instance and scene oracle.
//!
//! Instances are deformed members of a parametric shape family, placed by a
//! random similarity pose in front of a pinhole camera and observed through
//! a per-cell z-buffer. Everything is reproducible from `(seed, index)`.

mod io;
mod shapes;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use io::{
    read_dataset, read_predictions, write_dataset, write_ply, write_predictions, Prediction,
};
pub use shapes::{ShapeFamily, SurfacePoint};

use crate::error::{Error, Result};
use crate::eval::{GroundTruth, OrientedBox3D};
use crate::geometry::{rot_y, BBox2D, CameraIntrinsics, DepthPatch, PointCloud, Pose};
use crate::spd::ShapePrior;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    pub family: ShapeFamily,
    pub symmetric_about_y: bool,
    /// Metric extent ranges `(min, max)` along the canonical x, y, z axes.
    /// For y-symmetric categories the z draw repeats the x draw.
    pub size_range: [(f64, f64); 3],
}

impl CategorySpec {
    pub fn validate(&self) -> Result<()> {
        for (lo, hi) in self.size_range {
            if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
                return Err(Error::invalid(format!(
                    "category {}: size range ({lo}, {hi}) must be positive and ordered",
                    self.name
                )));
            }
        }
        Ok(())
    }

    fn mean_size(&self) -> Vector3<f64> {
        Vector3::from_fn(|k, _| 0.5 * (self.size_range[k].0 + self.size_range[k].1))
    }
}

/// Bottle, bowl, camera, can, laptop and mug stand-ins.
pub fn standard_categories() -> Vec<CategorySpec> {
    let cat = |name: &str, family, sym, size_range| CategorySpec {
        name: name.into(),
        family,
        symmetric_about_y: sym,
        size_range,
    };
    vec![
        cat(
            "bottle",
            ShapeFamily::Cylinder { shoulder: 0.15, neck_radius: 0.18 },
            true,
            [(0.06, 0.09), (0.18, 0.26), (0.06, 0.09)],
        ),
        cat("bowl", ShapeFamily::BowlHemisphere, true, [(0.14, 0.20), (0.05, 0.09), (0.14, 0.20)]),
        cat("camera", ShapeFamily::Box, false, [(0.10, 0.15), (0.07, 0.10), (0.06, 0.10)]),
        cat(
            "can",
            ShapeFamily::Cylinder { shoulder: 0.5, neck_radius: 0.5 },
            true,
            [(0.06, 0.08), (0.10, 0.14), (0.06, 0.08)],
        ),
        cat("laptop", ShapeFamily::BoxWithHinge, false, [(0.28, 0.36), (0.18, 0.24), (0.20, 0.26)]),
        cat("mug", ShapeFamily::CylinderWithHandle, false, [(0.08, 0.10), (0.08, 0.11), (0.08, 0.10)]),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Observed pixels per instance.
    pub n_p: usize,
    /// Points in priors and stored instance models.
    pub n_m: usize,
    /// Surface samples used for rendering.
    pub n_dense: usize,
    /// Deformation amplitude relative to the largest instance extent.
    pub deform_amplitude: f64,
    pub z_range: (f64, f64),
    pub image_size: (u32, u32),
    /// Minimum distance in pixels between the object center and the image border.
    pub margin_px: f64,
    pub intrinsics: CameraIntrinsics,
    pub max_retries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_p: 64,
            n_m: 64,
            n_dense: 4096,
            deform_amplitude: 0.03,
            z_range: (0.6, 2.5),
            image_size: (640, 480),
            margin_px: 60.0,
            intrinsics: CameraIntrinsics { fx: 577.5, fy: 577.5, cx: 319.5, cy: 239.5 },
            max_retries: 200,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.n_p < 3 || self.n_m < 4 || self.n_dense < self.n_m.max(self.n_p) {
            return Err(Error::invalid(format!(
                "need n_p >= 3, n_m >= 4 and n_dense >= max(n_p, n_m); got {}, {}, {}",
                self.n_p, self.n_m, self.n_dense
            )));
        }
        let (z0, z1) = self.z_range;
        if !(z0 > 0.0) || !(z1 >= z0) {
            return Err(Error::invalid(format!("bad depth range ({z0}, {z1})")));
        }
        if !(self.deform_amplitude >= 0.0) {
            return Err(Error::invalid("deformation amplitude must be non-negative"));
        }
        Ok(())
    }
}

/// One object observed in one image.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneInstance {
    pub id: u64,
    pub category: String,
    pub symmetric_about_y: bool,
    pub gt_pose: Pose,
    /// Metric box extents, `gt_pose.scale` times the NOCS extent.
    pub gt_size: Vector3<f64>,
    pub intrinsics: CameraIntrinsics,
    pub bbox: BBox2D,
    pub depth_patch: DepthPatch,
    /// Canonical coordinates of each observed pixel.
    pub observed_nocs: PointCloud,
    /// Canonical instance model.
    pub gt_nocs: PointCloud,
}

impl SceneInstance {
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        Ok(GroundTruth {
            scene: self.id,
            category: self.category.clone(),
            bbox3d: OrientedBox3D::new(self.gt_pose, self.gt_size)?,
            pose: self.gt_pose,
            symmetric_about_y: self.symmetric_about_y,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub config: SynthConfig,
    pub categories: Vec<CategorySpec>,
    /// One prior per category, aligned with `categories`.
    pub priors: Vec<ShapePrior>,
    pub instances: Vec<SceneInstance>,
}

impl Dataset {
    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.name == name)
    }

    pub fn prior_for(&self, name: &str) -> Option<&ShapePrior> {
        self.category_index(name).map(|k| &self.priors[k])
    }

    /// Same metadata with a subset of the instances.
    pub fn with_instances(&self, instances: Vec<SceneInstance>) -> Dataset {
        Dataset {
            seed: self.seed,
            config: self.config.clone(),
            categories: self.categories.clone(),
            priors: self.priors.clone(),
            instances,
        }
    }

    /// Splits off every `k`-th instance of each category (positions
    /// `k-1, 2k-1, ...`) as the held-out part.
    pub fn split_every(&self, k: usize) -> (Dataset, Dataset) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        let mut seen = vec![0usize; self.categories.len()];
        for inst in &self.instances {
            let c = self.category_index(&inst.category).unwrap_or(0);
            seen[c] += 1;
            if k > 0 && seen[c] % k == 0 {
                test.push(inst.clone());
            } else {
                train.push(inst.clone());
            }
        }
        (self.with_instances(train), self.with_instances(test))
    }

    pub fn ground_truths(&self) -> Result<Vec<GroundTruth>> {
        self.instances.iter().map(SceneInstance::ground_truth).collect()
    }
}

/// The standard benchmark: six categories, 100 instances each, split into
/// 480 training and 120 held-out instances (every fifth per category).
pub fn standard_benchmark(seed: u64) -> Result<(Dataset, Dataset)> {
    let ds = generate_dataset(&standard_categories(), 100, seed, &SynthConfig::default())?;
    Ok(ds.split_every(5))
}

fn name_seed(name: &str) -> u64 {
    // FNV-1a.
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Category mean shape: the family at the mean aspect ratio, normalized so
/// its largest extent is 1 and its bounding box is centered at the origin.
/// Box families start with their eight corners; the remaining points come
/// from farthest-point sampling of a fixed surface sample.
pub fn make_prior(spec: &CategorySpec, n_m: usize) -> Result<ShapePrior> {
    spec.validate()?;
    if n_m < 4 {
        return Err(Error::invalid(format!("prior needs at least 4 points, got {n_m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(&spec.name));
    let mean = spec.mean_size();
    let mut pts: Vec<Vector3<f64>> = Vec::with_capacity(n_m);
    if spec.family.has_corners() {
        for k in 0..8.min(n_m) {
            pts.push(Vector3::new(
                if k & 1 != 0 { 0.5 } else { -0.5 },
                if k & 2 != 0 { 0.5 } else { -0.5 },
                if k & 4 != 0 { 0.5 } else { -0.5 },
            ));
        }
    }
    let pool_len = (16 * n_m).clamp(2048, 20_000);
    let pool: Vec<Vector3<f64>> = (0..pool_len).map(|_| spec.family.sample(&mut rng).position).collect();
    farthest_point_fill(&mut pts, &pool, n_m);

    let scaled: Vec<Vector3<f64>> = pts.iter().map(|p| p.component_mul(&mean)).collect();
    let (nocs, _, _) = normalize_to_nocs(&scaled);
    ShapePrior::new(nocs)
}

fn farthest_point_fill(pts: &mut Vec<Vector3<f64>>, pool: &[Vector3<f64>], n: usize) {
    if pts.len() >= n {
        pts.truncate(n);
        return;
    }
    if pts.is_empty() {
        pts.push(pool[0]);
    }
    let mut dist: Vec<f64> = pool
        .iter()
        .map(|q| pts.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min))
        .collect();
    while pts.len() < n {
        let (best, _) = dist
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        let p = pool[best];
        pts.push(p);
        for (d, q) in dist.iter_mut().zip(pool) {
            *d = d.min((p - q).norm_squared());
        }
    }
}

/// Centers the bounding box at the origin and divides by the largest extent.
/// Returns `(nocs, center, scale)`.
fn normalize_to_nocs(points: &[Vector3<f64>]) -> (Vec<Vector3<f64>>, Vector3<f64>, f64) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let center = (lo + hi) * 0.5;
    let scale = (hi - lo).max();
    (points.iter().map(|p| (p - center) / scale).collect(), center, scale)
}

/// Uniform random rotation.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let q = Quaternion::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

/// Result of rendering a posed model.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub bbox: BBox2D,
    pub depth_patch: DepthPatch,
    /// Indices into the rendered model of the sampled visible points.
    pub indices: Vec<usize>,
}

/// Projects `s R nocs + t` and samples `n_p` visible points. A point is
/// visible when its normal faces the camera (if normals are given) and it is
/// the nearest point in its z-buffer cell. Cells are square with a side
/// chosen so that each covers a few front-facing points. Returns `None` when
/// the object leaves the image or too few points are visible.
pub fn render_observation<R: Rng + ?Sized>(
    nocs: &[Vector3<f64>],
    normals: Option<&[Vector3<f64>]>,
    pose: &Pose,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Option<Observation> {
    let intr = &cfg.intrinsics;
    let (w, h) = (f64::from(cfg.image_size.0), f64::from(cfg.image_size.1));
    let cam: Vec<Vector3<f64>> = nocs.iter().map(|p| pose.transform(p)).collect();
    let mut uv = Vec::with_capacity(cam.len());
    for p in &cam {
        if !(p.z > 0.0) {
            return None;
        }
        let u = intr.fx * p.x / p.z + intr.cx;
        let v = intr.fy * p.y / p.z + intr.cy;
        if !(0.0..w).contains(&u) || !(0.0..h).contains(&v) {
            return None;
        }
        uv.push([u, v]);
    }
    let (mut l, mut t, mut r, mut b) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &[u, v] in &uv {
        l = l.min(u);
        t = t.min(v);
        r = r.max(u);
        b = b.max(v);
    }
    let bbox = BBox2D::new(l, t, r, b).ok()?;

    let front: Vec<usize> = (0..cam.len())
        .filter(|&i| normals.is_none_or(|n| (pose.rotation * n[i]).dot(&cam[i]) < 0.0))
        .collect();
    if front.len() < cfg.n_p {
        return None;
    }
    let cell = (3.0 * bbox.width() * bbox.height() / front.len() as f64).sqrt().max(1.0);
    let cols = (bbox.width() / cell).floor() as usize + 1;
    let rows = (bbox.height() / cell).floor() as usize + 1;
    let mut zbuf: Vec<Option<usize>> = vec![None; cols * rows];
    for &i in &front {
        let cx = ((uv[i][0] - l) / cell).floor() as usize;
        let cy = ((uv[i][1] - t) / cell).floor() as usize;
        let slot = &mut zbuf[cy.min(rows - 1) * cols + cx.min(cols - 1)];
        if slot.is_none_or(|j| cam[i].z < cam[j].z) {
            *slot = Some(i);
        }
    }
    let visible: Vec<usize> = zbuf.into_iter().flatten().collect();
    if visible.len() < cfg.n_p {
        return None;
    }
    let mut indices: Vec<usize> = sample_indices(rng, visible.len(), cfg.n_p).into_iter().map(|k| visible[k]).collect();
    indices.sort_unstable();
    let depth_patch = DepthPatch::new(
        indices.iter().map(|&i| uv[i]).collect(),
        indices.iter().map(|&i| cam[i].z).collect(),
    )
    .ok()?;
    Some(Observation { bbox, depth_patch, indices })
}

/// Draws one instance of `spec`: size, smooth deformation, pose and observation.
pub fn sample_instance<R: Rng + ?Sized>(
    spec: &CategorySpec,
    cfg: &SynthConfig,
    id: u64,
    rng: &mut R,
) -> Result<SceneInstance> {
    spec.validate()?;
    cfg.validate()?;
    let mut size = Vector3::from_fn(|k, _| {
        let (lo, hi) = spec.size_range[k];
        lo + (hi - lo) * rng.random::<f64>()
    });
    if spec.symmetric_about_y {
        size.z = size.x;
    }
    let surf: Vec<SurfacePoint> = (0..cfg.n_dense).map(|_| spec.family.sample(rng)).collect();
    let mut pts: Vec<Vector3<f64>> = surf.iter().map(|s| s.position.component_mul(&size)).collect();
    let normals: Vec<Vector3<f64>> =
        surf.iter().map(|s| s.normal.component_div(&size).normalize()).collect();
    deform(&mut pts, spec.symmetric_about_y, cfg.deform_amplitude * size.max(), size.max(), rng);

    let intr = &cfg.intrinsics;
    let (w, h) = (f64::from(cfg.image_size.0), f64::from(cfg.image_size.1));
    for _ in 0..cfg.max_retries {
        let mut rotation = random_rotation(rng);
        let z = cfg.z_range.0 + (cfg.z_range.1 - cfg.z_range.0) * rng.random::<f64>();
        let u = cfg.margin_px + (w - 2.0 * cfg.margin_px) * rng.random::<f64>();
        let v = cfg.margin_px + (h - 2.0 * cfg.margin_px) * rng.random::<f64>();
        let translation = Vector3::new((u - intr.cx) / intr.fx * z, (v - intr.cy) / intr.fy * z, z);

        let mut labeled = pts.clone();
        let mut labeled_normals = normals.clone();
        if spec.symmetric_about_y {
            // Spin the label frame about y so the camera lies in its +z half of the y-z plane.
            let d = rotation.transpose() * (-translation);
            let psi = d.x.atan2(d.z);
            let spin = rot_y(-psi);
            labeled.iter_mut().for_each(|p| *p = spin * *p);
            labeled_normals.iter_mut().for_each(|n| *n = spin * *n);
            rotation *= rot_y(psi);
        }
        let (nocs, _, scale) = normalize_to_nocs(&labeled);
        let pose = Pose::new(rotation, translation, scale)?;
        let Some(obs) = render_observation(&nocs, Some(&labeled_normals), &pose, cfg, rng) else {
            continue;
        };
        let model = PointCloud::new(nocs[..cfg.n_m].to_vec())?;
        let gt_size = PointCloud::new(nocs.clone())?.extent() * scale;
        let observed = PointCloud::new(obs.indices.iter().map(|&i| nocs[i]).collect())?;
        return Ok(SceneInstance {
            id,
            category: spec.name.clone(),
            symmetric_about_y: spec.symmetric_about_y,
            gt_pose: pose,
            gt_size,
            intrinsics: *intr,
            bbox: obs.bbox,
            depth_patch: obs.depth_patch,
            observed_nocs: observed,
            gt_nocs: model,
        });
    }
    Err(Error::Degenerate(format!(
        "instance {id} of {}: no valid placement after {} attempts",
        spec.name, cfg.max_retries
    )))
}

/// Smooth low-amplitude deformation. Symmetric shapes get a radial profile
/// modulation so they stay symmetric about y.
fn deform<R: Rng + ?Sized>(pts: &mut [Vector3<f64>], symmetric: bool, amp: f64, extent: f64, rng: &mut R) {
    if amp == 0.0 {
        return;
    }
    let freq = std::f64::consts::PI / extent;
    if symmetric {
        let k = freq * (1.0 + rng.random::<f64>());
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        let rel = amp / extent;
        for p in pts.iter_mut() {
            let f = 1.0 + rel * (k * p.y + phase).sin();
            p.x *= f;
            p.z *= f;
        }
    } else {
        let k = Matrix3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal) * freq);
        let phase = Vector3::from_fn(|_, _| rng.random::<f64>() * std::f64::consts::TAU);
        for p in pts.iter_mut() {
            let arg = k * *p + phase;
            *p += arg.map(|a| 0.5 * amp * a.sin());
        }
    }
}

/// Per-instance generator stream derived from `(seed, index)`.
pub fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `n_per_category` instances of every spec, category-major, instance `k`
/// drawn from stream `k` of `seed`.
pub fn generate_dataset(
    specs: &[CategorySpec],
    n_per_category: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<Dataset> {
    cfg.validate()?;
    let priors = specs.iter().map(|s| make_prior(s, cfg.n_m)).collect::<Result<Vec<_>>>()?;
    let mut instances = Vec::with_capacity(specs.len() * n_per_category);
    for (c, spec) in specs.iter().enumerate() {
        for j in 0..n_per_category {
            let id = (c * n_per_category + j) as u64;
            let mut rng = instance_rng(seed, id);
            instances.push(sample_instance(spec, cfg, id, &mut rng)?);
        }
    }
    Ok(Dataset { seed, config: cfg.clone(), categories: specs.to_vec(), priors, instances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{back_project, rotation_error_deg, translation_error_m, umeyama_align};

    fn cube_spec() -> CategorySpec {
        CategorySpec {
            name: "cube".into(),
            family: ShapeFamily::Box,
            symmetric_about_y: false,
            size_range: [(0.1, 0.1); 3],
        }
    }

    #[test]
    fn box_prior_with_eight_points_is_the_corners() {
        let p = make_prior(&cube_spec(), 8).unwrap();
        assert_eq!(p.len(), 8);
        for q in p.points() {
            assert!(q.iter().all(|v| (v.abs() - 0.5).abs() < 1e-12), "{q:?}");
        }
    }

    #[test]
    fn cylinder_prior_respects_radius() {
        for spec in standard_categories().iter().filter(|s| matches!(s.family, ShapeFamily::Cylinder { .. })) {
            let p = make_prior(spec, 256).unwrap();
            assert!(p.points().iter().all(|q| q.x * q.x + q.z * q.z <= 0.25 + 1e-9));
        }
    }

    #[test]
    fn priors_are_deterministic_and_in_unit_cube() {
        for spec in standard_categories() {
            let a = make_prior(&spec, 64).unwrap();
            let b = make_prior(&spec, 64).unwrap();
            assert_eq!(a, b);
            let ext = PointCloud::new(a.points().to_vec()).unwrap().extent();
            assert!((ext.max() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn centered_cube_geometry() {
        let cfg = SynthConfig { n_p: 16, ..SynthConfig::default() };
        let spec = cube_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nocs: Vec<Vector3<f64>> =
            (0..4000).map(|_| spec.family.sample(&mut rng).position).collect();
        let s = 0.2;
        let pose = Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 1.0), s).unwrap();
        let obs = render_observation(&nocs, None, &pose, &cfg, &mut rng).unwrap();
        let (bu, bv) = ((obs.bbox.l + obs.bbox.r) / 2.0, (obs.bbox.t + obs.bbox.b) / 2.0);
        assert!((bu - cfg.intrinsics.cx).abs() < 1.0 && (bv - cfg.intrinsics.cy).abs() < 1.0);
        for &d in obs.depth_patch.depths() {
            assert!((1.0 - 0.5 * s..=1.0 + 0.5 * s).contains(&d));
        }
    }

    #[test]
    fn oracle_alignment_recovers_pose() {
        let cfg = SynthConfig::default();
        for (c, spec) in standard_categories().iter().enumerate() {
            for j in 0..5 {
                let mut rng = instance_rng(11, (c * 5 + j) as u64);
                let inst = sample_instance(spec, &cfg, 0, &mut rng).unwrap();
                let cloud = back_project(&inst.depth_patch, &inst.intrinsics).unwrap();
                let pose = umeyama_align(&inst.observed_nocs, &cloud).unwrap();
                assert!(rotation_error_deg(&pose, &inst.gt_pose, false) < 1e-6);
                assert!(translation_error_m(&pose, &inst.gt_pose) < 1e-8);
                assert!((pose.scale - inst.gt_pose.scale).abs() < 1e-8);
                assert!(inst.depth_patch.inside(&inst.bbox));
                assert!(inst.depth_patch.depths().iter().all(|&d| d > 0.0));
            }
        }
    }

    #[test]
    fn symmetric_labels_face_the_camera() {
        let cfg = SynthConfig::default();
        let spec = &standard_categories()[3];
        let mut rng = instance_rng(2, 0);
        let inst = sample_instance(spec, &cfg, 0, &mut rng).unwrap();
        let d = inst.gt_pose.rotation.transpose() * (-inst.gt_pose.translation);
        assert!(d.x.abs() < 1e-12 && d.z > 0.0);
    }

    #[test]
    fn same_stream_same_instance() {
        let cfg = SynthConfig::default();
        let spec = &standard_categories()[4];
        let a = sample_instance(spec, &cfg, 3, &mut instance_rng(9, 3)).unwrap();
        let b = sample_instance(spec, &cfg, 3, &mut instance_rng(9, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_sizes() {
        let cfg = SynthConfig { n_dense: 1024, ..SynthConfig::default() };
        let ds = generate_dataset(&standard_categories(), 10, 0, &cfg).unwrap();
        let (train, test) = ds.split_every(5);
        assert_eq!(train.instances.len(), 48);
        assert_eq!(test.instances.len(), 12);
    }
}
