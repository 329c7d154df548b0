//! The reconstruction network and its discriminator.
//!
//! Per instance: encoders turn the prior, the observed pixels (with their
//! local descriptors) and the position hint into per-point and global
//! features; the depth side deforms and assigns the prior into shape points
//! and predicts one depth offset; the assembled depth is back-projected,
//! encoded, and the NOCS side deforms and assigns the prior again.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::mlp::{Activation, Mlp, MlpCache};
use crate::error::{Error, Result};
use crate::geometry::{ngph_encode, CameraIntrinsics, Pose};
use crate::spd::{smooth_l1, smooth_l1_grad, LossTerms, LossWeights};
use crate::synth::SceneInstance;

/// Width of the synthetic local appearance descriptor.
pub const DESCRIPTOR_DIM: usize = 16;
const DESCRIPTOR_NOISE: f64 = 0.05;
const DESCRIPTOR_SEED: u64 = 0x5eed_de5c;
/// Meters-to-feature scale for the back-projected cloud.
const CLOUD_FEATURE_SCALE: f64 = 10.0;
const OBS_DIM: usize = 2 + DESCRIPTOR_DIM;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Per-point feature width.
    pub c: usize,
    /// Global feature width.
    pub c_g: usize,
    /// Hidden width of the heads.
    pub hidden: usize,
    /// Prior points.
    pub n_m: usize,
    pub disc_hidden: usize,
    /// Also feed the position feature to the NOCS heads.
    pub ngph_to_nocs: bool,
    /// Replace the position hint by zeros.
    pub no_ngph: bool,
    /// Let the shape points carry absolute depth, without a separate offset.
    pub no_decouple: bool,
    /// Regress shape points and NOCS per pixel instead of deforming the prior.
    pub direct_regression: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            c: 64,
            c_g: 256,
            hidden: 128,
            n_m: 64,
            disc_hidden: 64,
            ngph_to_nocs: false,
            no_ngph: false,
            no_decouple: false,
            direct_regression: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c == 0 || self.c_g == 0 || self.hidden == 0 || self.disc_hidden == 0 || self.n_m < 1 {
            return Err(Error::invalid(format!("model widths must be positive: {self:?}")));
        }
        Ok(())
    }

    fn assign_out(&self) -> usize {
        if self.direct_regression {
            3
        } else {
            self.n_m
        }
    }

    fn nocs_global(&self) -> usize {
        3 * self.c_g + if self.ngph_to_nocs { 2 * self.c } else { 0 }
    }
}

/// One instance turned into network inputs and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub category: String,
    pub symmetric_about_y: bool,
    /// `N × (2 + DESCRIPTOR_DIM)`: bbox-normalized pixel position and descriptor.
    pub obs: DMatrix<f64>,
    /// `N × 2`: `((u - cx) / fx, (v - cy) / fy)`.
    pub rays: DMatrix<f64>,
    pub ngph: [f64; 6],
    pub depth: DVector<f64>,
    /// `N × 3` canonical coordinates of the observed pixels.
    pub nocs: DMatrix<f64>,
    /// `K × 3` canonical instance model.
    pub model: DMatrix<f64>,
    pub pixels: Vec<[f64; 2]>,
    pub intrinsics: CameraIntrinsics,
    pub gt_pose: Pose,
    pub gt_size: Vector3<f64>,
}

fn descriptor_basis() -> (Vec<Vector3<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(DESCRIPTOR_SEED);
    let freq = 1.5 * std::f64::consts::PI;
    let omega = (0..DESCRIPTOR_DIM)
        .map(|_| Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal) * freq))
        .collect();
    let phase = (0..DESCRIPTOR_DIM).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
    (omega, phase)
}

/// Synthetic appearance: a fixed smooth texture over canonical coordinates
/// with per-instance noise. It carries no camera-space depth.
pub fn descriptors(nocs: &[Vector3<f64>], instance_id: u64) -> DMatrix<f64> {
    let (omega, phase) = descriptor_basis();
    let mut rng = ChaCha8Rng::seed_from_u64(DESCRIPTOR_SEED ^ instance_id.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    DMatrix::from_fn(nocs.len(), DESCRIPTOR_DIM, |i, k| {
        (omega[k].dot(&nocs[i]) + phase[k]).sin() + DESCRIPTOR_NOISE * rng.sample::<f64, _>(StandardNormal)
    })
}

impl Sample {
    pub fn from_instance(inst: &SceneInstance) -> Result<Self> {
        let px = inst.depth_patch.pixels();
        let n = px.len();
        let b = &inst.bbox;
        let desc = descriptors(inst.observed_nocs.points(), inst.id);
        let obs = DMatrix::from_fn(n, OBS_DIM, |i, j| match j {
            0 => (px[i][0] - b.l) / b.width() - 0.5,
            1 => (px[i][1] - b.t) / b.height() - 0.5,
            _ => desc[(i, j - 2)],
        });
        let intr = inst.intrinsics;
        let rays = DMatrix::from_fn(n, 2, |i, j| {
            let (rx, ry) = intr.ray(px[i][0], px[i][1]);
            if j == 0 {
                rx
            } else {
                ry
            }
        });
        let to_mat = |pts: &[Vector3<f64>]| DMatrix::from_fn(pts.len(), 3, |i, j| pts[i][j]);
        Ok(Self {
            id: inst.id,
            category: inst.category.clone(),
            symmetric_about_y: inst.symmetric_about_y,
            obs,
            rays,
            ngph: ngph_encode(b, &intr)?.0,
            depth: DVector::from_column_slice(inst.depth_patch.depths()),
            nocs: to_mat(inst.observed_nocs.points()),
            model: to_mat(inst.gt_nocs.points()),
            pixels: px.to_vec(),
            intrinsics: intr,
            gt_pose: inst.gt_pose,
            gt_size: inst.gt_size,
        })
    }

    pub fn n_points(&self) -> usize {
        self.obs.nrows()
    }
}

/// Network outputs for one instance.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// `N_m × 3` depth-side deform field (zero rows in direct mode).
    pub deform_depth: DMatrix<f64>,
    /// `N × N_m` row-stochastic depth-side assign field (absent in direct mode).
    pub assign_depth: Option<DMatrix<f64>>,
    pub depth_translation: f64,
    pub deform_nocs: DMatrix<f64>,
    pub assign_nocs: Option<DMatrix<f64>>,
    /// `N × 3` shape points.
    pub shape_points: DMatrix<f64>,
    /// Assembled per-pixel depth.
    pub depth: DVector<f64>,
    /// `N × 3` reconstructed canonical coordinates.
    pub nocs: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SddrModel {
    pub config: ModelConfig,
    pub prior_enc: Mlp,
    pub prior_glob: Mlp,
    pub obs_enc: Mlp,
    pub obs_glob: Mlp,
    pub pos_enc: Mlp,
    pub depth_deform: Mlp,
    pub depth_assign: Mlp,
    pub zt_head: Mlp,
    pub depth_enc: Mlp,
    pub depth_glob: Mlp,
    pub nocs_deform: Mlp,
    pub nocs_assign: Mlp,
    /// Fixed standardization of the position hint: `(x - shift) / scale`.
    pub ngph_shift: [f64; 6],
    pub ngph_scale: [f64; 6],
}

pub const MODEL_GROUPS: [&str; 12] = [
    "prior_enc",
    "prior_glob",
    "obs_enc",
    "obs_glob",
    "pos_enc",
    "depth_deform",
    "depth_assign",
    "zt_head",
    "depth_enc",
    "depth_glob",
    "nocs_deform",
    "nocs_assign",
];

use Activation::{Identity, Relu};

impl SddrModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, cg, h) = (config.c, config.c_g, config.hidden);
        let depth_global = 2 * cg + 2 * c;
        let nocs_global = config.nocs_global();
        let assign_out = config.assign_out();
        let r = &mut rng;
        Ok(Self {
            prior_enc: Mlp::new(&[3, c, c], 3, &[Relu, Relu], r),
            prior_glob: Mlp::new(&[c, cg], c, &[Relu], r),
            obs_enc: Mlp::new(&[OBS_DIM, c, c], OBS_DIM, &[Relu, Relu], r),
            obs_glob: Mlp::new(&[c, cg], c, &[Relu], r),
            pos_enc: Mlp::new(&[6, 2 * c, 2 * c], 6, &[Relu, Relu], r),
            depth_deform: Mlp::new(&[c + depth_global, h, h, 3], c, &[Relu, Relu, Identity], r),
            depth_assign: Mlp::new(&[c + depth_global, h, h, assign_out], c, &[Relu, Relu, Identity], r),
            zt_head: Mlp::new(&[2 * c + cg, h, 1], 0, &[Relu, Identity], r),
            depth_enc: Mlp::new(&[3, c, c], 3, &[Relu, Relu], r),
            depth_glob: Mlp::new(&[c, cg], c, &[Relu], r),
            nocs_deform: Mlp::new(&[c + nocs_global, h, h, 3], c, &[Relu, Relu, Identity], r),
            nocs_assign: Mlp::new(&[2 * c + nocs_global, h, h, assign_out], 2 * c, &[Relu, Relu, Identity], r),
            ngph_shift: [0.0; 6],
            ngph_scale: [1.0; 6],
            config,
        })
    }

    pub fn groups(&self) -> [(&'static str, &Mlp); 12] {
        [
            ("prior_enc", &self.prior_enc),
            ("prior_glob", &self.prior_glob),
            ("obs_enc", &self.obs_enc),
            ("obs_glob", &self.obs_glob),
            ("pos_enc", &self.pos_enc),
            ("depth_deform", &self.depth_deform),
            ("depth_assign", &self.depth_assign),
            ("zt_head", &self.zt_head),
            ("depth_enc", &self.depth_enc),
            ("depth_glob", &self.depth_glob),
            ("nocs_deform", &self.nocs_deform),
            ("nocs_assign", &self.nocs_assign),
        ]
    }

    pub fn groups_mut(&mut self) -> [(&'static str, &mut Mlp); 12] {
        [
            ("prior_enc", &mut self.prior_enc),
            ("prior_glob", &mut self.prior_glob),
            ("obs_enc", &mut self.obs_enc),
            ("obs_glob", &mut self.obs_glob),
            ("pos_enc", &mut self.pos_enc),
            ("depth_deform", &mut self.depth_deform),
            ("depth_assign", &mut self.depth_assign),
            ("zt_head", &mut self.zt_head),
            ("depth_enc", &mut self.depth_enc),
            ("depth_glob", &mut self.depth_glob),
            ("nocs_deform", &mut self.nocs_deform),
            ("nocs_assign", &mut self.nocs_assign),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.groups().iter().map(|(_, m)| m.param_count()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.groups_mut().iter_mut().for_each(|(_, m)| m.fill_zero());
        z
    }

    pub fn fill_zero(&mut self) {
        self.groups_mut().iter_mut().for_each(|(_, m)| m.fill_zero());
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|(_, m)| m.is_finite())
    }

    /// Sets the standardization of the position hint from training samples.
    pub fn fit_input_normalization(&mut self, samples: &[Sample]) {
        if samples.is_empty() {
            return;
        }
        let n = samples.len() as f64;
        for k in 0..6 {
            let mean = samples.iter().map(|s| s.ngph[k]).sum::<f64>() / n;
            let var = samples.iter().map(|s| (s.ngph[k] - mean).powi(2)).sum::<f64>() / n;
            self.ngph_shift[k] = mean;
            self.ngph_scale[k] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
    }

    /// Starts the assembled depth at `z` by setting the bias of whichever
    /// output carries absolute depth.
    pub fn set_depth_offset(&mut self, z: f64) {
        let cfg = &self.config;
        if !cfg.no_decouple {
            let last = self.zt_head.layers.last_mut().expect("head has layers");
            last.bias[0] = z;
        } else if cfg.direct_regression {
            let last = self.depth_assign.layers.last_mut().expect("head has layers");
            last.bias[2] = z;
        } else {
            let last = self.depth_deform.layers.last_mut().expect("head has layers");
            last.bias[2] = z;
        }
    }

    fn position_input(&self, s: &Sample) -> DMatrix<f64> {
        if self.config.no_ngph {
            return DMatrix::zeros(1, 6);
        }
        DMatrix::from_fn(1, 6, |_, k| (s.ngph[k] - self.ngph_shift[k]) / self.ngph_scale[k])
    }

    pub(crate) fn check_dims(&self, prior: &DMatrix<f64>, s: &Sample) -> Result<()> {
        if prior.ncols() != 3 || prior.nrows() != self.config.n_m {
            return Err(Error::invalid(format!(
                "prior is {}x{}, model expects {}x3",
                prior.nrows(),
                prior.ncols(),
                self.config.n_m
            )));
        }
        let n = s.n_points();
        if n == 0 || s.obs.ncols() != OBS_DIM || s.rays.nrows() != n || s.depth.len() != n || s.nocs.nrows() != n {
            return Err(Error::invalid(format!("sample {} has inconsistent dimensions", s.id)));
        }
        Ok(())
    }

    /// Forward pass without caches.
    pub fn forward(&self, prior: &DMatrix<f64>, s: &Sample) -> Result<Prediction> {
        self.check_dims(prior, s)?;
        Ok(self.run(prior, s).prediction())
    }

    pub(crate) fn run(&self, prior: &DMatrix<f64>, s: &Sample) -> Pass {
        let cfg = &self.config;
        let n = s.n_points();

        let pri_enc = self.prior_enc.forward(prior, None);
        let pri_glob = self.prior_glob.forward(pri_enc.output(), None);
        let g_pri = mean_rows(pri_glob.output());
        let obs_enc = self.obs_enc.forward(&s.obs, None);
        let obs_glob = self.obs_glob.forward(obs_enc.output(), None);
        let g_obs = mean_rows(obs_glob.output());
        let pos_enc = self.pos_enc.forward(&self.position_input(s), None);
        let f_pos = DVector::from_iterator(2 * cfg.c, pos_enc.output().iter().copied());

        let depth_global = concat(&[&g_obs, &g_pri, &f_pos]);
        let dd = self.depth_deform.forward(pri_enc.output(), Some(&depth_global));
        let da = self.depth_assign.forward(obs_enc.output(), Some(&depth_global));
        let zt_global = concat(&[&f_pos, &g_obs]);
        let zt = self.zt_head.forward(&DMatrix::zeros(1, 0), Some(&zt_global));
        let z_t = if cfg.no_decouple { 0.0 } else { zt.output()[0] };

        let (m_depth, def_depth, shape) = if cfg.direct_regression {
            (None, prior.clone(), da.output().clone())
        } else {
            let m = row_softmax(da.output());
            let def = prior + dd.output();
            let shape = &m * &def;
            (Some(m), def, shape)
        };
        let depth = DVector::from_fn(n, |i, _| shape[(i, 2)] + z_t);

        let mut cloud = DMatrix::from_fn(n, 3, |i, j| match j {
            0 => depth[i] * s.rays[(i, 0)],
            1 => depth[i] * s.rays[(i, 1)],
            _ => depth[i],
        });
        let centroid = mean_rows(&cloud);
        for mut r in cloud.row_iter_mut() {
            for j in 0..3 {
                r[j] = (r[j] - centroid[j]) * CLOUD_FEATURE_SCALE;
            }
        }
        let dep_enc = self.depth_enc.forward(&cloud, None);
        let dep_glob = self.depth_glob.forward(dep_enc.output(), None);
        let g_dep = mean_rows(dep_glob.output());

        let nocs_global = if cfg.ngph_to_nocs {
            concat(&[&g_dep, &g_obs, &g_pri, &f_pos])
        } else {
            concat(&[&g_dep, &g_obs, &g_pri])
        };
        let nd = self.nocs_deform.forward(pri_enc.output(), Some(&nocs_global));
        let local_n = hcat(dep_enc.output(), obs_enc.output());
        let na = self.nocs_assign.forward(&local_n, Some(&nocs_global));
        let def_nocs = prior + nd.output();
        let (m_nocs, p_nocs) = if cfg.direct_regression {
            (None, na.output().clone())
        } else {
            let m = row_softmax(na.output());
            let p = &m * &def_nocs;
            (Some(m), p)
        };

        Pass {
            pri_enc,
            pri_glob,
            obs_enc,
            obs_glob,
            pos_enc,
            dd,
            da,
            zt,
            m_depth,
            def_depth,
            shape,
            z_t,
            depth,
            dep_enc,
            dep_glob,
            nd,
            na,
            m_nocs,
            def_nocs,
            p_nocs,
        }
    }
}

pub(crate) struct Pass {
    pri_enc: MlpCache,
    pri_glob: MlpCache,
    obs_enc: MlpCache,
    obs_glob: MlpCache,
    pos_enc: MlpCache,
    dd: MlpCache,
    da: MlpCache,
    zt: MlpCache,
    m_depth: Option<DMatrix<f64>>,
    def_depth: DMatrix<f64>,
    shape: DMatrix<f64>,
    z_t: f64,
    depth: DVector<f64>,
    dep_enc: MlpCache,
    dep_glob: MlpCache,
    nd: MlpCache,
    na: MlpCache,
    m_nocs: Option<DMatrix<f64>>,
    def_nocs: DMatrix<f64>,
    p_nocs: DMatrix<f64>,
}

impl Pass {
    pub(crate) fn nocs(&self) -> &DMatrix<f64> {
        &self.p_nocs
    }

    fn prediction(self) -> Prediction {
        let n_m = self.def_depth.nrows();
        Prediction {
            deform_depth: if self.m_depth.is_some() { self.dd.output().clone() } else { DMatrix::zeros(n_m, 3) },
            assign_depth: self.m_depth,
            depth_translation: self.z_t,
            deform_nocs: self.nd.output().clone(),
            assign_nocs: self.m_nocs,
            shape_points: self.shape,
            depth: self.depth,
            nocs: self.p_nocs,
        }
    }
}

/// Point-set critic: shared per-point layers, mean pooling, scoring layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub point: Mlp,
    pub score: Mlp,
}

pub const DISCRIMINATOR_GROUPS: [&str; 2] = ["disc_point", "disc_score"];

impl Discriminator {
    pub fn new(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            point: Mlp::new(&[3, hidden, hidden], 3, &[Relu, Relu], &mut rng),
            score: Mlp::new(&[hidden, hidden, 1], 0, &[Relu, Identity], &mut rng),
        }
    }

    pub fn groups(&self) -> [(&'static str, &Mlp); 2] {
        [("disc_point", &self.point), ("disc_score", &self.score)]
    }

    pub fn groups_mut(&mut self) -> [(&'static str, &mut Mlp); 2] {
        [("disc_point", &mut self.point), ("disc_score", &mut self.score)]
    }

    pub fn zeros_like(&self) -> Self {
        Self { point: self.point.zeros_like(), score: self.score.zeros_like() }
    }

    pub fn fill_zero(&mut self) {
        self.point.fill_zero();
        self.score.fill_zero();
    }

    pub fn is_finite(&self) -> bool {
        self.point.is_finite() && self.score.is_finite()
    }

    pub fn score(&self, points: &DMatrix<f64>) -> f64 {
        self.run(points).2
    }

    fn run(&self, points: &DMatrix<f64>) -> (MlpCache, MlpCache, f64) {
        let pc = self.point.forward(points, None);
        let pooled = mean_rows(pc.output());
        let sc = self.score.forward(&DMatrix::zeros(1, 0), Some(&pooled));
        let s = sc.output()[0];
        (pc, sc, s)
    }

    /// Accumulates `d_score * ∂score/∂θ` into `grad` and returns `∂score/∂points * d_score`.
    fn backward(&self, caches: &(MlpCache, MlpCache, f64), d_score: f64, grad: &mut Discriminator) -> DMatrix<f64> {
        let (pc, sc, _) = caches;
        let (_, d_pooled) = self.score.backward(sc, DMatrix::from_element(1, 1, d_score), &mut grad.score);
        let n = pc.output().nrows();
        let d_rows = broadcast_rows(&d_pooled, n, 1.0 / n as f64);
        self.point.backward(pc, d_rows, &mut grad.point).0
    }
}

/// Which gradients [`instance_loss`] should produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradRequest {
    pub model: bool,
    pub discriminator: bool,
}

impl GradRequest {
    pub const ALL: Self = Self { model: true, discriminator: true };
    pub const NONE: Self = Self { model: false, discriminator: false };
}

/// Loss terms of one instance and, on request, the gradient of
/// `Σ γ_k L_k` accumulated (scaled by `grad_scale`) into `model_grad` and
/// `disc_grad`. The discriminator sees the reconstructed NOCS of the
/// observed pixels as fake and their true NOCS as real.
#[allow(clippy::too_many_arguments)]
pub fn instance_loss(
    model: &SddrModel,
    disc: &Discriminator,
    prior: &DMatrix<f64>,
    s: &Sample,
    w: &LossWeights,
    request: GradRequest,
    grad_scale: f64,
    model_grad: &mut SddrModel,
    disc_grad: &mut Discriminator,
) -> Result<LossTerms> {
    model.check_dims(prior, s)?;
    let pass = model.run(prior, s);
    loss_from_pass(model, disc, s, &pass, w, request, grad_scale, model_grad, disc_grad)
}

/// Gradient of `scale * L_d` with respect to the discriminator for one
/// fake/real pair. Returns `L_d`.
pub(crate) fn discriminator_loss(disc: &Discriminator, fake: &DMatrix<f64>, real: &DMatrix<f64>, scale: f64, grad: &mut Discriminator) -> f64 {
    let f = disc.run(fake);
    let r = disc.run(real);
    disc.backward(&r, scale * 2.0 * (r.2 - 1.0), grad);
    disc.backward(&f, scale * 2.0 * f.2, grad);
    (r.2 - 1.0).powi(2) + f.2 * f.2
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn loss_from_pass(
    model: &SddrModel,
    disc: &Discriminator,
    s: &Sample,
    pass: &Pass,
    w: &LossWeights,
    request: GradRequest,
    grad_scale: f64,
    model_grad: &mut SddrModel,
    disc_grad: &mut Discriminator,
) -> Result<LossTerms> {
    let cfg = &model.config;
    let n = s.n_points();
    let nf = n as f64;
    let g = w.0;

    // Loss values.
    let dz: DVector<f64> = &pass.depth - &s.depth;
    let l_z = dz.iter().map(|d| d.abs()).sum::<f64>() / nf;
    let fake = disc.run(&pass.p_nocs);
    let real = disc.run(&s.nocs);
    let (s_fake, s_real) = (fake.2, real.2);
    let l_d = (s_real - 1.0).powi(2) + s_fake * s_fake;
    let l_g = (s_fake - 1.0).powi(2);
    let diff = &pass.p_nocs - &s.nocs;
    let l_corr = diff.iter().map(|d| smooth_l1(*d)).sum::<f64>() / (3.0 * nf);
    let cd_src = if cfg.direct_regression { &pass.p_nocs } else { &pass.def_nocs };
    let (l_cd, d_cd) = chamfer_with_grad(cd_src, &s.model);
    let (l_entro, l_reg) = match &pass.m_nocs {
        Some(m) => (
            m.row_iter().map(|r| -r.max().ln()).sum::<f64>() / nf,
            m.iter().map(|v| v * v).sum::<f64>() / m.len() as f64,
        ),
        None => (0.0, 0.0),
    };
    let terms = LossTerms { l_z, l_d, l_g, l_corr, l_cd, l_entro, l_reg };
    if terms.as_array().iter().any(|v| !v.is_finite()) {
        return Ok(terms);
    }

    // Discriminator parameters: L_d on both inputs, L_g on the fake one.
    let d_score_fake = grad_scale * (g[1] * 2.0 * s_fake + g[2] * 2.0 * (s_fake - 1.0));
    if request.discriminator {
        disc.backward(&real, grad_scale * g[1] * 2.0 * (s_real - 1.0), disc_grad);
    }
    if !request.model {
        if request.discriminator {
            disc.backward(&fake, d_score_fake, disc_grad);
        }
        return Ok(terms);
    }
    let mut scratch = disc.zeros_like();
    let target = if request.discriminator { disc_grad } else { &mut scratch };
    let mut d_pnocs = disc.backward(&fake, d_score_fake, target);

    // NOCS side.
    d_pnocs += diff.map(|d| grad_scale * g[3] * smooth_l1_grad(d) / (3.0 * nf));
    let d_cd = d_cd * (grad_scale * g[4]);
    let mut d_def_nocs = DMatrix::zeros(cfg.n_m, 3);
    let d_na_out = match &pass.m_nocs {
        Some(m) => {
            let mut dm = &d_pnocs * pass.def_nocs.transpose();
            for (i, row) in m.row_iter().enumerate() {
                let (j, v) = row.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b });
                dm[(i, j)] -= grad_scale * g[5] / (nf * v);
            }
            dm += m * (grad_scale * g[6] * 2.0 / m.len() as f64);
            d_def_nocs += m.transpose() * &d_pnocs;
            d_def_nocs += &d_cd;
            softmax_backward(m, &dm)
        }
        None => {
            let mut d = d_pnocs.clone();
            d += &d_cd;
            d
        }
    };
    let (d_local_n, d_glob_na) = model.nocs_assign.backward(&pass.na, d_na_out, &mut model_grad.nocs_assign);
    let (d_fpri_nd, d_glob_nd) = model.nocs_deform.backward(&pass.nd, d_def_nocs, &mut model_grad.nocs_deform);
    let d_nocs_global = d_glob_na + d_glob_nd;
    let cg = cfg.c_g;
    let c = cfg.c;
    let d_gdep = d_nocs_global.rows(0, cg).into_owned();
    let mut d_gobs = d_nocs_global.rows(cg, cg).into_owned();
    let mut d_gpri = d_nocs_global.rows(2 * cg, cg).into_owned();
    let mut d_fpos = if cfg.ngph_to_nocs {
        d_nocs_global.rows(3 * cg, 2 * c).into_owned()
    } else {
        DVector::zeros(2 * c)
    };
    let mut d_fdep = d_local_n.columns(0, c).into_owned();
    let mut d_fobs = d_local_n.columns(c, c).into_owned();
    let mut d_fpri = d_fpri_nd;

    // Depth encoder back to the assembled depth.
    let (d_dglob_in, _) = model.depth_glob.backward(&pass.dep_glob, broadcast_rows(&d_gdep, n, 1.0 / nf), &mut model_grad.depth_glob);
    d_fdep += d_dglob_in;
    let (d_cloud_feat, _) = model.depth_enc.backward(&pass.dep_enc, d_fdep, &mut model_grad.depth_enc);
    let mean_grad = mean_rows(&d_cloud_feat);
    let mut d_depth = DVector::from_fn(n, |i, _| {
        let d = |j: usize| CLOUD_FEATURE_SCALE * (d_cloud_feat[(i, j)] - mean_grad[j]);
        d(0) * s.rays[(i, 0)] + d(1) * s.rays[(i, 1)] + d(2)
    });
    d_depth += dz.map(|d| grad_scale * g[0] * sign(d) / nf);

    // Depth side.
    let d_zt = d_depth.sum();
    let mut d_shape = DMatrix::zeros(n, 3);
    d_shape.set_column(2, &d_depth);
    let depth_global_grad = {
        let (d_da_out, d_dd_out) = match &pass.m_depth {
            Some(m) => {
                let dm = &d_shape * pass.def_depth.transpose();
                (softmax_backward(m, &dm), m.transpose() * &d_shape)
            }
            None => (d_shape.clone(), DMatrix::zeros(cfg.n_m, 3)),
        };
        let (d_fobs_da, d_glob_da) = model.depth_assign.backward(&pass.da, d_da_out, &mut model_grad.depth_assign);
        d_fobs += d_fobs_da;
        let (d_fpri_dd, d_glob_dd) = model.depth_deform.backward(&pass.dd, d_dd_out, &mut model_grad.depth_deform);
        d_fpri += d_fpri_dd;
        d_glob_da + d_glob_dd
    };
    d_gobs += depth_global_grad.rows(0, cg);
    d_gpri += depth_global_grad.rows(cg, cg);
    d_fpos += depth_global_grad.rows(2 * cg, 2 * c);
    if !cfg.no_decouple {
        let (_, d_zt_glob) = model.zt_head.backward(&pass.zt, DMatrix::from_element(1, 1, d_zt), &mut model_grad.zt_head);
        d_fpos += d_zt_glob.rows(0, 2 * c);
        d_gobs += d_zt_glob.rows(2 * c, cg);
    }

    // Encoders.
    model.pos_enc.backward(&pass.pos_enc, DMatrix::from_iterator(1, 2 * c, d_fpos.iter().copied()), &mut model_grad.pos_enc);
    let (d_og, _) = model.obs_glob.backward(&pass.obs_glob, broadcast_rows(&d_gobs, n, 1.0 / nf), &mut model_grad.obs_glob);
    d_fobs += d_og;
    model.obs_enc.backward(&pass.obs_enc, d_fobs, &mut model_grad.obs_enc);
    let n_m = cfg.n_m;
    let (d_pg, _) = model.prior_glob.backward(&pass.pri_glob, broadcast_rows(&d_gpri, n_m, 1.0 / n_m as f64), &mut model_grad.prior_glob);
    d_fpri += d_pg;
    model.prior_enc.backward(&pass.pri_enc, d_fpri, &mut model_grad.prior_enc);
    Ok(terms)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Squared chamfer distance (mean per side, summed) and its gradient with respect to `a`.
fn chamfer_with_grad(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let (na, nb) = (a.nrows(), b.nrows());
    let d2 = |i: usize, j: usize| (0..3).map(|k| (a[(i, k)] - b[(j, k)]).powi(2)).sum::<f64>();
    let mut grad = DMatrix::zeros(na, 3);
    let mut loss = 0.0;
    let mut best_for_b = vec![(f64::INFINITY, 0usize); nb];
    for i in 0..na {
        let mut best = (f64::INFINITY, 0usize);
        for (j, bb) in best_for_b.iter_mut().enumerate() {
            let d = d2(i, j);
            if d < best.0 {
                best = (d, j);
            }
            if d < bb.0 {
                *bb = (d, i);
            }
        }
        loss += best.0 / na as f64;
        for k in 0..3 {
            grad[(i, k)] += 2.0 * (a[(i, k)] - b[(best.1, k)]) / na as f64;
        }
    }
    for (j, &(d, i)) in best_for_b.iter().enumerate() {
        loss += d / nb as f64;
        for k in 0..3 {
            grad[(i, k)] += 2.0 * (a[(i, k)] - b[(j, k)]) / nb as f64;
        }
    }
    (loss, grad)
}

pub(crate) fn row_softmax(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut r in out.row_iter_mut() {
        let m = r.max();
        r.apply(|v| *v = (*v - m).exp());
        let s = r.sum();
        r /= s;
    }
    out
}

fn softmax_backward(m: &DMatrix<f64>, dm: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.component_mul(dm);
    for (i, mut r) in out.row_iter_mut().enumerate() {
        let dot = r.sum();
        for j in 0..r.len() {
            r[j] -= m[(i, j)] * dot;
        }
    }
    out
}

fn mean_rows(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    x.row_sum().transpose() / n
}

fn broadcast_rows(v: &DVector<f64>, n: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, v.len(), |_, j| v[j] * scale)
}

fn concat(parts: &[&DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ca, cb) = (a.ncols(), b.ncols());
    DMatrix::from_fn(a.nrows(), ca + cb, |i, j| if j < ca { a[(i, j)] } else { b[(i, j - ca)] })
}

const KINK_REFINEMENTS: usize = 3;

/// Per-group relative error between the analytic gradient of
/// `Σ γ_k L_k` and central finite differences with step `eps`, measured as
/// `‖g_a − g_fd‖ / max(‖g_a‖, ‖g_fd‖)` over all parameters of the group
/// (0 when both vanish). Where a ReLU or row-max switch lies within the
/// step, the step is refined for that parameter.
pub fn gradient_check(
    model: &SddrModel,
    disc: &Discriminator,
    prior: &DMatrix<f64>,
    s: &Sample,
    w: &LossWeights,
    eps: f64,
) -> Result<Vec<(&'static str, f64)>> {
    let mut mg = model.zeros_like();
    let mut dg = disc.zeros_like();
    instance_loss(model, disc, prior, s, w, GradRequest::ALL, 1.0, &mut mg, &mut dg)?;
    let mut scratch_m = model.zeros_like();
    let mut scratch_d = disc.zeros_like();
    let mut eval = |m: &SddrModel, d: &Discriminator| -> Result<f64> {
        Ok(instance_loss(m, d, prior, s, w, GradRequest::NONE, 1.0, &mut scratch_m, &mut scratch_d)?.total(w))
    };
    let f0 = eval(model, disc)?;
    let mut out = Vec::new();
    let n_model = MODEL_GROUPS.len();
    for g in 0..n_model + DISCRIMINATOR_GROUPS.len() {
        let (name, analytic) = if g < n_model { mg.groups()[g] } else { dg.groups()[g - n_model] };
        let (mut diff2, mut a2, mut f2) = (0.0, 0.0, 0.0);
        for (k, layer) in analytic.layers.iter().enumerate() {
            for bias in [false, true] {
                let ga = if bias { &layer.bias } else { &layer.weight };
                for idx in 0..ga.len() {
                    let mut at = |delta: f64| -> Result<f64> {
                        let mut m = model.clone();
                        let mut d = disc.clone();
                        let target = if g < n_model {
                            m.groups_mut().into_iter().nth(g).expect("group").1
                        } else {
                            d.groups_mut().into_iter().nth(g - n_model).expect("group").1
                        };
                        let l = &mut target.layers[k];
                        let t = if bias { &mut l.bias } else { &mut l.weight };
                        t[idx] += delta;
                        eval(&m, &d)
                    };
                    // A kink inside [-h, h] makes the central difference
                    // disagree with the one at h / 10; shrink until they agree.
                    let mut h = eps;
                    let mut fd = (at(h)? - at(-h)?) / (2.0 * h);
                    for _ in 0..KINK_REFINEMENTS {
                        let finer = (at(h / 10.0)? - at(-h / 10.0)?) / (h / 5.0);
                        let roundoff = 1e-12 * f0.abs() / (h / 10.0);
                        if (finer - fd).abs() <= 1e-5 * finer.abs().max(fd.abs()) + roundoff {
                            break;
                        }
                        h /= 10.0;
                        fd = finer;
                    }
                    diff2 += (fd - ga[idx]).powi(2);
                    a2 += ga[idx].powi(2);
                    f2 += fd * fd;
                }
            }
        }
        let denom = a2.max(f2).sqrt();
        out.push((name, if denom > 0.0 { diff2.sqrt() / denom } else { 0.0 }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{sample_instance, standard_categories, SynthConfig};

    fn small_config() -> ModelConfig {
        ModelConfig { c: 6, c_g: 10, hidden: 8, n_m: 12, disc_hidden: 6, ..ModelConfig::default() }
    }

    fn toy(seed: u64) -> (DMatrix<f64>, Sample) {
        let cfg = SynthConfig { n_p: 16, n_m: 12, n_dense: 800, ..SynthConfig::default() };
        let spec = &standard_categories()[(seed % 6) as usize];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = sample_instance(spec, &cfg, seed, &mut rng).unwrap();
        let prior = crate::synth::make_prior(spec, 12).unwrap().to_matrix();
        (prior, Sample::from_instance(&inst).unwrap())
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        for variant in 0..4 {
            let mut cfg = small_config();
            match variant {
                1 => cfg.no_decouple = true,
                2 => cfg.direct_regression = true,
                3 => cfg.ngph_to_nocs = true,
                _ => {}
            }
            let (prior, s) = toy(variant);
            let mut model = SddrModel::new(cfg, variant).unwrap();
            model.set_depth_offset(s.depth.mean());
            let disc = Discriminator::new(6, variant + 10);
            let errs = gradient_check(&model, &disc, &prior, &s, &LossWeights::published(), 1e-5).unwrap();
            for (name, e) in errs {
                assert!(e < 1e-4, "variant {variant} group {name}: relative error {e}");
            }
        }
    }

    #[test]
    fn zero_network_gives_zero_fields_and_uniform_assignment() {
        let (prior, s) = toy(1);
        let mut model = SddrModel::new(small_config(), 0).unwrap();
        model.fill_zero();
        let p = model.forward(&prior, &s).unwrap();
        assert!(p.deform_depth.iter().chain(p.deform_nocs.iter()).all(|v| *v == 0.0));
        assert_eq!(p.depth_translation, 0.0);
        let m = p.assign_nocs.unwrap();
        assert!(m.iter().all(|v| (v - 1.0 / 12.0).abs() < 1e-15));
    }

    #[test]
    fn forward_is_deterministic_and_rows_are_stochastic() {
        let (prior, s) = toy(2);
        let model = SddrModel::new(small_config(), 3).unwrap();
        let a = model.forward(&prior, &s).unwrap();
        let b = model.forward(&prior, &s).unwrap();
        assert_eq!(a.nocs, b.nocs);
        assert_eq!(a.depth, b.depth);
        for m in [a.assign_depth.unwrap(), a.assign_nocs.unwrap()] {
            for r in m.row_iter() {
                assert!((r.sum() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn permuting_observations_permutes_assignment_rows() {
        let (prior, s) = toy(3);
        let model = SddrModel::new(small_config(), 4).unwrap();
        let n = s.n_points();
        let perm: Vec<usize> = (0..n).rev().collect();
        let permute = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(perm[i], j)]);
        let mut t = s.clone();
        t.obs = permute(&s.obs);
        t.rays = permute(&s.rays);
        t.nocs = permute(&s.nocs);
        t.depth = DVector::from_fn(n, |i, _| s.depth[perm[i]]);
        let a = model.forward(&prior, &s).unwrap();
        let b = model.forward(&prior, &t).unwrap();
        assert!((a.depth_translation - b.depth_translation).abs() < 1e-12);
        let ma = a.assign_nocs.unwrap();
        let mb = b.assign_nocs.unwrap();
        assert!((permute(&ma) - mb).abs().max() < 1e-12);
    }

    #[test]
    fn discriminator_is_permutation_invariant() {
        let (_, s) = toy(4);
        let d = Discriminator::new(8, 1);
        let n = s.nocs.nrows();
        let rev = DMatrix::from_fn(n, 3, |i, j| s.nocs[(n - 1 - i, j)]);
        assert!((d.score(&s.nocs) - d.score(&rev)).abs() < 1e-12);
    }

    #[test]
    fn loss_weight_scales_its_gradient_linearly() {
        let (prior, s) = toy(5);
        let model = SddrModel::new(small_config(), 5).unwrap();
        let disc = Discriminator::new(6, 5);
        let grad = |gamma: f64| {
            let mut w = [0.0; 7];
            w[0] = gamma;
            let mut mg = model.zeros_like();
            let mut dg = disc.zeros_like();
            instance_loss(&model, &disc, &prior, &s, &LossWeights(w), GradRequest::ALL, 1.0, &mut mg, &mut dg).unwrap();
            mg.zt_head.layers[1].bias[0]
        };
        let (g1, g3) = (grad(1.0), grad(3.0));
        assert!(g1 != 0.0);
        assert!((g3 - 3.0 * g1).abs() < 1e-12 * g1.abs().max(1.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (prior, s) = toy(0);
        let model = SddrModel::new(ModelConfig { n_m: 13, ..small_config() }, 0).unwrap();
        assert!(matches!(model.forward(&prior, &s), Err(Error::InvalidInput(_))));
    }
}
