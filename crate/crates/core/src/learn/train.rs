//! Alternating adversarial training with Adam, and closed-loop evaluation.

use nalgebra::{DMatrix, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mlp::Mlp;
use super::model::{discriminator_loss, loss_from_pass, Discriminator, GradRequest, ModelConfig, Pass, Sample, SddrModel};
use crate::error::{Error, Result};
use crate::eval::{evaluate, CurveGrids, Detection, EvalReport};
use crate::geometry::{umeyama_align, PointCloud, Pose};
use crate::spd::{chamfer_distance, estimate_size, DeformField, LossTerms, LossWeights, ShapePrior};
use crate::synth::{Dataset, Prediction as SavedPrediction};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_main: f64,
    pub lr_disc: f64,
    /// Epoch (0-based) from which both rates are multiplied by `decay_factor`.
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Run the discriminator step and keep `γ_3 L_g` in the main objective.
    pub adversarial: bool,
}

impl Default for TrainConfig {
    /// Desk-scale schedule for the toy benchmark.
    fn default() -> Self {
        Self {
            lr_main: 1e-3,
            lr_disc: 1e-4,
            decay_epoch: 45,
            decay_factor: 0.1,
            batch_size: 16,
            epochs: 60,
            seed: 0,
            weights: LossWeights::published(),
            adversarial: true,
        }
    }
}

impl TrainConfig {
    /// The published optimizer schedule.
    pub fn published() -> Self {
        Self {
            lr_main: 1e-4,
            lr_disc: 1e-5,
            decay_epoch: 40,
            decay_factor: 0.1,
            batch_size: 96,
            epochs: 50,
            seed: 0,
            weights: LossWeights::published(),
            adversarial: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_main >= 0.0 && self.lr_disc >= 0.0 && self.lr_main.is_finite() && self.lr_disc.is_finite()) {
            return Err(Error::invalid("learning rates must be finite and non-negative"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return Err(Error::invalid("decay factor must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        LossWeights::new(self.weights.0)?;
        Ok(())
    }

    fn rate_factor(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch {
            self.decay_factor
        } else {
            1.0
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn tensors(mlps: &[&Mlp]) -> Vec<DMatrix<f64>> {
    mlps.iter()
        .flat_map(|m| m.layers.iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]))
        .map(|t| DMatrix::zeros(t.nrows(), t.ncols()))
        .collect()
}

#[derive(Clone, Debug)]
struct Adam {
    m: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
    t: i32,
}

impl Adam {
    fn new(mlps: &[&Mlp]) -> Self {
        Self { m: tensors(mlps), v: tensors(mlps), t: 0 }
    }

    fn step(&mut self, params: Vec<&mut Mlp>, grads: &[&Mlp], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let mut k = 0;
        for (p, g) in params.into_iter().zip(grads) {
            for (pl, gl) in p.layers.iter_mut().zip(&g.layers) {
                for (pt, gt) in [(&mut pl.weight, &gl.weight), (&mut pl.bias, &gl.bias)] {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for i in 0..pt.len() {
                        let gi = gt[i];
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                        pt[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    }
                    k += 1;
                }
            }
        }
    }
}

/// One row of the loss history: batch means of the terms, and the weighted
/// total under the configured weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub terms: LossTerms,
    pub total: f64,
}

/// Stateful trainer over a fixed training set.
pub struct Trainer {
    pub model: SddrModel,
    pub disc: Discriminator,
    pub config: TrainConfig,
    pub history: Vec<LossRecord>,
    samples: Vec<Sample>,
    sample_prior: Vec<usize>,
    priors: Vec<DMatrix<f64>>,
    opt_model: Adam,
    opt_disc: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
}

pub(crate) fn prepare(ds: &Dataset) -> Result<(Vec<Sample>, Vec<usize>, Vec<DMatrix<f64>>)> {
    let priors = ds.priors.iter().map(ShapePrior::to_matrix).collect();
    let mut samples = Vec::with_capacity(ds.instances.len());
    let mut idx = Vec::with_capacity(ds.instances.len());
    for inst in &ds.instances {
        let c = ds
            .category_index(&inst.category)
            .ok_or_else(|| Error::Validation(format!("instance {} has unknown category {}", inst.id, inst.category)))?;
        samples.push(Sample::from_instance(inst)?);
        idx.push(c);
    }
    Ok((samples, idx, priors))
}

fn mean_depth(samples: &[Sample]) -> f64 {
    let (sum, n) = samples.iter().fold((0.0, 0usize), |(s, n), x| (s + x.depth.sum(), n + x.depth.len()));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl Trainer {
    /// Initializes a fresh model from `config.seed`, fits the input
    /// standardization and starts the depth output at the mean training depth.
    pub fn new(ds: &Dataset, model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut model = SddrModel::new(model_config, config.seed)?;
        let disc = Discriminator::new(model.config.disc_hidden, config.seed ^ 0xd15c);
        let (samples, sample_prior, priors) = prepare(ds)?;
        if samples.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        model.fit_input_normalization(&samples);
        model.set_depth_offset(mean_depth(&samples));
        Ok(Self::from_parts(model, disc, config, samples, sample_prior, priors))
    }

    fn from_parts(
        model: SddrModel,
        disc: Discriminator,
        config: TrainConfig,
        samples: Vec<Sample>,
        sample_prior: Vec<usize>,
        priors: Vec<DMatrix<f64>>,
    ) -> Self {
        let opt_model = Adam::new(&model.groups().map(|g| g.1));
        let opt_disc = Adam::new(&disc.groups().map(|g| g.1));
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5417_f1e5);
        Self {
            model,
            disc,
            history: Vec::new(),
            samples,
            sample_prior,
            priors,
            opt_model,
            opt_disc,
            rng,
            epoch: 0,
            config,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One discriminator update on `L_d` (when adversarial) followed by one
    /// update of the reconstruction network on the weighted loss with
    /// `γ_2 = 0`.
    pub fn step(&mut self, batch: &[usize]) -> Result<LossRecord> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let cfg = &self.config;
        let rate = cfg.rate_factor(self.epoch);
        let scale = 1.0 / batch.len() as f64;
        let step = self.history.len() + 1;

        for &i in batch {
            self.model.check_dims(&self.priors[self.sample_prior[i]], &self.samples[i])?;
        }
        let passes: Vec<Pass> =
            batch.iter().map(|&i| self.model.run(&self.priors[self.sample_prior[i]], &self.samples[i])).collect();

        if cfg.adversarial {
            let mut dgrad = self.disc.zeros_like();
            for (pass, &i) in passes.iter().zip(batch) {
                discriminator_loss(&self.disc, pass.nocs(), &self.samples[i].nocs, scale, &mut dgrad);
            }
            if !dgrad.is_finite() {
                return Err(Error::Divergence { step, message: "non-finite discriminator gradient".into() });
            }
            let lr = cfg.lr_disc * rate;
            let grads = dgrad.groups().map(|g| g.1);
            self.opt_disc.step(self.disc.groups_mut().into_iter().map(|g| g.1).collect(), &grads, lr);
        }

        let mut wm = cfg.weights;
        wm.0[1] = 0.0;
        if !cfg.adversarial {
            wm.0[2] = 0.0;
        }
        let mut mgrad = self.model.zeros_like();
        let mut scratch = self.disc.zeros_like();
        let mut sums = [0.0; 7];
        for (pass, &i) in passes.iter().zip(batch) {
            let t = loss_from_pass(
                &self.model,
                &self.disc,
                &self.samples[i],
                pass,
                &wm,
                GradRequest { model: true, discriminator: false },
                scale,
                &mut mgrad,
                &mut scratch,
            )?;
            for (acc, v) in sums.iter_mut().zip(t.as_array()) {
                *acc += v * scale;
            }
        }
        let terms = LossTerms::from_array(sums);
        let total = terms.total(&cfg.weights);
        if !total.is_finite() || !mgrad.is_finite() {
            return Err(Error::Divergence { step, message: format!("non-finite loss or gradient (total {total})") });
        }
        let lr = cfg.lr_main * rate;
        let grads = mgrad.groups().map(|g| g.1);
        self.opt_model.step(self.model.groups_mut().into_iter().map(|g| g.1).collect(), &grads, lr);
        let rec = LossRecord { step, terms, total };
        self.history.push(rec);
        Ok(rec)
    }

    /// One pass over the shuffled training set.
    pub fn run_epoch(&mut self) -> Result<()> {
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut self.rng);
        for batch in order.chunks(self.config.batch_size) {
            self.step(batch)?;
        }
        self.epoch += 1;
        Ok(())
    }

    pub fn into_output(self) -> TrainOutput {
        TrainOutput { model: self.model, disc: self.disc, history: self.history }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: SddrModel,
    pub disc: Discriminator,
    pub history: Vec<LossRecord>,
}

/// Rows of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoNgph,
    NoDecouple,
    NoAdversarial,
    DirectRegression,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Full, Variant::NoNgph, Variant::NoDecouple, Variant::NoAdversarial, Variant::DirectRegression];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoNgph => "no_ngph",
            Variant::NoDecouple => "no_decouple",
            Variant::NoAdversarial => "no_adversarial",
            Variant::DirectRegression => "direct_regression",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Switches on this variant's flag; `Full` leaves both configs unchanged.
    pub fn apply(self, model: &mut ModelConfig, train: &mut TrainConfig) {
        match self {
            Variant::Full => {}
            Variant::NoNgph => model.no_ngph = true,
            Variant::NoDecouple => model.no_decouple = true,
            Variant::NoAdversarial => train.adversarial = false,
            Variant::DirectRegression => model.direct_regression = true,
        }
    }
}

/// Trains for `config.epochs` epochs.
pub fn train(ds: &Dataset, model_config: ModelConfig, config: TrainConfig) -> Result<TrainOutput> {
    let mut t = Trainer::new(ds, model_config, config)?;
    for _ in 0..t.config.epochs {
        t.run_epoch()?;
    }
    Ok(t.into_output())
}

/// Loss history as CSV with header `step,l_z,l_d,l_g,l_corr,l_cd,l_entro,l_reg,total`.
pub fn history_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("step,l_z,l_d,l_g,l_corr,l_cd,l_entro,l_reg,total\n");
    for r in history {
        out.push_str(&r.step.to_string());
        for v in r.terms.as_array().iter().chain([&r.total]) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// Closed-loop estimate for one instance: reconstruct depth and NOCS, align
/// them, and size the box from the deformed prior.
pub fn predict_pose(model: &SddrModel, prior: &DMatrix<f64>, s: &Sample) -> Result<(Pose, Vector3<f64>, f64)> {
    let pred = model.forward(prior, s)?;
    let n = s.n_points();
    let cloud = PointCloud::new(
        (0..n)
            .map(|i| {
                let z = pred.depth[i];
                Vector3::new(z * s.rays[(i, 0)], z * s.rays[(i, 1)], z)
            })
            .collect(),
    )?;
    let nocs = PointCloud::new((0..n).map(|i| Vector3::new(pred.nocs[(i, 0)], pred.nocs[(i, 1)], pred.nocs[(i, 2)])).collect())?;
    let pose = umeyama_align(&nocs, &cloud)?;
    let prior_pts = ShapePrior::new((0..prior.nrows()).map(|i| Vector3::new(prior[(i, 0)], prior[(i, 1)], prior[(i, 2)])).collect())?;
    let size = estimate_size(&prior_pts, &DeformField::from_matrix(&pred.deform_nocs)?)? * pose.scale;
    let depth_l1 = (&pred.depth - &s.depth).abs().mean();
    Ok((pose, size, depth_l1))
}

/// Held-out quality of a model.
#[derive(Clone, Debug)]
pub struct ModelEval {
    pub report: EvalReport,
    pub detections: Vec<Detection>,
    /// The detections in prediction-file form.
    pub predictions: Vec<SavedPrediction>,
    /// Mean absolute error of the assembled depth, in meters, over all pixels.
    pub depth_l1: f64,
    /// Mean chamfer distance between the deformed prior and the instance model.
    pub chamfer: f64,
    /// Instances whose alignment failed; they stay unmatched.
    pub failures: Vec<u64>,
}

pub fn evaluate_model(model: &SddrModel, ds: &Dataset) -> Result<ModelEval> {
    let (samples, sample_prior, priors) = prepare(ds)?;
    let mut dets = Vec::with_capacity(samples.len());
    let mut preds = Vec::with_capacity(samples.len());
    let mut failures = Vec::new();
    let (mut depth_sum, mut depth_n) = (0.0, 0usize);
    let mut chamfer = 0.0;
    for (s, &c) in samples.iter().zip(&sample_prior) {
        let prior = &priors[c];
        let pred = model.forward(prior, s)?;
        depth_sum += (&pred.depth - &s.depth).abs().sum();
        depth_n += s.n_points();
        let deformed = prior + &pred.deform_nocs;
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| Vector3::new(m[(i, 0)], m[(i, 1)], m[(i, 2)])).collect();
        chamfer += chamfer_distance(&PointCloud::new(rows(&deformed))?, &PointCloud::new(rows(&s.model))?);
        let det = predict_pose(model, prior, s).and_then(|(pose, size, _)| {
            let p = SavedPrediction { id: s.id, category: s.category.clone(), pose, size };
            Ok((p.detection()?, p))
        });
        match det {
            Ok((d, p)) => {
                dets.push(d);
                preds.push(p);
            }
            Err(_) => failures.push(s.id),
        }
    }
    let gts = ds.ground_truths()?;
    let report = evaluate(&dets, &gts, &CurveGrids::default());
    let n = samples.len().max(1) as f64;
    Ok(ModelEval {
        report,
        detections: dets,
        predictions: preds,
        depth_l1: if depth_n > 0 { depth_sum / depth_n as f64 } else { 0.0 },
        chamfer: chamfer / n,
        failures,
    })
}
