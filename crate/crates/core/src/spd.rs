//! Shape-prior deformation, decoupled depth assembly, size recovery and the
//! loss terms used to train the reconstruction network.
//!
//! A deformed prior `P + D` is a set of `N_m` canonical points; an assign
//! field `M` (`N × N_m`, rows on the probability simplex) turns it into one
//! point per observation: `M · (P + D)`.

use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Tolerance on row sums of an assign field.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Category mean shape in NOCS space, inside the unit cube centered at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapePrior {
    points: Vec<Vector3<f64>>,
}

impl ShapePrior {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        let cloud = PointCloud::new(points)?;
        let extent = cloud.extent();
        if extent.max() > 1.0 + 1e-6 {
            return Err(Error::invalid(format!(
                "shape prior exceeds the unit cube (max extent {})",
                extent.max()
            )));
        }
        Ok(Self {
            points: cloud.into_points(),
        })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points as an `N_m × 3` matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.points)
    }
}

/// Per-prior-point offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformField {
    offsets: Vec<Vector3<f64>>,
}

impl DeformField {
    pub fn new(offsets: Vec<Vector3<f64>>) -> Result<Self> {
        if !offsets.iter().all(|p| p.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("deform field contains non-finite offsets"));
        }
        Ok(Self { offsets })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            offsets: vec![Vector3::zeros(); n],
        }
    }

    /// From an `N_m × 3` matrix.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.ncols() != 3 {
            return Err(Error::invalid(format!("deform matrix must have 3 columns, got {}", m.ncols())));
        }
        Self::new(matrix_to_rows(m))
    }

    pub fn offsets(&self) -> &[Vector3<f64>] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Soft correspondence from observations to prior points; every row is a
/// probability distribution over the `N_m` prior points.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignField {
    weights: DMatrix<f64>,
}

impl AssignField {
    pub fn new(weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::invalid("assign field must be non-empty"));
        }
        for (i, row) in weights.row_iter().enumerate() {
            if row.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
                return Err(Error::invalid(format!("assign field row {i} has a negative or non-finite entry")));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::invalid(format!("assign field row {i} sums to {sum}")));
            }
        }
        Ok(Self { weights })
    }

    /// Row-wise softmax of unnormalized logits.
    pub fn from_logits(logits: &DMatrix<f64>) -> Result<Self> {
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("assign logits contain non-finite values"));
        }
        Self::new(row_softmax(logits))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            weights: DMatrix::identity(n, n),
        }
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn nrows(&self) -> usize {
        self.weights.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.weights.ncols()
    }
}

/// Row-wise softmax, shifted by the row max.
pub fn row_softmax(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Object depth split into relative shape points and one shared depth offset.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoupledDepth {
    pub shape_points: PointCloud,
    pub depth_translation: f64,
}

/// The seven balance weights of the composite loss, in the order
/// `L_z, L_d, L_g, L_corr, L_cd, L_entro, L_reg`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights(pub [f64; 7]);

impl LossWeights {
    pub const NAMES: [&'static str; 7] = ["l_z", "l_d", "l_g", "l_corr", "l_cd", "l_entro", "l_reg"];

    pub fn new(gammas: [f64; 7]) -> Result<Self> {
        if gammas.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::invalid(format!("loss weights must be non-negative, got {gammas:?}")));
        }
        Ok(Self(gammas))
    }

    /// Published balance terms: 1.0, 0.1, 0.1, 1.0, 5.0, 0.0001, 0.01.
    pub const fn published() -> Self {
        Self([1.0, 0.1, 0.1, 1.0, 5.0, 0.0001, 0.01])
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::published()
    }
}

/// Values of the seven loss terms for one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub l_z: f64,
    pub l_d: f64,
    pub l_g: f64,
    pub l_corr: f64,
    pub l_cd: f64,
    pub l_entro: f64,
    pub l_reg: f64,
}

impl LossTerms {
    pub fn as_array(&self) -> [f64; 7] {
        [self.l_z, self.l_d, self.l_g, self.l_corr, self.l_cd, self.l_entro, self.l_reg]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            l_z: a[0],
            l_d: a[1],
            l_g: a[2],
            l_corr: a[3],
            l_cd: a[4],
            l_entro: a[5],
            l_reg: a[6],
        }
    }

    pub fn total(&self, w: &LossWeights) -> f64 {
        total_loss(self, w)
    }
}

/// `M · (P + D)`.
pub fn spd_apply(prior: &ShapePrior, deform: &DeformField, assign: &AssignField) -> Result<PointCloud> {
    let n_m = prior.len();
    if deform.len() != n_m {
        return Err(Error::invalid(format!("deform field has {} rows, prior has {n_m}", deform.len())));
    }
    if assign.ncols() != n_m {
        return Err(Error::invalid(format!("assign field has {} columns, prior has {n_m}", assign.ncols())));
    }
    let deformed: Vec<Vector3<f64>> = prior.points.iter().zip(&deform.offsets).map(|(p, d)| p + d).collect();
    let out = assign.weights() * rows_to_matrix(&deformed);
    PointCloud::new(matrix_to_rows(&out))
}

/// Per-point depths `z_i + Z_t` from decoupled shape points and depth offset.
pub fn assemble_depth(dec: &DecoupledDepth) -> Vec<f64> {
    dec.shape_points
        .points()
        .iter()
        .map(|p| p.z + dec.depth_translation)
        .collect()
}

/// Symmetric chamfer distance: mean squared nearest-neighbor distance from
/// each side, summed. Exact brute force.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> f64 {
    one_sided_chamfer(a.points(), b.points()) + one_sided_chamfer(b.points(), a.points())
}

fn one_sided_chamfer(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> f64 {
    let sum: f64 = from
        .iter()
        .map(|p| to.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min))
        .sum();
    sum / from.len() as f64
}

/// Per-axis extent (max - min) of the deformed prior `P + D`.
pub fn estimate_size(prior: &ShapePrior, deform: &DeformField) -> Result<Vector3<f64>> {
    if deform.len() != prior.len() {
        return Err(Error::invalid(format!(
            "deform field has {} rows, prior has {}",
            deform.len(),
            prior.len()
        )));
    }
    let pts = prior.points.iter().zip(&deform.offsets).map(|(p, d)| p + d).collect();
    Ok(PointCloud::new(pts)?.extent())
}

/// Mean absolute depth error over sampled pixels.
pub fn loss_depth_l1(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_same_len(pred.len(), gt.len())?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64)
}

/// Least-squares discriminator objective: `mean((D(real) - 1)²) + mean(D(fake)²)`.
pub fn loss_adv_discriminator(score_real: &[f64], score_fake: &[f64]) -> Result<f64> {
    if score_real.is_empty() || score_fake.is_empty() {
        return Err(Error::invalid("discriminator scores must be non-empty"));
    }
    Ok(mean(score_real.iter().map(|s| (s - 1.0).powi(2))) + mean(score_fake.iter().map(|s| s * s)))
}

/// Least-squares generator objective: `mean((D(fake) - 1)²)`.
pub fn loss_adv_generator(score_fake: &[f64]) -> Result<f64> {
    if score_fake.is_empty() {
        return Err(Error::invalid("discriminator scores must be non-empty"));
    }
    Ok(mean(score_fake.iter().map(|s| (s - 1.0).powi(2))))
}

/// Transition point of the smooth-L1 correspondence loss.
pub const SMOOTH_L1_BETA: f64 = 1.0;

pub fn smooth_l1(d: f64) -> f64 {
    let a = d.abs();
    if a < SMOOTH_L1_BETA {
        0.5 * d * d / SMOOTH_L1_BETA
    } else {
        a - 0.5 * SMOOTH_L1_BETA
    }
}

/// Derivative of [`smooth_l1`].
pub fn smooth_l1_grad(d: f64) -> f64 {
    if d.abs() < SMOOTH_L1_BETA {
        d / SMOOTH_L1_BETA
    } else {
        d.signum()
    }
}

/// Smooth-L1 between corresponding points, averaged over points and coordinates.
pub fn loss_corr(pred: &PointCloud, gt: &PointCloud) -> Result<f64> {
    check_same_len(pred.len(), gt.len())?;
    let sum: f64 = pred
        .points()
        .iter()
        .zip(gt.points())
        .map(|(p, g)| (p - g).iter().map(|d| smooth_l1(*d)).sum::<f64>())
        .sum();
    Ok(sum / (3 * pred.len()) as f64)
}

/// Mean over rows of `-ln(max row entry)`; zero exactly on one-hot rows.
pub fn loss_entropy(assign: &AssignField) -> f64 {
    let w = assign.weights();
    w.row_iter().map(|row| -row.max().ln()).sum::<f64>() / w.nrows() as f64
}

/// Mean of squared entries.
pub fn loss_reg(weights: &DMatrix<f64>) -> f64 {
    if weights.is_empty() {
        return 0.0;
    }
    weights.iter().map(|w| w * w).sum::<f64>() / weights.len() as f64
}

pub fn total_loss(terms: &LossTerms, w: &LossWeights) -> f64 {
    terms.as_array().iter().zip(w.0.iter()).map(|(l, g)| l * g).sum()
}

fn mean(it: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = it.len() as f64;
    it.sum::<f64>() / n
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::invalid("empty input"));
    }
    Ok(())
}

pub(crate) fn rows_to_matrix(rows: &[Vector3<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j])
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vector3<f64>> {
    (0..m.nrows()).map(|i| Vector3::new(m[(i, 0)], m[(i, 1)], m[(i, 2)])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
            .collect()
    }

    fn random_assign(rng: &mut ChaCha8Rng, n: usize, n_m: usize) -> AssignField {
        let logits = DMatrix::from_fn(n, n_m, |_, _| rng.random_range(-3.0..3.0));
        AssignField::from_logits(&logits).unwrap()
    }

    #[test]
    fn spd_identity_assignment_returns_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prior = ShapePrior::new(random_cloud(&mut rng, 6)).unwrap();
        let out = spd_apply(&prior, &DeformField::zeros(6), &AssignField::identity(6)).unwrap();
        assert_eq!(out.points(), prior.points());
    }

    #[test]
    fn spd_identity_with_constant_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let prior = ShapePrior::new(random_cloud(&mut rng, 5)).unwrap();
        let c = Vector3::new(0.1, -0.2, 0.05);
        let deform = DeformField::new(vec![c; 5]).unwrap();
        let out = spd_apply(&prior, &deform, &AssignField::identity(5)).unwrap();
        for (o, p) in out.points().iter().zip(prior.points()) {
            assert_abs_diff_eq!((o - (p + c)).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn spd_matches_dense_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, n_m) = (17, 11);
        let prior = ShapePrior::new(random_cloud(&mut rng, n_m)).unwrap();
        let deform = DeformField::new(random_cloud(&mut rng, n_m).into_iter().map(|v| v * 0.2).collect()).unwrap();
        let assign = random_assign(&mut rng, n, n_m);
        let out = spd_apply(&prior, &deform, &assign).unwrap();
        for i in 0..n {
            for c in 0..3 {
                let mut acc = 0.0;
                for j in 0..n_m {
                    acc += assign.weights()[(i, j)] * (prior.points()[j][c] + deform.offsets()[j][c]);
                }
                assert_abs_diff_eq!(out.points()[i][c], acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn spd_dimension_mismatch() {
        let prior = ShapePrior::new(vec![Vector3::zeros(); 4]).unwrap();
        assert!(spd_apply(&prior, &DeformField::zeros(3), &AssignField::identity(4)).is_err());
        assert!(spd_apply(&prior, &DeformField::zeros(4), &AssignField::identity(3)).is_err());
    }

    #[test]
    fn assign_field_validation() {
        assert!(AssignField::new(DMatrix::from_row_slice(1, 2, &[0.5, 0.6])).is_err());
        assert!(AssignField::new(DMatrix::from_row_slice(1, 2, &[1.5, -0.5])).is_err());
        let a = AssignField::from_logits(&DMatrix::zeros(3, 4)).unwrap();
        assert!(a.weights().iter().all(|w| (*w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn shape_prior_rejects_oversized_cloud() {
        assert!(ShapePrior::new(vec![Vector3::zeros(), Vector3::new(1.1, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn assemble_depth_examples() {
        let sp = PointCloud::from_rows(&[[0.3, 0.1, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        let z = assemble_depth(&DecoupledDepth { shape_points: sp, depth_translation: 1.5 });
        assert_eq!(z, vec![1.5, 1.5]);

        let sp = PointCloud::from_rows(&[[0.0, 0.0, -0.1], [0.0, 0.0, 0.0], [0.0, 0.0, 0.1]]).unwrap();
        let z = assemble_depth(&DecoupledDepth { shape_points: sp, depth_translation: 2.0 });
        for (a, b) in z.iter().zip([1.9, 2.0, 2.1]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn assemble_depth_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = random_cloud(&mut rng, 40);
        let zt = rng.random_range(0.5..3.0);
        let dec = DecoupledDepth { shape_points: PointCloud::new(pts.clone()).unwrap(), depth_translation: zt };
        let z = assemble_depth(&dec);
        let mut expected = Vec::new();
        for p in &pts {
            expected.push(p[2] + zt);
        }
        assert_eq!(z, expected);
    }

    #[test]
    fn chamfer_examples() {
        let a = PointCloud::from_rows(&[[0.0, 0.0, 0.0]]).unwrap();
        let b = PointCloud::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(chamfer_distance(&a, &b), 2.0);
        assert_eq!(chamfer_distance(&a, &a), 0.0);
    }

    #[test]
    fn chamfer_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_cloud(&mut rng, 64);
        let b = random_cloud(&mut rng, 64);
        // Independent oracle: full distance table, then row and column minima.
        let mut table = vec![vec![0.0; 64]; 64];
        for i in 0..64 {
            for j in 0..64 {
                let d = a[i] - b[j];
                table[i][j] = d.x * d.x + d.y * d.y + d.z * d.z;
            }
        }
        let mut ab = 0.0;
        for row in &table {
            ab += row.iter().cloned().fold(f64::MAX, f64::min);
        }
        let mut ba = 0.0;
        for j in 0..64 {
            ba += (0..64).map(|i| table[i][j]).fold(f64::MAX, f64::min);
        }
        let oracle = ab / 64.0 + ba / 64.0;
        let got = chamfer_distance(&PointCloud::new(a).unwrap(), &PointCloud::new(b).unwrap());
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-12);
    }

    #[test]
    fn estimate_size_examples() {
        let corners: Vec<_> = (0..8)
            .map(|k| Vector3::new(
                if k & 1 == 0 { -0.5 } else { 0.5 },
                if k & 2 == 0 { -0.5 } else { 0.5 },
                if k & 4 == 0 { -0.5 } else { 0.5 },
            ))
            .collect();
        let prior = ShapePrior::new(corners.clone()).unwrap();
        assert_eq!(estimate_size(&prior, &DeformField::zeros(8)).unwrap(), Vector3::new(1.0, 1.0, 1.0));
        let doubling = DeformField::new(corners).unwrap();
        assert_eq!(estimate_size(&prior, &doubling).unwrap(), Vector3::new(2.0, 2.0, 2.0));
    }

    #[test]
    fn estimate_size_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let prior = ShapePrior::new(random_cloud(&mut rng, 30)).unwrap();
        let deform = DeformField::new(random_cloud(&mut rng, 30).into_iter().map(|v| v * 0.1).collect()).unwrap();
        let size = estimate_size(&prior, &deform).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..30).map(|j| prior.points()[j][c] + deform.offsets()[j][c]).collect();
            let mut lo = vals[0];
            let mut hi = vals[0];
            for v in &vals {
                if *v < lo {
                    lo = *v;
                }
                if *v > hi {
                    hi = *v;
                }
            }
            assert_eq!(size[c], hi - lo);
        }
    }

    #[test]
    fn depth_l1_examples() {
        assert_eq!(loss_depth_l1(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(loss_depth_l1(&[1.1, 1.9], &[1.0, 2.0]).unwrap(), 0.1, epsilon = 1e-12);
        assert!(loss_depth_l1(&[1.0], &[1.0, 2.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..25).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..25).map(|_| rng.random()).collect();
        let mut acc = 0.0;
        for i in 0..25 {
            acc += if a[i] > b[i] { a[i] - b[i] } else { b[i] - a[i] };
        }
        assert_abs_diff_eq!(loss_depth_l1(&a, &b).unwrap(), acc / 25.0, epsilon = 1e-15);
    }

    #[test]
    fn adversarial_examples() {
        assert_eq!(loss_adv_discriminator(&[1.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(loss_adv_discriminator(&[0.5], &[0.5]).unwrap(), 0.5);
        assert_eq!(loss_adv_generator(&[1.0]).unwrap(), 0.0);
        assert_eq!(loss_adv_generator(&[0.0]).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let real: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..2.0)).collect();
        let fake: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..2.0)).collect();
        let mut dr = 0.0;
        let mut df = 0.0;
        let mut g = 0.0;
        for i in 0..9 {
            dr += (real[i] - 1.0) * (real[i] - 1.0);
            df += fake[i] * fake[i];
            g += (fake[i] - 1.0) * (fake[i] - 1.0);
        }
        assert_abs_diff_eq!(loss_adv_discriminator(&real, &fake).unwrap(), dr / 9.0 + df / 9.0, epsilon = 1e-14);
        assert_abs_diff_eq!(loss_adv_generator(&fake).unwrap(), g / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn corr_examples() {
        let a = PointCloud::from_rows(&[[0.1, 0.2, 0.3]]).unwrap();
        assert_eq!(loss_corr(&a, &a).unwrap(), 0.0);
        let b = PointCloud::from_rows(&[[0.6, 0.2, 0.3]]).unwrap();
        assert_abs_diff_eq!(loss_corr(&b, &a).unwrap(), 0.125 / 3.0, epsilon = 1e-15);
        // Past the transition the penalty is linear.
        let c = PointCloud::from_rows(&[[2.1, 0.2, 0.3]]).unwrap();
        assert_abs_diff_eq!(loss_corr(&c, &a).unwrap(), 1.5 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn corr_seeded_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_cloud(&mut rng, 20);
        let b: Vec<_> = random_cloud(&mut rng, 20).into_iter().map(|v| v * 4.0).collect();
        let mut acc = 0.0;
        for i in 0..20 {
            for c in 0..3 {
                let d: f64 = a[i][c] - b[i][c];
                acc += if d.abs() < 1.0 { 0.5 * d * d } else { d.abs() - 0.5 };
            }
        }
        let got = loss_corr(&PointCloud::new(a).unwrap(), &PointCloud::new(b).unwrap()).unwrap();
        assert_abs_diff_eq!(got, acc / 60.0, epsilon = 1e-14);
    }

    #[test]
    fn entropy_and_reg_examples() {
        let one_hot = AssignField::identity(4);
        assert_eq!(loss_entropy(&one_hot), 0.0);
        let uniform = AssignField::from_logits(&DMatrix::zeros(3, 4)).unwrap();
        assert_abs_diff_eq!(loss_entropy(&uniform), 4f64.ln(), epsilon = 1e-15);

        assert_eq!(loss_reg(&DMatrix::zeros(3, 4)), 0.0);
        let one_hot = AssignField::new(DMatrix::from_fn(3, 5, |i, j| if i == j { 1.0 } else { 0.0 })).unwrap();
        assert_abs_diff_eq!(loss_reg(one_hot.weights()), 1.0 / 5.0, epsilon = 1e-15);
    }

    #[test]
    fn entropy_and_reg_seeded_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_assign(&mut rng, 7, 5);
        let w = a.weights();
        let mut ent = 0.0;
        let mut sq = 0.0;
        for i in 0..7 {
            let mut m = 0.0f64;
            for j in 0..5 {
                m = m.max(w[(i, j)]);
                sq += w[(i, j)] * w[(i, j)];
            }
            ent -= m.ln();
        }
        assert_abs_diff_eq!(loss_entropy(&a), ent / 7.0, epsilon = 1e-14);
        assert_abs_diff_eq!(loss_reg(w), sq / 35.0, epsilon = 1e-15);
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::published();
        assert_eq!(total_loss(&LossTerms::default(), &w), 0.0);
        let ones = LossTerms::from_array([1.0; 7]);
        assert_abs_diff_eq!(total_loss(&ones, &w), 7.2101, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t: [f64; 7] = std::array::from_fn(|_| rng.random());
        let g: [f64; 7] = std::array::from_fn(|_| rng.random());
        let mut dot = 0.0;
        for k in 0..7 {
            dot += t[k] * g[k];
        }
        assert_abs_diff_eq!(total_loss(&LossTerms::from_array(t), &LossWeights::new(g).unwrap()), dot, epsilon = 1e-14);
    }

    #[test]
    fn loss_weights_reject_negative() {
        assert!(LossWeights::new([1.0, -0.1, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }
}
