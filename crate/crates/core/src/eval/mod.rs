//! Detection matching and the average-precision protocol.
//!
//! AP at a threshold is recall over ground-truth instances: the fraction of
//! GT objects whose greedily matched detection satisfies the criterion.

mod iou;
mod report;

use std::collections::BTreeMap;

pub use iou::{intersection_volume, iou3d, iou3d_symmetric_y, OrientedBox3D};
pub use report::{read_report, write_curves, write_report, ReportRecord};

use crate::geometry::{rotation_error_deg, translation_error_m, Pose};

/// Label used for the across-category mean in reports and curves.
pub const MEAN_LABEL: &str = "mean";

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    /// Image the detection belongs to; matching never crosses scenes.
    pub scene: u64,
    pub category: String,
    pub bbox3d: OrientedBox3D,
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub scene: u64,
    pub category: String,
    pub bbox3d: OrientedBox3D,
    pub pose: Pose,
    pub symmetric_about_y: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchedPair {
    pub det: usize,
    pub gt: usize,
    pub iou: f64,
    pub rot_err_deg: f64,
    pub trans_err_m: f64,
}

/// One-to-one pairing of detections with ground truths.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Matching {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_dets: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
    gt_categories: Vec<String>,
}

impl Matching {
    /// Category of every ground truth, indexed like the input list.
    pub fn gt_categories(&self) -> &[String] {
        &self.gt_categories
    }

    fn n_gt(&self, category: Option<&str>) -> usize {
        match category {
            None => self.gt_categories.len(),
            Some(c) => self.gt_categories.iter().filter(|g| *g == c).count(),
        }
    }

    /// Distinct GT categories in sorted order.
    pub fn categories(&self) -> Vec<String> {
        let mut c = self.gt_categories.clone();
        c.sort();
        c.dedup();
        c
    }
}

/// Greedy matching by descending 3D IoU within (scene, category). Ties,
/// including the all-zero-IoU case, go to the smaller translation error.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth]) -> Matching {
    let mut groups: BTreeMap<(u64, &str), (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        groups.entry((d.scene, d.category.as_str())).or_default().0.push(i);
    }
    for (j, g) in gts.iter().enumerate() {
        groups.entry((g.scene, g.category.as_str())).or_default().1.push(j);
    }

    let mut pairs = Vec::new();
    let mut det_used = vec![false; dets.len()];
    let mut gt_used = vec![false; gts.len()];
    for (det_idx, gt_idx) in groups.values() {
        let mut cands: Vec<MatchedPair> = Vec::with_capacity(det_idx.len() * gt_idx.len());
        for &i in det_idx {
            for &j in gt_idx {
                cands.push(score_pair(i, &dets[i], j, &gts[j]));
            }
        }
        cands.sort_by(|a, b| {
            b.iou
                .total_cmp(&a.iou)
                .then(a.trans_err_m.total_cmp(&b.trans_err_m))
                .then(a.det.cmp(&b.det))
                .then(a.gt.cmp(&b.gt))
        });
        for c in cands {
            if !det_used[c.det] && !gt_used[c.gt] {
                det_used[c.det] = true;
                gt_used[c.gt] = true;
                pairs.push(c);
            }
        }
    }
    pairs.sort_by_key(|p| p.gt);
    Matching {
        pairs,
        unmatched_dets: (0..dets.len()).filter(|&i| !det_used[i]).collect(),
        unmatched_gts: (0..gts.len()).filter(|&j| !gt_used[j]).collect(),
        gt_categories: gts.iter().map(|g| g.category.clone()).collect(),
    }
}

fn score_pair(i: usize, det: &Detection, j: usize, gt: &GroundTruth) -> MatchedPair {
    let iou = if gt.symmetric_about_y {
        iou3d_symmetric_y(&det.bbox3d, &gt.bbox3d)
    } else {
        iou3d(&det.bbox3d, &gt.bbox3d)
    };
    MatchedPair {
        det: i,
        gt: j,
        iou,
        rot_err_deg: rotation_error_deg(&det.pose, &gt.pose, gt.symmetric_about_y),
        trans_err_m: translation_error_m(&det.pose, &gt.pose),
    }
}

/// A pass/fail rule applied to a matched pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Criterion {
    /// IoU strictly above the threshold.
    Iou(f64),
    /// Translation error (meters) strictly below the threshold.
    Translation(f64),
    /// Rotation error (degrees) strictly below the threshold.
    Rotation(f64),
    /// Both rotation (degrees) and translation (meters) below their thresholds.
    RotationTranslation(f64, f64),
}

impl Criterion {
    pub fn accepts(&self, p: &MatchedPair) -> bool {
        match *self {
            Criterion::Iou(t) => p.iou > t,
            Criterion::Translation(t) => p.trans_err_m < t,
            Criterion::Rotation(t) => p.rot_err_deg < t,
            Criterion::RotationTranslation(r, t) => p.rot_err_deg < r && p.trans_err_m < t,
        }
    }
}

/// The six reported metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Iou25,
    Iou50,
    Iou75,
    Trans10cm,
    Rot10deg,
    Rot10Trans10,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Iou25,
        Metric::Iou50,
        Metric::Iou75,
        Metric::Trans10cm,
        Metric::Rot10deg,
        Metric::Rot10Trans10,
    ];

    pub fn criterion(self) -> Criterion {
        match self {
            Metric::Iou25 => Criterion::Iou(0.25),
            Metric::Iou50 => Criterion::Iou(0.5),
            Metric::Iou75 => Criterion::Iou(0.75),
            Metric::Trans10cm => Criterion::Translation(0.10),
            Metric::Rot10deg => Criterion::Rotation(10.0),
            Metric::Rot10Trans10 => Criterion::RotationTranslation(10.0, 0.10),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Iou25 => "IoU25",
            Metric::Iou50 => "IoU50",
            Metric::Iou75 => "IoU75",
            Metric::Trans10cm => "10cm",
            Metric::Rot10deg => "10deg",
            Metric::Rot10Trans10 => "10deg10cm",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// AP for one category (or all GTs when `category` is `None`). `None` when
/// there is no ground truth to recall.
pub fn ap_at(matching: &Matching, criterion: Criterion, category: Option<&str>) -> Option<f64> {
    let n_gt = matching.n_gt(category);
    if n_gt == 0 {
        return None;
    }
    let hits = matching
        .pairs
        .iter()
        .filter(|p| category.is_none_or(|c| matching.gt_categories[p.gt] == c))
        .filter(|p| criterion.accepts(p))
        .count();
    Some(hits as f64 / n_gt as f64)
}

/// Mean of per-category APs, skipping categories without ground truth.
pub fn mean_ap(matching: &Matching, criterion: Criterion) -> Option<f64> {
    let vals: Vec<f64> = matching
        .categories()
        .iter()
        .filter_map(|c| ap_at(matching, criterion, Some(c)))
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Threshold grids for the AP curves.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveGrids {
    pub iou: Vec<f64>,
    pub rotation_deg: Vec<f64>,
    pub translation_m: Vec<f64>,
}

impl Default for CurveGrids {
    fn default() -> Self {
        Self {
            iou: (0..=100).map(|k| k as f64 / 100.0).collect(),
            rotation_deg: (0..=60).map(f64::from).collect(),
            translation_m: (0..=20).map(|k| k as f64 * 0.005).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveKind {
    Iou,
    Rotation,
    Translation,
}

impl CurveKind {
    pub const ALL: [CurveKind; 3] = [CurveKind::Iou, CurveKind::Rotation, CurveKind::Translation];

    pub fn name(self) -> &'static str {
        match self {
            CurveKind::Iou => "iou",
            CurveKind::Rotation => "rotation",
            CurveKind::Translation => "translation",
        }
    }

    fn criterion(self, t: f64) -> Criterion {
        match self {
            CurveKind::Iou => Criterion::Iou(t),
            CurveKind::Rotation => Criterion::Rotation(t),
            CurveKind::Translation => Criterion::Translation(t),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub category: String,
    pub ap: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Curves {
    pub iou: Vec<CurvePoint>,
    pub rotation: Vec<CurvePoint>,
    pub translation: Vec<CurvePoint>,
}

impl Curves {
    pub fn get(&self, kind: CurveKind) -> &[CurvePoint] {
        match kind {
            CurveKind::Iou => &self.iou,
            CurveKind::Rotation => &self.rotation,
            CurveKind::Translation => &self.translation,
        }
    }

    fn get_mut(&mut self, kind: CurveKind) -> &mut Vec<CurvePoint> {
        match kind {
            CurveKind::Iou => &mut self.iou,
            CurveKind::Rotation => &mut self.rotation,
            CurveKind::Translation => &mut self.translation,
        }
    }
}

/// AP sampled on each grid, per category and for the mean.
pub fn ap_curves(matching: &Matching, grids: &CurveGrids) -> Curves {
    let cats = matching.categories();
    let mut curves = Curves::default();
    for kind in CurveKind::ALL {
        let grid = match kind {
            CurveKind::Iou => &grids.iou,
            CurveKind::Rotation => &grids.rotation_deg,
            CurveKind::Translation => &grids.translation_m,
        };
        let out = curves.get_mut(kind);
        for &t in grid {
            let crit = kind.criterion(t);
            for c in &cats {
                out.push(CurvePoint { threshold: t, category: c.clone(), ap: ap_at(matching, crit, Some(c)) });
            }
            out.push(CurvePoint { threshold: t, category: MEAN_LABEL.into(), ap: mean_ap(matching, crit) });
        }
    }
    curves
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryReport {
    pub category: String,
    pub n_gt: usize,
    pub ap: [Option<f64>; 6],
}

/// Per-category and mean AP at the six metrics, plus curves.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub categories: Vec<CategoryReport>,
    pub mean: [Option<f64>; 6],
    pub curves: Curves,
}

impl EvalReport {
    pub fn mean_ap(&self, metric: Metric) -> Option<f64> {
        self.mean[metric.index()]
    }

    pub fn category_ap(&self, category: &str, metric: Metric) -> Option<f64> {
        self.categories
            .iter()
            .find(|c| c.category == category)
            .and_then(|c| c.ap[metric.index()])
    }
}

pub fn build_report(matching: &Matching, grids: &CurveGrids) -> EvalReport {
    let categories = matching
        .categories()
        .into_iter()
        .map(|c| {
            let ap = Metric::ALL.map(|m| ap_at(matching, m.criterion(), Some(&c)));
            CategoryReport { n_gt: matching.n_gt(Some(&c)), category: c, ap }
        })
        .collect();
    EvalReport {
        categories,
        mean: Metric::ALL.map(|m| mean_ap(matching, m.criterion())),
        curves: ap_curves(matching, grids),
    }
}

/// Matches and reports in one call.
pub fn evaluate(dets: &[Detection], gts: &[GroundTruth], grids: &CurveGrids) -> EvalReport {
    build_report(&match_detections(dets, gts), grids)
}
