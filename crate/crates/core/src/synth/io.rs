//! Line-oriented dataset and prediction files.
//!
//! A dataset file is JSON Lines: one `header` record, one `prior` record per
//! category, then one `instance` record per object. Floats are written in
//! shortest round-trip form so `read(write(x)) == x` bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{CategorySpec, Dataset, SceneInstance, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{Detection, OrientedBox3D};
use crate::geometry::{BBox2D, CameraIntrinsics, DepthPatch, PointCloud, Pose};
use crate::spd::ShapePrior;

const DATASET_FORMAT: &str = "catpose-dataset";
const PREDICTION_FORMAT: &str = "catpose-predictions";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PoseRecord {
    rotation: [f64; 9],
    translation: [f64; 3],
    scale: f64,
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        Self { rotation: p.rotation_row_major(), translation: p.translation.into(), scale: p.scale }
    }
}

impl PoseRecord {
    fn to_pose(&self) -> Result<Pose> {
        Pose::new(
            Matrix3::from_row_slice(&self.rotation),
            Vector3::from(self.translation),
            self.scale,
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DatasetRecord {
    Header {
        format: String,
        version: u32,
        seed: u64,
        config: SynthConfig,
        categories: Vec<CategorySpec>,
        n_instances: usize,
    },
    Prior {
        category: String,
        points: Vec<[f64; 3]>,
    },
    Instance(Box<InstanceRecord>),
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    id: u64,
    category: String,
    symmetric_about_y: bool,
    pose: PoseRecord,
    size: [f64; 3],
    intrinsics: CameraIntrinsics,
    bbox: [f64; 4],
    pixels: Vec<[f64; 2]>,
    depths: Vec<f64>,
    nocs: Vec<[f64; 3]>,
    model: Vec<[f64; 3]>,
}

fn rows(cloud: &PointCloud) -> Vec<[f64; 3]> {
    cloud.points().iter().map(|p| [p.x, p.y, p.z]).collect()
}

impl From<&SceneInstance> for InstanceRecord {
    fn from(i: &SceneInstance) -> Self {
        Self {
            id: i.id,
            category: i.category.clone(),
            symmetric_about_y: i.symmetric_about_y,
            pose: (&i.gt_pose).into(),
            size: i.gt_size.into(),
            intrinsics: i.intrinsics,
            bbox: [i.bbox.l, i.bbox.t, i.bbox.r, i.bbox.b],
            pixels: i.depth_patch.pixels().to_vec(),
            depths: i.depth_patch.depths().to_vec(),
            nocs: rows(&i.observed_nocs),
            model: rows(&i.gt_nocs),
        }
    }
}

impl InstanceRecord {
    fn into_instance(self) -> Result<SceneInstance> {
        self.intrinsics.validate()?;
        let [l, t, r, b] = self.bbox;
        let observed_nocs = PointCloud::from_rows(&self.nocs)?;
        if observed_nocs.len() != self.pixels.len() {
            return Err(Error::invalid(format!(
                "{} observed NOCS points for {} pixels",
                observed_nocs.len(),
                self.pixels.len()
            )));
        }
        Ok(SceneInstance {
            id: self.id,
            category: self.category,
            symmetric_about_y: self.symmetric_about_y,
            gt_pose: self.pose.to_pose()?,
            gt_size: Vector3::from(self.size),
            intrinsics: self.intrinsics,
            bbox: BBox2D::new(l, t, r, b)?,
            depth_patch: DepthPatch::new(self.pixels, self.depths)?,
            observed_nocs,
            gt_nocs: PointCloud::from_rows(&self.model)?,
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_line<T: Serialize>(w: &mut impl Write, path: &Path, rec: &T) -> Result<()> {
    let line = serde_json::to_string(rec).map_err(|e| Error::invalid(format!("cannot serialize record: {e}")))?;
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))
}

/// Non-empty lines with their 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((k + 1, line));
        }
    }
    Ok(out)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { source_name: path.display().to_string(), line, message: message.into() }
}

fn parse<T: DeserializeOwned>(path: &Path, line: usize, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| parse_err(path, line, e.to_string()))
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    write_line(
        &mut w,
        path,
        &DatasetRecord::Header {
            format: DATASET_FORMAT.into(),
            version: VERSION,
            seed: ds.seed,
            config: ds.config.clone(),
            categories: ds.categories.clone(),
            n_instances: ds.instances.len(),
        },
    )?;
    for (spec, prior) in ds.categories.iter().zip(&ds.priors) {
        let points = prior.points().iter().map(|p| [p.x, p.y, p.z]).collect();
        write_line(&mut w, path, &DatasetRecord::Prior { category: spec.name.clone(), points })?;
    }
    for inst in &ds.instances {
        write_line(&mut w, path, &DatasetRecord::Instance(Box::new(inst.into())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let lines = read_lines(path)?;
    let Some((first_no, first)) = lines.first() else {
        return Err(parse_err(path, 1, "empty file, expected a header record"));
    };
    let DatasetRecord::Header { format, version, seed, config, categories, n_instances } =
        parse(path, *first_no, first)?
    else {
        return Err(parse_err(path, *first_no, "first record must be the header"));
    };
    if format != DATASET_FORMAT || version != VERSION {
        return Err(parse_err(path, *first_no, format!("unsupported format {format} v{version}")));
    }
    let mut priors: Vec<Option<ShapePrior>> = vec![None; categories.len()];
    let mut instances = Vec::with_capacity(n_instances);
    for (no, text) in &lines[1..] {
        let with_ctx = |e: Error| parse_err(path, *no, e.to_string());
        match parse(path, *no, text)? {
            DatasetRecord::Header { .. } => return Err(parse_err(path, *no, "duplicate header")),
            DatasetRecord::Prior { category, points } => {
                let k = categories
                    .iter()
                    .position(|c| c.name == category)
                    .ok_or_else(|| parse_err(path, *no, format!("prior for unknown category {category}")))?;
                let pts = points.into_iter().map(Vector3::from).collect();
                priors[k] = Some(ShapePrior::new(pts).map_err(with_ctx)?);
            }
            DatasetRecord::Instance(rec) => {
                if !categories.iter().any(|c| c.name == rec.category) {
                    return Err(parse_err(path, *no, format!("unknown category {}", rec.category)));
                }
                instances.push(rec.into_instance().map_err(with_ctx)?);
            }
        }
    }
    if instances.len() != n_instances {
        return Err(parse_err(
            path,
            lines.last().map_or(1, |l| l.0),
            format!("header announces {n_instances} instances, found {}", instances.len()),
        ));
    }
    let priors = priors
        .into_iter()
        .zip(&categories)
        .map(|(p, c)| p.ok_or_else(|| parse_err(path, *first_no, format!("missing prior for {}", c.name))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { seed, config, categories, priors, instances })
}

/// One predicted object, keyed by the id of the instance it was computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: u64,
    pub category: String,
    pub pose: Pose,
    pub size: Vector3<f64>,
}

impl Prediction {
    pub fn detection(&self) -> Result<Detection> {
        Ok(Detection {
            scene: self.id,
            category: self.category.clone(),
            bbox3d: OrientedBox3D::new(self.pose, self.size)?,
            pose: self.pose,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum PredictionRecord {
    Header { format: String, version: u32 },
    Prediction { id: u64, category: String, pose: PoseRecord, size: [f64; 3] },
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut w = create(path)?;
    write_line(&mut w, path, &PredictionRecord::Header { format: PREDICTION_FORMAT.into(), version: VERSION })?;
    for p in preds {
        write_line(
            &mut w,
            path,
            &PredictionRecord::Prediction {
                id: p.id,
                category: p.category.clone(),
                pose: (&p.pose).into(),
                size: p.size.into(),
            },
        )?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (k, (no, text)) in read_lines(path)?.into_iter().enumerate() {
        match parse(path, no, &text)? {
            PredictionRecord::Header { format, version } => {
                if k != 0 || format != PREDICTION_FORMAT || version != VERSION {
                    return Err(parse_err(path, no, format!("unexpected header {format} v{version}")));
                }
            }
            PredictionRecord::Prediction { id, category, pose, size } => {
                let pose = pose.to_pose().map_err(|e| parse_err(path, no, e.to_string()))?;
                if size.iter().any(|s| !(*s > 0.0)) {
                    return Err(parse_err(path, no, format!("non-positive size {size:?}")));
                }
                out.push(Prediction { id, category, pose, size: Vector3::from(size) });
            }
        }
    }
    Ok(out)
}

/// ASCII PLY with vertex positions only.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    write!(
        w,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    )
    .map_err(io)?;
    for p in cloud.points() {
        writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, standard_categories};

    fn small() -> Dataset {
        let cfg = SynthConfig { n_dense: 1024, n_p: 16, n_m: 16, ..SynthConfig::default() };
        generate_dataset(&standard_categories(), 2, 4, &cfg).unwrap()
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let ds = small();
        write_dataset(&path, &ds).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn empty_dataset_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        let ds = generate_dataset(&standard_categories(), 0, 1, &SynthConfig::default()).unwrap();
        write_dataset(&path, &ds).unwrap();
        let back = read_dataset(&path).unwrap();
        assert!(back.instances.is_empty());
        assert_eq!(back, ds);
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        write_dataset(&path, &small()).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"kind\": \"instance\", \"id\": oops}\n");
        std::fs::write(&path, text).unwrap();
        match read_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2 + 6 + 12),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let preds: Vec<Prediction> = small()
            .instances
            .iter()
            .map(|i| Prediction { id: i.id, category: i.category.clone(), pose: i.gt_pose, size: i.gt_size })
            .collect();
        write_predictions(&path, &preds).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), preds);
    }
}
