//! Category-level object pose estimation from RGB observations: global
//! position hints, shape-prior deformation into object-level depth and NOCS,
//! similarity alignment, and the AP evaluation protocol, together with a
//! synthetic scene oracle and a small trainable reconstruction network.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod learn;
pub mod spd;
pub mod synth;

pub use error::{Error, Result};
pub use eval::{Detection, EvalReport, GroundTruth, Metric, OrientedBox3D};
pub use geometry::{BBox2D, CameraIntrinsics, DepthPatch, Ngph, PointCloud, Pose};
pub use spd::{AssignField, DecoupledDepth, DeformField, LossTerms, LossWeights, ShapePrior};
