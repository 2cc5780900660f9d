//! Multi-manifold learning from streaming data.
//!
//! The batch phase clusters samples by the similarity of their local tangent
//! planes, learns an exact Isomap embedding per cluster and stitches the
//! per-cluster embeddings into one global space. The streaming phase maps each
//! new sample onto every learned manifold with a cheap out-of-sample
//! extension and keeps the manifold whose image lies closest to that
//! manifold's mean.
//!
//! ```no_run
//! use manistream::{datasets, pipeline};
//!
//! let scene = datasets::Scene::standard("swiss_roll_plane").unwrap();
//! let cloud = datasets::gen_scene(&scene, 7).unwrap();
//! let (batch, stream) = datasets::split_batch_stream(&cloud, 2000, 7).unwrap();
//! let fitted = pipeline::fit_batch(&batch, &pipeline::FitParams::default()).unwrap();
//! let result = pipeline::map_stream(&stream, &fitted).unwrap();
//! println!("{} samples mapped", result.samples.len());
//! ```

pub mod datasets;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod linalg;
pub mod msvd;
pub mod pipeline;
pub mod stitching;
pub mod stream_map;
pub mod tangent_cluster;

pub use datasets::{PointCloud, Scene};
pub use error::{Error, Result};
pub use geometry::{ManifoldModel, NeighborGraph};
pub use msvd::{SvProfile, TangentBasis};
pub use pipeline::{FitParams, FittedModel, StreamResult, StreamSample};
pub use stitching::{GlobalAlignment, SupportSet};
pub use tangent_cluster::{ClusterAssignment, SimMode};
