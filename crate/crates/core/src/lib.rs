//! Partial-surface point cloud matching and rigid registration.
//!
//! The crate covers the full pipeline: synthetic pre-/intra-operative surface
//! pairs ([`synth`]), a handcrafted FPFH baseline ([`fpfh`]), a learnable
//! attention matcher with dual-softmax confidences ([`net`]) trained by
//! reverse-mode differentiation ([`autodiff`], [`train`]), RANSAC + ICP
//! registration ([`registration`]) and the evaluation metrics ([`eval`]).

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod fpfh;
pub mod geom;
pub mod net;
pub mod ply;
pub mod registration;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use geom::{
    apply_rigid, random_rigid, CorrespondenceSet, NeighborIndex, PointCloud, RigidTransform,
};
