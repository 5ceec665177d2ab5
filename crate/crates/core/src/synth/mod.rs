//! Synthetic source/target pairs: a liver-scale closed surface, a smooth
//! deformation, a camera-facing partial crop, noise and a rigid motion, with
//! provenance-based ground truth.

mod crop;
pub mod dataset;
mod deform;
mod mesh;
mod pair;

pub use crop::{add_noise, crop_front_surface, visibility_crop, visibility_crop_along};
pub use dataset::{generate_dataset, load_split, DatasetConfig, Manifest, ManifestEntry, SampleMeta, Split};
pub use deform::{simulate_deformation, DeformationField, DeformationParams, SMOOTHNESS_LIMIT};
pub use mesh::{frequency_for, generate_liver_mesh, geodesic_sphere, BlobShape, SurfaceMesh};
pub use pair::{make_sample_pair, make_sample_pair_with, PairConfig, SamplePair};
