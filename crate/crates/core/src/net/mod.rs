//! The learnable matcher.
//!
//! Fixed local geometry per point → two-layer encoder → self/cross attention
//! on farthest-point super-points → propagation back to every point → a
//! descriptor head and a clamped visibility head. Descriptors are compared
//! by inner product and normalized with a dual softmax; matches are mutual
//! maxima of the confidence matrix among source points scoring above 0.9.

pub mod features;
mod model;
mod params;

pub use features::{farthest_point_sampling, geometric_features, PreparedCloud, FEATURES_PER_SCALE};
pub use model::{
    apply_visibility_mask, build_forward, cross_attention, decode_visibility, dual_softmax, encode_local_features,
    match_pair, match_prepared, mutual_nn_select, prepare, score_matrix, self_attention, ForwardVars, MatchOutput,
    VisibilityScores, VISIBILITY_THRESHOLD,
};
pub use params::{
    read_checkpoint, write_checkpoint, AttentionParams, GradientSet, NetConfig, NetworkParams, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
