//! Hierarchical appearance decomposition: a per-image global embedding, a
//! triplane of local embeddings built from back-projected static pixels, and
//! a fusion head that turns them plus each Gaussian's intrinsic feature into
//! spherical harmonics coefficients.

pub mod aabb;
pub mod context;
pub mod triplane;

pub use aabb::{Aabb, DEFAULT_CROP_RATIO};
pub use context::{
    blend_appearance, encode_global, fuse_to_sh, AppearanceContext, GLOBAL_DIM, INTRINSIC_DIM, LOCAL_DIM,
};
pub use triplane::{
    backproject_masked, sample_local_embedding, splat_triplane_color, triplane_encode, PointCloudRGB,
    TriplaneColor, TriplaneFeatures, ACCUM_CUTOFF, COLOR_CHANNELS, ENCODER_IN_CHANNELS, FEATURE_CHANNELS,
};
