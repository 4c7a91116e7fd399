//! Deterministic synthetic benchmark scenes: ray-traced textured primitives
//! under several appearance variants, with optional image-space occluder
//! sprites and exact ground-truth depth and visibility masks.

mod primitives;
mod render;
mod spec;

pub use primitives::SceneModel;
pub use render::{generate_points, generate_view, view_camera, ViewData};
pub use spec::SceneSpec;
