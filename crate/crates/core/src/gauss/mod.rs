//! Gaussian scene representation and the differentiable splatting renderer.

pub mod camera;
pub mod cloud;
pub mod math;
pub mod project;
pub mod rasterize;
pub mod sh;

pub use camera::Camera;
pub use cloud::{densify_and_prune, DensifyKind, DensifyOpts, DensifySource, DensifyStats, GaussianCloud};
pub use project::{project, project_backward, Projected, ProjectedGrad};
pub use rasterize::{
    prepare_splats, rasterize_backward, render_reference, render_tiled, RasterGrads, RasterizeOp,
    RenderGrad, RenderOutput, Splat, SplatParams,
};
