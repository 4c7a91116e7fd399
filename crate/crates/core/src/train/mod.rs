//! Training: configuration, the Adam optimizer, scalar metrics, model
//! assembly, and the optimization loop.

mod adam;
mod config;
mod metrics;
mod model;
mod trainer;

pub use adam::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use config::TrainConfig;
pub use metrics::{depth_pearson_loss, psnr, ssim, PEARSON_VAR_FLOOR};
pub use model::{
    build_context, evaluate, pick_reference, render_blend, render_view, shade_and_render,
    EvalReport, EvalRow, Model, Rendered, ViewContext, BACKGROUND,
};
pub use trainer::{StepLog, Trainer};
