//! Transient handling: a small parsing network predicts a per-pixel
//! visibility mask from the reference image, the photometric loss is
//! computed on mask-multiplied images, and a regularizer keeps the mask
//! from collapsing to zero.

pub mod loss;
pub mod parsing;

pub use loss::{
    mask_regularizer, masked_photometric_loss, ssim_index, PHOTO_L1_WEIGHT, SSIM_C1, SSIM_C2,
    SSIM_SIGMA, SSIM_WINDOW,
};
pub use parsing::{ParsingNet, ParsingOutput, VisibilityMask};
