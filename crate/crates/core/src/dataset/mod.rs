//! Dataset and checkpoint persistence.
//!
//! Layout of a generated scene directory:
//!   images/NNN.png    8-bit rgb, round half up
//!   depth/NNN.pgm     16-bit P5, millimeters
//!   gt_masks/NNN.png  8-bit grayscale, 255 = static
//!   cameras.json      intrinsics and 4x4 row-major world-to-camera
//!   points.txt        "x y z r g b" per line
//!   spec.json         echo of the generating spec

mod checkpoint;
mod io;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use io::{
    load_dataset, train_test_split, view_paths, write_dataset, Dataset, depth_from_pgm, depth_to_pgm,
    gray_from_png_bytes, image_from_rgb8, image_to_rgb8,
};
