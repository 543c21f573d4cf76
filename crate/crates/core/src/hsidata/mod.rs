//! Hyperspectral cube and mask data model.
//!
//! Cubes are stored band-major `(band, row, col)` in `f32`, the precision of
//! the on-disk format. Everything downstream computes in `f64`.

mod augment;
mod cube;
mod geometry;
pub mod io;
mod manifest;
mod mask;
mod pad;

pub use augment::{apply_flips, random_flip, FlipDecision};
pub use cube::{HsiCube, Space};
pub use geometry::{compute_geometry, AxisPlan, Geometry};
pub use manifest::{read_manifest, write_manifest, SampleRecord};
pub use mask::{erode_mask, Mask};
pub use pad::{pad_two_stage, prepare_unet_mask, stage1_plan, PadOptions, StagePlan};
