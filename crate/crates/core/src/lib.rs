//! Chemical maps from hyperspectral cubes.
//!
//! Two routes turn a cube into a per-pixel concentration map: a pixel-wise
//! PLS model calibrated on mean spectra ([`chemo`]) and a valid-convolution
//! U-Net with a spectral stem, trained end to end from bulk references
//! ([`diffnet`], [`loss`], [`train`]). [`geostat`] scores the spatial
//! structure of a map through its nugget, and [`synth`] builds phantoms with
//! known pixel fields to check both routes against ground truth.

pub mod chemo;
pub mod diffnet;
pub mod error;
pub mod geostat;
pub mod hsidata;
pub mod loss;
pub mod map;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod split;
pub mod study;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
