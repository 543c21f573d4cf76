//! Spectral preprocessing and the PLS baseline.

mod cv;
mod mapping;
pub mod model_io;
mod pls;
mod preprocess;

pub use cv::{fit_fold, select_components_cv, CvResult};
pub use mapping::{mean_belly_spectrum, pls_chemical_map, spectra_matrix, Spectrum};
pub use pls::{fit_pls, ikpls, PlsFit, PlsModel};
pub use preprocess::{column_mean, savgol, snv, Preprocessing, SavgolParams};
