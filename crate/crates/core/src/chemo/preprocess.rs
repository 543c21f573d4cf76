use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard normal variate: each row to mean 0 and sample standard deviation 1.
pub fn snv(spectra: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = spectra.ncols();
    if p < 2 {
        return Err(Error::invalid("SNV needs at least two variables"));
    }
    let mut out = spectra.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let mean = row.sum() / p as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (p - 1) as f64;
        let std = var.sqrt();
        if !(std > f64::EPSILON * mean.abs().max(1.0)) {
            return Err(Error::Degenerate(format!("spectrum {i} has zero spread")));
        }
        row.apply(|v| *v = (*v - mean) / std);
    }
    Ok(out)
}

/// Savitzky-Golay filter settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SavgolParams {
    pub window: usize,
    pub poly: usize,
    pub deriv: usize,
}

impl Default for SavgolParams {
    fn default() -> Self {
        Self { window: 7, poly: 2, deriv: 2 }
    }
}

impl SavgolParams {
    fn validate(&self) -> Result<()> {
        if self.window.is_multiple_of(2) || self.window < 3 {
            return Err(Error::invalid(format!("window {} must be odd and >= 3", self.window)));
        }
        if self.poly >= self.window {
            return Err(Error::invalid("polynomial order must be below the window length"));
        }
        if self.deriv > self.poly {
            return Err(Error::invalid("derivative order exceeds polynomial order"));
        }
        Ok(())
    }

    /// Least-squares polynomial derivative weights at unit spacing, ordered
    /// from the left end of the window.
    pub fn coefficients(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let half = (self.window / 2) as f64;
        let vander = DMatrix::from_fn(self.window, self.poly + 1, |j, i| (j as f64 - half).powi(i as i32));
        let gram = vander.transpose() * &vander;
        let inv = gram
            .try_inverse()
            .ok_or_else(|| Error::Singular("Savitzky-Golay normal equations".into()))?;
        let pinv = inv * vander.transpose();
        let factorial: f64 = (1..=self.deriv).map(|k| k as f64).product();
        Ok(pinv.row(self.deriv).iter().map(|c| c * factorial).collect())
    }
}

/// Valid-mode Savitzky-Golay filtering along each row; output has
/// `p - window + 1` columns.
pub fn savgol(spectra: &DMatrix<f64>, params: SavgolParams) -> Result<DMatrix<f64>> {
    let coeffs = params.coefficients()?;
    let (n, p) = spectra.shape();
    if p < params.window {
        return Err(Error::invalid(format!("{p} variables shorter than window {}", params.window)));
    }
    let out_p = p - params.window + 1;
    Ok(DMatrix::from_fn(n, out_p, |i, j| {
        coeffs.iter().enumerate().map(|(k, c)| c * spectra[(i, j + k)]).sum()
    }))
}

/// Row-wise preprocessing applied identically to calibration and prediction
/// spectra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub snv: bool,
    pub savgol: Option<SavgolParams>,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self { snv: true, savgol: Some(SavgolParams::default()) }
    }
}

impl Preprocessing {
    pub const IDENTITY: Preprocessing = Preprocessing { snv: false, savgol: None };

    pub fn apply(&self, spectra: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let x = if self.snv { snv(spectra)? } else { spectra.clone() };
        match self.savgol {
            Some(params) => savgol(&x, params),
            None => Ok(x),
        }
    }

    pub fn output_len(&self, bands: usize) -> usize {
        match self.savgol {
            Some(p) => bands.saturating_sub(p.window - 1),
            None => bands,
        }
    }

    /// Single-spectrum path used for pixel-wise prediction.
    pub fn apply_one(&self, spectrum: &[f64]) -> Result<Vec<f64>> {
        let row = DMatrix::from_row_slice(1, spectrum.len(), spectrum);
        Ok(self.apply(&row)?.row(0).iter().copied().collect())
    }
}

/// Column means.
pub fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    x.row_mean().transpose()
}
