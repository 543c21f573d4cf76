use nalgebra::{DMatrix, DVector};

use super::preprocess::Preprocessing;
use crate::error::{Error, Result};

/// Relative size of the deflated cross-covariance below which no further
/// component can be extracted.
const RANK_TOL: f64 = 1e-10;

/// Output of Improved Kernel PLS Algorithm 1 on centered data.
#[derive(Debug, Clone)]
pub struct PlsFit {
    /// `p x A` weights.
    pub weights: DMatrix<f64>,
    /// `p x A` rotations; scores are `X * rotations`.
    pub rotations: DMatrix<f64>,
    /// `p x A` X loadings.
    pub loadings: DMatrix<f64>,
    /// `A` y loadings.
    pub y_loadings: DVector<f64>,
    /// Cumulative regression vectors; entry `a - 1` uses `a` components.
    pub coefficients: Vec<DVector<f64>>,
}

impl PlsFit {
    pub fn n_components(&self) -> usize {
        self.coefficients.len()
    }

    pub fn scores(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x * &self.rotations
    }
}

/// Improved Kernel PLS Algorithm 1 (single response) on centered `x`, `y`.
///
/// Only `X^T y` is deflated; scores are formed from `X` directly, so `X^T X`
/// is never built.
pub fn ikpls(x: &DMatrix<f64>, y: &DVector<f64>, components: usize) -> Result<PlsFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::shape(format!("{n} rows in X but {} responses", y.len())));
    }
    if components == 0 {
        return Err(Error::invalid("need at least one component"));
    }
    if components > p || components + 1 > n {
        return Err(Error::invalid(format!(
            "{components} components exceed min(n - 1, p) = {}",
            p.min(n.saturating_sub(1))
        )));
    }
    let mut xy = x.transpose() * y;
    let xy0 = xy.norm();
    if !(xy0 > 0.0) {
        return Err(Error::RankExhausted(0));
    }
    let mut weights = DMatrix::zeros(p, components);
    let mut rotations = DMatrix::zeros(p, components);
    let mut loadings = DMatrix::zeros(p, components);
    let mut y_loadings = DVector::zeros(components);
    let mut coefficients = Vec::with_capacity(components);
    let mut beta = DVector::zeros(p);
    for a in 0..components {
        let norm = xy.norm();
        if norm <= RANK_TOL * xy0 {
            return Err(Error::RankExhausted(a));
        }
        let w = &xy / norm;
        let mut r = w.clone();
        for j in 0..a {
            let proj = loadings.column(j).dot(&w);
            r -= rotations.column(j) * proj;
        }
        let t = x * &r;
        let tt = t.dot(&t);
        if !(tt > 0.0) {
            return Err(Error::RankExhausted(a));
        }
        let load = x.transpose() * &t / tt;
        let q = r.dot(&xy) / tt;
        xy -= &load * (q * tt);
        beta += &r * q;
        weights.set_column(a, &w);
        rotations.set_column(a, &r);
        loadings.set_column(a, &load);
        y_loadings[a] = q;
        coefficients.push(beta.clone());
    }
    Ok(PlsFit { weights, rotations, loadings, y_loadings, coefficients })
}

/// Calibrated PLS model: preprocessing, centering statistics and the
/// regression vectors for every component count up to `max_components`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlsModel {
    pub raw_bands: usize,
    pub preprocessing: Preprocessing,
    pub x_mean: Vec<f64>,
    pub y_mean: f64,
    /// Entry `a - 1` holds the regression vector with `a` components.
    pub coefficients: Vec<Vec<f64>>,
    /// Component count used by [`PlsModel::predict`].
    pub n_components: usize,
}

impl PlsModel {
    pub fn max_components(&self) -> usize {
        self.coefficients.len()
    }

    pub fn features(&self) -> usize {
        self.x_mean.len()
    }

    /// Returns a copy predicting with `a` components.
    pub fn with_components(&self, a: usize) -> Result<PlsModel> {
        if a == 0 || a > self.max_components() {
            return Err(Error::invalid(format!("model holds 1..={} components", self.max_components())));
        }
        Ok(PlsModel { n_components: a, ..self.clone() })
    }

    /// Prediction for an already preprocessed spectrum.
    pub fn predict_preprocessed(&self, features: &[f64], components: usize) -> f64 {
        let b = &self.coefficients[components - 1];
        self.y_mean
            + features
                .iter()
                .zip(&self.x_mean)
                .zip(b)
                .map(|((x, m), c)| (x - m) * c)
                .sum::<f64>()
    }

    /// Predictions for raw spectra (`n x raw_bands`).
    pub fn predict(&self, spectra: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.predict_with(spectra, self.n_components)
    }

    pub fn predict_with(&self, spectra: &DMatrix<f64>, components: usize) -> Result<Vec<f64>> {
        if spectra.ncols() != self.raw_bands {
            return Err(Error::shape(format!(
                "model expects {} bands, got {}",
                self.raw_bands,
                spectra.ncols()
            )));
        }
        if components == 0 || components > self.max_components() {
            return Err(Error::invalid(format!("{components} components not in model")));
        }
        let x = self.preprocessing.apply(spectra)?;
        Ok(x.row_iter()
            .map(|row| {
                let row: Vec<f64> = row.iter().copied().collect();
                self.predict_preprocessed(&row, components)
            })
            .collect())
    }
}

/// Centers preprocessed features and response with statistics from the
/// given rows and fits `components` components.
pub fn fit_pls(
    spectra: &DMatrix<f64>,
    y: &[f64],
    components: usize,
    preprocessing: Preprocessing,
) -> Result<PlsModel> {
    if spectra.nrows() != y.len() {
        return Err(Error::shape(format!("{} spectra but {} responses", spectra.nrows(), y.len())));
    }
    let x = preprocessing.apply(spectra)?;
    let x_mean = x.row_mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
    let fit = ikpls(&xc, &yc, components)?;
    Ok(PlsModel {
        raw_bands: spectra.ncols(),
        preprocessing,
        x_mean: x_mean.iter().copied().collect(),
        y_mean,
        coefficients: fit.coefficients.iter().map(|b| b.iter().copied().collect()).collect(),
        n_components: components,
    })
}
