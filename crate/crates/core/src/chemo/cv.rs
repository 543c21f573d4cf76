use nalgebra::DMatrix;

use super::pls::{fit_pls, PlsModel};
use super::preprocess::Preprocessing;
use crate::error::{Error, Result};

/// Cross-validated component selection.
#[derive(Debug, Clone)]
pub struct CvResult {
    /// Component count minimizing the mean validation RMSE; ties go to fewer.
    pub best_components: usize,
    /// Mean over folds of the validation RMSE, entry `a - 1` for `a` components.
    pub rmse_curve: Vec<f64>,
    /// `fold_rmse[f][a - 1]`.
    pub fold_rmse: Vec<Vec<f64>>,
    /// Refit on every row with `best_components`.
    pub model: PlsModel,
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

fn fold_indices(folds: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    let (val, train): (Vec<usize>, Vec<usize>) = (0..folds.len()).partition(|&i| folds[i] == fold);
    (train, val)
}

/// Model for one fold, calibrated only on rows outside it.
pub fn fit_fold(
    spectra: &DMatrix<f64>,
    y: &[f64],
    folds: &[usize],
    fold: usize,
    max_components: usize,
    preprocessing: Preprocessing,
) -> Result<PlsModel> {
    let (train, _) = fold_indices(folds, fold);
    let ys: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    fit_pls(&rows(spectra, &train), &ys, max_components, preprocessing).map_err(|e| match e {
        Error::RankExhausted(a) => Error::invalid(format!(
            "fold {fold} supports only {a} components, {max_components} requested"
        )),
        other => other,
    })
}

/// Validation RMSE per component count for every fold, the fold mean, and
/// a full-data refit with the winning count.
pub fn select_components_cv(
    spectra: &DMatrix<f64>,
    y: &[f64],
    folds: &[usize],
    max_components: usize,
    preprocessing: Preprocessing,
) -> Result<CvResult> {
    if spectra.nrows() != y.len() || folds.len() != y.len() {
        return Err(Error::shape("spectra, responses and fold labels differ in length"));
    }
    if max_components == 0 {
        return Err(Error::invalid("need at least one component"));
    }
    let n_folds = folds.iter().copied().max().map_or(0, |m| m + 1);
    if n_folds < 2 {
        return Err(Error::invalid("need at least two folds"));
    }
    let mut fold_rmse = Vec::with_capacity(n_folds);
    for fold in 0..n_folds {
        let (_, val) = fold_indices(folds, fold);
        if val.is_empty() {
            return Err(Error::invalid(format!("fold {fold} is empty")));
        }
        let model = fit_fold(spectra, y, folds, fold, max_components, preprocessing)?;
        let x_val = rows(spectra, &val);
        let mut curve = Vec::with_capacity(max_components);
        for a in 1..=max_components {
            let pred = model.predict_with(&x_val, a)?;
            let mse = val.iter().zip(&pred).map(|(&i, p)| (y[i] - p).powi(2)).sum::<f64>() / val.len() as f64;
            curve.push(mse.sqrt());
        }
        fold_rmse.push(curve);
    }
    let rmse_curve: Vec<f64> = (0..max_components)
        .map(|a| fold_rmse.iter().map(|c| c[a]).sum::<f64>() / n_folds as f64)
        .collect();
    let best = rmse_curve
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) })
        .0
        + 1;
    let model = fit_pls(spectra, y, best, preprocessing)?;
    Ok(CvResult { best_components: best, rmse_curve, fold_rmse, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemo::pls::tests::nipals;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(seed: u64) -> (DMatrix<f64>, Vec<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 20;
        let x = DMatrix::from_fn(n, 6, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..n).map(|i| 2.0 * x[(i, 0)] - x[(i, 3)] + rng.random_range(-0.3..0.3)).collect();
        let folds: Vec<usize> = (0..n).map(|i| i % 4).collect();
        (x, y, folds)
    }

    #[test]
    fn curve_matches_naive_refit_oracle() {
        let (x, y, folds) = problem(2);
        let res = select_components_cv(&x, &y, &folds, 5, Preprocessing::IDENTITY).unwrap();
        for f in 0..4 {
            let train: Vec<usize> = (0..20).filter(|&i| folds[i] != f).collect();
            let val: Vec<usize> = (0..20).filter(|&i| folds[i] == f).collect();
            let xt = rows(&x, &train);
            let xm = xt.row_mean();
            let ym = train.iter().map(|&i| y[i]).sum::<f64>() / train.len() as f64;
            let mut xc = xt.clone();
            for mut r in xc.row_iter_mut() {
                r -= &xm;
            }
            let yc = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i] - ym));
            for a in 1..=5 {
                let (_, coefs) = nipals(&xc, &yc, a);
                let b = &coefs[a - 1];
                let mse = val
                    .iter()
                    .map(|&i| {
                        let pred = ym + (0..6).map(|j| (x[(i, j)] - xm[j]) * b[j]).sum::<f64>();
                        (y[i] - pred).powi(2)
                    })
                    .sum::<f64>()
                    / val.len() as f64;
                assert!((res.fold_rmse[f][a - 1] - mse.sqrt()).abs() < 1e-10);
            }
        }
        let min = res.rmse_curve.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(res.rmse_curve[res.best_components - 1], min);
        assert_eq!(res.model.n_components, res.best_components);
    }

    #[test]
    fn single_latent_direction_selects_one() {
        // X = u v^T plus small isotropic noise; y = 5u without noise.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 25;
        let center = |v: Vec<f64>| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.into_iter().map(|x| x - m).collect::<Vec<f64>>()
        };
        let u = center((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let mut x = DMatrix::from_fn(n, 6, |i, j| match j {
            0 => u[i],
            1 => -2.0 * u[i],
            2 => 0.5 * u[i],
            _ => 0.0,
        });
        for v in x.iter_mut() {
            *v += rng.random_range(-1e-3..1e-3);
        }
        let y: Vec<f64> = u.iter().map(|v| 5.0 * v).collect();
        let folds: Vec<usize> = (0..n).map(|i| i % 5).collect();
        let res = select_components_cv(&x, &y, &folds, 4, Preprocessing::IDENTITY).unwrap();
        assert_eq!(res.best_components, 1, "{:?}", res.rmse_curve);
    }

    #[test]
    fn folds_never_see_their_own_rows() {
        let (x, y, folds) = problem(3);
        let before = fit_fold(&x, &y, &folds, 0, 3, Preprocessing::IDENTITY).unwrap();
        let mut shifted = x.clone();
        for i in (0..20).filter(|&i| folds[i] == 0) {
            for j in 0..6 {
                shifted[(i, j)] += 1000.0;
            }
        }
        let after = fit_fold(&shifted, &y, &folds, 0, 3, Preprocessing::IDENTITY).unwrap();
        assert_eq!(before, after);
        let other = fit_fold(&shifted, &y, &folds, 1, 3, Preprocessing::IDENTITY).unwrap();
        assert_ne!(other, fit_fold(&x, &y, &folds, 1, 3, Preprocessing::IDENTITY).unwrap());
    }

    #[test]
    fn infeasible_components_error() {
        let (x, y, folds) = problem(4);
        assert!(select_components_cv(&x, &y, &folds, 7, Preprocessing::IDENTITY).is_err());
        let one_fold = vec![0; 20];
        assert!(select_components_cv(&x, &y, &one_fold, 2, Preprocessing::IDENTITY).is_err());
    }
}
