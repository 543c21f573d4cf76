//! End-to-end comparison of pixel-wise PLS and the U-Net ensemble on a set
//! of synthetic phantoms with known fields.

use crate::chemo::{mean_belly_spectrum, pls_chemical_map, select_components_cv, spectra_matrix, CvResult, Preprocessing};
use crate::diffnet::NetParams;
use crate::error::{Error, Result};
use crate::geostat::{nugget, smooth_chemical_map, spatial_stats, SpatialStats};
use crate::loss::{masked_prediction, oobl};
use crate::map::ChemicalMap;
use crate::report::{report_metrics, MetricsReport, Prediction};
use crate::split::{duplex_split, pca_reduce};
use crate::synth::{field_on_map_grid, field_rmse, make_batch, unmix_cube, BatchConfig, Phantom};
use crate::train::{derive_seed, ensemble_predict, train_fold, FoldResult, Sample, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub batch: BatchConfig,
    pub train: TrainConfig,
    /// DUPLEX subsets; the last one is the test set, the others are folds.
    #[serde(default = "default_subsets")]
    pub subsets: usize,
    #[serde(default = "default_variance")]
    pub pca_variance: f64,
    #[serde(default = "default_components")]
    pub pls_max_components: usize,
    #[serde(default)]
    pub preprocessing: Preprocessing,
    #[serde(default = "default_epsilon")]
    pub reflectance_floor: f64,
    /// Smoothing widths tried, in increasing order, for the smoothing
    /// counter-experiment.
    #[serde(default = "default_sigmas")]
    pub smoothing_sigmas: Vec<f64>,
}

fn default_subsets() -> usize {
    6
}
fn default_variance() -> f64 {
    0.99
}
fn default_components() -> usize {
    6
}
fn default_epsilon() -> f64 {
    1e-6
}
/// 0.5 px growing by 25 % per step up to about 400 px.
fn default_sigmas() -> Vec<f64> {
    (0..31).map(|i| 0.5 * 1.25f64.powi(i)).collect()
}

/// Per-test-phantom outcome.
#[derive(Debug, Clone)]
pub struct PhantomResult {
    pub index: usize,
    pub reference: f64,
    pub unet_belly: f64,
    pub pls_mean_belly: f64,
    pub pls_pixel_belly: f64,
    pub oracle_belly: f64,
    pub unet_field_rmse: f64,
    pub pls_field_rmse: f64,
    pub unet_stats: SpatialStats,
    pub pls_stats: SpatialStats,
    pub unet_oobl: f64,
    /// Smallest tried sigma bringing the PLS nugget to the U-Net's, if any.
    pub smoothing_sigma: Option<f64>,
    pub smoothed_pls_field_rmse: Option<f64>,
    pub unet_map: ChemicalMap,
    pub pls_map: ChemicalMap,
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub assignment: Vec<usize>,
    pub pls: CvResult,
    pub folds: Vec<FoldResult>,
    pub phantoms: Vec<PhantomResult>,
    pub unet_report: MetricsReport,
    pub pls_mean_report: MetricsReport,
    pub pls_pixel_report: MetricsReport,
    pub oracle_report: MetricsReport,
}

impl StudyOutcome {
    pub fn mean_of(&self, f: impl Fn(&PhantomResult) -> f64) -> f64 {
        self.phantoms.iter().map(f).sum::<f64>() / self.phantoms.len() as f64
    }

    pub fn members(&self) -> Vec<NetParams> {
        self.folds.iter().map(|f| f.params.clone()).collect()
    }
}

/// Converts phantoms to absorbance samples.
pub fn phantom_samples(phantoms: &[Phantom], floor: f64) -> Result<Vec<Sample>> {
    phantoms
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(Sample {
                id: format!("phantom{i:03}"),
                cube: p.cube.to_absorbance(floor)?,
                mask: p.mask.clone(),
                reference: p.reference,
            })
        })
        .collect()
}

/// DUPLEX assignment of samples from their mean spectra in PCA space.
pub fn duplex_assignment(samples: &[Sample], subsets: usize, variance: f64) -> Result<Vec<usize>> {
    let spectra = samples
        .iter()
        .map(|s| mean_belly_spectrum(&[(&s.cube, &s.mask)]))
        .collect::<Result<Vec<_>>>()?;
    let scores = pca_reduce(&spectra_matrix(&spectra)?, variance)?;
    duplex_split(&scores.scores, subsets, None)
}

fn report(ids: &[usize], refs: &[f64], preds: &[f64]) -> Result<MetricsReport> {
    let pairs: Vec<Prediction> = ids
        .iter()
        .zip(refs)
        .zip(preds)
        .map(|((&i, &r), &p)| Prediction { id: format!("phantom{i:03}"), reference: r, prediction: p, group: None })
        .collect();
    report_metrics(&pairs)
}

/// Runs the whole comparison. `progress` receives one line per stage.
pub fn run_study(cfg: &StudyConfig, seed: u64, mut progress: impl FnMut(&str)) -> Result<StudyOutcome> {
    if cfg.subsets < 3 {
        return Err(Error::invalid("need at least two folds and a test subset"));
    }
    let geometry = cfg.train.net.validate()?;
    let phantoms = make_batch(&cfg.batch, derive_seed(seed, &[10]))?;
    let samples = phantom_samples(&phantoms, cfg.reflectance_floor)?;
    let assignment = duplex_assignment(&samples, cfg.subsets, cfg.pca_variance)?;
    let test_subset = cfg.subsets - 1;
    let dev: Vec<usize> = (0..samples.len()).filter(|&i| assignment[i] != test_subset).collect();
    let test: Vec<usize> = (0..samples.len()).filter(|&i| assignment[i] == test_subset).collect();
    progress(&format!("split {} development / {} test phantoms", dev.len(), test.len()));

    let mean_spectra = samples
        .iter()
        .map(|s| mean_belly_spectrum(&[(&s.cube, &s.mask)]))
        .collect::<Result<Vec<_>>>()?;
    let all_x = spectra_matrix(&mean_spectra)?;
    let dev_x = all_x.select_rows(&dev);
    let dev_y: Vec<f64> = dev.iter().map(|&i| samples[i].reference).collect();
    let dev_folds: Vec<usize> = dev.iter().map(|&i| assignment[i]).collect();
    let pls = select_components_cv(&dev_x, &dev_y, &dev_folds, cfg.pls_max_components, cfg.preprocessing)?;
    progress(&format!("PLS selected {} components", pls.best_components));

    let mut folds = Vec::with_capacity(test_subset);
    for fold in 0..test_subset {
        let train: Vec<Sample> = dev.iter().filter(|&&i| assignment[i] != fold).map(|&i| samples[i].clone()).collect();
        let val: Vec<Sample> = dev.iter().filter(|&&i| assignment[i] == fold).map(|&i| samples[i].clone()).collect();
        let result = train_fold(&cfg.train, &train, &val, derive_seed(seed, &[20, fold as u64]))?;
        progress(&format!(
            "fold {fold}: best val MSE {:.4} at epoch {} of {} ({:?})",
            result.best_val_mse, result.best_epoch, result.epochs_run, result.stop_reason
        ));
        folds.push(result);
    }
    let members: Vec<NetParams> = folds.iter().map(|f| f.params.clone()).collect();

    let wl: Vec<f64> = cfg.batch.phantom.wavelengths();
    let fat = cfg.batch.phantom.fat.spectrum(&wl);
    let lean = cfg.batch.phantom.lean.spectrum(&wl);
    let test_x = all_x.select_rows(&test);
    let pls_mean = pls.model.predict(&test_x)?;

    let mut results = Vec::with_capacity(test.len());
    for (k, &i) in test.iter().enumerate() {
        let s = &samples[i];
        let p = &phantoms[i];
        let unet_map = ensemble_predict(&cfg.train.net, &members, &s.cube, &s.mask)?;
        let pls_map = pls_chemical_map(&pls.model, &s.cube, &s.mask)?;
        let oracle_map = unmix_cube(&s.cube, &s.mask, &fat, &lean)?;
        let oracle = ChemicalMap::new(oracle_map, s.mask.clone())?.masked_mean()?;
        let truth_grid = field_on_map_grid(&p.field, p.cube.height(), p.cube.width(), &geometry)?;
        let unet_field_rmse = field_rmse(&unet_map.values, &truth_grid, &unet_map.mask)?;
        let pls_field_rmse = field_rmse(&pls_map.values, &p.field, &pls_map.mask)?;
        let unet_stats = spatial_stats(&unet_map.values, &unet_map.mask)?;
        let pls_stats = spatial_stats(&pls_map.values, &pls_map.mask)?;
        let masked = masked_prediction(&unet_map.values, &unet_map.mask)?;
        let unet_oobl = oobl(&[&masked]);

        let target = nugget(&unet_map.values, &unet_map.mask)?;
        let mut smoothing_sigma = None;
        let mut smoothed_pls_field_rmse = None;
        for &sigma in &cfg.smoothing_sigmas {
            let sm = smooth_chemical_map(&pls_map, sigma)?.values;
            if nugget(&sm, &pls_map.mask)? <= target {
                smoothing_sigma = Some(sigma);
                smoothed_pls_field_rmse = Some(field_rmse(&sm, &p.field, &pls_map.mask)?);
                break;
            }
        }
        results.push(PhantomResult {
            index: i,
            reference: s.reference,
            unet_belly: unet_map.masked_mean()?,
            pls_mean_belly: pls_mean[k],
            pls_pixel_belly: pls_map.masked_mean()?,
            oracle_belly: oracle,
            unet_field_rmse,
            pls_field_rmse,
            unet_stats,
            pls_stats,
            unet_oobl,
            smoothing_sigma,
            smoothed_pls_field_rmse,
            unet_map,
            pls_map,
        });
    }
    let refs: Vec<f64> = results.iter().map(|r| r.reference).collect();
    let col = |f: fn(&PhantomResult) -> f64| results.iter().map(f).collect::<Vec<f64>>();
    Ok(StudyOutcome {
        unet_report: report(&test, &refs, &col(|r| r.unet_belly))?,
        pls_mean_report: report(&test, &refs, &col(|r| r.pls_mean_belly))?,
        pls_pixel_report: report(&test, &refs, &col(|r| r.pls_pixel_belly))?,
        oracle_report: report(&test, &refs, &col(|r| r.oracle_belly))?,
        assignment,
        pls,
        folds,
        phantoms: results,
    })
}
