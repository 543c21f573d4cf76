//! File-based steps behind the command-line tool. Each step reads its
//! inputs from disk, writes deterministic outputs into a directory and
//! returns the paths it wrote.

use crate::chemo::model_io::{read_model, write_model};
use crate::chemo::{mean_belly_spectrum, pls_chemical_map, select_components_cv, spectra_matrix, Preprocessing};
use crate::diffnet::io::{read_params, write_params};
use crate::diffnet::NetParams;
use crate::error::{Error, Result};
use crate::geostat::{smooth_chemical_map, spatial_stats};
use crate::hsidata::io::{read_cube, read_mask, write_cube, write_mask};
use crate::hsidata::{read_manifest, write_manifest, HsiCube, Mask, SampleRecord, Space};
use crate::map::{read_map, write_map, ChemicalMap};
use crate::report::{render_heatmap, report_metrics, write_metrics_csv, Prediction};
use crate::study::duplex_assignment;
use crate::synth::{make_batch, BatchConfig};
use crate::train::{belly_prediction, derive_seed, ensemble_predict, train_fold, Sample, TrainConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    /// First band kept.
    pub band_start: usize,
    /// Reflectance below this is clamped before the logarithm.
    pub reflectance_floor: f64,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self { band_start: 0, reflectance_floor: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Number of DUPLEX subsets; the last is the test set.
    pub subsets: usize,
    pub pca_variance: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { subsets: 6, pca_variance: 0.99 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlsConfig {
    pub max_components: usize,
    pub preprocessing: Preprocessing,
}

impl Default for PlsConfig {
    fn default() -> Self {
        Self { max_components: 15, preprocessing: Preprocessing::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub lo: f64,
    pub hi: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { lo: 0.0, hi: 100.0 }
    }
}

/// The whole configuration file; every section is optional except `unet`
/// for the U-Net commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub split: SplitConfig,
    pub pls: PlsConfig,
    pub unet: Option<TrainConfig>,
    pub synth: BatchConfig,
    pub render: RenderConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn unet(&self) -> Result<&TrainConfig> {
        self.unet.as_ref().ok_or_else(|| Error::Config("missing [unet] section".into()))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn flush(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// A manifest row with its cube in absorbance space, bands selected.
#[derive(Debug, Clone)]
pub struct LoadedSlice {
    pub record: SampleRecord,
    pub cube: HsiCube,
    pub mask: Mask,
}

pub fn load_slices(records: &[SampleRecord], input: &InputConfig) -> Result<Vec<LoadedSlice>> {
    records
        .iter()
        .map(|rec| {
            let raw = read_cube(&rec.cube_path)?;
            let mask = read_mask(&rec.mask_path)?;
            if (raw.height(), raw.width()) != (mask.height(), mask.width()) {
                return Err(Error::shape(format!("cube and mask of {}/{} differ in size", rec.belly_id, rec.slice_id)));
            }
            let abs = match raw.space() {
                Space::Reflectance => raw.to_absorbance(input.reflectance_floor)?,
                Space::Absorbance => raw,
            };
            let cube = if input.band_start > 0 { abs.select_bands(input.band_start)? } else { abs };
            Ok(LoadedSlice { record: rec.clone(), cube, mask })
        })
        .collect()
}

/// Slices grouped by belly, bellies in first-appearance order.
fn bellies(slices: &[LoadedSlice]) -> Vec<(String, Vec<usize>)> {
    let mut order: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, s) in slices.iter().enumerate() {
        match order.iter_mut().find(|(b, _)| *b == s.record.belly_id) {
            Some((_, v)) => v.push(i),
            None => order.push((s.record.belly_id.clone(), vec![i])),
        }
    }
    order
}

fn belly_spectrum(slices: &[LoadedSlice], idx: &[usize]) -> Result<crate::chemo::Spectrum> {
    let parts: Vec<(&HsiCube, &Mask)> = idx.iter().map(|&i| (&slices[i].cube, &slices[i].mask)).collect();
    mean_belly_spectrum(&parts)
}

fn group_label(reference: f64) -> String {
    // 10 %-wide classes
    let k = (reference / 10.0).floor().clamp(0.0, 9.0) as usize;
    format!("{}-{}", 10 * k, 10 * k + 10)
}

/// Generates phantoms: cubes, masks, true fields and a manifest.
pub fn run_synth(cfg: &PipelineConfig, out: &Path, seed: u64) -> Result<PathBuf> {
    create_dir(out)?;
    let phantoms = make_batch(&cfg.synth, seed)?;
    let mut records = Vec::with_capacity(phantoms.len());
    for (i, p) in phantoms.iter().enumerate() {
        let id = format!("phantom{i:03}");
        write_cube(&p.cube, out.join(format!("{id}.hsc")))?;
        write_mask(&p.mask, out.join(format!("{id}.msk")))?;
        let full = Mask::filled(p.mask.height(), p.mask.width(), true);
        write_map(&ChemicalMap::new(p.field.clone(), full)?, out.join(format!("{id}_field.chm")))?;
        records.push(SampleRecord {
            belly_id: id.clone(),
            slice_id: "0".into(),
            cube_path: format!("{id}.hsc").into(),
            mask_path: format!("{id}.msk").into(),
            reference: p.reference,
            group: Some(group_label(p.reference)),
        });
    }
    let manifest = out.join("manifest.csv");
    write_manifest(&records, &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub belly_id: String,
    pub subset: usize,
    pub role: String,
}

pub fn read_folds(path: impl AsRef<Path>) -> Result<BTreeMap<String, usize>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize() {
        let row: FoldRow = row?;
        out.insert(row.belly_id, row.subset);
    }
    Ok(out)
}

/// DUPLEX split of bellies. Writes `folds.csv` plus development and test
/// manifests.
pub fn run_split(cfg: &PipelineConfig, manifest: &Path, out: &Path) -> Result<PathBuf> {
    create_dir(out)?;
    let records = read_manifest(manifest)?;
    let slices = load_slices(&records, &cfg.input)?;
    let groups = bellies(&slices);
    let samples: Vec<Sample> = groups
        .iter()
        .map(|(id, idx)| {
            let spectrum = belly_spectrum(&slices, idx)?;
            let n = spectrum.values.len();
            let wl: Vec<f32> = (0..n).map(|i| i as f32).collect();
            let cube = HsiCube::new(n, 1, 1, spectrum.values.iter().map(|&v| v as f32).collect(), wl, Space::Absorbance)?;
            Ok(Sample { id: id.clone(), cube, mask: Mask::filled(1, 1, true), reference: slices[idx[0]].record.reference })
        })
        .collect::<Result<_>>()?;
    let assignment = duplex_assignment(&samples, cfg.split.subsets, cfg.split.pca_variance)?;
    let test = cfg.split.subsets - 1;
    let path = out.join("folds.csv");
    let mut w = csv_writer(&path)?;
    for ((id, _), &a) in groups.iter().zip(&assignment) {
        let role = if a == test { "test" } else { "fold" };
        w.serialize(FoldRow { belly_id: id.clone(), subset: a, role: role.into() })?;
    }
    flush(w, &path)?;
    let subset_of = |r: &SampleRecord| assignment[groups.iter().position(|(b, _)| *b == r.belly_id).expect("belly")];
    let base = absolute(out);
    let rel = |r: &SampleRecord| -> SampleRecord {
        let mut r = r.clone();
        r.cube_path = relative_to(&absolute(&r.cube_path), &base);
        r.mask_path = relative_to(&absolute(&r.mask_path), &base);
        r
    };
    let dev: Vec<SampleRecord> = records.iter().filter(|r| subset_of(r) != test).map(rel).collect();
    let tst: Vec<SampleRecord> = records.iter().filter(|r| subset_of(r) == test).map(rel).collect();
    write_manifest(&dev, out.join("dev_manifest.csv"))?;
    write_manifest(&tst, out.join("test_manifest.csv"))?;
    Ok(path)
}

fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

/// `path` expressed relative to the directory `base`; both absolute.
fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let a: Vec<_> = path.components().collect();
    let b: Vec<_> = base.components().collect();
    let common = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    if common == 0 {
        return path.to_path_buf();
    }
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &a[common..] {
        out.push(c);
    }
    out
}

/// Fold index of each development slice; test-set slices are dropped.
fn dev_folds(slices: &[LoadedSlice], folds: &BTreeMap<String, usize>, subsets: usize) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (i, s) in slices.iter().enumerate() {
        let f = *folds
            .get(&s.record.belly_id)
            .ok_or_else(|| Error::invalid(format!("belly {} has no fold", s.record.belly_id)))?;
        if f + 1 < subsets {
            out.push((i, f));
        }
    }
    Ok(out)
}

/// Cross-validated PLS calibration on mean belly spectra. Writes the model
/// and the RMSE curve.
pub fn run_pls_train(cfg: &PipelineConfig, manifest: &Path, folds: &Path, out: &Path) -> Result<PathBuf> {
    create_dir(out)?;
    let slices = load_slices(&read_manifest(manifest)?, &cfg.input)?;
    let folds = read_folds(folds)?;
    let dev = dev_folds(&slices, &folds, cfg.split.subsets)?;
    let dev_slices: Vec<LoadedSlice> = dev.iter().map(|&(i, _)| slices[i].clone()).collect();
    let groups = bellies(&dev_slices);
    let spectra = groups.iter().map(|(_, idx)| belly_spectrum(&dev_slices, idx)).collect::<Result<Vec<_>>>()?;
    let y: Vec<f64> = groups.iter().map(|(_, idx)| dev_slices[idx[0]].record.reference).collect();
    let labels: Vec<usize> = groups.iter().map(|(b, _)| folds[b]).collect();
    let cv = select_components_cv(&spectra_matrix(&spectra)?, &y, &labels, cfg.pls.max_components, cfg.pls.preprocessing)?;
    let curve = out.join("pls_rmse.csv");
    let mut w = csv_writer(&curve)?;
    w.write_record(["component", "mean_rmse"])?;
    for (a, r) in cv.rmse_curve.iter().enumerate() {
        w.write_record([(a + 1).to_string(), r.to_string()])?;
    }
    flush(w, &curve)?;
    let path = out.join("pls.plsm");
    write_model(&cv.model, &path)?;
    Ok(path)
}

fn write_map_set(map: &ChemicalMap, dir: &Path, stem: &str, render: &RenderConfig) -> Result<()> {
    write_map(map, dir.join(format!("{stem}.chm")))?;
    write_mask(&map.mask, dir.join(format!("{stem}.msk")))?;
    render_heatmap(map, render.lo, render.hi, dir.join(format!("{stem}.pgm")))
}

fn write_predictions(path: &Path, rows: &[Prediction]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["belly_id", "reference", "prediction", "group"])?;
    for r in rows {
        w.write_record([r.id.clone(), r.reference.to_string(), r.prediction.to_string(), r.group.clone().unwrap_or_default()])?;
    }
    flush(w, path)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    #[derive(Deserialize)]
    struct Row {
        belly_id: String,
        reference: f64,
        prediction: f64,
        group: Option<String>,
    }
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let r: Row = row?;
        out.push(Prediction {
            id: r.belly_id,
            reference: r.reference,
            prediction: r.prediction,
            group: r.group.filter(|g| !g.is_empty()),
        });
    }
    Ok(out)
}

/// Pixel-wise maps and belly-level predictions (on the mean spectrum and as
/// pooled map mean) for every slice of the manifest.
pub fn run_pls_predict(cfg: &PipelineConfig, model: &Path, manifest: &Path, out: &Path) -> Result<PathBuf> {
    let model = read_model(model)?;
    let maps_dir = out.join("maps");
    create_dir(&maps_dir)?;
    let slices = load_slices(&read_manifest(manifest)?, &cfg.input)?;
    let mut on_mean = Vec::new();
    let mut pixel = Vec::new();
    for (belly, idx) in bellies(&slices) {
        let spectrum = belly_spectrum(&slices, &idx)?;
        let row = nalgebra::DMatrix::from_row_slice(1, spectrum.values.len(), &spectrum.values);
        let first = &slices[idx[0]].record;
        on_mean.push(Prediction { id: belly.clone(), reference: first.reference, prediction: model.predict(&row)?[0], group: first.group.clone() });
        let mut maps = Vec::with_capacity(idx.len());
        for &i in &idx {
            let s = &slices[i];
            let map = pls_chemical_map(&model, &s.cube, &s.mask)?;
            write_map_set(&map, &maps_dir, &format!("{}_{}_pls", s.record.belly_id, s.record.slice_id), &cfg.render)?;
            maps.push(map);
        }
        let refs: Vec<&ChemicalMap> = maps.iter().collect();
        pixel.push(Prediction { id: belly, reference: first.reference, prediction: belly_prediction(&refs)?, group: first.group.clone() });
    }
    write_predictions(&out.join("pls_mean_predictions.csv"), &on_mean)?;
    let path = out.join("pls_pixel_predictions.csv");
    write_predictions(&path, &pixel)?;
    Ok(path)
}

fn net_input(cube: &HsiCube, cfg: &TrainConfig) -> Result<HsiCube> {
    let binned = if cfg.net.bin_factor > 1 { cube.bin_bands(cfg.net.bin_factor)? } else { cube.clone() };
    if binned.bands() != cfg.net.bands {
        return Err(Error::shape(format!(
            "{} bands after binning, network expects {}",
            binned.bands(),
            cfg.net.bands
        )));
    }
    Ok(binned)
}

pub const ENSEMBLE_MAGIC: &str = "ENSEMBLE1";

pub fn read_ensemble(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(ENSEMBLE_MAGIC) {
        return Err(Error::Header("not an ensemble descriptor".into()));
    }
    let base = path.parent().unwrap_or(Path::new(""));
    Ok(lines.filter(|l| !l.trim().is_empty()).map(|l| base.join(l.trim())).collect())
}

/// Trains one model per development fold. Writes parameter files, loss
/// logs and the ensemble descriptor.
pub fn run_unet_train(cfg: &PipelineConfig, manifest: &Path, folds: &Path, out: &Path, seed: u64, mut progress: impl FnMut(&str)) -> Result<PathBuf> {
    create_dir(out)?;
    let tc = cfg.unet()?;
    let slices = load_slices(&read_manifest(manifest)?, &cfg.input)?;
    let folds = read_folds(folds)?;
    let dev = dev_folds(&slices, &folds, cfg.split.subsets)?;
    let samples: Vec<(Sample, usize)> = dev
        .iter()
        .map(|&(i, f)| {
            let s = &slices[i];
            Ok((
                Sample {
                    id: format!("{}/{}", s.record.belly_id, s.record.slice_id),
                    cube: net_input(&s.cube, tc)?,
                    mask: s.mask.clone(),
                    reference: s.record.reference,
                },
                f,
            ))
        })
        .collect::<Result<_>>()?;
    let mut members = Vec::new();
    for fold in 0..cfg.split.subsets - 1 {
        let train: Vec<Sample> = samples.iter().filter(|(_, f)| *f != fold).map(|(s, _)| s.clone()).collect();
        let val: Vec<Sample> = samples.iter().filter(|(_, f)| *f == fold).map(|(s, _)| s.clone()).collect();
        if val.is_empty() {
            continue;
        }
        let result = train_fold(tc, &train, &val, derive_seed(seed, &[fold as u64]))?;
        progress(&format!(
            "fold {fold}: best val MSE {:.4} at epoch {}/{}",
            result.best_val_mse, result.best_epoch, result.epochs_run
        ));
        let name = format!("fold{fold}.unetp");
        write_params(&tc.net, &result.params, out.join(&name))?;
        let log = out.join(format!("loss_fold{fold}.csv"));
        let mut w = csv_writer(&log)?;
        for row in &result.log {
            w.serialize(row)?;
        }
        flush(w, &log)?;
        members.push(name);
    }
    if members.is_empty() {
        return Err(Error::invalid("no fold had validation data"));
    }
    let path = out.join("ensemble.txt");
    write_text(&path, &format!("{ENSEMBLE_MAGIC}\n{}\n", members.join("\n")))?;
    Ok(path)
}

/// Ensemble maps and pooled belly predictions for every manifest slice.
pub fn run_unet_predict(cfg: &PipelineConfig, ensemble: &Path, manifest: &Path, out: &Path) -> Result<PathBuf> {
    let mut members = Vec::new();
    let mut net = None;
    for p in read_ensemble(ensemble)? {
        let (c, params) = read_params(&p)?;
        if net.is_some_and(|n| n != c) {
            return Err(Error::invalid("ensemble members have different architectures"));
        }
        net = Some(c);
        members.push(params);
    }
    let net = net.ok_or_else(|| Error::invalid("ensemble has no members"))?;
    let tc = TrainConfig::new(net);
    let maps_dir = out.join("maps");
    create_dir(&maps_dir)?;
    let slices = load_slices(&read_manifest(manifest)?, &cfg.input)?;
    let mut rows = Vec::new();
    for (belly, idx) in bellies(&slices) {
        let mut maps = Vec::with_capacity(idx.len());
        for &i in &idx {
            let s = &slices[i];
            let map = ensemble_predict(&net, &members, &net_input(&s.cube, &tc)?, &s.mask)?;
            write_map_set(&map, &maps_dir, &format!("{}_{}_unet", s.record.belly_id, s.record.slice_id), &cfg.render)?;
            maps.push(map);
        }
        let refs: Vec<&ChemicalMap> = maps.iter().collect();
        let first = &slices[idx[0]].record;
        rows.push(Prediction { id: belly, reference: first.reference, prediction: belly_prediction(&refs)?, group: first.group.clone() });
    }
    let path = out.join("unet_predictions.csv");
    write_predictions(&path, &rows)?;
    Ok(path)
}

/// Spatial statistics of one map; optionally writes a smoothed copy.
pub fn run_analyze(map_path: &Path, mask_path: &Path, smooth_sigma: Option<f64>, out: &Path) -> Result<PathBuf> {
    create_dir(out)?;
    let mask = read_mask(mask_path)?;
    let map = read_map(map_path, mask)?;
    let stem = map_path.file_stem().and_then(|s| s.to_str()).unwrap_or("map").to_string();
    let mut rows = vec![("original".to_string(), spatial_stats(&map.values, &map.mask)?)];
    if let Some(sigma) = smooth_sigma {
        let smoothed = smooth_chemical_map(&map, sigma)?;
        write_map(&smoothed, out.join(format!("{stem}_smoothed.chm")))?;
        rows.push((format!("smoothed_{sigma}"), spatial_stats(&smoothed.values, &smoothed.mask)?));
    }
    let path = out.join(format!("{stem}_stats.csv"));
    let mut w = csv_writer(&path)?;
    w.write_record(["map", "sigma2", "c0", "ratio_uncorrelated", "ratio_correlated"])?;
    for (name, s) in rows {
        w.write_record([name, s.sigma2.to_string(), s.c0.to_string(), s.ratio_uncorrelated.to_string(), s.ratio_correlated.to_string()])?;
    }
    flush(w, &path)?;
    Ok(path)
}

/// Metrics of a predictions CSV.
pub fn run_report(predictions: &Path, out: &Path) -> Result<PathBuf> {
    create_dir(out)?;
    let rows = read_predictions(predictions)?;
    let report = report_metrics(&rows)?;
    let stem = predictions.file_stem().and_then(|s| s.to_str()).unwrap_or("predictions");
    let path = out.join(format!("{stem}_metrics.csv"));
    write_metrics_csv(&report, &path)?;
    Ok(path)
}

/// Parameters of every ensemble member, in descriptor order.
pub fn load_members(ensemble: &Path) -> Result<Vec<NetParams>> {
    read_ensemble(ensemble)?.iter().map(|p| read_params(p).map(|(_, params)| params)).collect()
}
