//! Synthetic phantoms: two-endmember absorbance mixtures over a smooth
//! concentration field, inside a blob-shaped mask.

use crate::error::{Error, Result};
use crate::hsidata::{erode_mask, stage1_plan, Geometry, HsiCube, Mask, PadOptions, Space};
use crate::par;
use crate::train::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Gaussian absorption band in wavelength space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endmember {
    /// Constant absorbance under the bumps.
    pub baseline: f64,
    pub bumps: Vec<Bump>,
}

impl Endmember {
    pub fn spectrum(&self, wavelengths: &[f64]) -> Vec<f64> {
        wavelengths
            .iter()
            .map(|&l| {
                self.baseline
                    + self.bumps.iter().map(|b| b.height * (-0.5 * ((l - b.center) / b.width).powi(2)).exp()).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub wavelength_start: f64,
    pub wavelength_step: f64,
    pub fat: Endmember,
    pub lean: Endmember,
    pub f_min: f64,
    pub f_max: f64,
    /// Cosine components of the field.
    pub field_modes: usize,
    /// Highest spatial frequency of a component, in cycles per image.
    pub field_max_cycles: usize,
    /// Standard deviation of additive absorbance noise.
    pub noise_sigma: f64,
    /// Mean blob radius relative to the shorter side.
    pub blob_radius: f64,
    /// Relative amplitude of the blob outline's wobble.
    pub blob_wobble: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            height: 104,
            width: 104,
            bands: 16,
            wavelength_start: 950.0,
            wavelength_step: 40.0,
            fat: Endmember {
                baseline: 0.25,
                bumps: vec![
                    Bump { center: 1210.0, width: 40.0, height: 0.35 },
                    Bump { center: 1400.0, width: 90.0, height: 0.15 },
                    Bump { center: 1560.0, width: 70.0, height: 0.10 },
                ],
            },
            lean: Endmember {
                baseline: 0.30,
                bumps: vec![
                    Bump { center: 980.0, width: 60.0, height: 0.20 },
                    Bump { center: 1450.0, width: 80.0, height: 0.45 },
                ],
            },
            f_min: 10.0,
            f_max: 50.0,
            field_modes: 4,
            field_max_cycles: 2,
            noise_sigma: 0.0,
            blob_radius: 0.4,
            blob_wobble: 0.12,
        }
    }
}

impl PhantomConfig {
    pub fn wavelengths(&self) -> Vec<f64> {
        (0..self.bands).map(|b| self.wavelength_start + b as f64 * self.wavelength_step).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.height < 3 || self.width < 3 || self.bands == 0 {
            return Err(Error::invalid("phantom needs at least 3x3 pixels and one band"));
        }
        if !(0.0 <= self.f_min && self.f_min <= self.f_max && self.f_max <= 100.0) {
            return Err(Error::invalid(format!("field range [{}, {}] not inside [0, 100]", self.f_min, self.f_max)));
        }
        if !(self.noise_sigma >= 0.0) || self.wavelength_step <= 0.0 {
            return Err(Error::invalid("noise sigma must be non-negative and wavelength step positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    /// Reflectance cube.
    pub cube: HsiCube,
    /// Eroded foreground mask.
    pub mask: Mask,
    /// True concentration (%) per pixel, row-major.
    pub field: Vec<f64>,
    /// Mean of `field` over `mask`.
    pub reference: f64,
    pub noise_sigma: f64,
}

/// Smooth field rescaled to `[f_min, f_max]`.
fn smooth_field<R: Rng>(cfg: &PhantomConfig, rng: &mut R) -> Vec<f64> {
    let (h, w) = (cfg.height, cfg.width);
    if cfg.f_min == cfg.f_max || cfg.field_modes == 0 {
        return vec![cfg.f_min; h * w];
    }
    let k = cfg.field_max_cycles.max(1) as i64;
    let modes: Vec<(f64, f64, f64, f64)> = (0..cfg.field_modes)
        .map(|_| {
            let (u, v) = loop {
                let u = rng.random_range(-k..=k);
                let v = rng.random_range(0..=k);
                if u != 0 || v != 0 {
                    break (u as f64, v as f64);
                }
            };
            (u, v, rng.random_range(0.0..2.0 * PI), rng.random_range(0.5..1.0))
        })
        .collect();
    let raw: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
            modes.iter().map(|&(u, v, p, a)| a * (2.0 * PI * (u * x + v * y) + p).cos()).sum()
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        return vec![cfg.f_min; h * w];
    }
    raw.iter().map(|v| (cfg.f_min + (cfg.f_max - cfg.f_min) * (v - lo) / (hi - lo)).clamp(cfg.f_min, cfg.f_max)).collect()
}

/// Star-shaped blob: inside where the distance to a jittered center is
/// below a radius that wobbles smoothly with the angle.
fn blob_mask<R: Rng>(cfg: &PhantomConfig, rng: &mut R) -> Mask {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let r0 = cfg.blob_radius * h.min(w);
    let cy = h / 2.0 + rng.random_range(-0.05..0.05) * h;
    let cx = w / 2.0 + rng.random_range(-0.05..0.05) * w;
    let aspect = rng.random_range(0.8..1.25);
    let harmonics: Vec<(f64, f64)> = (2..5).map(|_| (rng.random_range(0.0..2.0 * PI), rng.random_range(0.3..1.0))).collect();
    Mask::from_fn(cfg.height, cfg.width, |r, c| {
        let dy = (r as f64 + 0.5 - cy) * aspect;
        let dx = (c as f64 + 0.5 - cx) / aspect;
        let theta = dy.atan2(dx);
        let wobble: f64 = harmonics.iter().enumerate().map(|(i, (p, a))| a * ((i + 2) as f64 * theta + p).cos()).sum::<f64>() / 3.0;
        dy.hypot(dx) < r0 * (1.0 + cfg.blob_wobble * wobble)
    })
}

/// Noise-free absorbance of a pixel with concentration `f`.
pub fn mix(fat: &[f64], lean: &[f64], f: f64) -> Vec<f64> {
    fat.iter().zip(lean).map(|(a, b)| (f / 100.0) * a + (1.0 - f / 100.0) * b).collect()
}

pub fn make_phantom(cfg: &PhantomConfig, seed: u64) -> Result<Phantom> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = smooth_field(cfg, &mut rng);
    let mask = erode_mask(&blob_mask(cfg, &mut rng));
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let wl = cfg.wavelengths();
    let fat = cfg.fat.spectrum(&wl);
    let lean = cfg.lean.spectrum(&wl);
    let (h, w, bands) = (cfg.height, cfg.width, cfg.bands);
    let normal = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut values = vec![0f32; bands * h * w];
    for i in 0..h * w {
        let f = field[i] / 100.0;
        for b in 0..bands {
            let mut a = f * fat[b] + (1.0 - f) * lean[b];
            if cfg.noise_sigma > 0.0 {
                a += normal.sample(&mut rng);
            }
            values[b * h * w + i] = 10f64.powf(-a) as f32;
        }
    }
    let cube = HsiCube::new(bands, h, w, values, wl.iter().map(|&l| l as f32).collect(), Space::Reflectance)?;
    let reference = masked_mean(&field, &mask)?;
    Ok(Phantom { cube, mask, field, reference, noise_sigma: cfg.noise_sigma })
}

/// Settings of a phantom set whose reference levels vary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchConfig {
    pub count: usize,
    /// Range the field center of each phantom is drawn from.
    pub level_min: f64,
    pub level_max: f64,
    /// Width of each phantom's field range.
    pub spread: f64,
    pub phantom: PhantomConfig,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self { count: 60, level_min: 15.0, level_max: 45.0, spread: 30.0, phantom: PhantomConfig::default() }
    }
}

/// Phantom `i` uses a seed derived from `(seed, i)`, so phantoms can be built
/// independently and in any order.
pub fn make_batch(cfg: &BatchConfig, seed: u64) -> Result<Vec<Phantom>> {
    if cfg.level_min > cfg.level_max || cfg.spread < 0.0 {
        return Err(Error::invalid("invalid level range or spread"));
    }
    par::map_range(cfg.count, |i| {
        let s = derive_seed(seed, &[i as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let level = if cfg.level_max > cfg.level_min { rng.random_range(cfg.level_min..=cfg.level_max) } else { cfg.level_min };
        let pc = PhantomConfig {
            f_min: (level - cfg.spread / 2.0).max(0.0),
            f_max: (level + cfg.spread / 2.0).min(100.0),
            ..cfg.phantom.clone()
        };
        make_phantom(&pc, derive_seed(s, &[1]))
    })
    .into_iter()
    .collect()
}

fn masked_mean(values: &[f64], mask: &Mask) -> Result<f64> {
    let (s, n) = values.iter().zip(mask.values()).filter(|(_, &m)| m == 1).fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(s / n as f64)
}

/// Root-mean-square difference over the mask.
pub fn field_rmse(predicted: &[f64], truth: &[f64], mask: &Mask) -> Result<f64> {
    let n = mask.height() * mask.width();
    if predicted.len() != n || truth.len() != n {
        return Err(Error::shape("prediction, field and mask sizes differ"));
    }
    let sq: Vec<f64> = predicted.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).collect();
    Ok(masked_mean(&sq, mask)?.sqrt())
}

/// The true field resampled onto the network's output grid: placed in the
/// stage-1 frame like the cube (zero where padded) and 2x2 block-averaged.
pub fn field_on_map_grid(field: &[f64], height: usize, width: usize, geometry: &Geometry) -> Result<Vec<f64>> {
    if field.len() != height * width {
        return Err(Error::shape("field size does not match its dimensions"));
    }
    let rp = stage1_plan(height, geometry.stage1_h, PadOptions::default())?;
    let cp = stage1_plan(width, geometry.stage1_w, PadOptions::default())?;
    let at = |r: usize, c: usize| -> f64 {
        let sr = r.checked_sub(rp.dst_start).filter(|&d| d < rp.len).map(|d| d + rp.src_start);
        let sc = c.checked_sub(cp.dst_start).filter(|&d| d < cp.len).map(|d| d + cp.src_start);
        match (sr, sc) {
            (Some(sr), Some(sc)) => field[sr * width + sc],
            _ => 0.0,
        }
    };
    Ok((0..geometry.out_h * geometry.out_w)
        .map(|i| {
            let (r, c) = (2 * (i / geometry.out_w), 2 * (i % geometry.out_w));
            0.25 * (at(r, c) + at(r + 1, c) + at(r, c + 1) + at(r + 1, c + 1))
        })
        .collect())
}

/// Least-squares two-endmember unmixing of one absorbance spectrum.
pub fn unmix(absorbance: &[f64], fat: &[f64], lean: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for ((a, f), l) in absorbance.iter().zip(fat).zip(lean) {
        let d = f - l;
        num += (a - l) * d;
        den += d * d;
    }
    100.0 * num / den
}

/// Unmixing map of an absorbance cube with known endmembers; background 0.
pub fn unmix_cube(cube: &HsiCube, mask: &Mask, fat: &[f64], lean: &[f64]) -> Result<Vec<f64>> {
    if cube.space() != Space::Absorbance {
        return Err(Error::invalid("unmixing expects an absorbance cube"));
    }
    if fat.len() != cube.bands() || lean.len() != cube.bands() {
        return Err(Error::shape("endmember length does not match the cube"));
    }
    Ok(par::map_range(cube.height() * cube.width(), |i| {
        let (r, c) = (i / cube.width(), i % cube.width());
        if mask.get(r, c) {
            unmix(&cube.pixel_spectrum(r, c), fat, lean)
        } else {
            0.0
        }
    }))
}
