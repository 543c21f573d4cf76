//! Semi-variogram, nugget and variance decomposition of chemical maps.

use crate::error::{Error, Result};
use crate::hsidata::Mask;
use crate::map::{difference_support, ChemicalMap};
use crate::par;
#[cfg(feature = "parallel")]
use crate::par::{IndexedParallelIterator, ParallelIterator};
use serde::Serialize;

/// Total masked variance and its split into uncorrelated (nugget) and
/// spatially correlated parts. Ratios are not clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpatialStats {
    pub sigma2: f64,
    pub c0: f64,
    pub ratio_uncorrelated: f64,
    pub ratio_correlated: f64,
}

fn check(map: &[f64], mask: &Mask) -> Result<()> {
    if map.len() != mask.height() * mask.width() {
        return Err(Error::shape(format!(
            "map of {} values does not match {}x{} mask",
            map.len(),
            mask.height(),
            mask.width()
        )));
    }
    Ok(())
}

/// Half the mean squared difference between each masked base pixel and its
/// neighbour at `(dh, dw)`. Base pixels whose neighbour falls off the map
/// are skipped.
pub fn semivariogram(map: &[f64], mask: &Mask, dh: usize, dw: usize) -> Result<f64> {
    check(map, mask)?;
    let (h, w) = (mask.height(), mask.width());
    if dh >= h || dw >= w {
        return Err(Error::invalid(format!("offset ({dh}, {dw}) outside {h}x{w} map")));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in 0..h - dh {
        for c in 0..w - dw {
            if mask.get(r, c) {
                sum += (map[r * w + c] - map[(r + dh) * w + c + dw]).powi(2);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(0.5 * sum / count as f64)
}

/// Mean of the semi-variogram at unit vertical and horizontal lag.
pub fn nugget(map: &[f64], mask: &Mask) -> Result<f64> {
    Ok(0.5 * (semivariogram(map, mask, 0, 1)? + semivariogram(map, mask, 1, 0)?))
}

/// Population mean and variance of the masked pixels.
pub fn masked_variance(map: &[f64], mask: &Mask) -> Result<(f64, f64)> {
    check(map, mask)?;
    let vals: Vec<f64> = map.iter().zip(mask.values()).filter(|(_, &m)| m == 1).map(|(&v, _)| v).collect();
    if vals.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    Ok((mean, vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n))
}

pub fn spatial_stats(map: &[f64], mask: &Mask) -> Result<SpatialStats> {
    if mask.count() < 2 {
        return Err(Error::Degenerate("fewer than two masked pixels".into()));
    }
    let (_, sigma2) = masked_variance(map, mask)?;
    if sigma2 <= 0.0 {
        return Err(Error::Degenerate("map is constant inside the mask".into()));
    }
    let c0 = nugget(map, mask)?;
    let ratio = c0 / sigma2;
    Ok(SpatialStats { sigma2, c0, ratio_uncorrelated: ratio, ratio_correlated: 1.0 - ratio })
}

/// 1D Gaussian taps for `sigma`, truncated at four standard deviations.
fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as usize;
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable pass over rows (`transpose == false`) or columns.
fn blur_axis(src: &[f64], h: usize, w: usize, taps: &[f64], along_rows: bool) -> Vec<f64> {
    let radius = taps.len() / 2;
    let mut out = vec![0.0; h * w];
    par::chunks_mut(&mut out, w).enumerate().for_each(|(r, row)| {
        for (c, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let off = k as isize - radius as isize;
                let (rr, cc) = if along_rows { (r as isize, c as isize + off) } else { (r as isize + off, c as isize) };
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    acc += t * src[rr as usize * w + cc as usize];
                }
            }
            *o = acc;
        }
    });
    out
}

/// Normalized convolution with a Gaussian: background pixels carry no
/// weight and the kernel is renormalized over the foreground. Background
/// values are returned unchanged.
pub fn gaussian_smooth_map(map: &[f64], mask: &Mask, sigma: f64) -> Result<Vec<f64>> {
    check(map, mask)?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be finite and non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(map.to_vec());
    }
    let (h, w) = (mask.height(), mask.width());
    let taps = gaussian_taps(sigma);
    let weighted: Vec<f64> = map.iter().zip(mask.values()).map(|(&v, &m)| if m == 1 { v } else { 0.0 }).collect();
    let weights: Vec<f64> = mask.values().iter().map(|&m| m as f64).collect();
    let num = blur_axis(&blur_axis(&weighted, h, w, &taps, true), h, w, &taps, false);
    let den = blur_axis(&blur_axis(&weights, h, w, &taps, true), h, w, &taps, false);
    Ok(map
        .iter()
        .zip(mask.values())
        .enumerate()
        .map(|(i, (&v, &m))| if m == 1 { num[i] / den[i] } else { v })
        .collect())
}

/// [`gaussian_smooth_map`] on a [`ChemicalMap`]. The foreground is the mask
/// plus the neighbours its unit-lag differences read, so the smoothed map
/// feeds [`spatial_stats`] consistently.
pub fn smooth_chemical_map(map: &ChemicalMap, sigma: f64) -> Result<ChemicalMap> {
    let values = gaussian_smooth_map(&map.values, &difference_support(&map.mask), sigma)?;
    ChemicalMap::new(values, map.mask.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hsidata::erode_mask;
    use crate::loss::smoothness_single;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn checkerboard(h: usize, w: usize) -> Vec<f64> {
        (0..h * w).map(|i| if (i / w + i % w) % 2 == 0 { 0.0 } else { 100.0 }).collect()
    }

    #[test]
    fn semivariogram_cases() {
        let full = Mask::filled(4, 5, true);
        assert_eq!(semivariogram(&[3.0; 20], &full, 1, 1).unwrap(), 0.0);
        assert_eq!(semivariogram(&checkerboard(4, 5), &full, 0, 1).unwrap(), 5000.0);
        let ramp: Vec<f64> = (0..20).map(|i| (i % 5) as f64).collect();
        assert_eq!(semivariogram(&ramp, &full, 0, 1).unwrap(), 0.5);
        assert_eq!(semivariogram(&ramp, &full, 1, 0).unwrap(), 0.0);
        assert_eq!(nugget(&ramp, &full).unwrap(), 0.25);
        assert_eq!(nugget(&[1.0; 20], &full).unwrap(), 0.0);
        assert!(semivariogram(&ramp, &Mask::filled(4, 5, false), 0, 1).is_err());
    }

    #[test]
    fn spatial_stats_cases() {
        let full = Mask::filled(4, 4, true);
        let halves: Vec<f64> = (0..16).map(|i| if i % 4 < 2 { 0.0 } else { 100.0 }).collect();
        assert_eq!(spatial_stats(&halves, &full).unwrap().sigma2, 2500.0);
        let s = spatial_stats(&checkerboard(4, 4), &full).unwrap();
        assert_eq!(s.ratio_uncorrelated, 2.0);
        assert_eq!(s.ratio_correlated, -1.0);
        assert!(spatial_stats(&[2.0; 16], &full).is_err());
    }

    #[test]
    fn iid_noise_is_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let map: Vec<f64> = (0..102 * 102).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 3.0 * z }).collect();
        let s = spatial_stats(&map, &Mask::filled(102, 102, true)).unwrap();
        assert!(s.ratio_correlated.abs() < 0.05, "{s:?}");
    }

    #[test]
    fn smoothing_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mask = Mask::from_fn(30, 30, |r, c| (r as f64 - 15.0).hypot(c as f64 - 14.0) < 11.0);
        let map: Vec<f64> = (0..900).map(|_| rng.random_range(0.0..50.0)).collect();
        assert_eq!(gaussian_smooth_map(&map, &mask, 0.0).unwrap(), map);

        let constant: Vec<f64> = (0..900).map(|i| if mask.values()[i] == 1 { 42.0 } else { -7.0 }).collect();
        let sm = gaussian_smooth_map(&constant, &mask, 2.5).unwrap();
        for (i, v) in sm.iter().enumerate() {
            let expect = if mask.values()[i] == 1 { 42.0 } else { -7.0 };
            assert!((v - expect).abs() < 1e-12);
        }

        let mut last = nugget(&map, &mask).unwrap();
        for sigma in [0.5, 1.0, 2.0, 4.0] {
            let c0 = nugget(&gaussian_smooth_map(&map, &mask, sigma).unwrap(), &mask).unwrap();
            assert!(c0 < last);
            last = c0;
        }
    }

    #[test]
    fn chemical_map_smoothing_reaches_small_nugget() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mask = erode_mask(&Mask::from_fn(40, 40, |r, c| (r as f64 - 20.0).hypot(c as f64 - 19.0) < 15.0));
        let values: Vec<f64> = (0..1600).map(|_| rng.random_range(0.0..100.0)).collect();
        let map = ChemicalMap::new(values, mask).unwrap();
        let raw = nugget(&map.values, &map.mask).unwrap();
        let smooth = smooth_chemical_map(&map, 50.0).unwrap();
        assert!(nugget(&smooth.values, &smooth.mask).unwrap() < 1e-3 * raw);
        // pixels outside the difference support are untouched
        assert_eq!(smooth.values[0], map.values[0]);
    }

    proptest! {
        #[test]
        fn nugget_is_quarter_smoothness(seed in any::<u64>(), h in 2usize..12, w in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map: Vec<f64> = (0..h * w).map(|_| rng.random_range(-50.0..150.0)).collect();
            let keep: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.7)).collect();
            let mut mask = Mask::from_fn(h, w, |r, c| r + 1 < h && c + 1 < w && keep[r * w + c]);
            if mask.count() == 0 {
                mask = Mask::from_fn(h, w, |r, c| r == 0 && c == 0);
            }
            let c0 = nugget(&map, &mask).unwrap();
            let sl = smoothness_single(&map, &mask).unwrap();
            prop_assert!((c0 - sl / 4.0).abs() <= 1e-10 * c0.abs().max(1e-300));
        }

        #[test]
        fn semivariogram_shift_invariant(seed in any::<u64>(), shift in -100.0f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..10.0)).collect();
            let shifted: Vec<f64> = map.iter().map(|v| v + shift).collect();
            let mask = Mask::filled(8, 8, true);
            let a = semivariogram(&map, &mask, 1, 2).unwrap();
            let b = semivariogram(&shifted, &mask, 1, 2).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }
}
