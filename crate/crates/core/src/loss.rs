//! Weak-label loss: mean-fat MSE, out-of-bounds penalty, smoothness and L2.
//!
//! Maps are row-major `h x w` slices paired with a [`Mask`] of the same size.
//! Batch functions take one map and one mask per sample.

use crate::error::{Error, Result};
use crate::hsidata::Mask;
use serde::{Deserialize, Serialize};

/// Term weights of the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub mse: f64,
    pub oobl: f64,
    pub sl: f64,
    pub l2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { mse: 1.0, oobl: 1e-3, sl: 20.0, l2: 1e-3 }
    }
}

/// Unweighted terms, their weights and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub mse: f64,
    pub oobl: f64,
    pub sl: f64,
    pub l2: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub fn new(mse: f64, oobl: f64, sl: f64, l2: f64, weights: LossWeights) -> Self {
        let total = weights.mse * mse + weights.oobl * oobl + weights.sl * sl + weights.l2 * l2;
        Self { mse, oobl, sl, l2, total, weights }
    }

    pub fn row(&self, epoch: usize, phase: &str) -> LossRow {
        LossRow {
            epoch,
            phase: phase.to_string(),
            mse: self.mse,
            oobl: self.oobl,
            sl: self.sl,
            l2: self.l2,
            total: self.total,
        }
    }
}

/// One line of the per-epoch loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub phase: String,
    pub mse: f64,
    pub oobl: f64,
    pub sl: f64,
    pub l2: f64,
    pub total: f64,
}

fn check_len(map: &[f64], mask: &Mask) -> Result<()> {
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

fn check_batch(maps: &[&[f64]], masks: &[&Mask]) -> Result<()> {
    if maps.len() != masks.len() {
        return Err(Error::shape(format!("{} maps but {} masks", maps.len(), masks.len())));
    }
    if maps.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    maps.iter().zip(masks).try_for_each(|(m, k)| check_len(m, k))
}

/// Element-wise product of map and mask.
pub fn masked_prediction(map: &[f64], mask: &Mask) -> Result<Vec<f64>> {
    check_len(map, mask)?;
    Ok(map.iter().zip(mask.values()).map(|(&v, &m)| if m == 1 { v } else { 0.0 }).collect())
}

/// Sum of the masked map over the number of mask pixels.
pub fn mean_fat(masked: &[f64], mask: &Mask) -> Result<f64> {
    check_len(masked, mask)?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(masked.iter().sum::<f64>() / n as f64)
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::shape(format!("{} references but {} predictions", y.len(), y_hat.len())));
    }
    if y.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

#[inline]
fn out_of_bounds(v: f64) -> f64 {
    if v < 0.0 {
        v * v
    } else if v > 100.0 {
        (v - 100.0).powi(2)
    } else {
        0.0
    }
}

#[inline]
fn out_of_bounds_grad(v: f64) -> f64 {
    if v < 0.0 {
        2.0 * v
    } else if v > 100.0 {
        2.0 * (v - 100.0)
    } else {
        0.0
    }
}

/// Squared excursions outside `[0, 100]`, summed per map (not normalized by
/// mask size) and averaged over the batch.
pub fn oobl(masked_maps: &[&[f64]]) -> f64 {
    if masked_maps.is_empty() {
        return 0.0;
    }
    let sum: f64 = masked_maps.iter().map(|m| m.iter().map(|&v| out_of_bounds(v)).sum::<f64>()).sum();
    sum / masked_maps.len() as f64
}

/// Masked mean of the squared forward-difference gradient of one map, over
/// base pixels that have both a lower and a right neighbour. Zero when no
/// such pixel is in the mask.
pub fn smoothness_single(map: &[f64], mask: &Mask) -> Result<f64> {
    check_len(map, mask)?;
    let (h, w) = (mask.height(), mask.width());
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in 0..h.saturating_sub(1) {
        for c in 0..w.saturating_sub(1) {
            if mask.get(r, c) {
                let v = map[r * w + c];
                sum += (v - map[(r + 1) * w + c]).powi(2) + (v - map[r * w + c + 1]).powi(2);
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Batch mean of [`smoothness_single`].
pub fn smoothness(maps: &[&[f64]], masks: &[&Mask]) -> Result<f64> {
    check_batch(maps, masks)?;
    let mut sum = 0.0;
    for (m, k) in maps.iter().zip(masks) {
        sum += smoothness_single(m, k)?;
    }
    Ok(sum / maps.len() as f64)
}

/// Sum of squared weights.
pub fn l2(weights: &[f64]) -> f64 {
    weights.iter().map(|v| v * v).sum()
}

/// Total loss of a batch and its gradient with respect to each map.
///
/// `l2_value` is the already-computed weight norm; its gradient with
/// respect to the parameters is `2 * weights.l2 * theta` and is applied by
/// the caller.
pub fn total_loss(
    maps: &[&[f64]],
    masks: &[&Mask],
    references: &[f64],
    l2_value: f64,
    weights: LossWeights,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    check_batch(maps, masks)?;
    if references.len() != maps.len() {
        return Err(Error::shape(format!("{} references for {} maps", references.len(), maps.len())));
    }
    let b = maps.len() as f64;
    let mut grads: Vec<Vec<f64>> = maps.iter().map(|m| vec![0.0; m.len()]).collect();
    let mut means = Vec::with_capacity(maps.len());
    let mut oob = 0.0;
    let mut sl = 0.0;
    for (i, (&map, &mask)) in maps.iter().zip(masks).enumerate() {
        let masked = masked_prediction(map, mask)?;
        let mean = mean_fat(&masked, mask)?;
        means.push(mean);
        let n = mask.count() as f64;
        let g = &mut grads[i];
        let dmse = weights.mse * 2.0 * (mean - references[i]) / (b * n);
        for ((gi, &v), &m) in g.iter_mut().zip(&masked).zip(mask.values()) {
            if m == 1 {
                oob += out_of_bounds(v);
                *gi += dmse + weights.oobl * out_of_bounds_grad(v) / b;
            }
        }
        sl += smoothness_single(map, mask)?;
        let (h, w) = (mask.height(), mask.width());
        let count = (0..h.saturating_sub(1))
            .flat_map(|r| (0..w.saturating_sub(1)).map(move |c| (r, c)))
            .filter(|&(r, c)| mask.get(r, c))
            .count();
        if count > 0 {
            let scale = weights.sl * 2.0 / (b * count as f64);
            for r in 0..h - 1 {
                for c in 0..w - 1 {
                    if mask.get(r, c) {
                        let i0 = r * w + c;
                        let dv = map[i0] - map[i0 + w];
                        let dh = map[i0] - map[i0 + 1];
                        g[i0] += scale * (dv + dh);
                        g[i0 + w] -= scale * dv;
                        g[i0 + 1] -= scale * dh;
                    }
                }
            }
        }
    }
    let breakdown = LossBreakdown::new(mse(references, &means)?, oob / b, sl / b, l2_value, weights);
    Ok((breakdown, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(h: usize, w: usize, v: &[u8]) -> Mask {
        Mask::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn masked_prediction_cases() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(masked_prediction(&y, &Mask::filled(2, 2, true)).unwrap(), y);
        assert_eq!(masked_prediction(&y, &Mask::filled(2, 2, false)).unwrap(), [0.0; 4]);
        assert_eq!(masked_prediction(&y, &mask(2, 2, &[1, 0, 0, 1])).unwrap(), [1.0, 0.0, 0.0, 4.0]);
        assert!(masked_prediction(&y, &Mask::filled(3, 2, true)).is_err());
    }

    #[test]
    fn mean_fat_cases() {
        let m = mask(2, 2, &[1, 1, 0, 0]);
        let masked = masked_prediction(&[10.0, 20.0, 30.0, 40.0], &m).unwrap();
        assert_eq!(mean_fat(&masked, &m).unwrap(), 15.0);
        let m = mask(2, 2, &[0, 1, 1, 1]);
        assert_eq!(mean_fat(&masked_prediction(&[7.0; 4], &m).unwrap(), &m).unwrap(), 7.0);
        assert!(matches!(mean_fat(&[0.0; 4], &Mask::filled(2, 2, false)), Err(Error::EmptyMask)));
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0], &[3.0]).unwrap(), 9.0);
        assert_eq!(mse(&[0.0, 0.0], &[3.0, 1.0]).unwrap(), 5.0);
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn oobl_cases() {
        assert_eq!(oobl(&[&[0.0, 50.0, 100.0]]), 0.0);
        assert_eq!(oobl(&[&[-1.0, 50.0, 101.0]]), 2.0);
        let m = mask(1, 3, &[0, 1, 0]);
        let masked = masked_prediction(&[-50.0, 10.0, 500.0], &m).unwrap();
        assert_eq!(oobl(&[&masked]), 0.0);
    }

    #[test]
    fn smoothness_cases() {
        let full = Mask::filled(2, 2, true);
        assert_eq!(smoothness(&[&[3.0; 4]], &[&full]).unwrap(), 0.0);
        assert_eq!(smoothness(&[&[0.0, 1.0, 2.0, 3.0]], &[&full]).unwrap(), 5.0);
        let ramp: Vec<f64> = (0..20).map(|i| (i % 5) as f64).collect();
        assert_eq!(smoothness(&[&ramp], &[&Mask::filled(4, 5, true)]).unwrap(), 1.0);
        let only_edges = mask(2, 2, &[0, 1, 1, 1]);
        assert_eq!(smoothness(&[&[0.0, 1.0, 2.0, 3.0]], &[&only_edges]).unwrap(), 0.0);
    }

    #[test]
    fn l2_cases() {
        assert_eq!(l2(&[0.0, 0.0]), 0.0);
        assert_eq!(l2(&[3.0, 4.0]), 25.0);
    }

    #[test]
    fn weighted_total() {
        let b = LossBreakdown::new(4.0, 2.0, 5.0, 25.0, LossWeights::default());
        assert!((b.total - 104.027).abs() < 1e-12);
        let zero = LossWeights { mse: 0.0, oobl: 0.0, sl: 0.0, l2: 0.0 };
        let m = Mask::filled(3, 3, true);
        let (b, _) = total_loss(&[&[40.0; 9]], &[&m], &[40.0], 0.0, zero).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn lambda_scales_only_its_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map: Vec<f64> = (0..30).map(|_| rng.random_range(-20.0..120.0)).collect();
        let m = Mask::filled(5, 6, true);
        let w = LossWeights::default();
        let (a, _) = total_loss(&[&map], &[&m], &[30.0], 2.0, w).unwrap();
        let (b, _) = total_loss(&[&map], &[&m], &[30.0], 2.0, LossWeights { sl: 3.0 * w.sl, ..w }).unwrap();
        assert!((b.total - a.total - 2.0 * w.sl * a.sl).abs() < 1e-9 * a.total);
    }

    #[test]
    fn smoothness_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let map: Vec<f64> = (0..42).map(|_| rng.random_range(0.0..10.0)).collect();
        let shifted: Vec<f64> = map.iter().map(|v| v + 17.5).collect();
        let m = Mask::from_fn(6, 7, |r, c| (r + c) % 3 != 0);
        let a = smoothness_single(&map, &m).unwrap();
        let b = smoothness_single(&shifted, &m).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn map_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w) = (5, 6);
        let maps: Vec<Vec<f64>> =
            (0..2).map(|_| (0..h * w).map(|_| rng.random_range(-30.0..130.0)).collect()).collect();
        let masks = [Mask::from_fn(h, w, |r, c| r > 0 && c + r < 9), Mask::from_fn(h, w, |r, _| r < 4)];
        let mask_refs: Vec<&Mask> = masks.iter().collect();
        let refs = [25.0, 60.0];
        let weights = LossWeights::default();
        let eval = |maps: &[Vec<f64>]| {
            let views: Vec<&[f64]> = maps.iter().map(|m| m.as_slice()).collect();
            total_loss(&views, &mask_refs, &refs, 0.0, weights).unwrap()
        };
        let (_, grads) = eval(&maps);
        let eps = 1e-5;
        for b in 0..2 {
            for i in 0..h * w {
                let mut p = maps.clone();
                p[b][i] += eps;
                let mut m = maps.clone();
                m[b][i] -= eps;
                let num = (eval(&p).0.total - eval(&m).0.total) / (2.0 * eps);
                let a = grads[b][i];
                let err = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
                assert!(err < 1e-5, "sample {b} pixel {i}: {a} vs {num}");
            }
        }
    }
}
