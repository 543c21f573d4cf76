use rand::Rng;

use super::{HsiCube, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlipDecision {
    pub horizontal: bool,
    pub vertical: bool,
}

/// Draws exactly two uniforms from `rng` (horizontal first) and flips cube and
/// mask together.
pub fn random_flip<R: Rng + ?Sized>(
    cube: &HsiCube,
    mask: &Mask,
    rng: &mut R,
    probability: f64,
) -> (HsiCube, Mask, FlipDecision) {
    let h: f64 = rng.random();
    let v: f64 = rng.random();
    let decision = FlipDecision { horizontal: h < probability, vertical: v < probability };
    let (cube, mask) = apply_flips(cube, mask, decision);
    (cube, mask, decision)
}

pub fn apply_flips(cube: &HsiCube, mask: &Mask, decision: FlipDecision) -> (HsiCube, Mask) {
    let (h, w) = (cube.height(), cube.width());
    if !decision.horizontal && !decision.vertical {
        return (cube.clone(), mask.clone());
    }
    let mut values = Vec::with_capacity(cube.values().len());
    for b in 0..cube.bands() {
        let plane = cube.band_plane(b);
        for r in 0..h {
            let sr = if decision.vertical { h - 1 - r } else { r };
            let row = &plane[sr * w..(sr + 1) * w];
            if decision.horizontal {
                values.extend(row.iter().rev());
            } else {
                values.extend_from_slice(row);
            }
        }
    }
    let cube = HsiCube::from_parts_unchecked(
        cube.bands(),
        h,
        w,
        values,
        cube.wavelengths().to_vec(),
        cube.space(),
    );
    let mut mask = mask.clone();
    if decision.vertical {
        mask = mask.flip_vertical();
    }
    if decision.horizontal {
        mask = mask.flip_horizontal();
    }
    (cube, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hsidata::Space;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> (HsiCube, Mask) {
        let cube = HsiCube::from_fn(3, 4, 5, vec![1.0, 2.0, 3.0], Space::Absorbance, |b, r, c| {
            (b * 100 + r * 10 + c) as f32
        })
        .unwrap();
        let mask = Mask::from_fn(4, 5, |r, c| r < 2 && c > 1);
        (cube, mask)
    }

    #[test]
    fn flips_are_involutions() {
        let (cube, mask) = sample();
        let both = FlipDecision { horizontal: true, vertical: true };
        let (c1, m1) = apply_flips(&cube, &mask, both);
        assert_ne!(c1, cube);
        assert_eq!(c1.get(2, 0, 0), cube.get(2, 3, 4));
        assert!(m1.get(3, 0) && !m1.get(0, 0));
        let (c2, m2) = apply_flips(&c1, &m1, both);
        assert_eq!((c2, m2), (cube, mask));
    }

    #[test]
    fn zero_probability_is_identity() {
        let (cube, mask) = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (c, m, d) = random_flip(&cube, &mask, &mut rng, 0.0);
            assert_eq!(d, FlipDecision::default());
            assert_eq!((c, m), (cube.clone(), mask.clone()));
        }
    }

    #[test]
    fn seeded_sequence_repeats_and_uses_two_draws() {
        let (cube, mask) = sample();
        let trace = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let flips: Vec<_> = (0..16).map(|_| random_flip(&cube, &mask, &mut rng, 0.5).2).collect();
            (flips, rng.random::<u64>())
        };
        assert_eq!(trace(11), trace(11));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let _ = random_flip(&cube, &mask, &mut rng, 0.0);
        let mut reference = ChaCha8Rng::seed_from_u64(11);
        let _: (f64, f64) = (reference.random(), reference.random());
        assert_eq!(rng.random::<u64>(), reference.random::<u64>());
    }
}
