use crate::error::{Error, Result};

/// Binary foreground mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "{} mask values for {height}x{width}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|&v| v > 1) {
            return Err(Error::invalid(format!("mask value {} at {i} is not binary", values[i])));
        }
        Ok(Self { height, width, values })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self { height, width, values: vec![value as u8; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c) as u8);
            }
        }
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.width + col] != 0
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }

    /// Mask as `0.0 / 1.0` floats.
    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    /// True if every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.values.iter().zip(&other.values).all(|(&a, &b)| a <= b)
    }

    pub fn flip_vertical(&self) -> Mask {
        let mut values = Vec::with_capacity(self.values.len());
        for r in (0..self.height).rev() {
            values.extend_from_slice(&self.values[r * self.width..(r + 1) * self.width]);
        }
        Mask { height: self.height, width: self.width, values }
    }

    pub fn flip_horizontal(&self) -> Mask {
        let mut values = self.values.clone();
        for row in values.chunks_mut(self.width) {
            row.reverse();
        }
        Mask { height: self.height, width: self.width, values }
    }
}

/// Erosion by the radius-one disk (the 4-neighbourhood cross). Pixels off
/// the image count as background.
pub fn erode_mask(mask: &Mask) -> Mask {
    let (h, w) = (mask.height, mask.width);
    Mask::from_fn(h, w, |r, c| {
        mask.get(r, c)
            && r > 0
            && c > 0
            && r + 1 < h
            && c + 1 < w
            && mask.get(r - 1, c)
            && mask.get(r + 1, c)
            && mask.get(r, c - 1)
            && mask.get(r, c + 1)
    })
}
