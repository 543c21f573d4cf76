use super::{erode_mask, Geometry, HsiCube, Mask};
use crate::error::{Error, Result};

/// How one axis of the source image lands in the stage-1 frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagePlan {
    /// First source index copied.
    pub src_start: usize,
    /// Destination index of `src_start` in the stage-1 frame.
    pub dst_start: usize,
    /// Number of source pixels copied.
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadOptions {
    /// Center-crop sources larger than the stage-1 frame instead of failing.
    pub allow_crop: bool,
}

impl Default for PadOptions {
    fn default() -> Self {
        Self { allow_crop: true }
    }
}

/// Padding is split evenly, the odd pixel going to the bottom/right; oversized
/// axes are center-cropped.
pub fn stage1_plan(size: usize, target: usize, opts: PadOptions) -> Result<StagePlan> {
    if size <= target {
        Ok(StagePlan { src_start: 0, dst_start: (target - size) / 2, len: size })
    } else if opts.allow_crop {
        Ok(StagePlan { src_start: (size - target) / 2, dst_start: 0, len: target })
    } else {
        Err(Error::shape(format!("size {size} exceeds stage-1 target {target} and cropping is disabled")))
    }
}

/// Symmetric reflection (edge pixel repeated) of `i` into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

/// Background-pads (or crops) to the stage-1 frame, then mirror-pads to the
/// network input size. Returns the padded cube and the source mask mapped
/// onto the stage-1 frame, with background-padded pixels cleared.
pub fn pad_two_stage(
    cube: &HsiCube,
    mask: &Mask,
    geometry: &Geometry,
    opts: PadOptions,
) -> Result<(HsiCube, Mask)> {
    if cube.height() != mask.height() || cube.width() != mask.width() {
        return Err(Error::shape(format!(
            "cube {}x{} vs mask {}x{}",
            cube.height(),
            cube.width(),
            mask.height(),
            mask.width()
        )));
    }
    let (s1h, s1w) = (geometry.stage1_h, geometry.stage1_w);
    let rows = stage1_plan(cube.height(), s1h, opts)?;
    let cols = stage1_plan(cube.width(), s1w, opts)?;
    let background = cube.edge_column_spectrum();

    // Source pixel for each stage-1 coordinate, if any.
    let src_of = |plan: &StagePlan, i: usize| -> Option<usize> {
        (i >= plan.dst_start && i < plan.dst_start + plan.len).then(|| plan.src_start + i - plan.dst_start)
    };
    let row_src: Vec<Option<usize>> = (0..s1h).map(|i| src_of(&rows, i)).collect();
    let col_src: Vec<Option<usize>> = (0..s1w).map(|i| src_of(&cols, i)).collect();

    let stage1_mask = Mask::from_fn(s1h, s1w, |r, c| match (row_src[r], col_src[c]) {
        (Some(sr), Some(sc)) => mask.get(sr, sc),
        _ => false,
    });

    let (ph, pw) = (geometry.padded_h, geometry.padded_w);
    let margin_h = (ph - s1h) / 2;
    let margin_w = (pw - s1w) / 2;
    let pr: Vec<Option<usize>> =
        (0..ph).map(|r| row_src[reflect(r as isize - margin_h as isize, s1h)]).collect();
    let pc: Vec<Option<usize>> =
        (0..pw).map(|c| col_src[reflect(c as isize - margin_w as isize, s1w)]).collect();

    let bands = cube.bands();
    let mut values = vec![0f32; bands * ph * pw];
    for (b, out) in values.chunks_mut(ph * pw).enumerate() {
        let plane = cube.band_plane(b);
        let bg = background[b] as f32;
        for (r, row) in out.chunks_mut(pw).enumerate() {
            match pr[r] {
                Some(sr) => {
                    let src_row = &plane[sr * cube.width()..(sr + 1) * cube.width()];
                    for (o, src) in row.iter_mut().zip(&pc) {
                        *o = src.map_or(bg, |sc| src_row[sc]);
                    }
                }
                None => row.fill(bg),
            }
        }
    }
    let padded = HsiCube::from_parts_unchecked(
        bands,
        ph,
        pw,
        values,
        cube.wavelengths().to_vec(),
        cube.space(),
    );
    Ok((padded, stage1_mask))
}

/// Halves a stage-1 mask by 2x2 block means, rounds half up, then erodes.
pub fn prepare_unet_mask(stage1: &Mask, geometry: &Geometry) -> Result<Mask> {
    if stage1.height() != geometry.stage1_h || stage1.width() != geometry.stage1_w {
        return Err(Error::shape(format!(
            "mask {}x{} does not match stage-1 frame {}x{}",
            stage1.height(),
            stage1.width(),
            geometry.stage1_h,
            geometry.stage1_w
        )));
    }
    if !stage1.height().is_multiple_of(2) || !stage1.width().is_multiple_of(2) {
        return Err(Error::shape("stage-1 mask dimensions must be even"));
    }
    Ok(erode_mask(&downsample_mask(stage1)))
}

/// 2x2 block mean rounded half up, without erosion.
pub(crate) fn downsample_mask(mask: &Mask) -> Mask {
    Mask::from_fn(mask.height() / 2, mask.width() / 2, |r, c| {
        let ones = mask.get(2 * r, 2 * c) as u8
            + mask.get(2 * r, 2 * c + 1) as u8
            + mask.get(2 * r + 1, 2 * c) as u8
            + mask.get(2 * r + 1, 2 * c + 1) as u8;
        ones >= 2
    })
}
