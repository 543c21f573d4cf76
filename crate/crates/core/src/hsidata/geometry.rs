use crate::error::{Error, Result};

/// Per-axis sizes of every stage of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AxisPlan {
    /// Input size of encoder level `s`.
    pub encoder_in: Vec<usize>,
    /// Output size of encoder level `s` before pooling; this is the skip tensor.
    pub encoder_skip: Vec<usize>,
    pub bottleneck_in: usize,
    pub bottleneck_out: usize,
    /// Size after upsampling at decoder level `s`.
    pub decoder_up: Vec<usize>,
    /// Output size of decoder level `s`; `decoder_out[0]` is the map size.
    pub decoder_out: Vec<usize>,
}

impl AxisPlan {
    fn from_output(levels: usize, out: usize, axis: &str) -> Result<Self> {
        let mut decoder_out = Vec::with_capacity(levels);
        let mut x = out;
        for s in 0..levels {
            if !x.is_multiple_of(2) {
                return Err(Error::Alignment(format!(
                    "{axis}: decoder size {x} at level {s} is odd"
                )));
            }
            decoder_out.push(x);
            x = (x + 4) / 2;
        }
        if x < 2 {
            return Err(Error::Alignment(format!("{axis}: bottleneck output {x} < 2")));
        }
        let bottleneck_out = x;
        let bottleneck_in = x + 4;
        let mut encoder_in = vec![0; levels];
        let mut encoder_skip = vec![0; levels];
        let mut pooled = bottleneck_in;
        for s in (0..levels).rev() {
            encoder_skip[s] = 2 * pooled;
            encoder_in[s] = encoder_skip[s] + 4;
            pooled = encoder_in[s];
        }
        let decoder_up = decoder_out.iter().map(|&x| x + 4).collect();
        Ok(Self { encoder_in, encoder_skip, bottleneck_in, bottleneck_out, decoder_up, decoder_out })
    }

    pub fn unet_input(&self) -> usize {
        self.encoder_in.first().copied().unwrap_or(self.bottleneck_in)
    }

    pub fn output(&self) -> usize {
        self.decoder_out.first().copied().unwrap_or(self.bottleneck_out)
    }
}

/// Spatial size bookkeeping for the stem + valid-convolution U-Net.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Geometry {
    pub levels: usize,
    pub stem_depth: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub unet_h: usize,
    pub unet_w: usize,
    pub stage1_h: usize,
    pub stage1_w: usize,
    pub padded_h: usize,
    pub padded_w: usize,
    /// Pixels of context consumed by the U-Net per axis.
    pub context: usize,
    pub rows: AxisPlan,
    pub cols: AxisPlan,
}

impl Geometry {
    /// `12 * 2^levels - 8`.
    pub fn context_for(levels: usize) -> usize {
        12 * (1usize << levels) - 8
    }

    /// Mirror margin added on each side in the second padding stage.
    pub fn mirror_margin(&self) -> usize {
        self.context
    }
}

pub fn compute_geometry(levels: usize, out_h: usize, out_w: usize, stem_depth: usize) -> Result<Geometry> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("output dimensions must be positive"));
    }
    if stem_depth == 0 {
        return Err(Error::invalid("stem depth must be positive"));
    }
    if levels > 16 {
        return Err(Error::invalid(format!("{levels} levels is unreasonable")));
    }
    let rows = AxisPlan::from_output(levels, out_h, "height")?;
    let cols = AxisPlan::from_output(levels, out_w, "width")?;
    let context = Geometry::context_for(levels);
    debug_assert_eq!(rows.unet_input(), out_h + context);
    debug_assert_eq!(cols.unet_input(), out_w + context);
    let unet_h = out_h + context;
    let unet_w = out_w + context;
    Ok(Geometry {
        levels,
        stem_depth,
        out_h,
        out_w,
        unet_h,
        unet_w,
        stage1_h: 2 * out_h,
        stage1_w: 2 * out_w,
        padded_h: 2 * unet_h,
        padded_w: 2 * unet_w,
        context,
        rows,
        cols,
    })
}
