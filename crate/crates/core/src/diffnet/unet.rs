use super::ops::{self, ConvGrads};
use super::params::Layout;
use super::{NetParams, Tensor};
use crate::error::{Error, Result};
use crate::hsidata::{compute_geometry, Geometry, HsiCube};
use serde::{Deserialize, Serialize};

/// Architecture of the stem + U-Net.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub levels: usize,
    /// Channels at the top level; doubled per level down.
    pub base_width: usize,
    pub stem_depth: usize,
    /// Bands of the network input, after binning.
    pub bands: usize,
    /// Adjacent raw bands averaged into one input band.
    pub bin_factor: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl NetConfig {
    /// Configuration used in the paper: 996x452 maps from 62 binned bands.
    pub fn paper() -> Self {
        Self { levels: 4, base_width: 64, stem_depth: 7, bands: 62, bin_factor: 2, out_h: 996, out_w: 452 }
    }

    /// Smallest practical network: 104x104 input, 12x12 map.
    pub fn tiny() -> Self {
        Self { levels: 2, base_width: 4, stem_depth: 7, bands: 8, bin_factor: 1, out_h: 12, out_w: 12 }
    }

    pub fn geometry(&self) -> Result<Geometry> {
        compute_geometry(self.levels, self.out_h, self.out_w, self.stem_depth)
    }

    pub fn validate(&self) -> Result<Geometry> {
        if self.base_width == 0 || self.bin_factor == 0 {
            return Err(Error::invalid("base width and bin factor must be positive"));
        }
        if self.bands < self.stem_depth {
            return Err(Error::invalid(format!(
                "{} bands cannot feed a stem of depth {}",
                self.bands, self.stem_depth
            )));
        }
        self.geometry()
    }

    /// Channels produced by the stem.
    pub fn stem_channels(&self) -> usize {
        self.bands + 1 - self.stem_depth
    }

    /// Channel width at `level`; `level == levels` is the bottleneck.
    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }
}

/// Converts a padded cube into the network's input tensor.
pub fn cube_tensor(cube: &HsiCube) -> Tensor {
    Tensor::new(&[cube.bands(), cube.height(), cube.width()], cube.to_f64()).expect("cube shape")
}

#[derive(Debug, Clone)]
struct ConvRecord {
    input: Tensor,
    /// Post-ReLU output.
    output: Tensor,
}

/// Intermediate activations retained for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Tensor,
    encoder: Vec<[ConvRecord; 2]>,
    pool_argmax: Vec<Vec<u8>>,
    bottleneck: [ConvRecord; 2],
    /// Indexed by level.
    decoder: Vec<[ConvRecord; 2]>,
    head_input: Tensor,
}

fn expect_dims(t: &Tensor, channels: usize, h: usize, w: usize, layer: &str) -> Result<()> {
    let d = t.dims3();
    if d != (channels, h, w) {
        return Err(Error::shape(format!(
            "{layer}: produced {d:?}, geometry requires {:?}",
            (channels, h, w)
        )));
    }
    Ok(())
}

fn conv_relu(params: &NetParams, index: usize, input: Tensor) -> Result<ConvRecord> {
    let mut output = ops::conv2d_valid(&input, params.tensor(index), params.tensor(index + 1).data())?;
    ops::relu_inplace(&mut output);
    Ok(ConvRecord { input, output })
}

fn block(params: &NetParams, index: usize, input: Tensor) -> Result<[ConvRecord; 2]> {
    let a = conv_relu(params, index, input)?;
    let b = conv_relu(params, index + 2, a.output.clone())?;
    Ok([a, b])
}

/// Runs the network, checking every intermediate size against the geometry.
/// Returns the `out_h x out_w` map and the cache for [`unet_backward`].
pub fn unet_forward(config: &NetConfig, params: &NetParams, input: &Tensor) -> Result<(Vec<f64>, ForwardCache)> {
    let g = config.validate()?;
    let layout = Layout::new(config.levels);
    if input.shape().len() != 3 {
        return Err(Error::shape(format!("input must be rank 3, got {:?}", input.shape())));
    }
    expect_dims(input, config.bands, g.padded_h, g.padded_w, "input")?;
    let stem_bias = params.tensor(Layout::STEM + 1).data()[0];
    let mut x = ops::conv3d_stem(input, params.tensor(Layout::STEM), stem_bias)?;
    expect_dims(&x, config.stem_channels(), g.unet_h, g.unet_w, "stem")?;

    let mut encoder = Vec::with_capacity(config.levels);
    let mut pool_argmax = Vec::with_capacity(config.levels);
    for s in 0..config.levels {
        let recs = block(params, layout.encoder(s, 0), x)?;
        expect_dims(&recs[1].output, config.width(s), g.rows.encoder_skip[s], g.cols.encoder_skip[s], "encoder")?;
        let (pooled, arg) = ops::maxpool2(&recs[1].output)?;
        x = pooled;
        encoder.push(recs);
        pool_argmax.push(arg);
    }
    let pooled_channels = match config.levels {
        0 => config.stem_channels(),
        l => config.width(l - 1),
    };
    expect_dims(&x, pooled_channels, g.rows.bottleneck_in, g.cols.bottleneck_in, "bottleneck input")?;
    let bottleneck = block(params, layout.bottleneck(0), x)?;
    let wb = config.width(config.levels);
    expect_dims(&bottleneck[1].output, wb, g.rows.bottleneck_out, g.cols.bottleneck_out, "bottleneck")?;

    let mut x = bottleneck[1].output.clone();
    let mut decoder: Vec<Option<[ConvRecord; 2]>> = vec![None; config.levels];
    for s in (0..config.levels).rev() {
        let up = ops::upsample_bilinear2(&x)?;
        expect_dims(&up, x.dims3().0, g.rows.decoder_up[s], g.cols.decoder_up[s], "upsample")?;
        let cat = ops::center_crop_concat(&encoder[s][1].output, &up)?;
        let recs = block(params, layout.decoder(s, 0), cat)?;
        expect_dims(&recs[1].output, config.width(s), g.rows.decoder_out[s], g.cols.decoder_out[s], "decoder")?;
        x = recs[1].output.clone();
        decoder[s] = Some(recs);
    }
    let head = layout.head();
    let out = ops::conv2d_valid(&x, params.tensor(head), params.tensor(head + 1).data())?;
    expect_dims(&out, 1, g.out_h, g.out_w, "head")?;
    let cache = ForwardCache {
        input: input.clone(),
        encoder,
        pool_argmax,
        bottleneck,
        decoder: decoder.into_iter().map(|d| d.expect("every level visited")).collect(),
        head_input: x,
    };
    Ok((out.into_data(), cache))
}

fn store(grads: &mut NetParams, index: usize, g: ConvGrads) -> Tensor {
    *grads.tensor_mut(index) = g.kernel;
    *grads.tensor_mut(index + 1) = Tensor::new(&[g.bias.len()], g.bias).expect("bias shape");
    g.input
}

/// Reverse pass of one conv+ReLU pair; `grad` is the gradient of the second
/// ReLU's output. Returns the gradient of the block input.
fn block_backward(params: &NetParams, grads: &mut NetParams, index: usize, recs: &[ConvRecord; 2], mut grad: Tensor) -> Tensor {
    ops::relu_backward_inplace(&recs[1].output, &mut grad);
    let g = ops::conv2d_valid_backward(&recs[1].input, params.tensor(index + 2), &grad);
    let mut grad = store(grads, index + 2, g);
    ops::relu_backward_inplace(&recs[0].output, &mut grad);
    let g = ops::conv2d_valid_backward(&recs[0].input, params.tensor(index), &grad);
    store(grads, index, g)
}

/// Gradient of a scalar loss with respect to every parameter, given the
/// loss gradient with respect to the output map.
pub fn unet_backward(config: &NetConfig, params: &NetParams, cache: &ForwardCache, grad_map: &[f64]) -> Result<NetParams> {
    let layout = Layout::new(config.levels);
    let mut grads = params.zeros_like();
    let (oh, ow) = (config.out_h, config.out_w);
    if grad_map.len() != oh * ow {
        return Err(Error::shape(format!("map gradient has {} values, expected {}", grad_map.len(), oh * ow)));
    }
    let grad = Tensor::new(&[1, oh, ow], grad_map.to_vec())?;
    let head = layout.head();
    let g = ops::conv2d_valid_backward(&cache.head_input, params.tensor(head), &grad);
    let mut grad = store(&mut grads, head, g);

    let mut skip_grads: Vec<Option<Tensor>> = vec![None; config.levels];
    for s in 0..config.levels {
        let recs = &cache.decoder[s];
        let gcat = block_backward(params, &mut grads, layout.decoder(s, 0), recs, grad);
        let (gskip, gup) = ops::center_crop_concat_backward(cache.encoder[s][1].output.dims3(), &gcat);
        skip_grads[s] = Some(gskip);
        let below = if s + 1 < config.levels {
            cache.decoder[s + 1][1].output.dims3()
        } else {
            cache.bottleneck[1].output.dims3()
        };
        grad = ops::upsample_bilinear2_backward(below, &gup);
    }
    grad = block_backward(params, &mut grads, layout.bottleneck(0), &cache.bottleneck, grad);
    for s in (0..config.levels).rev() {
        let skip = &cache.encoder[s][1].output;
        let mut g = ops::maxpool2_backward(skip.dims3(), &cache.pool_argmax[s], &grad);
        if let Some(gs) = skip_grads[s].take() {
            for (a, b) in g.data_mut().iter_mut().zip(gs.data()) {
                *a += b;
            }
        }
        grad = block_backward(params, &mut grads, layout.encoder(s, 0), &cache.encoder[s], g);
    }
    let (dk, db) = ops::conv3d_stem_backward(&cache.input, params.tensor(Layout::STEM), &grad);
    *grads.tensor_mut(Layout::STEM) = dk;
    grads.tensor_mut(Layout::STEM + 1).data_mut()[0] = db;
    Ok(grads)
}

/// Forward pass without keeping the cache.
pub fn predict_map(config: &NetConfig, params: &NetParams, input: &Tensor) -> Result<Vec<f64>> {
    unet_forward(config, params, input).map(|(map, _)| map)
}
