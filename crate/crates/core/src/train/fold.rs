use super::adam::{adam_step, AdamConfig, AdamState};
use super::schedule::{schedule_update, Action, ScheduleConfig, ScheduleState, StopReason};
use crate::diffnet::{cube_tensor, unet_backward, unet_forward, NetConfig, NetParams, Tensor};
use crate::error::{Error, Result};
use crate::hsidata::{pad_two_stage, prepare_unet_mask, random_flip, Geometry, HsiCube, Mask, PadOptions};
use crate::loss::{total_loss, LossBreakdown, LossRow, LossWeights};
use crate::map::ChemicalMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Everything that controls one training run besides the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub net: NetConfig,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default = "default_flip")]
    pub flip_probability: f64,
}

fn default_flip() -> f64 {
    0.5
}

impl TrainConfig {
    pub fn new(net: NetConfig) -> Self {
        Self {
            net,
            loss: LossWeights::default(),
            adam: AdamConfig::default(),
            schedule: ScheduleConfig::default(),
            flip_probability: default_flip(),
        }
    }
}

/// One slice: network-ready absorbance cube (bands already selected and
/// binned), its mask, and the belly-level reference.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub cube: HsiCube,
    pub mask: Mask,
    pub reference: f64,
}

/// A sample padded to the network input, with the mask at map resolution.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub input: Tensor,
    pub mask: Mask,
    pub reference: f64,
}

pub fn prepare_sample(cube: &HsiCube, mask: &Mask, reference: f64, geometry: &Geometry) -> Result<PreparedSample> {
    let (padded, stage1) = pad_two_stage(cube, mask, geometry, PadOptions::default())?;
    let mask = prepare_unet_mask(&stage1, geometry)?;
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(PreparedSample { input: cube_tensor(&padded), mask, reference })
}

/// SplitMix64 finalizer over the concatenated parts.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base;
    for &p in parts {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}

/// Set-level loss of `params` on un-augmented samples; identical to using
/// the whole set as one batch.
pub fn epoch_eval(config: &TrainConfig, params: &NetParams, samples: &[PreparedSample]) -> Result<LossBreakdown> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty set"));
    }
    let mut maps = Vec::with_capacity(samples.len());
    for s in samples {
        maps.push(unet_forward(&config.net, params, &s.input)?.0);
    }
    let views: Vec<&[f64]> = maps.iter().map(|m| m.as_slice()).collect();
    let masks: Vec<&Mask> = samples.iter().map(|s| &s.mask).collect();
    let refs: Vec<f64> = samples.iter().map(|s| s.reference).collect();
    Ok(total_loss(&views, &masks, &refs, params.weight_sq_norm(), config.loss)?.0)
}

/// Un-augmented loss of one sample.
pub fn sample_loss(config: &TrainConfig, params: &NetParams, sample: &PreparedSample) -> Result<LossBreakdown> {
    epoch_eval(config, params, std::slice::from_ref(sample))
}

/// Loss of one sample and the gradient of the total loss w.r.t. every
/// parameter, L2 term included.
pub fn sample_loss_grad(
    config: &TrainConfig,
    params: &NetParams,
    sample: &PreparedSample,
) -> Result<(LossBreakdown, NetParams)> {
    let (map, cache) = unet_forward(&config.net, params, &sample.input)?;
    let (loss, grad_maps) = total_loss(&[&map], &[&sample.mask], &[sample.reference], params.weight_sq_norm(), config.loss)?;
    let mut grads = unet_backward(&config.net, params, &cache, &grad_maps[0])?;
    grads.add_scaled(2.0 * config.loss.l2, params, true);
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    /// Weights that achieved `best_val_mse`.
    pub params: NetParams,
    pub best_val_mse: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Train and validation breakdown per epoch.
    pub log: Vec<LossRow>,
    pub stop_reason: StopReason,
    /// Learning rate in effect per epoch.
    pub lr_history: Vec<f64>,
}

/// Trains one model with batch size one, then returns the best snapshot.
pub fn train_fold(config: &TrainConfig, train: &[Sample], val: &[Sample], seed: u64) -> Result<FoldResult> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    if let Some(s) = train.iter().find(|s| val.iter().any(|v| v.id == s.id)) {
        return Err(Error::invalid(format!("sample {} is in both training and validation sets", s.id)));
    }
    let geometry = config.net.validate()?;
    for s in train.iter().chain(val) {
        if s.cube.bands() != config.net.bands {
            return Err(Error::shape(format!(
                "sample {} has {} bands, network expects {}",
                s.id,
                s.cube.bands(),
                config.net.bands
            )));
        }
    }
    let prep = |set: &[Sample]| -> Result<Vec<PreparedSample>> {
        set.iter().map(|s| prepare_sample(&s.cube, &s.mask, s.reference, &geometry)).collect()
    };
    let train_eval = prep(train)?;
    let val_eval = prep(val)?;

    let mut params = NetParams::init_kaiming(&config.net, derive_seed(seed, &[0]));
    let mut adam = AdamState::new(config.adam, &params);
    let mut schedule = ScheduleState::new(config.schedule, config.adam.lr);
    let mut best = (params.clone(), adam.clone());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut lr_history = Vec::new();

    loop {
        let epoch = schedule.epoch + 1;
        lr_history.push(adam.lr);
        order.shuffle(&mut shuffle_rng);
        for (step, &i) in order.iter().enumerate() {
            let s = &train[i];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2, epoch as u64, step as u64]));
            let (cube, mask, _) = random_flip(&s.cube, &s.mask, &mut rng, config.flip_probability);
            let sample = prepare_sample(&cube, &mask, s.reference, &geometry)?;
            let (loss, grads) = sample_loss_grad(config, &params, &sample)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, sample: i });
            }
            adam_step(&mut adam, &mut params, &grads)?;
        }
        let tr = epoch_eval(config, &params, &train_eval)?;
        let va = epoch_eval(config, &params, &val_eval)?;
        log.push(tr.row(epoch, "train"));
        log.push(va.row(epoch, "val"));
        if !va.mse.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, sample: 0 });
        }
        let decision = schedule_update(&mut schedule, va.mse);
        if decision.improved {
            best = (params.clone(), adam.clone());
        }
        match decision.action {
            Action::Continue => {}
            Action::ReduceLrAndRestore { lr } => {
                params = best.0.clone();
                adam = best.1.clone();
                adam.lr = lr;
            }
            Action::StopAndRestore(reason) => {
                return Ok(FoldResult {
                    params: best.0,
                    best_val_mse: schedule.best_val_mse,
                    best_epoch: schedule.best_epoch,
                    epochs_run: schedule.epoch,
                    log,
                    stop_reason: reason,
                    lr_history,
                });
            }
        }
    }
}

/// Uniform average of member maps on one slice. The mask is the network
/// mask; unmasked pixels keep the raw network output.
pub fn ensemble_predict(
    config: &NetConfig,
    members: &[NetParams],
    cube: &HsiCube,
    mask: &Mask,
) -> Result<ChemicalMap> {
    if members.is_empty() {
        return Err(Error::invalid("ensemble has no members"));
    }
    for m in members {
        m.validate(config)?;
    }
    let geometry = config.validate()?;
    let (padded, stage1) = pad_two_stage(cube, mask, &geometry, PadOptions::default())?;
    let net_mask = prepare_unet_mask(&stage1, &geometry)?;
    let input = cube_tensor(&padded);
    let mut sum = vec![0.0; config.out_h * config.out_w];
    for m in members {
        let map = unet_forward(config, m, &input)?.0;
        for (s, v) in sum.iter_mut().zip(map) {
            *s += v;
        }
    }
    let k = members.len() as f64;
    let values = sum.iter().map(|s| s / k).collect();
    ChemicalMap::new(values, net_mask)
}

/// Mean over the masked pixels of all slice maps of one belly.
pub fn belly_prediction(maps: &[&ChemicalMap]) -> Result<f64> {
    let (sum, count) = maps.iter().fold((0.0, 0usize), |(s, c), m| {
        let (ms, mc) = m.masked_sum();
        (s + ms, c + mc)
    });
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / count as f64)
}
