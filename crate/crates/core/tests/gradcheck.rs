use chemmap_core::diffnet::{grad_check, GradCheckOptions, NetConfig, NetParams};
use chemmap_core::hsidata::{HsiCube, Mask, Space};
use chemmap_core::loss::LossWeights;
use chemmap_core::train::{prepare_sample, sample_loss, sample_loss_grad, PreparedSample, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_sample(seed: u64, reference: f64) -> (TrainConfig, PreparedSample) {
    let cfg = TrainConfig::new(NetConfig::tiny());
    let g = cfg.net.geometry().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wl: Vec<f32> = (0..8).map(|b| 1000.0 + 10.0 * b as f32).collect();
    let values: Vec<f32> = (0..8 * 24 * 24).map(|_| rng.random_range(0.0..1.0)).collect();
    let cube = HsiCube::new(8, 24, 24, values, wl, Space::Absorbance).unwrap();
    let mask = Mask::from_fn(24, 24, |r, c| (r as f64 - 12.0).hypot(c as f64 - 11.0) < 9.0);
    (cfg, prepare_sample(&cube, &mask, reference, &g).unwrap())
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let (cfg, sample) = tiny_sample(1, 0.5);
    let params = NetParams::init_kaiming(&cfg.net, 5);
    let (_, analytic) = sample_loss_grad(&cfg, &params, &sample).unwrap();
    let report = grad_check(&params, &analytic, GradCheckOptions::default(), |p| {
        Ok(sample_loss(&cfg, p, &sample)?.total)
    })
    .unwrap();
    println!("{report:?}");
    assert!(report.max_rel_err < 1e-4);
}

#[test]
fn l2_only_gradient_is_twice_the_weights() {
    let (mut cfg, sample) = tiny_sample(2, 30.0);
    cfg.loss = LossWeights { mse: 0.0, oobl: 0.0, sl: 0.0, l2: 1.0 };
    let params = NetParams::init_kaiming(&cfg.net, 6);
    let (_, grads) = sample_loss_grad(&cfg, &params, &sample).unwrap();
    for (p, g) in params.params().iter().zip(grads.params()) {
        for (&v, &d) in p.value.data().iter().zip(g.value.data()) {
            assert_eq!(d, if p.is_weight { 2.0 * v } else { 0.0 });
        }
    }
}

#[test]
fn constant_loss_has_zero_gradient() {
    let (mut cfg, sample) = tiny_sample(3, 30.0);
    cfg.loss = LossWeights { mse: 0.0, oobl: 0.0, sl: 0.0, l2: 0.0 };
    let params = NetParams::init_kaiming(&cfg.net, 7);
    let (_, grads) = sample_loss_grad(&cfg, &params, &sample).unwrap();
    assert!(grads.flat().iter().all(|&g| g == 0.0));
}
