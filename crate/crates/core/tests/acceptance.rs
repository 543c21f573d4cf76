//! Acceptance suite, run without the libtest harness so that every criterion
//! prints its `PASS` or `FAIL` line even when it passes. Extra arguments are
//! substrings that select criteria by name (`cargo test --test acceptance -- c1 c6`).

use chemmap_core::chemo::{ikpls, savgol, SavgolParams};
use chemmap_core::diffnet::{grad_check, GradCheckOptions, NetConfig, NetParams};
use chemmap_core::geostat::nugget;
use chemmap_core::hsidata::{compute_geometry, erode_mask, HsiCube, Mask, Space};
use chemmap_core::loss::smoothness_single;
use chemmap_core::pipeline::{
    run_analyze, run_pls_predict, run_pls_train, run_report, run_split, run_synth, run_unet_predict, run_unet_train,
    PipelineConfig,
};
use chemmap_core::study::{run_study, StudyConfig, StudyOutcome};
use chemmap_core::synth::BatchConfig;
use chemmap_core::train::{
    prepare_sample, sample_loss, sample_loss_grad, schedule_update, Action, ScheduleConfig, ScheduleState, StopReason,
    TrainConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

fn verdict(id: &str, ok: bool, detail: String) {
    println!("{} criterion {id}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {id} failed: {detail}");
}

fn main() {
    let criteria: [(&str, fn()); 9] = [
        ("c1_gradient_fidelity", c1_gradient_fidelity),
        ("c2_geometry_reproduction", c2_geometry_reproduction),
        ("c3_nugget_identity", c3_nugget_identity),
        ("c4_pls_oracle_equivalence", c4_pls_oracle_equivalence),
        ("c5_savitzky_golay", c5_savitzky_golay),
        ("c6_schedule_state_machine", c6_schedule_state_machine),
        ("c7_phantom_study", c7_phantom_study),
        ("c8_determinism", c8_determinism),
        ("c9_smoothing_counter_experiment", c9_smoothing_counter_experiment),
    ];
    // Flags such as `--nocapture` or `--test-threads` come from cargo and are ignored.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        if std::panic::catch_unwind(run).is_err() {
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}

fn c1_gradient_fidelity() {
    let start = Instant::now();
    let cfg = TrainConfig::new(NetConfig::tiny());
    let g = cfg.net.geometry().unwrap();
    assert_eq!((g.padded_h, g.padded_w), (104, 104));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let wl: Vec<f32> = (0..8).map(|b| 1000.0 + 10.0 * b as f32).collect();
    let values: Vec<f32> = (0..8 * 24 * 24).map(|_| rng.random_range(0.0..1.0)).collect();
    let cube = HsiCube::new(8, 24, 24, values, wl, Space::Absorbance).unwrap();
    let mask = Mask::from_fn(24, 24, |r, c| (r as f64 - 12.0).hypot(c as f64 - 11.0) < 9.0);
    let sample = prepare_sample(&cube, &mask, 0.5, &g).unwrap();
    let params = NetParams::init_kaiming(&cfg.net, 12);
    let (_, analytic) = sample_loss_grad(&cfg, &params, &sample).unwrap();
    let report = grad_check(&params, &analytic, GradCheckOptions::default(), |p| Ok(sample_loss(&cfg, p, &sample)?.total))
        .unwrap();
    let elapsed = start.elapsed();
    verdict(
        "1",
        report.checked == params.len() && report.max_rel_err < 1e-4 && elapsed < Duration::from_secs(120),
        format!(
            "max relative error {:.2e} over {} parameters ({} stepped down at kinks) in {:.1} s",
            report.max_rel_err,
            report.checked,
            report.refined,
            elapsed.as_secs_f64()
        ),
    );
}

fn c2_geometry_reproduction() {
    let g = compute_geometry(4, 996, 452, 7).unwrap();
    let got = [(g.padded_h, g.padded_w), (g.unet_h, g.unet_w), (g.out_h, g.out_w), (g.stage1_h, g.stage1_w)];
    let want = [(2360, 1272), (1180, 636), (996, 452), (1992, 904)];
    let paper = NetConfig::paper().geometry().unwrap();
    verdict("2", got == want && paper == g, format!("padded/unet/output/stage-1 = {got:?}"));
}

fn c3_nugget_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let h = rng.random_range(4..40);
        let w = rng.random_range(4..40);
        let p = rng.random_range(0.5..0.95);
        let keep: Vec<bool> = (0..h * w).map(|_| rng.random_bool(p)).collect();
        let mask = erode_mask(&Mask::from_fn(h, w, |r, c| keep[r * w + c]));
        let map: Vec<f64> = (0..h * w).map(|_| rng.random_range(-50.0..150.0)).collect();
        if mask.is_empty() {
            continue;
        }
        let c0 = nugget(&map, &mask).unwrap();
        let sl = smoothness_single(&map, &mask).unwrap();
        let rel = (c0 - sl / 4.0).abs() / c0.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(if c0 == 0.0 && sl == 0.0 { 0.0 } else { rel });
    }
    verdict("3", worst < 1e-10, format!("max relative |C0 - SL/4| = {worst:.2e} on 100 pairs"));
}

/// Textbook NIPALS PLS1 with explicit deflation of X, returning the
/// cumulative regression vectors.
fn nipals(x: &DMatrix<f64>, y: &DVector<f64>, a: usize) -> Vec<DVector<f64>> {
    let p = x.ncols();
    let mut e = x.clone();
    let mut f = y.clone();
    let mut w_mat = DMatrix::zeros(p, a);
    let mut p_mat = DMatrix::zeros(p, a);
    let mut q = DVector::zeros(a);
    let mut out = Vec::new();
    for k in 0..a {
        let mut w = e.transpose() * &f;
        w /= w.norm();
        let t = &e * &w;
        let tt = t.dot(&t);
        let pk = e.transpose() * &t / tt;
        let qk = f.dot(&t) / tt;
        e -= &t * pk.transpose();
        f -= &t * qk;
        w_mat.set_column(k, &w);
        p_mat.set_column(k, &pk);
        q[k] = qk;
        let wk = w_mat.columns(0, k + 1).into_owned();
        let pw = p_mat.columns(0, k + 1).transpose() * &wk;
        let b = &wk * pw.try_inverse().unwrap() * q.rows(0, k + 1);
        out.push(b);
    }
    out
}

fn centered(rng: &mut ChaCha8Rng, n: usize, p: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let mut y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    for j in 0..p {
        let m = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-m);
    }
    let m = y.mean();
    y.add_scalar_mut(-m);
    (x, y)
}

fn c4_pls_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = rng.random_range(2..=10);
        let n = rng.random_range(p.min(5) + 2..=20);
        let a = rng.random_range(1..=5usize.min(p).min(n - 1));
        let (x, y) = centered(&mut rng, n, p);
        let fit = ikpls(&x, &y, a).unwrap();
        for (b, o) in fit.coefficients.iter().zip(nipals(&x, &y, a)) {
            worst = worst.max((b - &o).amax() / o.amax().max(1.0));
        }
    }
    let mut ols_worst = 0.0f64;
    for _ in 0..5 {
        let p = rng.random_range(2..=8);
        let (x, y) = centered(&mut rng, p + 10, p);
        let fit = ikpls(&x, &y, p).unwrap();
        let ols = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * &y));
        ols_worst = ols_worst.max((fit.coefficients.last().unwrap() - &ols).amax() / ols.amax().max(1.0));
    }
    verdict(
        "4",
        worst < 1e-8 && ols_worst < 1e-8,
        format!("IKPLS vs NIPALS max {worst:.2e} (20 instances), full rank vs OLS max {ols_worst:.2e}"),
    );
}

fn c5_savitzky_golay() {
    let params = SavgolParams { window: 7, poly: 2, deriv: 2 };
    let p = 25;
    let rows = [
        (0..p).map(|i| (i as f64).powi(2)).collect::<Vec<_>>(),
        vec![4.2; p],
        (0..p).map(|i| 0.7 * i as f64 - 3.0).collect(),
    ];
    let x = DMatrix::from_fn(3, p, |r, c| rows[r][c]);
    let out = savgol(&x, params).unwrap();
    let sq_err = out.row(0).iter().map(|v| (v - 2.0).abs()).fold(0.0, f64::max);
    let flat = out.rows(1, 2).iter().map(|v| v.abs()).fold(0.0, f64::max);
    verdict(
        "5",
        out.ncols() == p - 6 && sq_err < 1e-9 && flat < 1e-9,
        format!("x^2 -> 2 within {sq_err:.1e}; constant and linear -> 0 within {flat:.1e}"),
    );
}

fn trace_events(config: ScheduleConfig, lr: f64, trace: impl IntoIterator<Item = f64>) -> (Vec<(usize, Action)>, ScheduleState) {
    let mut s = ScheduleState::new(config, lr);
    let mut events = Vec::new();
    for v in trace {
        let d = schedule_update(&mut s, v);
        if d.action != Action::Continue {
            events.push((s.epoch, d.action));
        }
        if matches!(d.action, Action::StopAndRestore(_)) {
            break;
        }
    }
    (events, s)
}

fn c6_schedule_state_machine() {
    let cfg = ScheduleConfig::default();
    let mut checks = Vec::new();

    // never improves after the first epoch
    let (ev, _) = trace_events(cfg, 1e-3, std::iter::repeat(5.0));
    checks.push(
        ev == vec![
            (40, Action::ReduceLrAndRestore { lr: 1e-3 / 10.0 }),
            (50, Action::ReduceLrAndRestore { lr: 1e-3 / 100.0 }),
            (60, Action::StopAndRestore(StopReason::EarlyStop)),
        ],
    );

    // improvements inside burn-in do not matter; last best at epoch 45
    let trace = (1..=45).map(|e| 100.0 - e as f64).chain(std::iter::repeat(80.0));
    let (ev, s) = trace_events(cfg, 1e-3, trace);
    checks.push(
        ev == vec![
            (55, Action::ReduceLrAndRestore { lr: 1e-4 }),
            (65, Action::ReduceLrAndRestore { lr: 1e-5 }),
            (75, Action::StopAndRestore(StopReason::EarlyStop)),
        ] && s.best_epoch == 45,
    );

    // a steadily improving run stops at the epoch cap
    let (ev, _) = trace_events(cfg, 1e-3, (0..400).map(|i| 1000.0 - i as f64));
    checks.push(ev == vec![(250, Action::StopAndRestore(StopReason::MaxEpochs))]);

    // the learning rate bottoms out at the floor and then stays there
    let quick = ScheduleConfig { burn_in: 0, lr_patience: 1, stop_patience: 1000, ..cfg };
    let (ev, s) = trace_events(quick, 1e-3, std::iter::repeat_n(1.0, 20));
    let lrs: Vec<f64> = ev
        .iter()
        .filter_map(|(_, a)| match a {
            Action::ReduceLrAndRestore { lr } => Some(*lr),
            _ => None,
        })
        .collect();
    checks.push(lrs.len() == 4 && (lrs[3] - 1e-7).abs() < 1e-22 && s.lr == 1e-7);

    verdict("6", checks.iter().all(|&c| c), format!("trace checks {checks:?}"));
}

/// Phantom study settings used for criteria 7 and 9.
fn study_config() -> StudyConfig {
    let net = NetConfig { levels: 2, base_width: 8, stem_depth: 7, bands: 16, bin_factor: 1, out_h: 52, out_w: 52 };
    let mut train = TrainConfig::new(net);
    train.schedule = ScheduleConfig { burn_in: 10, lr_patience: 5, stop_patience: 15, max_epochs: 80, ..ScheduleConfig::default() };
    let mut batch = BatchConfig::default();
    batch.phantom.noise_sigma = 1.0;
    StudyConfig {
        batch,
        train,
        subsets: 6,
        pca_variance: 0.99,
        pls_max_components: 6,
        preprocessing: Default::default(),
        reflectance_floor: 1e-6,
        smoothing_sigmas: (0..31).map(|i| 0.5 * 1.25f64.powi(i)).collect(),
    }
}

fn study() -> &'static (StudyOutcome, Duration) {
    static STUDY: OnceLock<(StudyOutcome, Duration)> = OnceLock::new();
    STUDY.get_or_init(|| {
        let start = Instant::now();
        let out = run_study(&study_config(), 7, |m| eprintln!("[{:>6.1} s] {m}", start.elapsed().as_secs_f64())).unwrap();
        (out, start.elapsed())
    })
}

fn c7_phantom_study() {
    let (out, elapsed) = study();
    let a = out.unet_report.rmse <= 1.5 * out.oracle_report.rmse;
    let unet_field = out.mean_of(|r| r.unet_field_rmse);
    let pls_field = out.mean_of(|r| r.pls_field_rmse);
    let b = unet_field <= 0.5 * pls_field;
    let unet_corr = out.mean_of(|r| r.unet_stats.ratio_correlated);
    let pls_corr = out.mean_of(|r| r.pls_stats.ratio_correlated);
    let c = unet_corr >= 0.9 && pls_corr <= 0.5;
    let max_oobl = out.phantoms.iter().map(|r| r.unet_oobl).fold(0.0, f64::max);
    let d = max_oobl == 0.0;
    let e = *elapsed <= Duration::from_secs(30 * 60);
    verdict(
        "7",
        a && b && c && d && e,
        format!(
            "(a) belly RMSE U-Net {:.3} vs oracle {:.3} [{}]; (b) field RMSE U-Net {unet_field:.2} vs PLS {pls_field:.2} [{}]; \
             (c) ratio_correlated U-Net {unet_corr:.3} PLS {pls_corr:.3} [{}]; (d) max OOBL {max_oobl} [{}]; runtime {:.0} s [{}]",
            out.unet_report.rmse,
            out.oracle_report.rmse,
            ok(a),
            ok(b),
            ok(c),
            ok(d),
            elapsed.as_secs_f64(),
            ok(e)
        ),
    );
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "miss"
    }
}

fn c9_smoothing_counter_experiment() {
    let (out, _) = study();
    let mut holds = 0;
    let mut detail = Vec::new();
    for r in &out.phantoms {
        if let Some(smoothed) = r.smoothed_pls_field_rmse {
            if smoothed > r.unet_field_rmse {
                holds += 1;
            }
            detail.push(format!("{:.2}>{:.2}", smoothed, r.unet_field_rmse));
        } else {
            detail.push("no sigma reached the U-Net nugget".into());
        }
    }
    verdict(
        "9",
        holds == out.phantoms.len(),
        format!("{holds}/{} test phantoms, smoothed PLS vs U-Net field RMSE: {}", out.phantoms.len(), detail.join(" ")),
    );
}

const PIPELINE: &str = r#"
[synth]
count = 12
level_min = 20.0
level_max = 40.0
spread = 10.0

[synth.phantom]
height = 40
width = 40
bands = 16
noise_sigma = 0.05

[split]
subsets = 3

[pls]
max_components = 3

[unet.net]
levels = 1
base_width = 2
stem_depth = 3
bands = 16
bin_factor = 1
out_h = 20
out_w = 20

[unet.schedule]
max_epochs = 3
burn_in = 1
"#;

fn pipeline_run(root: &Path) {
    let cfg = PipelineConfig::from_toml(PIPELINE).unwrap();
    let manifest = run_synth(&cfg, &root.join("data"), 21).unwrap();
    let folds = run_split(&cfg, &manifest, &root.join("split")).unwrap();
    let test = root.join("split/test_manifest.csv");
    let model = run_pls_train(&cfg, &manifest, &folds, &root.join("pls")).unwrap();
    let pls_pred = run_pls_predict(&cfg, &model, &test, &root.join("pls_pred")).unwrap();
    let ensemble = run_unet_train(&cfg, &manifest, &folds, &root.join("unet"), 22, |_| ()).unwrap();
    let unet_pred = run_unet_predict(&cfg, &ensemble, &test, &root.join("unet_pred")).unwrap();
    let maps = root.join("unet_pred/maps");
    let first = files(&maps).into_keys().find(|k| k.ends_with(".chm")).unwrap();
    let map = maps.join(&first);
    run_analyze(&map, &map.with_extension("msk"), Some(1.0), &root.join("analysis")).unwrap();
    run_report(&pls_pred, &root.join("report")).unwrap();
    run_report(&unet_pred, &root.join("report")).unwrap();
}

/// Every file below `dir`, keyed by path relative to `dir`.
fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(key, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn c8_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("run_a"), tmp.path().join("run_b"));
    pipeline_run(&a);
    pipeline_run(&b);
    let (fa, fb) = (files(&a), files(&b));
    let differing: Vec<&String> = fa.keys().filter(|k| fb.get(*k) != fa.get(*k)).collect();
    let kinds = ["unetp", "plsm", "chm", "pgm", "csv"];
    let covered = kinds.iter().all(|k| fa.keys().any(|f| f.ends_with(k)));
    verdict(
        "8",
        fa.len() == fb.len() && differing.is_empty() && covered,
        format!("{} files compared, {} differ", fa.len(), differing.len()),
    );
}
