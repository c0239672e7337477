//! Acceptance suite: one line per criterion, non-zero exit on any failure.
//!
//! `ECHOANAT_E2E_EPOCHS` sets the training length of the end-to-end run
//! (default 3; the full desk budget is about 50 epochs in 30 minutes).

mod oracles;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use echoanat::commands::{self, EvaluateSources};
use echoanat::RunConfig;
use echoanat_core::cyclegan::losses::{
    cycle_loss, discriminator_loss_from_logits, generator_pass, opposite_loss, total_generator_loss,
};
use echoanat_core::cyclegan::model::{Identity, Negation};
use echoanat_core::cyclegan::train::read_loss_csv;
use echoanat_core::cyclegan::{
    load_checkpoint, save_checkpoint, translate, ArchConfig, GanLoss, LossWeights, ModelBundle, Preset, TileGeometry,
    TrainConfig, TrainState,
};
use echoanat_core::datasets::{crop_patches, stratified_split, ClassLabel, DatasetSplit, SplitRatios};
use echoanat_core::metrics::{area_index, center_error, dice, Group, Metric, ReferenceKind};
use echoanat_core::nn::Tensor;
use echoanat_core::segmentation::{inverse_gaussian_gradient, morphgac_run, GacInput, GacParams, InitSpec};
use echoanat_core::{ImageGrid, Mask, ValueRange};
use oracles::Grid;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("{what} took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn rect(h: usize, w: usize, r0: usize, c0: usize, rh: usize, cw: usize) -> Mask {
    Mask::from_fn(h, w, |r, c| r >= r0 && r < r0 + rh && c >= c0 && c < c0 + cw)
}

fn pixels(h: usize, w: usize, px: &[(usize, usize)]) -> Mask {
    Mask::from_fn(h, w, |r, c| px.contains(&(r, c)))
}

fn metric_exactness() -> Outcome {
    let start = Instant::now();
    // (a, b, dice, center error %, area index %), all worked out by hand
    let cases: Vec<(&str, Mask, Mask, f64, Option<f64>, f64)> = vec![
        ("shifted pair", pixels(1, 3, &[(0, 0), (0, 1)]), pixels(1, 3, &[(0, 1), (0, 2)]), 0.5, Some(31.622776601683793), 0.0),
        ("centroid offset (3,4)", rect(100, 100, 9, 9, 3, 3), rect(100, 100, 12, 13, 3, 3), 0.0, Some(3.5355339059327378), 0.0),
        ("area 200 vs 150", rect(100, 100, 0, 0, 10, 20), rect(100, 100, 50, 50, 10, 15), 0.0, Some(48.766023007827904), 0.5),
        ("identical", rect(20, 20, 3, 4, 5, 5), rect(20, 20, 3, 4, 5, 5), 1.0, Some(0.0), 0.0),
        ("disjoint diagonal", rect(20, 20, 0, 0, 2, 2), rect(20, 20, 10, 10, 2, 2), 0.0, Some(50.0), 0.0),
        ("nested", rect(20, 20, 0, 0, 4, 4), rect(20, 20, 1, 1, 2, 2), 0.4, Some(0.0), 3.0),
        ("one-column shift", rect(20, 20, 0, 0, 3, 3), rect(20, 20, 0, 1, 3, 3), 2.0 / 3.0, Some(3.5355339059327378), 0.0),
        ("both empty", Mask::empty(5, 5), Mask::empty(5, 5), 1.0, None, 0.0),
        ("one empty", pixels(5, 5, &[(2, 2)]), Mask::empty(5, 5), 0.0, None, 4.0),
        ("full vs top half", rect(4, 4, 0, 0, 4, 4), rect(4, 4, 0, 0, 2, 4), 2.0 / 3.0, Some(17.677669529663685), 50.0),
        ("corner L vs pixel", pixels(10, 10, &[(0, 0), (0, 1), (1, 0)]), pixels(10, 10, &[(0, 0)]), 0.5, Some(3.3333333333333335), 2.0),
        ("opposite columns", rect(3, 4, 0, 0, 3, 1), rect(3, 4, 0, 3, 3, 1), 0.0, Some(60.0), 0.0),
    ];
    let mut worst = 0.0f64;
    for (name, a, b, d, ce, ai) in &cases {
        let got_d = dice(a, b).map_err(|e| e.to_string())?;
        let got_ce = center_error(a, b).map_err(|e| e.to_string())?;
        let got_ai = area_index(a, b).map_err(|e| e.to_string())?;
        let err_ce = match (got_ce, ce) {
            (Some(x), Some(y)) => (x - y).abs(),
            (None, None) => 0.0,
            _ => return Err(format!("{name}: center error {got_ce:?}, expected {ce:?}")),
        };
        let err = (got_d - d).abs().max(err_ce).max((got_ai - ai).abs());
        ensure(err <= 1e-9, || format!("{name}: dice {got_d} ce {got_ce:?} ai {got_ai}"))?;
        worst = worst.max(err);
    }
    within(start.elapsed(), 1.0, "metric fixture")?;
    Ok(format!("{} pairs, worst error {worst:.1e}", cases.len()))
}

fn ramp_tensor(seed: u64, side: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * side * side).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(1, 3, side, side, data).expect("shape")
}

fn loss_identities() -> Outcome {
    let (x, y) = (ramp_tensor(1, 8), ramp_tensor(2, 8));
    let opp = opposite_loss(&Negation, &Negation, &x, &y).map_err(|e| e.to_string())?;
    ensure(opp == 0.0, || format!("opposite loss with negation generators is {opp}"))?;
    let cyc = cycle_loss(&Identity, &Identity, &x, &y).map_err(|e| e.to_string())?;
    ensure(cyc == 0.0, || format!("cycle loss with identity generators is {cyc}"))?;
    // D outputs 0.5 everywhere, i.e. zero logits
    let zeros = Tensor::zeros(2, 1, 4, 4);
    let d = discriminator_loss_from_logits(&zeros, &zeros, GanLoss::Log);
    let ln4 = 2.0 * std::f64::consts::LN_2;
    ensure((d - ln4).abs() <= 1e-6, || format!("uniform discriminator loss {d}, expected {ln4}"))?;
    let bundle = ModelBundle::new(ArchConfig::preset(Preset::Tiny), 5).map_err(|e| e.to_string())?;
    let w = LossWeights {
        lambda_gan: 1.0,
        lambda_cycle: 10.0,
        lambda_opposite: 0.3,
    };
    let l = total_generator_loss(&bundle, &w, GanLoss::Log, &x, &y).map_err(|e| e.to_string())?;
    let by_hand = (l.adv_g_pa + l.adv_g_us) + 10.0 * l.cycle + 0.3 * l.opposite;
    ensure((l.total - by_hand).abs() <= 1e-6, || format!("total {} vs weighted sum {by_hand}", l.total))?;
    Ok(format!("opposite {opp}, cycle {cyc}, D {d:.9}, total-sum gap {:.1e}", (l.total - by_hand).abs()))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut bundle = ModelBundle::new(ArchConfig::preset(Preset::Tiny), 0).map_err(|e| e.to_string())?;
    ensure(bundle.param_count() <= 2000, || format!("{} parameters", bundle.param_count()))?;
    // Instance norm makes the loss invariant to the scale of the weights
    // feeding it, so curvature grows as those weights shrink. Large weights
    // keep a fixed 1e-3 step small relative to the parameters.
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for net in [&mut bundle.g_pa, &mut bundle.g_us, &mut bundle.d_pa, &mut bundle.d_us] {
        net.params_mut().iter_mut().for_each(|p| *p = rng.random_range(-32.0..32.0));
    }
    let (x, y) = (ramp_tensor(11, 8), ramp_tensor(12, 8));
    let w = LossWeights::default();
    let pass = generator_pass(&bundle, &w, GanLoss::Log, &x, &y).map_err(|e| e.to_string())?;
    let analytic: Vec<f64> = pass.grad_g_pa.iter().chain(&pass.grad_g_us).copied().collect();
    let n_pa = bundle.g_pa.param_count();
    let eps = 1e-3;
    let tol = 1e-2;
    let samples = 120;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let j = rng.random_range(0..analytic.len());
        let eval = |delta: f64| {
            let mut b = bundle.clone();
            if j < n_pa {
                b.g_pa.params_mut()[j] += delta;
            } else {
                b.g_us.params_mut()[j - n_pa] += delta;
            }
            total_generator_loss(&b, &w, GanLoss::Log, &x, &y)
                .map(|l| l.total)
                .map_err(|e| e.to_string())
        };
        let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
        let a = analytic[j];
        worst = worst.max((numeric - a).abs() / numeric.abs().max(a.abs()).max(1e-8));
    }
    ensure(worst <= tol, || format!("worst relative error {worst:.3e}"))?;
    within(start.elapsed(), 120.0, "gradient check")?;
    Ok(format!(
        "{} parameters, {samples} sampled, worst relative error {worst:.2e}",
        bundle.param_count()
    ))
}

fn grid_of(img: &ImageGrid) -> Grid {
    Grid {
        h: img.height(),
        w: img.width(),
        v: img.channel(0).to_vec(),
    }
}

fn segmentation_oracle() -> Outcome {
    // disk phantom against its analytic mask
    let n = 256;
    let truth = Mask::from_fn(n, n, |r, c| {
        let (dr, dc) = (r as f64 - 128.0, c as f64 - 128.0);
        dr * dr + dc * dc <= 60.0 * 60.0
    });
    let img = ImageGrid::from_fn(n, n, 1, ValueRange::Unit, |_, r, c| if truth.get(r, c) { 0.8 } else { 0.2 })
        .map_err(|e| e.to_string())?;
    let start = Instant::now();
    let seed = InitSpec::Circle {
        center: (128.0, 128.0),
        radius: 20.0,
    };
    let run = morphgac_run(GacInput::Image(&img), &seed, &GacParams::default(), 0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let disk_dice = dice(&run.mask, &truth).map_err(|e| e.to_string())?;
    ensure(disk_dice >= 0.95, || format!("disk phantom Dice {disk_dice:.4}"))?;
    ensure(run.iterations <= 200, || format!("{} iterations", run.iterations))?;
    within(elapsed, 10.0, "disk phantom")?;

    // random ellipse phantoms against the reference implementation
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let params = GacParams::default();
    let mut worst = 1.0f64;
    let count = 24;
    for k in 0..count {
        let (h, w) = (rng.random_range(48..96usize), rng.random_range(48..96usize));
        let side = h.min(w) as f64;
        let (a, b) = (rng.random_range(0.15..0.3) * side, rng.random_range(0.15..0.3) * side);
        let reach = a.max(b) + 3.0;
        let (cr, cc) = (rng.random_range(reach..h as f64 - reach), rng.random_range(reach..w as f64 - reach));
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (inside, outside) = if rng.random_bool(0.5) {
            (rng.random_range(0.6..0.9), rng.random_range(0.1..0.35))
        } else {
            (rng.random_range(0.1..0.35), rng.random_range(0.6..0.9))
        };
        let noise = rng.random_range(0.0..0.04);
        let img = ImageGrid::from_fn(h, w, 1, ValueRange::Unit, |_, r, c| {
            let (dr, dc) = (r as f64 - cr, c as f64 - cc);
            let (u, v) = (dr * theta.cos() + dc * theta.sin(), -dr * theta.sin() + dc * theta.cos());
            let base = if (u / a).powi(2) + (v / b).powi(2) <= 1.0 { inside } else { outside };
            // deterministic pseudo-noise so both implementations see the same image
            let hash = ((r * 7919 + c * 104729 + k * 31) % 1000) as f64 / 1000.0 - 0.5;
            (base + noise * hash).clamp(0.0, 1.0)
        })
        .map_err(|e| e.to_string())?;
        let radius = 0.5 * a.min(b);
        let init = InitSpec::Circle { center: (cr, cc), radius };
        let ours = morphgac_run(GacInput::Image(&img), &init, &params, 0).map_err(|e| e.to_string())?;
        let g = oracles::igg_reference(&grid_of(&img), params.alpha, params.sigma);
        let init_px: Vec<bool> = (0..h * w)
            .map(|i| {
                let (dr, dc) = ((i / w) as f64 - cr, (i % w) as f64 - cc);
                dr * dr + dc * dc <= radius * radius
            })
            .collect();
        let reference = oracles::gac_reference(
            &g,
            h,
            w,
            &init_px,
            params.iterations,
            params.smoothing,
            params.balloon,
            params.threshold,
        );
        let agreement = oracles::dice(ours.mask.data(), &reference);
        worst = worst.min(agreement);
        ensure(agreement >= 0.99, || format!("phantom {k} ({h}x{w}): agreement Dice {agreement:.4}"))?;
    }
    Ok(format!(
        "disk Dice {disk_dice:.4} in {} iterations, {:.2} s; {count} phantoms, worst agreement {worst:.4}",
        run.iterations,
        elapsed.as_secs_f64()
    ))
}

fn igg_properties() -> Outcome {
    let flat = ImageGrid::filled(17, 23, 1, ValueRange::Unit, 0.37).map_err(|e| e.to_string())?;
    let e = inverse_gaussian_gradient(&flat, 100.0, 1.5).map_err(|e| e.to_string())?;
    ensure(e.values().iter().all(|&v| v == 1.0), || "constant image does not give g = 1".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let img = ImageGrid::from_fn(24, 24, 1, ValueRange::Unit, |_, _, _| rng.random_range(0.0..1.0))
            .map_err(|e| e.to_string())?;
        let alpha = rng.random_range(1.0..200.0);
        let lo = inverse_gaussian_gradient(&img, alpha, 1.0).map_err(|e| e.to_string())?;
        let hi = inverse_gaussian_gradient(&img, 2.0 * alpha, 1.0).map_err(|e| e.to_string())?;
        for (a, b) in lo.values().iter().zip(hi.values()) {
            ensure(b < a || (*a == 1.0 && *b == 1.0), || format!("g not decreasing in alpha: {a} -> {b}"))?;
        }
    }

    let mut worst = 0.0f64;
    for (alpha, sigma) in [(100.0, 1.5), (30.0, 0.8), (250.0, 2.5)] {
        let step = ImageGrid::from_fn(32, 40, 1, ValueRange::Unit, |_, r, c| if c + r / 4 >= 20 { 0.9 } else { 0.1 })
            .map_err(|e| e.to_string())?;
        let ours = inverse_gaussian_gradient(&step, alpha, sigma).map_err(|e| e.to_string())?;
        let oracle = oracles::igg_brute_force(&grid_of(&step), alpha, sigma);
        for (a, b) in ours.values().iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("step edge differs from brute force by {worst:.2e}"))?;
    Ok(format!("constant map exact, 20 anti-monotone checks, step-edge error {worst:.1e}"))
}

fn split_and_tiling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let ratio_sets = [
        SplitRatios::default(),
        SplitRatios {
            train: 0.7,
            validation: 0.15,
            test: 0.15,
        },
        SplitRatios {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        },
    ];
    let mut splits = 0;
    for trial in 0..60 {
        let ratios = ratio_sets[trial % ratio_sets.len()];
        let sizes = [rng.random_range(7..250usize), rng.random_range(7..250), rng.random_range(7..250)];
        let mut samples = Vec::new();
        for (class, n) in ClassLabel::ALL.into_iter().zip(sizes) {
            samples.extend((1..=n).map(|i| (format!("{class} ({i})"), class)));
        }
        let seed = rng.random();
        let split = stratified_split(&samples, ratios, seed).map_err(|e| e.to_string())?;
        for (class, n) in ClassLabel::ALL.into_iter().zip(sizes) {
            let count = |ids: &[String]| ids.iter().filter(|id| ClassLabel::from_id(id) == Some(class)).count();
            let got = [count(&split.train), count(&split.validation), count(&split.test)];
            let want = [ratios.train, ratios.validation, ratios.test].map(|r| r * n as f64);
            for (g, w) in got.iter().zip(want) {
                ensure((*g as f64 - w).abs() <= 1.0, || format!("{class} n={n}: got {got:?}, ideal {want:?}"))?;
            }
            ensure(got.iter().sum::<usize>() == n, || format!("{class}: split loses samples"))?;
        }
        // input order must not matter
        samples.shuffle(&mut rng);
        let again = stratified_split(&samples, ratios, seed).map_err(|e| e.to_string())?;
        ensure(again.to_manifest() == split.to_manifest(), || "manifest depends on input order".into())?;
        splits += 1;
    }

    let geometries = [(450, 225), (64, 32), (256, 128), (128, 100), (96, 96)];
    for trial in 0..100 {
        let (h, w) = (rng.random_range(1..1000usize), rng.random_range(1..1000usize));
        let (patch, stride) = geometries[trial % geometries.len()];
        let img = ImageGrid::from_fn(h, w, 1, ValueRange::Unit, |_, r, c| ((r * 31 + c * 17) % 251) as f64 / 250.0)
            .map_err(|e| e.to_string())?;
        let set = crop_patches(&img, "x", patch, stride).map_err(|e| e.to_string())?;
        let (ph, pw) = set.padded_shape;
        let mut covered = vec![false; ph * pw];
        for p in &set.patches {
            let (r0, c0) = p.origin;
            ensure(r0 + patch <= ph && c0 + patch <= pw, || format!("patch {:?} leaves {ph}x{pw}", p.origin))?;
            for r in 0..patch {
                for c in 0..patch {
                    covered[(r0 + r) * pw + c0 + c] = true;
                    let (sr, sc) = (r0 + r, c0 + c);
                    if sr < h && sc < w && p.image.get(0, r, c) != img.get(0, sr, sc) {
                        return Err(format!("patch content differs from source at ({sr}, {sc})"));
                    }
                }
            }
        }
        ensure(covered.iter().all(|&v| v), || format!("{h}x{w} with patch {patch}/stride {stride} leaves gaps"))?;
    }

    // byte-identical manifests from two independent prepare runs
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = config_in(dir.path());
    cfg.synth.count = 30;
    commands::synth(&cfg, false).map_err(|e| e.to_string())?;
    commands::prepare(&cfg, false).map_err(|e| e.to_string())?;
    let first = std::fs::read(cfg.run.dir.join("split/manifest.tsv")).map_err(|e| e.to_string())?;
    cfg.run.dir = dir.path().join("run2");
    commands::prepare(&cfg, false).map_err(|e| e.to_string())?;
    let second = std::fs::read(cfg.run.dir.join("split/manifest.tsv")).map_err(|e| e.to_string())?;
    ensure(first == second, || "manifests differ between identical runs".into())?;
    let parsed = DatasetSplit::from_manifest(&String::from_utf8_lossy(&first)).map_err(|e| e.to_string())?;
    ensure(parsed.train.len() + parsed.validation.len() + parsed.test.len() == 30, || "manifest size".into())?;
    Ok(format!("{splits} splits within ±1, 100 tilings covered, manifests byte-identical"))
}

fn config_in(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.resolve_paths(dir);
    cfg
}

fn end_to_end() -> Outcome {
    let epochs: u64 = std::env::var("ECHOANAT_E2E_EPOCHS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(3);
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = config_in(dir.path());
    cfg.synth.count = 200;
    cfg.synth.seed = 1;
    cfg.model.preset = Preset::Desk;
    cfg.training.epochs = epochs;
    cfg.training.seed = 1;
    let s = |e: echoanat::PipelineError| e.to_string();
    commands::synth(&cfg, false).map_err(s)?;
    commands::prepare(&cfg, false).map_err(s)?;
    let trained = commands::train(&cfg, false).map_err(s)?;
    let translated = commands::translate_images(&cfg, None, &[], None, false).map_err(s)?;
    ensure(translated.failed.is_empty(), || format!("translation failures: {:?}", translated.failed))?;
    commands::segment(&cfg, false).map_err(s)?;
    let eval = commands::evaluate(&cfg, &EvaluateSources::default(), false).map_err(s)?;
    let report = commands::report(&cfg, false).map_err(s)?;
    let elapsed = start.elapsed();

    let md = std::fs::read_to_string(&report).map_err(|e| e.to_string())?;
    for row in ["| Dice | Benign |", "| Dice | Malignant |", "| Dice | all |", "| Center error (%) | all |", "| Area index (%) | all |"] {
        ensure(md.contains(row), || format!("report lacks row `{row}`"))?;
    }
    let benign = eval
        .summary
        .get(Metric::Dice, Group::Benign, ReferenceKind::Manual)
        .and_then(|g| g.stats)
        .ok_or("no benign Dice summary")?;
    ensure(benign.median >= 0.6, || format!("benign median Dice {:.3}", benign.median))?;
    let history = read_loss_csv(
        &std::fs::read_to_string(cfg.run.dir.join("train/losses.csv")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let (lo, hi) = commands::discriminator_window(&history, 0.1).ok_or("empty loss history")?;
    ensure(lo > 0.05 && hi < 3.0, || format!("discriminator losses span [{lo:.3}, {hi:.3}] in the final 10%"))?;
    within(elapsed, 1800.0, "end-to-end run")?;
    Ok(format!(
        "{epochs} epoch(s), {} steps; benign median Dice {:.3}; D losses in [{lo:.3}, {hi:.3}]; {:.0} s",
        trained.step,
        benign.median,
        elapsed.as_secs_f64()
    ))
}

fn checkpoint_round_trip() -> Outcome {
    let s = |e: echoanat_core::Error| e.to_string();
    let arch = ArchConfig::preset(Preset::Desk);
    let mut state = TrainState::new(arch, TrainConfig::default(), 9).map_err(s)?;
    for k in 0..3 {
        let x = ramp_tensor(20 + k, 64);
        let y = ramp_tensor(40 + k, 64);
        state.train_step(&x, &y).map_err(s)?;
    }
    let img = ImageGrid::from_fn(150, 110, 1, ValueRange::Unit, |_, r, c| {
        0.5 + 0.4 * ((r as f64) / 9.0).sin() * ((c as f64) / 13.0).cos()
    })
    .map_err(s)?;
    let geometry = TileGeometry {
        patch_size: 64,
        stride: 32,
    };
    let before = translate(&state.bundle, state.step, &img, geometry).map_err(s)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("state.ckpt");
    save_checkpoint(&state, &path).map_err(s)?;
    let loaded = load_checkpoint(&path).map_err(s)?;
    let after = translate(&loaded.bundle, loaded.step, &img, geometry).map_err(s)?;
    let identical = before.data().len() == after.data().len()
        && before.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(identical, || "translation differs after reload".into())?;
    Ok(format!("{} values bit-identical after save/load", before.data().len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("metric exactness", metric_exactness),
        ("loss identities", loss_identities),
        ("gradient check", gradient_check),
        ("segmentation oracle", segmentation_oracle),
        ("IGG properties", igg_properties),
        ("split/tiling properties", split_and_tiling),
        ("checkpoint round-trip", checkpoint_round_trip),
        ("end-to-end desk run", end_to_end),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<24} {secs:>7.2} s  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<24} {secs:>7.2} s  {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
