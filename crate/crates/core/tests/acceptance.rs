//! End-to-end acceptance gate. Each criterion prints one PASS/FAIL line;
//! the process fails if any criterion fails.
//!
//! `RETIQA_ACCEPTANCE_ONLY=name1,name2` restricts the run to a subset.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retiqa::bench::bench_extremum;
use retiqa::data::{generate_dataset, synth_sample, Manifest, ManifestRecord, ManifestSource, QualityLabel, SyntheticParams};
use retiqa::evaluate::{confusion_matrix, metrics_from_cm, ConfusionMatrix};
use retiqa::imgproc::{detect_fov, save_png, PreprocessConfig, RawImage};
use retiqa::nnet::gradcheck::{check_layers, gradient_check, GradCheckOptions};
use retiqa::nnet::{
    guided_stem_forward, images_to_tensor, sgd_step, softmax_cross_entropy, Fault, GuidedStemConfig, Mode, Model,
    ModelConfig, StemVariant,
};
use retiqa::priors::{
    bright_channel, channel_extremum, dark_channel, depthwise_gaussian, make_gaussian_kernel, naive_extremum,
    sliding_extremum_plane, Extremum,
};
use retiqa::train::{evaluate_model, learning_rate, run_ablation, train, AblationConfig, Checkpoint, TrainConfig};

const EXTREMUM_CASES: usize = 500;
const EXTREMUM_MAX_SIDE: usize = 64;
const EXTREMUM_MAX_RADIUS: usize = 9;
const EXTREMUM_TIME_LIMIT: Duration = Duration::from_secs(60);
const PRIOR_CASES: usize = 200;
const CONV_TOLERANCE: f64 = 1e-6;
const GRAD_TOLERANCE: f64 = 1e-5;
const GRAD_TIME_LIMIT: Duration = Duration::from_secs(120);
const SGD_STEPS: usize = 100;
const ABLATION_MARGIN: f64 = 0.01;
const SPEEDUP_REQUIRED: f64 = 3.0;
const FOV_CASES: usize = 100;
const FOV_CENTER_PX: f64 = 2.0;
const FOV_RADIUS_FRAC: f64 = 0.02;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RawImage {
    // Values on the 2^-24 grid, so 1 - v is exact in f32.
    RawImage::from_fn(h, w, |_, _| [0; 3].map(|_| rng.gen_range(0..=1u32 << 24) as f32 / (1u32 << 24) as f32))
}

fn extremum_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let start = Instant::now();
    for case in 0..EXTREMUM_CASES {
        let h = rng.gen_range(1..=EXTREMUM_MAX_SIDE);
        let w = rng.gen_range(1..=EXTREMUM_MAX_SIDE);
        let radius = rng.gen_range(0..=EXTREMUM_MAX_RADIUS);
        let mode = if case % 2 == 0 { Extremum::Min } else { Extremum::Max };
        let plane: Vec<f32> = (0..h * w).map(|_| rng.gen()).collect();
        let fast = sliding_extremum_plane(&plane, h, w, radius, mode);
        let slow = naive_extremum(&plane, h, w, radius, mode);
        let same = fast.len() == slow.len() && fast.iter().zip(&slow).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, format!("case {case}: {h}x{w} radius {radius} {mode:?} differs"))?;
    }
    let t = start.elapsed();
    ensure(t < EXTREMUM_TIME_LIMIT, format!("took {t:?}"))?;
    Ok(format!("{EXTREMUM_CASES} maps bit-identical in {:.2}s", t.as_secs_f64()))
}

fn prior_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for case in 0..PRIOR_CASES {
        let h = rng.gen_range(1..=24);
        let w = rng.gen_range(1..=24);
        let r = rng.gen_range(0..=7);
        let img = random_image(&mut rng, h, w);
        let dark = dark_channel(&img, r);
        let bright = bright_channel(&img, r);
        let cmin = channel_extremum(&img, Extremum::Min);
        let cmax = channel_extremum(&img, Extremum::Max);
        for i in 0..h * w {
            let chain = [dark.values[i], cmin.values[i], cmax.values[i], bright.values[i]];
            ensure(chain.windows(2).all(|p| p[0] <= p[1]), format!("case {case}: ordering {chain:?}"))?;
        }
        let dual = dark_channel(&img.complement(), r);
        ensure(
            bright.values.iter().zip(&dual.values).all(|(b, d)| *b == 1.0 - d),
            format!("case {case}: complement duality"),
        )?;
        let lifted = RawImage::from_fn(h, w, |y, x| img.pixel(y, x).map(|v| v + rng.gen_range(0.0..=(1.0 - v))));
        let (d2, b2) = (dark_channel(&lifted, r), bright_channel(&lifted, r));
        ensure(
            dark.values.iter().zip(&d2.values).all(|(a, b)| a <= b)
                && bright.values.iter().zip(&b2.values).all(|(a, b)| a <= b),
            format!("case {case}: monotonicity"),
        )?;
    }
    Ok(format!("{PRIOR_CASES} random images: ordering, exact duality, monotonicity"))
}

fn conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut worst = 0.0f64;
    for (size, sigma, stride, pad) in [(7, 1.5, 2, 3), (5, 0.8, 1, 2), (3, 2.0, 2, 0), (7, 1.5, 1, 0)] {
        let kernel = make_gaussian_kernel(size, sigma).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let img = RawImage::from_fn(16, 16, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
            let stack = depthwise_gaussian(&img, &kernel, stride, pad);
            for c in 0..3 {
                for oy in 0..stack.height {
                    for ox in 0..stack.width {
                        let mut acc = 0.0f64;
                        for ky in 0..size {
                            for kx in 0..size {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                let x = (ox * stride + kx) as isize - pad as isize;
                                if (0..16).contains(&y) && (0..16).contains(&x) {
                                    acc += kernel.weights()[ky * size + kx] * img.get(y as usize, x as usize, c) as f64;
                                }
                            }
                        }
                        worst = worst.max((acc - stack.channels[c][oy * stack.width + ox] as f64).abs());
                    }
                }
            }
        }
    }
    ensure(worst <= CONV_TOLERANCE, format!("max abs error {worst:e}"))?;
    Ok(format!("max abs error {worst:.2e} over 20 random 16x16 images"))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let layers = check_layers(11, 1e-6).map_err(|e| e.to_string())?;
    let opts = GradCheckOptions {
        seed: 11,
        ..Default::default()
    };
    let mut detail = String::new();
    for variant in StemVariant::ALL {
        let mut cfg = ModelConfig::default();
        cfg.stem.variant = variant;
        let model = gradient_check(&cfg, &opts).map_err(|e| e.to_string())?;
        ensure(
            model.passes(GRAD_TOLERANCE),
            format!("{variant} model check failed:\n{}", model.to_text(GRAD_TOLERANCE)),
        )?;
        let _ = write!(detail, "{variant} {:.1e}; ", model.max_error());
    }
    ensure(
        layers.passes(GRAD_TOLERANCE),
        format!("layer check failed:\n{}", layers.to_text(GRAD_TOLERANCE)),
    )?;
    for name in ["conv", "batchnorm", "relu", "gap", "linear", "softmax_xent", "stem"] {
        ensure(
            layers.entries.iter().any(|e| e.name.starts_with(name) && e.checked > 0),
            format!("no checked entry for {name}"),
        )?;
    }
    let faulty = gradient_check(
        &ModelConfig::default(),
        &GradCheckOptions {
            fault: Some(Fault::FlipFirstReluGradient),
            ..opts
        },
    )
    .map_err(|e| e.to_string())?;
    ensure(!faulty.passes(GRAD_TOLERANCE), "injected sign flip not detected")?;
    let t = start.elapsed();
    ensure(t < GRAD_TIME_LIMIT, format!("took {t:?}"))?;
    Ok(format!(
        "layers max {:.1e}; {detail}sign flip detected ({:.1e}); {:.1}s",
        layers.max_error(),
        faulty.max_error(),
        t.as_secs_f64()
    ))
}

fn stem_geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(224);
    let cfg = ModelConfig::default();
    let model = Model::<f32>::new(cfg.clone(), &mut rng).map_err(|e| e.to_string())?;
    let img = RawImage::from_fn(224, 224, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
    let x = images_to_tensor::<f32>(&[&img]).map_err(|e| e.to_string())?;
    let stem = guided_stem_forward(&x, &model.params().learnable[0].value, &model.params().kernel, &cfg.stem)
        .map_err(|e| e.to_string())?;
    ensure(stem.shape() == [1, 64, 112, 112], format!("stem output {:?}", stem.shape()))?;

    let stem_params = |variant| {
        let s = GuidedStemConfig {
            variant,
            ..Default::default()
        };
        s.learned_channels() * 3 * s.kernel_size * s.kernel_size
    };
    let (db, base) = (stem_params(StemVariant::DarkBright), stem_params(StemVariant::Baseline));
    ensure(db == 9114 && base == 9408 && db < base, format!("stem params {db} vs {base}"))?;

    let small = ModelConfig::default();
    let mut model = Model::<f32>::new(small, &mut rng).map_err(|e| e.to_string())?;
    let kernel_before = model.params().kernel.clone();
    let reference = make_gaussian_kernel(7, 1.5).map_err(|e| e.to_string())?;
    for step in 0..SGD_STEPS {
        let imgs: Vec<RawImage> = (0..2)
            .map(|_| RawImage::from_fn(16, 16, |_, _| [rng.gen(), rng.gen(), rng.gen()]))
            .collect();
        let refs: Vec<&RawImage> = imgs.iter().collect();
        let x = images_to_tensor::<f32>(&refs).map_err(|e| e.to_string())?;
        let pass = model.forward(&x, Mode::Train).map_err(|e| e.to_string())?;
        let labels = [step % 3, (step + 1) % 3];
        let (_, g) = softmax_cross_entropy(&pass.logits, &labels).map_err(|e| e.to_string())?;
        model.backward(&pass, &g).map_err(|e| e.to_string())?;
        model.commit_running_stats(&pass);
        sgd_step(model.params_mut(), 0.01);
    }
    let after = &model.params().kernel;
    ensure(after == &kernel_before && after == &reference, "frozen kernel changed")?;
    Ok(format!(
        "224x224 -> {:?}; stem params {db} < {base}; kernel unchanged after {SGD_STEPS} steps",
        &stem.shape()[1..]
    ))
}

fn schedule() -> Outcome {
    let cfg = TrainConfig::default();
    let lrs: Vec<f64> = (1..=15).map(|e| learning_rate(e, &cfg)).collect();
    ensure(
        lrs[..10].iter().all(|&l| l == 0.01) && lrs[10..].iter().all(|&l| l == 0.001),
        format!("{lrs:?}"),
    )?;
    Ok("0.01 for epochs 1-10, 0.001 for 11-15".into())
}

fn ablation() -> Outcome {
    let cfg = AblationConfig::default();
    let start = Instant::now();
    let result = run_ablation(&cfg, |c| {
        println!(
            "    {:<12} seed {} macro_f {:.4} ({:.0}s)",
            c.variant.name(),
            c.seed,
            c.report.macro_avg.f,
            start.elapsed().as_secs_f64()
        );
    })
    .map_err(|e| e.to_string())?;
    print!("{}", result.to_table().lines().map(|l| format!("    {l}\n")).collect::<String>());
    let f = |v| result.summary(v).map(|s| s.mean_f).unwrap_or(f64::NAN);
    let (base, db, dark, bright) = (
        f(StemVariant::Baseline),
        f(StemVariant::DarkBright),
        f(StemVariant::DarkOnly),
        f(StemVariant::BrightOnly),
    );
    let detail = format!(
        "mean macro-F baseline {base:.4}, dark_only {dark:.4}, bright_only {bright:.4}, dark_bright {db:.4} ({:.0}s)",
        start.elapsed().as_secs_f64()
    );
    ensure(db >= base + ABLATION_MARGIN && dark >= base && bright >= base, detail.clone())?;
    Ok(detail)
}

fn metrics() -> Outcome {
    let cm = confusion_matrix(&[0, 0, 1], &[0, 1, 1]).map_err(|e| e.to_string())?;
    ensure(cm.counts == [[1, 1, 0], [0, 1, 0], [0, 0, 0]], format!("{:?}", cm.counts))?;
    let m = metrics_from_cm(&ConfusionMatrix {
        counts: [[2, 1, 0], [0, 3, 1], [1, 0, 2]],
    })
    .map_err(|e| e.to_string())?;
    ensure(m.accuracy == 0.7, format!("accuracy {}", m.accuracy))?;
    ensure(
        (m.per_class.precision[0] - 2.0 / 3.0).abs() < 1e-15 && (m.per_class.recall[0] - 2.0 / 3.0).abs() < 1e-15,
        "class-0 precision/recall",
    )?;
    let zero = metrics_from_cm(&ConfusionMatrix {
        counts: [[3, 0, 0], [2, 0, 0], [1, 0, 0]],
    })
    .map_err(|e| e.to_string())?;
    ensure(
        zero.per_class.precision[1] == 0.0 && zero.per_class.f[1] == 0.0 && zero.macro_avg.f.is_finite(),
        "zero-denominator convention",
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let counts = [[0u64; 3]; 3].map(|r| r.map(|_| rng.gen_range(0..20)));
        let cm = ConfusionMatrix { counts };
        if cm.total() == 0 {
            continue;
        }
        let m = metrics_from_cm(&cm).map_err(|e| e.to_string())?;
        ensure(m.accuracy == cm.trace() as f64 / cm.total() as f64, "accuracy != trace/total")?;
        let lo = m.per_class.f.iter().cloned().fold(f64::MAX, f64::min);
        let hi = m.per_class.f.iter().cloned().fold(f64::MIN, f64::max);
        ensure(m.macro_avg.f >= lo - 1e-12 && m.macro_avg.f <= hi + 1e-12, "macro-F outside per-class range")?;
    }
    Ok("hand cases exact; accuracy = trace/total; macro-F bounded; zero denominators score 0".into())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let params = SyntheticParams {
        image_size: 32,
        ..Default::default()
    };
    let samples = generate_dataset([6, 6, 6], 9, &params).map_err(|e| e.to_string())?;
    let mut records = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("{}_{i}.png", s.label);
        save_png(&s.image, &dir.path().join(&rel)).map_err(|e| e.to_string())?;
        records.push(ManifestRecord {
            path: rel,
            label: s.label,
        });
    }
    let source = ManifestSource::new(dir.path(), Manifest::new(records).map_err(|e| e.to_string())?);
    let cfg = TrainConfig {
        epochs: 2,
        lr_decay_epoch: 1,
        seed: 5,
        ..Default::default()
    };
    let run = || -> Result<(Vec<u8>, String), String> {
        let out = train(&cfg, &source, None::<&ManifestSource>, |_| {}).map_err(|e| e.to_string())?;
        let report = evaluate_model(out.checkpoint.model(), &source).map_err(|e| e.to_string())?;
        Ok((out.checkpoint.to_bytes(), report.to_json().map_err(|e| e.to_string())?))
    };
    let (ck_a, rep_a) = run()?;
    let (ck_b, rep_b) = run()?;
    ensure(ck_a == ck_b, "checkpoints differ between runs")?;
    ensure(rep_a == rep_b, "reports differ between runs")?;
    let path = dir.path().join("m.ckpt");
    std::fs::write(&path, &ck_a).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&path, &cfg.model_config()).map_err(|e| e.to_string())?;
    ensure(loaded.to_bytes() == ck_a, "save -> load -> save changed bytes")?;
    Ok(format!("identical checkpoints ({} bytes) and reports; round trip byte-identical", ck_a.len()))
}

fn performance() -> Outcome {
    let r = bench_extremum(1024, 7, 3);
    ensure(r.identical, "fast and naive maps differ")?;
    ensure(r.speedup() >= SPEEDUP_REQUIRED, format!("speedup {:.2}x", r.speedup()))?;
    Ok(format!(
        "1024x1024 radius 7: naive {:.1} ms, fast {:.1} ms, {:.1}x",
        r.naive.as_secs_f64() * 1e3,
        r.fast.as_secs_f64() * 1e3,
        r.speedup()
    ))
}

fn fov_detection() -> Outcome {
    let cfg = PreprocessConfig::default();
    let mut center = 0.0;
    let mut radius = 0.0;
    for i in 0..FOV_CASES {
        let params = SyntheticParams {
            image_size: [128, 192, 256][i % 3],
            ..Default::default()
        };
        let label = QualityLabel::ALL[i % 3];
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
        let s = synth_sample(label, &mut rng, &params);
        let c = detect_fov(&s.image, &cfg).map_err(|e| format!("case {i}: {e}"))?;
        center += ((c.cx - s.circle.cx).powi(2) + (c.cy - s.circle.cy).powi(2)).sqrt();
        radius += (c.r - s.circle.r).abs() / s.circle.r;
    }
    let (center, radius) = (center / FOV_CASES as f64, radius / FOV_CASES as f64);
    let detail = format!("mean centre error {center:.3} px, mean radius error {:.3}%", 100.0 * radius);
    ensure(center <= FOV_CENTER_PX && radius <= FOV_RADIUS_FRAC, detail.clone())?;
    Ok(detail)
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("extremum_oracle", extremum_oracle),
        ("prior_properties", prior_properties),
        ("convolution_oracle", conv_oracle),
        ("gradient_suite", gradient_suite),
        ("stem_geometry", stem_geometry),
        ("lr_schedule", schedule),
        ("synthetic_ablation", ablation),
        ("metrics", metrics),
        ("determinism", determinism),
        ("performance", performance),
        ("fov_detection", fov_detection),
    ];
    let only: Option<Vec<String>> = std::env::var("RETIQA_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(str::to_string).collect());
    // `cargo test` passes harness flags such as `--list`; only a name filter matters.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = Vec::new();
    let mut ran = 0;
    for (name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|n| n == name)) || filter.as_ref().is_some_and(|f| !name.contains(f.as_str())) {
            continue;
        }
        if std::env::args().any(|a| a == "--list") {
            println!("{name}: test");
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                println!("FAIL {name} [{secs:.1}s]: {detail}");
                failed.push(name);
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
