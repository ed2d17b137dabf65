//! `retiqa`: synthesise data, preprocess, compute priors, train, evaluate
//! and ablate the prior-guided retinal image-quality classifier.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use retiqa::bench::bench_extremum;
use retiqa::data::{generate_dataset, kfold_split, Manifest, ManifestRecord, ManifestSource, QualityLabel, SyntheticParams};
use retiqa::evaluate::gradcam;
use retiqa::imgproc::{load_image, preprocess, save_pgm, save_png, PreprocessConfig};
use retiqa::nnet::gradcheck::{check_layers, gradient_check, GradCheckOptions};
use retiqa::nnet::{Fault, ModelConfig, StemVariant};
use retiqa::priors::{bright_channel, dark_channel};
use retiqa::train::{evaluate_model, log_to_csv, peek_fingerprint, run_ablation, train, AblationConfig, Checkpoint, TrainConfig};
use retiqa::{Error, Result};

const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Parser)]
#[command(name = "retiqa", version, about = "Prior-guided retinal image quality assessment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic fundus dataset with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        good: usize,
        #[arg(long, default_value_t = 10)]
        usable: usize,
        #[arg(long, default_value_t = 10)]
        reject: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        size: usize,
    },
    /// Detect the field of view, crop, pad and resize one image.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the frame-centred circle instead of detecting the FoV.
        #[arg(long)]
        no_fov: bool,
        #[arg(long, default_value_t = 224)]
        size: usize,
    },
    /// Write full-resolution dark and bright channel maps as PGM.
    Priors {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        dark: PathBuf,
        #[arg(long)]
        bright: PathBuf,
        #[arg(long, default_value_t = 7)]
        radius: usize,
    },
    /// Train a model on a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        root: PathBuf,
        /// JSON training config; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Validation manifest (same root) scored after every epoch.
        #[arg(long)]
        val_manifest: Option<PathBuf>,
        #[arg(long)]
        variant: Option<StemVariant>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_augment: bool,
    },
    /// Evaluate a checkpoint on a manifest and write a JSON report.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Training config the checkpoint was made with, if not a default model.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write stratified k-fold train/validation manifests.
    Kfold {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_prefix: String,
    },
    /// Grad-CAM heatmap of one class for one image, as PGM.
    Gradcam {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        class: QualityLabel,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every layer and the full model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time the naive and sliding-window extremum filters.
    Bench {
        #[arg(long, default_value_t = 1024)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        radius: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Synthesise, train and evaluate all four stem variants per seed.
    Ablate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Training images per class.
        #[arg(long)]
        train_per_class: Option<usize>,
        /// Test images per class.
        #[arg(long)]
        test_per_class: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_json(&read_text(p)?).map_err(|e| match e {
            Error::Json(j) => Error::InvalidConfig(format!("{}: {j}", p.display())),
            other => other,
        }),
        None => Ok(TrainConfig::default()),
    }
}

/// Loads a checkpoint, taking its model config from `config` or else
/// matching the stored fingerprint against the default model of each variant.
fn load_checkpoint(path: &Path, config: Option<&Path>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let model = match config {
        Some(c) => load_train_config(Some(c))?.model_config(),
        None => {
            let found = peek_fingerprint(&bytes)?;
            StemVariant::ALL
                .into_iter()
                .map(|v| {
                    let mut m = ModelConfig::default();
                    m.stem.variant = v;
                    m
                })
                .find(|m| m.fingerprint() == found)
                .ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "{}: fingerprint {found:#010x} matches no default model; pass --config",
                        path.display()
                    ))
                })?
        }
    };
    Checkpoint::from_bytes(&bytes, &model)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            good,
            usable,
            reject,
            seed,
            size,
        } => {
            let params = SyntheticParams {
                image_size: size,
                ..Default::default()
            };
            let samples = generate_dataset([good, usable, reject], seed, &params)?;
            let mut records = Vec::with_capacity(samples.len());
            for (i, s) in samples.iter().enumerate() {
                let rel = format!("images/{}_{i:05}.png", s.label);
                let path = out.join(&rel);
                ensure_parent(&path)?;
                save_png(&s.image, &path)?;
                records.push(ManifestRecord {
                    path: rel,
                    label: s.label,
                });
            }
            let manifest = Manifest::new(records)?;
            manifest.save(&out.join("manifest.csv"))?;
            println!("wrote {} images and {}", manifest.len(), out.join("manifest.csv").display());
        }
        Command::Preprocess {
            input,
            out,
            no_fov,
            size,
        } => {
            let cfg = PreprocessConfig {
                target_size: size,
                fov_enabled: !no_fov,
                ..Default::default()
            };
            let img = load_image(&input)?;
            let result = preprocess(&img, &cfg).map_err(|e| match e {
                Error::NoFovFound { votes, required } => Error::InvalidImage(format!(
                    "{}: no field of view found ({votes:.1} votes, {required:.1} required); try --no-fov",
                    input.display()
                )),
                other => other,
            })?;
            ensure_parent(&out)?;
            save_png(&result, &out)?;
        }
        Command::Priors {
            input,
            dark,
            bright,
            radius,
        } => {
            let img = load_image(&input)?;
            let d = dark_channel(&img, radius);
            let b = bright_channel(&img, radius);
            ensure_parent(&dark)?;
            ensure_parent(&bright)?;
            save_pgm(&d.values, d.height, d.width, &dark)?;
            save_pgm(&b.values, b.height, b.width, &bright)?;
        }
        Command::Train {
            manifest,
            root,
            config,
            out,
            log,
            val_manifest,
            variant,
            epochs,
            batch_size,
            seed,
            no_augment,
        } => {
            let mut cfg = load_train_config(config.as_deref())?;
            if let Some(v) = variant {
                cfg.variant = v;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
                cfg.lr_decay_epoch = cfg.lr_decay_epoch.min(e);
            }
            if let Some(b) = batch_size {
                cfg.batch_size = b;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if no_augment {
                cfg.augment = None;
            }
            cfg.validate()?;
            let train_set = ManifestSource::new(&root, Manifest::load(&manifest)?);
            let val_set = val_manifest
                .map(|p| Manifest::load(&p).map(|m| ManifestSource::new(&root, m)))
                .transpose()?;
            let start = Instant::now();
            let outcome = train(&cfg, &train_set, val_set.as_ref(), |e| {
                let f = e.val_macro_f.map_or(String::new(), |f| format!("  val_macro_f {f:.4}"));
                println!(
                    "epoch {:>3}  loss {:.4}{f}  ({:.0}s)",
                    e.epoch,
                    e.mean_loss,
                    start.elapsed().as_secs_f64()
                );
            })?;
            write(&out, outcome.checkpoint.to_bytes())?;
            if let Some(log) = log {
                write(&log, log_to_csv(&outcome.log))?;
            }
        }
        Command::Eval {
            manifest,
            root,
            ckpt,
            report,
            config,
        } => {
            let checkpoint = load_checkpoint(&ckpt, config.as_deref())?;
            let source = ManifestSource::new(&root, Manifest::load(&manifest)?);
            let metrics = evaluate_model(checkpoint.model(), &source)?;
            write(&report, metrics.to_json()?)?;
            print!("{}", metrics.to_text());
        }
        Command::Kfold {
            manifest,
            k,
            seed,
            out_prefix,
        } => {
            let m = Manifest::load(&manifest)?;
            for (i, fold) in kfold_split(&m, k, seed)?.iter().enumerate() {
                let train_path = PathBuf::from(format!("{out_prefix}{}_train.csv", i + 1));
                let val_path = PathBuf::from(format!("{out_prefix}{}_val.csv", i + 1));
                write(&train_path, fold.train.to_text())?;
                write(&val_path, fold.validation.to_text())?;
                println!(
                    "fold {}: {} train, {} validation",
                    i + 1,
                    fold.train.len(),
                    fold.validation.len()
                );
            }
        }
        Command::Gradcam {
            ckpt,
            input,
            class,
            out,
            config,
        } => {
            let checkpoint = load_checkpoint(&ckpt, config.as_deref())?;
            let img = load_image(&input)?;
            let hm = gradcam(checkpoint.model(), &img, class.index())?;
            ensure_parent(&out)?;
            save_pgm(&hm.values, hm.height, hm.width, &out)?;
        }
        Command::Gradcheck { seed } => {
            let layers = check_layers(seed, 1e-6)?;
            let opts = GradCheckOptions {
                seed,
                ..Default::default()
            };
            let model = gradient_check(&ModelConfig::default(), &opts)?;
            let faulty = gradient_check(
                &ModelConfig::default(),
                &GradCheckOptions {
                    fault: Some(Fault::FlipFirstReluGradient),
                    ..opts.clone()
                },
            )?;
            print!("{}", layers.to_text(GRADCHECK_TOLERANCE));
            print!("{}", model.to_text(GRADCHECK_TOLERANCE));
            let caught = !faulty.passes(GRADCHECK_TOLERANCE);
            println!(
                "injected sign flip {}",
                if caught { "detected" } else { "NOT detected" }
            );
            if !layers.passes(GRADCHECK_TOLERANCE) || !model.passes(GRADCHECK_TOLERANCE) || !caught {
                return Err(Error::InvalidConfig("gradient check failed".into()));
            }
        }
        Command::Bench { size, radius, repeats } => {
            if size == 0 {
                return Err(Error::InvalidConfig("--size must be positive".into()));
            }
            print!("{}", bench_extremum(size, radius, repeats).to_text());
        }
        Command::Ablate {
            out,
            seeds,
            epochs,
            train_per_class,
            test_per_class,
            size,
        } => {
            let mut cfg = AblationConfig {
                seeds,
                ..Default::default()
            };
            if let Some(e) = epochs {
                cfg.train.epochs = e;
                cfg.train.lr_decay_epoch = cfg.train.lr_decay_epoch.min(e);
            }
            if let Some(n) = train_per_class {
                cfg.train_counts = [n; 3];
            }
            if let Some(n) = test_per_class {
                cfg.test_counts = [n; 3];
            }
            if let Some(s) = size {
                cfg.synth.image_size = s;
            }
            let start = Instant::now();
            let result = run_ablation(&cfg, |c| {
                println!(
                    "{:<12} seed {:<6} macro_f {:.4}  accuracy {:.4}  ({:.0}s)",
                    c.variant.name(),
                    c.seed,
                    c.report.macro_avg.f,
                    c.report.accuracy,
                    start.elapsed().as_secs_f64()
                );
            })?;
            let table = result.to_table();
            write(&out.join("table.txt"), &table)?;
            write(&out.join("results.csv"), result.to_csv())?;
            write(&out.join("results.json"), serde_json::to_string_pretty(&result)? + "\n")?;
            print!("{table}");
        }
    }
    Ok(())
}
