//! Command-line front end: dataset simulation, training, evaluation, the
//! ablation grid, and figure export.
//!
//! Every failure exits nonzero after printing a single machine-readable
//! line `error: <message>` on stderr.

use clap::{Parser, Subcommand};
use echo2depth_core::dataset::{
    generate_dataset, load_split, Split, TargetKind, DEFAULT_SPLIT_COUNTS,
};
use echo2depth_core::eval::{
    evaluate, export_figures, run_ablation_grid, write_metrics_csv, AblationSettings,
};
use echo2depth_core::models::{EncoderKind, GeneratorKind, ModelConfig};
use echo2depth_core::render::{simulate_sample, RenderOptions};
use echo2depth_core::scene::parse_scene_text;
use echo2depth_core::training::{train, Regime, TrainConfig};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "echo2depth",
    about = "Simulate binaural chirp echoes in 3D rooms and train sound-to-depth models",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset of randomized scenes (or render one scene file).
    Simulate {
        /// Total number of scenes, split ~76/14/10 into train/val/test.
        #[arg(long, default_value_t = DEFAULT_SPLIT_COUNTS.0 + DEFAULT_SPLIT_COUNTS.1 + DEFAULT_SPLIT_COUNTS.2)]
        scenes: usize,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Base scene seed; splits use disjoint seed ranges above it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Explicit train count (overrides the proportional split).
        #[arg(long)]
        train: Option<usize>,
        /// Explicit val count.
        #[arg(long)]
        val: Option<usize>,
        /// Explicit test count.
        #[arg(long)]
        test: Option<usize>,
        /// Ground-truth image resolution (16, 32, 64, or 128).
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        /// Wall reflection order (0..=6).
        #[arg(long, default_value_t = 2)]
        max_order: u32,
        /// Noise level in dB, or `inf` for noise-free rendering.
        #[arg(long, default_value = "30")]
        snr: String,
        /// Overwrite an existing dataset.
        #[arg(long)]
        force: bool,
        /// Render this single scene file instead of random scenes.
        #[arg(long)]
        scene_file: Option<PathBuf>,
    },
    /// Train a model from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split with baselines.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Metrics CSV destination (defaults next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate the whole encoder/generator grid.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
    },
    /// Export ground-truth/prediction panels for a few samples.
    ExportFigures {
        /// Depth-model checkpoint.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Grayscale-model checkpoint for the fourth column.
        #[arg(long)]
        gray_ckpt: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 4)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

type AnyError = Box<dyn std::error::Error>;

fn parse_snr(s: &str) -> Result<Option<f64>, AnyError> {
    match s {
        "inf" | "none" => Ok(None),
        other => Ok(Some(other.parse::<f64>().map_err(|_| {
            format!("bad --snr `{other}` (number or `inf`)")
        })?)),
    }
}

/// Plain `key = value` config file; `#` starts a comment.
fn read_kv_file(path: &Path) -> Result<BTreeMap<String, String>, AnyError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key = value", path.display(), i + 1))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn kv_parse<T: std::str::FromStr>(
    kv: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T, AnyError> {
    match kv.get(key) {
        Some(v) => v.parse().map_err(|_| format!("bad {key} `{v}`").into()),
        None => Ok(default),
    }
}

fn kv_model_config(kv: &BTreeMap<String, String>) -> Result<ModelConfig, AnyError> {
    let config = ModelConfig {
        encoder: EncoderKind::parse(
            kv.get("encoder").map(String::as_str).unwrap_or("waveform_early"),
        )?,
        generator: GeneratorKind::parse(
            kv.get("generator").map(String::as_str).unwrap_or("direct"),
        )?,
        resolution: kv_parse(kv, "resolution", 16)?,
        log_spectrogram: kv_parse(kv, "log_spectrogram", false)?,
    };
    config.validate()?;
    Ok(config)
}

fn kv_target(kv: &BTreeMap<String, String>) -> Result<TargetKind, AnyError> {
    match kv.get("target").map(String::as_str).unwrap_or("depth") {
        "depth" => Ok(TargetKind::Depth),
        "grayscale" => Ok(TargetKind::Grayscale),
        other => Err(format!("unknown target `{other}`").into()),
    }
}

fn run(cli: Cli) -> Result<(), AnyError> {
    match cli.cmd {
        Cmd::Simulate {
            scenes,
            out,
            seed,
            train,
            val,
            test,
            resolution,
            max_order,
            snr,
            force,
            scene_file,
        } => {
            let opts = RenderOptions {
                snr_db: parse_snr(&snr)?,
                max_order,
                resolution,
            };
            if let Some(path) = scene_file {
                return simulate_single(&path, &out, &opts);
            }
            let (dt, dv, ds) = DEFAULT_SPLIT_COUNTS;
            let total_default = dt + dv + ds;
            let counts = match (train, val, test) {
                (Some(t), Some(v), Some(s)) => (t, v, s),
                (None, None, None) => {
                    let t = scenes * dt / total_default;
                    let v = scenes * dv / total_default;
                    (t, v, scenes - t - v)
                }
                _ => return Err("pass all of --train/--val/--test or none".into()),
            };
            eprintln!(
                "simulating {} scenes ({}/{}/{}) at {resolution}x{resolution} into {}",
                counts.0 + counts.1 + counts.2,
                counts.0,
                counts.1,
                counts.2,
                out.display()
            );
            let manifest = generate_dataset(&out, counts, seed, &opts, force)?;
            println!(
                "wrote {} train / {} val / {} test samples to {}",
                manifest.count(Split::Train),
                manifest.count(Split::Val),
                manifest.count(Split::Test),
                out.display()
            );
            Ok(())
        }
        Cmd::Train { config } => {
            let kv = read_kv_file(&config)?;
            let model = kv_model_config(&kv)?;
            let target = kv_target(&kv)?;
            let regime = Regime::parse(kv.get("regime").map(String::as_str).unwrap_or("gen_only"))
                .ok_or("regime must be gen_only or gan")?;
            let mut cfg = match regime {
                Regime::GenOnly => TrainConfig::gen_only(model, target),
                Regime::Gan => TrainConfig::gan(model, target),
            };
            cfg.epochs = kv_parse(&kv, "epochs", cfg.epochs)?;
            cfg.batch_size = kv_parse(&kv, "batch_size", cfg.batch_size)?;
            cfg.seed = kv_parse(&kv, "seed", cfg.seed)?;
            cfg.lr = kv_parse(&kv, "lr", cfg.lr)?;
            cfg.beta1 = kv_parse(&kv, "beta1", cfg.beta1)?;
            cfg.beta2 = kv_parse(&kv, "beta2", cfg.beta2)?;
            cfg.lambda_l1 = kv_parse(&kv, "lambda", cfg.lambda_l1)?;
            cfg.jitter = kv_parse(&kv, "jitter", cfg.jitter)?;
            if let Some(v) = kv.get("warm_start") {
                cfg.warm_start = Some(PathBuf::from(v));
            }
            let data = PathBuf::from(kv.get("data").ok_or("config needs data=<dataset dir>")?);
            let out_dir = PathBuf::from(kv.get("out").ok_or("config needs out=<run dir>")?);

            eprintln!(
                "training {}/{} at {}x{} ({}, target {}) for {} epochs",
                model.encoder.label(),
                model.generator.label(),
                model.resolution,
                model.resolution,
                regime.label(),
                target.as_str(),
                cfg.epochs
            );
            let train_split = load_split(&data, Split::Train, model.resolution, target)?;
            let val_split = load_split(&data, Split::Val, model.resolution, target)?;
            let report = train::<f32>(
                &cfg,
                &train_split,
                Some(&val_split).filter(|v| !v.is_empty()),
                &out_dir,
            )?;
            println!(
                "done: {} steps, best val L1 {:.6}, checkpoint {}, curves {}",
                report.steps,
                report.best_val_l1,
                report.checkpoint.display(),
                report.curves.display()
            );
            Ok(())
        }
        Cmd::Eval {
            ckpt,
            data,
            split,
            out,
        } => {
            let split = Split::parse(&split)?;
            let outcome = evaluate(&ckpt, &data, split)?;
            let csv = out.unwrap_or_else(|| {
                ckpt.parent()
                    .unwrap_or_else(|| Path::new("."))
                    .join("metrics.csv")
            });
            write_metrics_csv(&outcome.rows, &csv)?;
            for row in &outcome.rows {
                println!("{}", row.to_csv());
            }
            println!("metrics written to {}", csv.display());
            Ok(())
        }
        Cmd::Ablate { grid } => {
            let kv = read_kv_file(&grid)?;
            let data = PathBuf::from(kv.get("data").ok_or("grid needs data=<dataset dir>")?);
            let out = PathBuf::from(kv.get("out").ok_or("grid needs out=<dir>")?);
            let defaults = AblationSettings::default();
            let settings = AblationSettings {
                resolution: kv_parse(&kv, "resolution", defaults.resolution)?,
                epochs: kv_parse(&kv, "epochs", defaults.epochs)?,
                seed: kv_parse(&kv, "seed", defaults.seed)?,
                target: kv_target(&kv)?,
                regime: match kv.get("regime") {
                    Some(v) => Regime::parse(v).ok_or("regime must be gen_only or gan")?,
                    None => defaults.regime,
                },
            };
            let rows = run_ablation_grid(&data, &out, &settings)?;
            for row in &rows {
                println!("{}", row.to_csv());
            }
            println!(
                "ablation table written to {}",
                out.join("ablation.csv").display()
            );
            Ok(())
        }
        Cmd::ExportFigures {
            ckpt,
            gray_ckpt,
            data,
            split,
            samples,
            out,
        } => {
            let split = Split::parse(&split)?;
            let files = export_figures(
                ckpt.as_deref(),
                gray_ckpt.as_deref(),
                &data,
                split,
                samples,
                &out,
            )?;
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
    }
}

/// Renders one scene file into a sample directory (no manifest).
fn simulate_single(scene_path: &Path, out: &Path, opts: &RenderOptions) -> Result<(), AnyError> {
    let text = std::fs::read_to_string(scene_path)
        .map_err(|e| format!("cannot read {}: {e}", scene_path.display()))?;
    let scene = parse_scene_text(&text)?;
    let sample = simulate_sample(&scene, opts)?;
    std::fs::create_dir_all(out)?;

    let mut audio = Vec::with_capacity(echo2depth_core::CLIP_LEN * 8);
    for i in 0..echo2depth_core::CLIP_LEN {
        audio.extend_from_slice(&sample.clip.left.samples[i].to_le_bytes());
        audio.extend_from_slice(&sample.clip.right.samples[i].to_le_bytes());
    }
    std::fs::write(out.join("audio.f32"), audio)?;
    std::fs::write(
        out.join("depth.pgm16"),
        echo2depth_core::dataset::encode_pgm16(&sample.depth.values),
    )?;
    std::fs::write(
        out.join("gray.pgm16"),
        echo2depth_core::dataset::encode_pgm16(&sample.gray.values),
    )?;
    std::fs::write(
        out.join("meta.txt"),
        format!(
            "seed={}\nonset_index={}\n",
            scene.rng_seed, sample.onset_index
        ),
    )?;
    println!("rendered scene to {}", out.display());
    Ok(())
}
