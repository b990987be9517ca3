//! Evaluation harness: test-split metrics with baselines, the ablation
//! grid, and prediction-figure export.

use crate::dataset::{load_split, read_dataset, DatasetError, LoadedSplit, Split, TargetKind};
use crate::figures::{compose_panel, write_panel, FigureRow};
use crate::models::{ablation_grid, batch_from_clips, ModelError, SoundToImage};
use crate::training::{
    baseline_mean_depth, baseline_random, evaluate_l1, train, Regime, TrainConfig, TrainError,
};
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One metrics line; the CSV schema is stable.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub regime: String,
    pub representation: String,
    pub fusion: String,
    pub generator: String,
    pub resolution: usize,
    pub target: String,
    pub split: String,
    pub l1: f64,
    pub n_samples: usize,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str =
        "regime,representation,fusion,generator,resolution,target,split,l1,n_samples";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.regime,
            self.representation,
            self.fusion,
            self.generator,
            self.resolution,
            self.target,
            self.split,
            self.l1,
            self.n_samples
        )
    }
}

/// Writes rows as a metrics CSV.
pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<(), EvalError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(path))?;
    }
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    writeln!(f, "{}", MetricsRow::CSV_HEADER).map_err(io_err(path))?;
    for row in rows {
        writeln!(f, "{}", row.to_csv()).map_err(io_err(path))?;
    }
    Ok(())
}

/// Mean L1 of a fixed image against every target in a split.
pub fn constant_image_l1(image: &Array2<f64>, data: &LoadedSplit) -> f64 {
    let (n, h, w) = data.targets.dim();
    let mut acc = 0.0f64;
    for i in 0..n {
        for r in 0..h {
            for c in 0..w {
                acc += (image[[r, c]] - data.targets[[i, r, c]] as f64).abs();
            }
        }
    }
    acc / (n * h * w) as f64
}

/// Mean L1 of fresh uniform-noise images against every target (seeded).
pub fn noise_baseline_l1(data: &LoadedSplit, seed: u64) -> f64 {
    let (n, h, w) = data.targets.dim();
    let mut acc = 0.0f64;
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let noise = baseline_random(h, &mut rng);
        for r in 0..h {
            for c in 0..w {
                acc += (noise[[r, c]] - data.targets[[i, r, c]] as f64).abs();
            }
        }
    }
    acc / (n * h * w) as f64
}

/// Closed-form expectation of the noise baseline: `mean(c^2 - c + 1/2)`
/// over the split's target pixels `c`.
pub fn noise_baseline_expectation(data: &LoadedSplit) -> f64 {
    let mut acc = 0.0f64;
    for &c in data.targets.iter() {
        let c = c as f64;
        acc += c * c - c + 0.5;
    }
    acc / data.targets.len() as f64
}

/// Outcome of evaluating one checkpoint: model row plus the two baselines
/// measured on the same split.
pub struct EvalOutcome {
    pub rows: Vec<MetricsRow>,
    pub model_l1: f64,
    pub mean_baseline_l1: f64,
    pub noise_baseline_l1: f64,
}

/// Evaluates a checkpoint on a split (eval mode, no jitter) alongside the
/// mean-depth and random-noise baselines.
pub fn evaluate(ckpt: &Path, data_root: &Path, split: Split) -> Result<EvalOutcome, EvalError> {
    let (mut model, data) = SoundToImage::<f32>::from_checkpoint(ckpt)?;
    let regime = data.get("regime").unwrap_or("gen_only").to_string();
    let target = match data.get("target") {
        Some("grayscale") => TargetKind::Grayscale,
        _ => TargetKind::Depth,
    };
    let resolution = model.config.resolution;

    let eval_split = load_split(data_root, split, resolution, target)?;
    if eval_split.is_empty() {
        return Err(EvalError::Dataset(DatasetError::Corrupt(format!(
            "split {split} is empty"
        ))));
    }
    let train_split = load_split(data_root, Split::Train, resolution, target)?;

    let model_l1 = evaluate_l1(&mut model, &eval_split, 16)?;
    let mean_img = baseline_mean_depth(&train_split.targets);
    let mean_l1 = constant_image_l1(&mean_img, &eval_split);
    let noise_l1 = noise_baseline_l1(&eval_split, 0xBA5E);

    let mk = |regime: &str, repr: &str, fusion: &str, gener: &str, l1: f64| MetricsRow {
        regime: regime.into(),
        representation: repr.into(),
        fusion: fusion.into(),
        generator: gener.into(),
        resolution,
        target: target.as_str().into(),
        split: split.as_str().into(),
        l1,
        n_samples: eval_split.len(),
    };
    let rows = vec![
        mk(
            &regime,
            model.config.encoder.representation(),
            model.config.encoder.fusion_label(),
            model.config.generator.label(),
            model_l1,
        ),
        mk("baseline", "mean_depth", "-", "-", mean_l1),
        mk("baseline", "random_noise", "-", "-", noise_l1),
    ];
    Ok(EvalOutcome {
        rows,
        model_l1,
        mean_baseline_l1: mean_l1,
        noise_baseline_l1: noise_l1,
    })
}

/// Settings for [`run_ablation_grid`].
#[derive(Debug, Clone)]
pub struct AblationSettings {
    pub resolution: usize,
    pub epochs: usize,
    pub seed: u64,
    pub target: TargetKind,
    pub regime: Regime,
}

impl Default for AblationSettings {
    fn default() -> Self {
        Self {
            resolution: 16,
            epochs: 2,
            seed: 7,
            target: TargetKind::Depth,
            regime: Regime::GenOnly,
        }
    }
}

/// Trains and evaluates every encoder/generator combination, then appends
/// the two baselines: ten rows total, written to `out_dir/ablation.csv`.
pub fn run_ablation_grid(
    data_root: &Path,
    out_dir: &Path,
    settings: &AblationSettings,
) -> Result<Vec<MetricsRow>, EvalError> {
    let mut rows = Vec::new();
    let mut test_split = None;
    for (i, model_cfg) in ablation_grid(settings.resolution).into_iter().enumerate() {
        let mut cfg = match settings.regime {
            Regime::GenOnly => TrainConfig::gen_only(model_cfg, settings.target),
            Regime::Gan => TrainConfig::gan(model_cfg, settings.target),
        };
        cfg.epochs = settings.epochs;
        cfg.seed = settings.seed;
        let train_split = load_split(data_root, Split::Train, settings.resolution, settings.target)?;
        let val_split = load_split(data_root, Split::Val, settings.resolution, settings.target)?;
        let run_dir = out_dir.join(format!(
            "run{:02}_{}_{}_{}",
            i,
            model_cfg.encoder.label(),
            model_cfg.generator.label(),
            settings.resolution
        ));
        let report = train::<f32>(&cfg, &train_split, Some(&val_split).filter(|v| !v.is_empty()), &run_dir)?;
        let outcome = evaluate(&report.checkpoint, data_root, Split::Test)?;
        rows.push(outcome.rows[0].clone());
        if test_split.is_none() {
            test_split = Some(load_split(
                data_root,
                Split::Test,
                settings.resolution,
                settings.target,
            )?);
        }
    }

    // shared baseline rows on the test split
    let test_split = match test_split {
        Some(t) => t,
        None => load_split(data_root, Split::Test, settings.resolution, settings.target)?,
    };
    let train_split = load_split(data_root, Split::Train, settings.resolution, settings.target)?;
    let mean_img = baseline_mean_depth(&train_split.targets);
    let mk = |repr: &str, l1: f64| MetricsRow {
        regime: "baseline".into(),
        representation: repr.into(),
        fusion: "-".into(),
        generator: "-".into(),
        resolution: settings.resolution,
        target: settings.target.as_str().into(),
        split: "test".into(),
        l1,
        n_samples: test_split.len(),
    };
    rows.push(mk("mean_depth", constant_image_l1(&mean_img, &test_split)));
    rows.push(mk("random_noise", noise_baseline_l1(&test_split, 0xBA5E)));

    write_metrics_csv(&rows, &out_dir.join("ablation.csv"))?;
    Ok(rows)
}

/// Exports prediction panels for the first `n_samples` records of a split.
///
/// `depth_ckpt` fills the predicted-depth column and `gray_ckpt` (when
/// given) the predicted-grayscale column; a missing model leaves its
/// column black. Re-export with the same inputs is byte-identical.
pub fn export_figures(
    depth_ckpt: Option<&Path>,
    gray_ckpt: Option<&Path>,
    data_root: &Path,
    split: Split,
    n_samples: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, EvalError> {
    let mut depth_model = match depth_ckpt {
        Some(p) => Some(SoundToImage::<f32>::from_checkpoint(p)?.0),
        None => None,
    };
    let mut gray_model = match gray_ckpt {
        Some(p) => Some(SoundToImage::<f32>::from_checkpoint(p)?.0),
        None => None,
    };
    let resolution = depth_model
        .as_ref()
        .or(gray_model.as_ref())
        .map(|m| m.config.resolution)
        .unwrap_or(128);

    let mut rows = Vec::new();
    for rec in read_dataset(data_root, split)?.take(n_samples) {
        let rec = rec?;
        let mut clips = ndarray::Array3::<f32>::zeros((1, 2, crate::CLIP_LEN));
        for (j, &v) in rec.clip.left.samples.iter().enumerate() {
            clips[[0, 0, j]] = v;
        }
        for (j, &v) in rec.clip.right.samples.iter().enumerate() {
            clips[[0, 1, j]] = v;
        }
        let predict = |model: &mut Option<SoundToImage<f32>>| -> Result<Array2<f64>, EvalError> {
            match model {
                Some(m) => {
                    let batch = batch_from_clips::<f32>(&clips, &m.config);
                    let pred = m.forward(&batch, false)?;
                    Ok(pred
                        .index_axis(Axis(0), 0)
                        .index_axis(Axis(0), 0)
                        .mapv(|v| v as f64))
                }
                None => Ok(Array2::zeros((resolution, resolution))),
            }
        };
        let depth_pred = predict(&mut depth_model)?;
        let gray_pred = predict(&mut gray_model)?;
        let shrink = |img: &Array2<f64>| -> Array2<f64> {
            let have = img.dim().0;
            if have == resolution {
                img.clone()
            } else {
                let k = have / resolution;
                let mut out = Array2::zeros((resolution, resolution));
                for r in 0..resolution {
                    for c in 0..resolution {
                        let mut acc = 0.0;
                        for i in 0..k {
                            for j in 0..k {
                                acc += img[[r * k + i, c * k + j]];
                            }
                        }
                        out[[r, c]] = acc / (k * k) as f64;
                    }
                }
                out
            }
        };
        rows.push(FigureRow {
            depth_gt: shrink(&rec.depth.values),
            depth_pred,
            gray_gt: shrink(&rec.gray.values),
            gray_pred,
        });
    }
    if rows.is_empty() {
        return Err(EvalError::Dataset(DatasetError::Corrupt(
            "no samples to export".into(),
        )));
    }
    let panel = compose_panel(&rows);
    write_panel(&panel, &out_dir.join("predictions")).map_err(io_err(out_dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn split_with_targets(vals: Array3<f32>) -> LoadedSplit {
        let n = vals.dim().0;
        LoadedSplit {
            clips: Array3::zeros((n, 2, crate::CLIP_LEN)),
            targets: vals,
            onsets: vec![0; n],
            ids: (0..n).map(|i| format!("s{i}")).collect(),
        }
    }

    #[test]
    fn constant_image_l1_midpoint() {
        let data = split_with_targets(Array3::from_elem((3, 4, 4), 0.5));
        let img = Array2::zeros((4, 4));
        assert!((constant_image_l1(&img, &data) - 0.5).abs() < 1e-7);
    }

    // measured noise baseline within sampling error of its closed form
    #[test]
    fn noise_baseline_tracks_expectation() {
        let mut targets = Array3::zeros((64, 16, 16));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        for v in targets.iter_mut() {
            *v = rng.random_range(0.0f32..1.0);
        }
        let data = split_with_targets(targets);
        let measured = noise_baseline_l1(&data, 42);
        let expected = noise_baseline_expectation(&data);
        assert!(
            (measured - expected).abs() / expected < 0.02,
            "measured {measured}, expected {expected}"
        );
    }

    #[test]
    fn metrics_csv_schema_is_stable() {
        assert_eq!(
            MetricsRow::CSV_HEADER,
            "regime,representation,fusion,generator,resolution,target,split,l1,n_samples"
        );
        let row = MetricsRow {
            regime: "gen_only".into(),
            representation: "waveform".into(),
            fusion: "early".into(),
            generator: "direct".into(),
            resolution: 16,
            target: "depth".into(),
            split: "test".into(),
            l1: 0.125,
            n_samples: 10,
        };
        assert_eq!(row.to_csv(), "gen_only,waveform,early,direct,16,depth,test,0.125,10");
    }
}
