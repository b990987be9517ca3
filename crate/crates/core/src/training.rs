//! Training: generator-only L1 regression and the patch-adversarial
//! least-squares regime, plus the two trivial reconstruction baselines.

use crate::dataset::{LoadedSplit, TargetKind};
use crate::models::{
    batch_from_clips, save_checkpoint, ModelConfig, ModelError, PatchDiscriminator, SoundToImage,
};
use crate::nn::{Adam, ParamOwner, Scalar};
use crate::signal::{jitter_clip, BinauralClip, Waveform};
use crate::{CLIP_LEN, SAMPLE_RATE};
use ndarray::{Array2, Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset split is empty")]
    EmptyDataset,
    #[error("loss became non-finite at step {0}")]
    Diverged(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Which objective drives the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    GenOnly,
    Gan,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::GenOnly => "gen_only",
            Regime::Gan => "gan",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gen_only" => Some(Regime::GenOnly),
            "gan" => Some(Regime::Gan),
            _ => None,
        }
    }
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub regime: Regime,
    pub model: ModelConfig,
    pub target: TargetKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Weight of the L1 term in the adversarial objective.
    pub lambda_l1: f64,
    pub jitter: bool,
    /// Optional generator checkpoint to initialize from.
    pub warm_start: Option<PathBuf>,
}

impl TrainConfig {
    /// Generator-only defaults: Adam(1e-4, 0.9, 0.999), batch 16.
    pub fn gen_only(model: ModelConfig, target: TargetKind) -> Self {
        Self {
            regime: Regime::GenOnly,
            model,
            target,
            batch_size: 16,
            epochs: 50,
            seed: 0,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            lambda_l1: 100.0,
            jitter: true,
            warm_start: None,
        }
    }

    /// Adversarial defaults: Adam(2e-4, 0.5, 0.999), batch 16, lambda 100.
    pub fn gan(model: ModelConfig, target: TargetKind) -> Self {
        Self {
            regime: Regime::Gan,
            lr: 2e-4,
            beta1: 0.5,
            ..Self::gen_only(model, target)
        }
    }
}

// --- losses -----------------------------------------------------------

/// Mean absolute error over all pixels, accumulated in f64.
pub fn l1_loss<T: Scalar>(pred: &Array4<T>, gt: &Array4<T>) -> f64 {
    assert_eq!(pred.dim(), gt.dim(), "l1 shapes differ");
    let mut acc = 0.0f64;
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        acc += (p.to_f64() - g.to_f64()).abs();
    }
    acc / pred.len() as f64
}

/// Gradient of `scale * l1_loss` with respect to `pred`.
pub fn l1_grad<T: Scalar>(pred: &Array4<T>, gt: &Array4<T>, scale: f64) -> Array4<T> {
    let s = scale / pred.len() as f64;
    let mut out = Array4::zeros(pred.dim());
    ndarray::Zip::from(&mut out)
        .and(pred)
        .and(gt)
        .for_each(|o, &p, &g| {
            let d = p.to_f64() - g.to_f64();
            *o = T::from_f64(if d > 0.0 {
                s
            } else if d < 0.0 {
                -s
            } else {
                0.0
            });
        });
    out
}

/// Least-squares discriminator loss: `mean((1-real)^2) + mean(fake^2)`.
pub fn lsgan_d_loss<T: Scalar>(scores_real: &Array4<T>, scores_fake: &Array4<T>) -> f64 {
    let mut acc = 0.0f64;
    for &s in scores_real.iter() {
        acc += (1.0 - s.to_f64()).powi(2);
    }
    let real = acc / scores_real.len() as f64;
    let mut acc = 0.0f64;
    for &s in scores_fake.iter() {
        acc += s.to_f64().powi(2);
    }
    real + acc / scores_fake.len() as f64
}

/// Gradients of `scale * lsgan_d_loss` w.r.t. the real and fake scores.
pub fn lsgan_d_grads<T: Scalar>(
    scores_real: &Array4<T>,
    scores_fake: &Array4<T>,
    scale: f64,
) -> (Array4<T>, Array4<T>) {
    let nr = scores_real.len() as f64;
    let nf = scores_fake.len() as f64;
    let dreal = scores_real.mapv(|s| T::from_f64(scale * 2.0 * (s.to_f64() - 1.0) / nr));
    let dfake = scores_fake.mapv(|s| T::from_f64(scale * 2.0 * s.to_f64() / nf));
    (dreal, dfake)
}

/// Least-squares generator loss: `mean((1-fake)^2)`.
pub fn lsgan_g_loss<T: Scalar>(scores_fake: &Array4<T>) -> f64 {
    let mut acc = 0.0f64;
    for &s in scores_fake.iter() {
        acc += (1.0 - s.to_f64()).powi(2);
    }
    acc / scores_fake.len() as f64
}

/// Gradient of [`lsgan_g_loss`] w.r.t. the fake scores.
pub fn lsgan_g_grad<T: Scalar>(scores_fake: &Array4<T>) -> Array4<T> {
    let n = scores_fake.len() as f64;
    scores_fake.mapv(|s| T::from_f64(2.0 * (s.to_f64() - 1.0) / n))
}

// --- baselines --------------------------------------------------------

/// Pixel-wise mean of the training targets.
pub fn baseline_mean_depth(targets: &Array3<f32>) -> Array2<f64> {
    let (n, h, w) = targets.dim();
    assert!(n > 0, "mean baseline needs at least one target");
    let mut out = Array2::<f64>::zeros((h, w));
    for i in 0..n {
        for r in 0..h {
            for c in 0..w {
                out[[r, c]] += targets[[i, r, c]] as f64;
            }
        }
    }
    out / n as f64
}

/// Independent uniform noise in [0, 1) per pixel.
pub fn baseline_random<R: Rng + ?Sized>(resolution: usize, rng: &mut R) -> Array2<f64> {
    let mut out = Array2::zeros((resolution, resolution));
    for v in out.iter_mut() {
        *v = rng.random_range(0.0..1.0);
    }
    out
}

// --- loop plumbing ----------------------------------------------------

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub curves: PathBuf,
    pub best_val_l1: f64,
    pub final_train_l1: f64,
    pub steps: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Copies the selected samples into a batch, applying jitter augmentation
/// with a per-sample rng so data order and thread count cannot change draws.
fn assemble_batch(
    data: &LoadedSplit,
    indices: &[usize],
    jitter: bool,
    seed: u64,
    epoch: usize,
) -> (Array3<f32>, Array3<f32>) {
    let bs = indices.len();
    let res = data.targets.dim().1;
    let mut clips = Array3::zeros((bs, 2, CLIP_LEN));
    let mut targets = Array3::zeros((bs, res, res));
    for (row, &i) in indices.iter().enumerate() {
        if jitter {
            let left = Waveform::new(
                data.clips.index_axis(Axis(0), i).row(0).to_vec(),
                SAMPLE_RATE,
            );
            let right = Waveform::new(
                data.clips.index_axis(Axis(0), i).row(1).to_vec(),
                SAMPLE_RATE,
            );
            let clip = BinauralClip::new(left, right, data.onsets[i]).expect("stored clip");
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed.wrapping_add(1 + i as u64)
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    ^ (epoch as u64),
            );
            let jittered = jitter_clip(&clip, &mut rng);
            for (j, &v) in jittered.left.samples.iter().enumerate() {
                clips[[row, 0, j]] = v;
            }
            for (j, &v) in jittered.right.samples.iter().enumerate() {
                clips[[row, 1, j]] = v;
            }
        } else {
            clips
                .index_axis_mut(Axis(0), row)
                .assign(&data.clips.index_axis(Axis(0), i));
        }
        targets
            .index_axis_mut(Axis(0), row)
            .assign(&data.targets.index_axis(Axis(0), i));
    }
    (clips, targets)
}

fn targets_to_images<T: Scalar>(targets: &Array3<f32>) -> Array4<T> {
    let (n, h, w) = targets.dim();
    let mut out = Array4::zeros((n, 1, h, w));
    for ((i, r, c), &v) in targets.indexed_iter() {
        out[[i, 0, r, c]] = T::from_f64(v as f64);
    }
    out
}

/// Mean L1 of a model over a split in eval mode (no jitter).
pub fn evaluate_l1<T: Scalar>(
    model: &mut SoundToImage<T>,
    data: &LoadedSplit,
    batch_size: usize,
) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut total_abs = 0.0f64;
    let mut total_px = 0usize;
    for chunk in indices.chunks(batch_size) {
        let (clips, targets) = assemble_batch(data, chunk, false, 0, 0);
        let batch = batch_from_clips::<T>(&clips, &model.config);
        let pred = model.forward(&batch, false)?;
        let gt = targets_to_images::<T>(&targets);
        total_abs += l1_loss(&pred, &gt) * pred.len() as f64;
        total_px += pred.len();
    }
    Ok(total_abs / total_px as f64)
}

struct CurveWriter {
    file: std::fs::File,
    path: PathBuf,
}

impl CurveWriter {
    fn create(dir: &Path) -> Result<Self, TrainError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("curves.csv");
        let mut file = std::fs::File::create(&path).map_err(io_err(&path))?;
        writeln!(file, "step,l1,gan_g,gan_d,g_total").map_err(io_err(&path))?;
        Ok(Self { file, path })
    }

    fn row(
        &mut self,
        step: u64,
        l1: f64,
        gan_g: f64,
        gan_d: f64,
        total: f64,
    ) -> Result<(), TrainError> {
        writeln!(self.file, "{step},{l1},{gan_g},{gan_d},{total}").map_err(io_err(&self.path))
    }
}

fn maybe_warm_start<T: Scalar>(
    model: &mut SoundToImage<T>,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if let Some(path) = &cfg.warm_start {
        let (loaded, _) = SoundToImage::<T>::from_checkpoint(path)?;
        if loaded.config != model.config {
            return Err(TrainError::Model(ModelError::BadConfig(
                "warm-start checkpoint config differs".into(),
            )));
        }
        *model = loaded;
    }
    Ok(())
}

fn checkpoint_pairs(cfg: &TrainConfig, best_val: f64) -> Vec<(String, String)> {
    vec![
        ("regime".into(), cfg.regime.label().into()),
        ("target".into(), cfg.target.as_str().into()),
        ("seed".into(), cfg.seed.to_string()),
        ("best_val_l1".into(), best_val.to_string()),
    ]
}

/// Minimizes the L1 regression objective over the train split, tracking the
/// best validation L1 and saving that checkpoint.
pub fn train_generator_only<T: Scalar>(
    cfg: &TrainConfig,
    train: &LoadedSplit,
    val: Option<&LoadedSplit>,
    out_dir: &Path,
) -> Result<TrainReport, TrainError> {
    assert_eq!(cfg.regime, Regime::GenOnly);
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = SoundToImage::<T>::new(cfg.model, cfg.seed)?;
    maybe_warm_start(&mut model, cfg)?;
    let mut opt = Adam::<T>::new(cfg.lr, cfg.beta1, cfg.beta2);
    let mut curves = CurveWriter::create(out_dir)?;
    let ckpt_path = out_dir.join("model.ckpt");

    let mut best_val = f64::INFINITY;
    let mut last_train_l1 = f64::NAN;
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(train.len(), cfg.seed, epoch);
        for chunk in order.chunks(cfg.batch_size) {
            let (clips, targets) = assemble_batch(train, chunk, cfg.jitter, cfg.seed, epoch);
            let batch = batch_from_clips::<T>(&clips, &cfg.model);
            let pred = model.forward(&batch, true)?;
            let gt = targets_to_images::<T>(&targets);
            let l1 = l1_loss(&pred, &gt);
            step += 1;
            if !l1.is_finite() {
                return Err(TrainError::Diverged(step));
            }
            model.backward(l1_grad(&pred, &gt, 1.0));
            opt.step(&mut model);
            model.zero_grads();
            curves.row(step, l1, 0.0, 0.0, l1)?;
            last_train_l1 = l1;
        }
        let val_l1 = match val {
            Some(v) if !v.is_empty() => evaluate_l1(&mut model, v, cfg.batch_size)?,
            _ => last_train_l1,
        };
        if val_l1 < best_val {
            best_val = val_l1;
            save_checkpoint(&ckpt_path, &checkpoint_pairs(cfg, best_val), &mut model)?;
        }
    }
    Ok(TrainReport {
        checkpoint: ckpt_path,
        curves: curves.path,
        best_val_l1: best_val,
        final_train_l1: last_train_l1,
        steps: step,
    })
}

/// Alternating least-squares adversarial training: one discriminator step
/// (half the discriminator objective) then one generator step
/// (adversarial term plus `lambda` times the L1 term) per batch.
pub fn train_gan<T: Scalar>(
    cfg: &TrainConfig,
    train: &LoadedSplit,
    val: Option<&LoadedSplit>,
    out_dir: &Path,
) -> Result<TrainReport, TrainError> {
    assert_eq!(cfg.regime, Regime::Gan);
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut gen = SoundToImage::<T>::new(cfg.model, cfg.seed)?;
    maybe_warm_start(&mut gen, cfg)?;
    let mut disc = PatchDiscriminator::<T>::new(cfg.model.resolution, &mut {
        ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x0D15_C0DE))
    });
    let mut opt_g = Adam::<T>::new(cfg.lr, cfg.beta1, cfg.beta2);
    let mut opt_d = Adam::<T>::new(cfg.lr, cfg.beta1, cfg.beta2);
    let mut curves = CurveWriter::create(out_dir)?;
    let ckpt_path = out_dir.join("model.ckpt");

    let mut best_val = f64::INFINITY;
    let mut last_train_l1 = f64::NAN;
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(train.len(), cfg.seed, epoch);
        for chunk in order.chunks(cfg.batch_size) {
            let (clips, targets) = assemble_batch(train, chunk, cfg.jitter, cfg.seed, epoch);
            let batch = batch_from_clips::<T>(&clips, &cfg.model);
            let real = targets_to_images::<T>(&targets);

            // discriminator step on real and detached fake images
            let fake = gen.forward(&batch, true)?;
            disc.zero_grads();
            let scores_real = disc.forward(&real, true);
            let (dreal, _) = lsgan_d_grads(&scores_real, &scores_real, 0.5);
            disc.backward(&dreal);
            let scores_fake = disc.forward(&fake, true);
            let (_, dfake) = lsgan_d_grads(&scores_real, &scores_fake, 0.5);
            disc.backward(&dfake);
            let gan_d = lsgan_d_loss(&scores_real, &scores_fake);
            opt_d.step(&mut disc);
            disc.zero_grads();

            // generator step through the updated discriminator
            let scores_fake = disc.forward(&fake, true);
            let gan_g = lsgan_g_loss(&scores_fake);
            let l1 = l1_loss(&fake, &real);
            let g_total = gan_g + cfg.lambda_l1 * l1;
            step += 1;
            if !g_total.is_finite() || !gan_d.is_finite() {
                return Err(TrainError::Diverged(step));
            }
            let mut dimg = disc.backward(&lsgan_g_grad(&scores_fake));
            dimg += &l1_grad(&fake, &real, cfg.lambda_l1);
            gen.backward(dimg);
            opt_g.step(&mut gen);
            gen.zero_grads();
            disc.zero_grads();

            curves.row(step, l1, gan_g, gan_d, g_total)?;
            last_train_l1 = l1;
        }
        let val_l1 = match val {
            Some(v) if !v.is_empty() => evaluate_l1(&mut gen, v, cfg.batch_size)?,
            _ => last_train_l1,
        };
        if val_l1 < best_val {
            best_val = val_l1;
            save_checkpoint(&ckpt_path, &checkpoint_pairs(cfg, best_val), &mut gen)?;
        }
    }
    Ok(TrainReport {
        checkpoint: ckpt_path,
        curves: curves.path,
        best_val_l1: best_val,
        final_train_l1: last_train_l1,
        steps: step,
    })
}

/// Dispatches on the configured regime.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    train_split: &LoadedSplit,
    val_split: Option<&LoadedSplit>,
    out_dir: &Path,
) -> Result<TrainReport, TrainError> {
    match cfg.regime {
        Regime::GenOnly => train_generator_only::<T>(cfg, train_split, val_split, out_dir),
        Regime::Gan => train_gan::<T>(cfg, train_split, val_split, out_dir),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn grid(vals: &[f64]) -> Array4<f64> {
        Array4::from_shape_vec((1, 1, vals.len(), 1), vals.to_vec()).unwrap()
    }

    #[test]
    fn l1_of_identical_images_is_zero() {
        let a = grid(&[0.3, 0.7]);
        assert_eq!(l1_loss(&a, &a), 0.0);
    }

    #[test]
    fn l1_of_constant_offset() {
        let p = grid(&[0.0, 0.0]);
        let g = grid(&[0.5, 0.5]);
        assert_eq!(l1_loss(&p, &g), 0.5);
    }

    // perfect discriminator: real scores 1, fake scores 0
    #[test]
    fn lsgan_d_loss_values() {
        assert_eq!(lsgan_d_loss(&grid(&[1.0, 1.0]), &grid(&[0.0])), 0.0);
        assert_eq!(lsgan_d_loss(&grid(&[0.0]), &grid(&[1.0])), 2.0);
        assert_eq!(lsgan_d_loss(&grid(&[0.5]), &grid(&[0.5])), 0.5);
    }

    #[test]
    fn lsgan_g_loss_values() {
        assert_eq!(lsgan_g_loss(&grid(&[1.0])), 0.0);
        assert_eq!(lsgan_g_loss(&grid(&[0.0])), 1.0);
        assert_eq!(lsgan_g_loss(&grid(&[0.5])), 0.25);
    }

    #[test]
    fn losses_are_non_negative() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = grid(&[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            let b = grid(&[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            assert!(l1_loss(&a, &b) >= 0.0);
            assert!(lsgan_d_loss(&a, &b) >= 0.0);
            assert!(lsgan_g_loss(&a) >= 0.0);
        }
    }

    #[test]
    fn l1_grad_signs_and_scale() {
        let p = grid(&[0.8, 0.2]);
        let g = grid(&[0.5, 0.5]);
        let d = l1_grad(&p, &g, 100.0);
        assert_eq!(d[[0, 0, 0, 0]], 50.0); // 100 * (1/2)
        assert_eq!(d[[0, 0, 1, 0]], -50.0);
    }

    #[test]
    fn mean_baseline_of_identical_images_is_that_image() {
        let mut t = Array3::<f32>::zeros((3, 2, 2));
        for i in 0..3 {
            t[[i, 0, 0]] = 0.25;
            t[[i, 1, 1]] = 0.75;
        }
        let m = baseline_mean_depth(&t);
        assert!((m[[0, 0]] - 0.25).abs() < 1e-7);
        assert!((m[[1, 1]] - 0.75).abs() < 1e-7);
        assert!((m[[0, 1]]).abs() < 1e-7);
    }

    // E|c - U| over U[0,1) is c^2 - c + 1/2; for c = 0.5 that is 0.25
    #[test]
    fn random_baseline_l1_matches_closed_form() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut acc = 0.0;
        let n = 200_000;
        for _ in 0..n {
            let u: f64 = rng.random_range(0.0..1.0);
            acc += (0.5 - u).abs();
        }
        let measured = acc / n as f64;
        assert!((measured - 0.25).abs() < 2e-3, "{measured}");
    }
}
