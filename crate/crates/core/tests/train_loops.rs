//! End-to-end training behavior on tiny synthetic datasets: memorization,
//! determinism, gradient flow, objective bookkeeping, and the degenerate
//! adversarial limit.

mod common;

use echo2depth_core::dataset::{generate_dataset, load_split, Split, TargetKind};
use echo2depth_core::models::{
    batch_from_clips, EncoderKind, GeneratorKind, ModelConfig, PatchDiscriminator, SoundToImage,
};
use echo2depth_core::nn::{Adam, ParamOwner};
use echo2depth_core::render::RenderOptions;
use echo2depth_core::training::{
    l1_grad, lsgan_d_grads, lsgan_d_loss, lsgan_g_grad, train, train_gan,
    train_generator_only, Regime, TrainConfig, TrainError,
};
use ndarray::{Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn small_model() -> ModelConfig {
    ModelConfig {
        encoder: EncoderKind::WaveformEarly,
        generator: GeneratorKind::Direct,
        resolution: 16,
        log_spectrogram: false,
    }
}

fn make_dataset(root: &Path, counts: (usize, usize, usize), seed: u64) {
    generate_dataset(
        root,
        counts,
        seed,
        &RenderOptions {
            snr_db: Some(30.0),
            max_order: 1,
            resolution: 16,
        },
        false,
    )
    .unwrap();
}

#[test]
fn generator_only_memorizes_one_sample() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), (1, 1, 1), 40);
    let data = load_split(dir.path(), Split::Train, 16, TargetKind::Depth).unwrap();

    let mut cfg = TrainConfig::gen_only(small_model(), TargetKind::Depth);
    cfg.batch_size = 1;
    cfg.epochs = 60; // 60 steps on the single sample
    cfg.lr = 1e-3;
    cfg.jitter = false;
    let report = train_generator_only::<f32>(&cfg, &data, None, dir.path().join("r").as_path())
        .unwrap();
    assert!(
        report.final_train_l1 < 0.05,
        "train l1 after {} steps: {}",
        report.steps,
        report.final_train_l1
    );
}

#[test]
fn training_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), (8, 2, 2), 50);
    let data = load_split(dir.path(), Split::Train, 16, TargetKind::Depth).unwrap();
    let val = load_split(dir.path(), Split::Val, 16, TargetKind::Depth).unwrap();

    let mut cfg = TrainConfig::gen_only(small_model(), TargetKind::Depth);
    cfg.epochs = 2;
    cfg.seed = 9;
    let r1 = train::<f32>(&cfg, &data, Some(&val), dir.path().join("a").as_path()).unwrap();
    let r2 = train::<f32>(&cfg, &data, Some(&val), dir.path().join("b").as_path()).unwrap();
    assert_eq!(r1.best_val_l1, r2.best_val_l1);
    assert_eq!(
        std::fs::read(&r1.curves).unwrap(),
        std::fs::read(&r2.curves).unwrap()
    );
    assert_eq!(
        std::fs::read(&r1.checkpoint).unwrap(),
        std::fs::read(&r2.checkpoint).unwrap()
    );

    let mut cfg3 = cfg.clone();
    cfg3.seed = 10;
    let r3 = train::<f32>(&cfg3, &data, Some(&val), dir.path().join("c").as_path()).unwrap();
    assert_ne!(r1.best_val_l1, r3.best_val_l1);
}

// after one optimizer step on a nonzero-gradient batch, at least 99% of
// parameter tensors change
#[test]
fn one_step_moves_nearly_every_tensor() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), (2, 1, 1), 60);
    let data = load_split(dir.path(), Split::Train, 16, TargetKind::Depth).unwrap();

    let cfg = TrainConfig::gen_only(small_model(), TargetKind::Depth);
    let mut model = SoundToImage::<f32>::new(cfg.model, 3).unwrap();
    let mut before = Vec::new();
    model.visit_params("", &mut |name, v, _| before.push((name.to_string(), v.to_vec())));

    let batch = batch_from_clips::<f32>(&data.clips, &cfg.model);
    let pred = model.forward(&batch, true).unwrap();
    let mut gt = Array4::<f32>::zeros(pred.dim());
    for ((i, _, r, c), v) in gt.indexed_iter_mut() {
        *v = data.targets[[i, r, c]];
    }
    model.backward(l1_grad(&pred, &gt, 1.0));
    let mut opt = Adam::<f32>::new(cfg.lr, cfg.beta1, cfg.beta2);
    opt.step(&mut model);

    let mut changed = 0usize;
    let mut total = 0usize;
    let mut idx = 0usize;
    model.visit_params("", &mut |_, v, _| {
        total += 1;
        if v != before[idx].1.as_slice() {
            changed += 1;
        }
        idx += 1;
    });
    assert!(
        changed as f64 >= 0.99 * total as f64,
        "{changed}/{total} tensors changed"
    );
}

// logged total generator loss must equal gan_g + lambda * l1 at every step
#[test]
fn gan_loss_bookkeeping_decomposes() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), (8, 1, 1), 70);
    let data = load_split(dir.path(), Split::Train, 16, TargetKind::Depth).unwrap();

    let mut cfg = TrainConfig::gan(small_model(), TargetKind::Depth);
    cfg.epochs = 2;
    let report = train_gan::<f32>(&cfg, &data, None, dir.path().join("g").as_path()).unwrap();
    let text = std::fs::read_to_string(&report.curves).unwrap();
    let mut checked = 0;
    for line in text.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').skip(1).map(|t| t.parse().unwrap()).collect();
        let (l1, gan_g, _gan_d, total) = (cols[0], cols[1], cols[2], cols[3]);
        assert!(
            (total - (gan_g + cfg.lambda_l1 * l1)).abs() <= 1e-6,
            "step decomposition off: {line}"
        );
        checked += 1;
    }
    assert!(checked > 0);
}

// a discriminator whose output ignores its input contributes nothing to the
// generator gradient: the GAN step degenerates to pure L1 training
#[test]
fn constant_discriminator_reduces_to_l1() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), (2, 1, 1), 80);
    let data = load_split(dir.path(), Split::Train, 16, TargetKind::Depth).unwrap();
    let model_cfg = small_model();
    let lambda = 100.0;

    let mut gen_a = SoundToImage::<f32>::new(model_cfg, 5).unwrap();
    let mut gen_b = SoundToImage::<f32>::new(model_cfg, 5).unwrap();
    let mut disc = PatchDiscriminator::<f32>::new(16, &mut ChaCha8Rng::seed_from_u64(1));
    // zero every discriminator weight: scores become input-independent
    disc.visit_params("", &mut |_, v, _| v.fill(0.0));

    let batch = batch_from_clips::<f32>(&data.clips, &model_cfg);
    let mut gt = Array4::<f32>::zeros((data.len(), 1, 16, 16));
    for ((i, _, r, c), v) in gt.indexed_iter_mut() {
        *v = data.targets[[i, r, c]];
    }

    // path A: adversarial step against the constant discriminator
    let fake = gen_a.forward(&batch, true).unwrap();
    let scores = disc.forward(&fake, true);
    let mut dimg = disc.backward(&lsgan_g_grad(&scores));
    dimg += &l1_grad(&fake, &gt, lambda);
    gen_a.backward(dimg);

    // path B: pure L1 gradient scaled by lambda
    let fake_b = gen_b.forward(&batch, true).unwrap();
    gen_b.backward(l1_grad(&fake_b, &gt, lambda));

    let mut grads_a = Vec::new();
    gen_a.visit_params("", &mut |_, _, g| grads_a.extend_from_slice(g));
    let mut grads_b = Vec::new();
    gen_b.visit_params("", &mut |_, _, g| grads_b.extend_from_slice(g));
    for (a, b) in grads_a.iter().zip(grads_b.iter()) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
}

// a discriminator trained alone on disjoint constant image sets separates
// them, driving its objective toward zero
#[test]
fn discriminator_separates_fixed_sets() {
    let real = Array4::<f32>::from_elem((4, 1, 16, 16), 0.8);
    let fake = Array4::<f32>::from_elem((4, 1, 16, 16), 0.2);
    let mut disc = PatchDiscriminator::<f32>::new(16, &mut ChaCha8Rng::seed_from_u64(2));
    let mut opt = Adam::<f32>::new(2e-4, 0.5, 0.999);
    let mut last = f64::INFINITY;
    for _ in 0..400 {
        let sr = disc.forward(&real, true);
        let (dr, _) = lsgan_d_grads(&sr, &sr, 0.5);
        disc.backward(&dr);
        let sf = disc.forward(&fake, true);
        let (_, df) = lsgan_d_grads(&sr, &sf, 0.5);
        disc.backward(&df);
        last = lsgan_d_loss(&sr, &sf);
        opt.step(&mut disc);
        disc.zero_grads();
    }
    assert!(last < 0.1, "final discriminator loss {last}");
}

#[test]
fn empty_split_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let empty = echo2depth_core::dataset::LoadedSplit {
        clips: Array3::zeros((0, 2, echo2depth_core::CLIP_LEN)),
        targets: Array3::zeros((0, 16, 16)),
        onsets: vec![],
        ids: vec![],
    };
    let cfg = TrainConfig::gen_only(small_model(), TargetKind::Depth);
    assert!(matches!(
        train::<f32>(&cfg, &empty, None, dir.path()),
        Err(TrainError::EmptyDataset)
    ));
}

#[test]
fn warm_start_requires_matching_config() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), (2, 1, 1), 90);
    let data = load_split(dir.path(), Split::Train, 16, TargetKind::Depth).unwrap();

    let mut cfg = TrainConfig::gen_only(small_model(), TargetKind::Depth);
    cfg.epochs = 1;
    let report = train::<f32>(&cfg, &data, None, dir.path().join("w").as_path()).unwrap();

    // same config warm starts fine
    let mut cfg2 = cfg.clone();
    cfg2.warm_start = Some(report.checkpoint.clone());
    train::<f32>(&cfg2, &data, None, dir.path().join("w2").as_path()).unwrap();

    // different generator is rejected
    let mut cfg3 = cfg.clone();
    cfg3.model.generator = GeneratorKind::UNet;
    cfg3.warm_start = Some(report.checkpoint.clone());
    assert!(matches!(
        train::<f32>(&cfg3, &data, None, dir.path().join("w3").as_path()),
        Err(TrainError::Model(_))
    ));
}

#[test]
fn gan_regime_trains_and_saves() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), (4, 2, 1), 100);
    let data = load_split(dir.path(), Split::Train, 16, TargetKind::Depth).unwrap();
    let val = load_split(dir.path(), Split::Val, 16, TargetKind::Depth).unwrap();

    let mut cfg = TrainConfig::gan(small_model(), TargetKind::Depth);
    cfg.epochs = 2;
    let report = train::<f32>(&cfg, &data, Some(&val), dir.path().join("g").as_path()).unwrap();
    assert!(report.checkpoint.exists());
    assert!(report.best_val_l1.is_finite());
    let (model, data_read) = SoundToImage::<f32>::from_checkpoint(&report.checkpoint).unwrap();
    assert_eq!(model.config, cfg.model);
    assert_eq!(data_read.get("regime"), Some("gan"));
}

#[test]
fn regime_labels_round_trip() {
    assert_eq!(Regime::parse("gen_only"), Some(Regime::GenOnly));
    assert_eq!(Regime::parse("gan"), Some(Regime::Gan));
    assert_eq!(Regime::parse("other"), None);
    assert_eq!(Regime::GenOnly.label(), "gen_only");
}
