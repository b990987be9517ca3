//! Phase timing for one config. Run with --ignored --nocapture.

use echo2depth_core::models::{ablation_grid, batch_from_clips, SoundToImage};
use echo2depth_core::nn::{Adam, ParamOwner};
use echo2depth_core::training::l1_grad;
use ndarray::{Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

#[test]
#[ignore]
fn time_phases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut clips = Array3::<f32>::zeros((16, 2, echo2depth_core::CLIP_LEN));
    echo2depth_core::nn::init_normal(clips.as_slice_mut().unwrap(), 0.1, &mut rng);
    let mut gt = Array4::<f32>::zeros((16, 1, 16, 16));
    echo2depth_core::nn::init_normal(gt.as_slice_mut().unwrap(), 0.2, &mut rng);

    let config = ablation_grid(16)[1]; // waveform_early/direct
    let mut model = SoundToImage::<f32>::new(config, 1).unwrap();
    let mut opt = Adam::<f32>::new(1e-4, 0.9, 0.999);
    let batch = batch_from_clips::<f32>(&clips, &config);
    for _ in 0..1 {
        let pred = model.forward(&batch, true).unwrap();
        model.backward(l1_grad(&pred, &gt, 1.0));
        opt.step(&mut model);
        model.zero_grads();
    }
    for _ in 0..3 {
        let t0 = Instant::now();
        let pred = model.forward(&batch, true).unwrap();
        let t1 = Instant::now();
        model.backward(l1_grad(&pred, &gt, 1.0));
        let t2 = Instant::now();
        opt.step(&mut model);
        let t3 = Instant::now();
        model.zero_grads();
        let t4 = Instant::now();
        println!(
            "fwd {:.3}s bwd {:.3}s adam {:.3}s zero {:.3}s",
            (t1 - t0).as_secs_f64(),
            (t2 - t1).as_secs_f64(),
            (t3 - t2).as_secs_f64(),
            (t4 - t3).as_secs_f64()
        );
    }
}
