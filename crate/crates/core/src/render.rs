//! Binaural echo rendering: turns traced paths into a two-channel clip by
//! delaying, attenuating, and ear-filtering copies of the probe chirp.

use crate::acoustics::{trace_image_sources, EchoPath, SimError};
use crate::geom::Vec3;
use crate::raster::{render_depth_map, render_grayscale};
use crate::scene::{ReceiverId, RoomScene};
use crate::signal::{
    locate_chirp_onset, probe_chirp, BinauralClip, DepthMap, GrayImage, StereoRecording, Waveform,
};
use crate::{CLIP_LEN, SAMPLE_RATE, SPEED_OF_SOUND};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Rendering options shared by the sample pipeline and the CLI.
#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    /// Additive white Gaussian noise level; `None` disables noise.
    pub snr_db: Option<f64>,
    /// Wall-reflection order passed to the tracer.
    pub max_order: u32,
    /// Ground-truth image resolution.
    pub resolution: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            snr_db: Some(30.0),
            max_order: 2,
            resolution: 128,
        }
    }
}

/// Outward ear axes of the two receivers, used by the pinna gain model.
#[derive(Debug, Clone, Copy)]
pub struct EarAxes {
    pub left: Vec3,
    pub right: Vec3,
}

impl EarAxes {
    pub fn from_scene(scene: &RoomScene) -> Self {
        Self {
            left: scene.ear_axis(ReceiverId::Left),
            right: scene.ear_axis(ReceiverId::Right),
        }
    }

    fn axis(&self, id: ReceiverId) -> Vec3 {
        match id {
            ReceiverId::Left => self.left,
            ReceiverId::Right => self.right,
        }
    }
}

/// Amplitudes below this are flushed to exact zero after normalization;
/// it sits well under a 24-bit capture noise floor.
const AMPLITUDE_FLOOR: f64 = 1e-9;

/// Zero-phase one-pole low-pass (forward + backward pass) with cutoff in Hz.
///
/// Zero-phase filtering keeps echo arrival times unbiased while still giving
/// rear arrivals the duller spectrum the ear model asks for.
fn lowpass_zero_phase(buf: &mut [f64], cutoff_hz: f64, sample_rate: f64) {
    let a = 1.0 - (-std::f64::consts::TAU * cutoff_hz / sample_rate).exp();
    let mut y = 0.0;
    for v in buf.iter_mut() {
        y += a * (*v - y);
        *v = y;
    }
    let mut y = 0.0;
    for v in buf.iter_mut().rev() {
        y += a * (*v - y);
        *v = y;
    }
}

/// Direction-dependent ear response: unit gain and 20 kHz cutoff head-on,
/// fading to half gain and 4 kHz cutoff for arrivals from behind the ear.
fn pinna_response(arrival: Vec3, ear_axis: Vec3) -> (f64, f64) {
    let cos_theta = arrival.dot(ear_axis).clamp(-1.0, 1.0);
    let gain = 0.5 + 0.5 * cos_theta.max(0.0);
    let cutoff = 12_000.0 + 8_000.0 * cos_theta;
    (gain, cutoff)
}

/// Renders echo paths into a [`CLIP_LEN`]-sample binaural clip whose window
/// starts at chirp emission.
///
/// Each path contributes the chirp delayed by `path_length / c` (fractional
/// delays by linear interpolation), scaled by the path amplitude and the
/// pinna gain, low-pass filtered by arrival direction, and summed into its
/// ear channel. Channels are jointly normalized to peak 0.98, then Gaussian
/// noise at `snr_db` (relative to in-window signal power) is added.
pub fn render_binaural_echo<R: Rng + ?Sized>(
    paths: &[EchoPath],
    chirp: &Waveform,
    sample_rate: f64,
    ears: EarAxes,
    snr_db: Option<f64>,
    rng: &mut R,
) -> Result<BinauralClip, SimError> {
    if sample_rate != SAMPLE_RATE {
        return Err(SimError::BadSampleRate(sample_rate));
    }
    if paths.is_empty() {
        return Err(SimError::NoPaths);
    }

    let mut channels = [vec![0.0f64; CLIP_LEN], vec![0.0f64; CLIP_LEN]];
    let mut contribution = vec![0.0f64; CLIP_LEN];
    let mut first_arrival = f64::INFINITY;

    for path in paths {
        let delay = path.path_length / SPEED_OF_SOUND * sample_rate;
        if delay >= CLIP_LEN as f64 {
            return Err(SimError::DelayOutOfWindow(delay as usize, CLIP_LEN));
        }
        first_arrival = first_arrival.min(delay);
        let d0 = delay.floor() as usize;
        let frac = delay - d0 as f64;
        let (gain, cutoff) =
            pinna_response(path.arrival_direction, ears.axis(path.receiver_id));
        let amp = path.amplitude * gain;

        contribution.fill(0.0);
        for (i, &c) in chirp.samples.iter().enumerate() {
            let c = c as f64 * amp;
            let j = d0 + i;
            if j < CLIP_LEN {
                contribution[j] += (1.0 - frac) * c;
            }
            if j + 1 < CLIP_LEN {
                contribution[j + 1] += frac * c;
            }
        }
        lowpass_zero_phase(&mut contribution, cutoff, sample_rate);

        let channel = match path.receiver_id {
            ReceiverId::Left => &mut channels[0],
            ReceiverId::Right => &mut channels[1],
        };
        for (acc, &v) in channel.iter_mut().zip(contribution.iter()) {
            *acc += v;
        }
    }

    // joint peak normalization preserves interaural level differences
    let peak = channels
        .iter()
        .flat_map(|c| c.iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let scale = if peak > 0.0 { 0.98 / peak } else { 0.0 };
    for c in channels.iter_mut() {
        for v in c.iter_mut() {
            *v *= scale;
            if v.abs() < AMPLITUDE_FLOOR {
                *v = 0.0;
            }
        }
    }

    if let Some(snr) = snr_db {
        let power: f64 = channels
            .iter()
            .flat_map(|c| c.iter())
            .map(|&v| v * v)
            .sum::<f64>()
            / (2 * CLIP_LEN) as f64;
        let sigma = power.sqrt() * 10f64.powf(-snr / 20.0);
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("sigma is finite");
            for c in channels.iter_mut() {
                for v in c.iter_mut() {
                    *v = (*v + normal.sample(rng)).clamp(-1.0, 1.0);
                }
            }
        }
    }

    let [left, right] = channels;
    let to_wave = |v: Vec<f64>| Waveform::new(v.into_iter().map(|x| x as f32).collect(), sample_rate);
    BinauralClip::new(
        to_wave(left),
        to_wave(right),
        first_arrival.round() as usize,
    )
    .map_err(|_| SimError::NoPaths)
}

/// Drops paths that would start arriving past the clip window.
pub fn paths_within_window(paths: Vec<EchoPath>) -> Vec<EchoPath> {
    paths
        .into_iter()
        .filter(|p| p.path_length / SPEED_OF_SOUND * SAMPLE_RATE < CLIP_LEN as f64)
        .collect()
}

/// A fully rendered training sample.
#[derive(Debug, Clone)]
pub struct RenderedSample {
    pub clip: BinauralClip,
    pub depth: DepthMap,
    pub gray: GrayImage,
    /// Chirp arrival located by the matched filter, in clip samples.
    pub onset_index: usize,
}

/// Renders one paired sample (echo clip, depth map, grayscale image) from a
/// scene. Deterministic given `scene.rng_seed`.
pub fn simulate_sample(scene: &RoomScene, opts: &RenderOptions) -> Result<RenderedSample, SimError> {
    let paths = paths_within_window(trace_image_sources(scene, opts.max_order)?);
    let chirp = probe_chirp();
    let mut rng = ChaCha8Rng::seed_from_u64(scene.rng_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut clip = render_binaural_echo(
        &paths,
        &chirp,
        SAMPLE_RATE,
        EarAxes::from_scene(scene),
        opts.snr_db,
        &mut rng,
    )?;
    let recording = StereoRecording::new(clip.left.clone(), clip.right.clone())
        .expect("clip channels are consistent");
    let onset = locate_chirp_onset(&recording, &chirp).unwrap_or(clip.onset_index);
    clip.onset_index = onset;
    let depth = render_depth_map(scene, opts.resolution)?;
    let gray = render_grayscale(scene, opts.resolution)?;
    Ok(RenderedSample {
        clip,
        depth,
        gray,
        onset_index: onset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::CameraPose;
    use crate::signal::chirp_len;
    use crate::MIC_BASELINE;

    fn test_scene() -> RoomScene {
        RoomScene {
            room_size: Vec3::new(6.0, 5.0, 3.0),
            obstacles: vec![],
            wall_absorption: 0.3,
            emitter_pose: Vec3::new(2.0, 2.5, 1.5),
            receiver_baseline: MIC_BASELINE,
            camera_pose: CameraPose {
                position: Vec3::new(2.0, 2.5, 1.5),
                forward: Vec3::new(1.0, 0.0, 0.0),
                up: Vec3::new(0.0, 0.0, 1.0),
            },
            rng_seed: 123,
        }
    }

    fn single_path(length_m: f64) -> EchoPath {
        EchoPath {
            path_length: length_m,
            reflection_count: 0,
            arrival_direction: Vec3::new(0.0, -1.0, 0.0),
            amplitude: 1.0 / length_m,
            receiver_id: ReceiverId::Right,
        }
    }

    fn frontal_ears() -> EarAxes {
        EarAxes {
            left: Vec3::new(0.0, 1.0, 0.0),
            right: Vec3::new(0.0, -1.0, 0.0),
        }
    }

    // 4 m path at 343 m/s: delay = 4/343 s -> sample 514
    #[test]
    fn echo_peak_lands_at_analytic_delay() {
        let chirp = probe_chirp();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clip = render_binaural_echo(
            &[single_path(4.0)],
            &chirp,
            SAMPLE_RATE,
            frontal_ears(),
            None,
            &mut rng,
        )
        .unwrap();
        let peak = matched_peak(&clip.right, &chirp);
        let expected = (4.0 / SPEED_OF_SOUND * SAMPLE_RATE).round() as i64; // 514
        assert_eq!(expected, 514);
        assert!((peak as i64 - expected).abs() <= 1, "peak at {peak}");
    }

    #[test]
    fn silent_after_direct_chirp_without_noise() {
        let chirp = probe_chirp();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clip = render_binaural_echo(
            &[single_path(2.0)],
            &chirp,
            SAMPLE_RATE,
            frontal_ears(),
            None,
            &mut rng,
        )
        .unwrap();
        let delay = (2.0 / SPEED_OF_SOUND * SAMPLE_RATE).ceil() as usize;
        // allow the ear filter ring-down before demanding exact zeros
        let tail_start = delay + chirp_len() + 64;
        assert!(clip.right.samples[tail_start..].iter().all(|&v| v == 0.0));
        assert!(clip.left.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_empty_paths_and_late_paths() {
        let chirp = probe_chirp();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            render_binaural_echo(&[], &chirp, SAMPLE_RATE, frontal_ears(), None, &mut rng),
            Err(SimError::NoPaths)
        ));
        // 30 m path: delay 3858 samples > 3200
        assert!(matches!(
            render_binaural_echo(
                &[single_path(30.0)],
                &chirp,
                SAMPLE_RATE,
                frontal_ears(),
                None,
                &mut rng
            ),
            Err(SimError::DelayOutOfWindow(_, _))
        ));
    }

    // window covers one-way echo ranges up to 12.44 m
    #[test]
    fn in_window_filter_matches_range_budget() {
        let max_one_way = CLIP_LEN as f64 / SAMPLE_RATE * SPEED_OF_SOUND / 2.0;
        assert!((max_one_way - 12.44).abs() < 0.01);
        let keep = paths_within_window(vec![single_path(24.8), single_path(24.95)]);
        assert_eq!(keep.len(), 1);
    }

    #[test]
    fn samples_stay_in_unit_range_with_noise() {
        let scene = test_scene();
        let sample = simulate_sample(
            &scene,
            &RenderOptions {
                snr_db: Some(10.0),
                max_order: 2,
                resolution: 16,
            },
        )
        .unwrap();
        for v in sample.clip.left.samples.iter().chain(&sample.clip.right.samples) {
            assert!(v.abs() <= 1.0);
        }
    }

    #[test]
    fn rendering_is_deterministic_per_seed() {
        let scene = test_scene();
        let opts = RenderOptions::default();
        let a = simulate_sample(&scene, &opts).unwrap();
        let b = simulate_sample(&scene, &opts).unwrap();
        assert_eq!(a.clip.left.samples, b.clip.left.samples);
        assert_eq!(a.clip.right.samples, b.clip.right.samples);
        assert_eq!(a.depth.values, b.depth.values);
        assert_eq!(a.gray.values, b.gray.values);
        let mut scene2 = scene.clone();
        scene2.rng_seed = 124;
        let c = simulate_sample(&scene2, &opts).unwrap();
        assert_ne!(a.clip.left.samples, c.clip.left.samples);
    }

    fn matched_peak(w: &Waveform, chirp: &Waveform) -> usize {
        let sig: Vec<f64> = w.samples.iter().map(|&v| v as f64).collect();
        let tpl: Vec<f64> = chirp.samples.iter().map(|&v| v as f64).collect();
        let mut best = (0usize, f64::NEG_INFINITY);
        for lag in 0..=(sig.len() - tpl.len()) {
            let score: f64 = tpl.iter().enumerate().map(|(i, &c)| c * sig[lag + i]).sum();
            if score > best.1 {
                best = (lag, score);
            }
        }
        best.0
    }

    // lateral source: right ear hears it earlier and louder than the left
    #[test]
    fn interaural_cues_have_correct_sign() {
        let chirp = probe_chirp();
        let ears = frontal_ears();
        let dir = Vec3::new(0.0, -1.0, 0.0); // from the right side
        let mk = |length: f64, id: ReceiverId| EchoPath {
            path_length: length,
            reflection_count: 0,
            arrival_direction: dir,
            amplitude: 1.0 / length,
            receiver_id: id,
        };
        let itd = MIC_BASELINE / SPEED_OF_SOUND * SAMPLE_RATE; // ~30 samples
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let clip = render_binaural_echo(
            &[mk(3.0, ReceiverId::Right), mk(3.0 + MIC_BASELINE, ReceiverId::Left)],
            &chirp,
            SAMPLE_RATE,
            ears,
            None,
            &mut rng,
        )
        .unwrap();
        let energy = |w: &Waveform| w.samples.iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
        assert!(energy(&clip.right) > energy(&clip.left));
        let lag = matched_peak(&clip.left, &chirp) as i64 - matched_peak(&clip.right, &chirp) as i64;
        assert!(lag > 0 && lag <= itd.ceil() as i64 + 1, "lag {lag}");
    }
}
