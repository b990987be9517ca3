//! Audio and depth preprocessing: chirp synthesis, chirp-onset location,
//! fixed-length windowing with jitter augmentation, spectrograms, and depth
//! normalization.
//!
//! Audio samples are `f32` in [-1, 1] end to end (matching on-disk storage);
//! internal accumulation happens in `f64`.

use crate::{
    CHIRP_DURATION, CHIRP_F_END, CHIRP_F_START, CLIP_LEN, JITTER_MAX, MAX_RANGE_M, SAMPLE_RATE,
};
use ndarray::{Array2, Array3};
use rand::Rng;
use rustfft::{num_complex::Complex64, FftPlanner};
use thiserror::Error;

/// FFT size for spectrograms.
pub const FFT_SIZE: usize = 512;
/// Analysis window length in samples (Hann, zero-padded to [`FFT_SIZE`]).
pub const STFT_WINDOW: usize = 64;
/// Hop between adjacent frames in samples.
pub const STFT_HOP: usize = 16;
/// Number of non-redundant frequency bins (`FFT_SIZE / 2 + 1`).
pub const SPEC_BINS: usize = 257;
/// Number of time frames for a [`CLIP_LEN`] clip (`ceil(3200 / 16)`).
pub const SPEC_FRAMES: usize = 200;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("chirp frequencies must satisfy 0 < f_start < f_end <= Nyquist")]
    BadChirpBand,
    #[error("chirp duration must be positive")]
    BadChirpDuration,
    #[error("recording shorter than the chirp template")]
    RecordingTooShort,
    #[error("no chirp found (peak correlation {0:.3} below threshold)")]
    NoChirpFound(f64),
    #[error("window [{start}, {end}) out of range for recording of {len} samples")]
    WindowOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("channels differ in length or sample rate")]
    ChannelMismatch,
    #[error("clip must have exactly {expected} samples per channel, got {got}")]
    BadClipLength { expected: usize, got: usize },
    #[error("negative depth {0} marked valid")]
    NegativeDepth(f64),
}

/// A single-channel sample buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: f64) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// A two-channel recording of arbitrary length.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoRecording {
    pub left: Waveform,
    pub right: Waveform,
}

impl StereoRecording {
    pub fn new(left: Waveform, right: Waveform) -> Result<Self, SignalError> {
        if left.len() != right.len() || left.sample_rate != right.sample_rate {
            return Err(SignalError::ChannelMismatch);
        }
        Ok(Self { left, right })
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    /// Channel mean in `f64`, used as the onset-detection signal.
    fn mean_channel(&self) -> Vec<f64> {
        self.left
            .samples
            .iter()
            .zip(&self.right.samples)
            .map(|(&l, &r)| 0.5 * (l as f64 + r as f64))
            .collect()
    }
}

/// A fixed-length two-channel window containing one chirp and its echoes.
///
/// `onset_index` is the chirp start within the recording the clip was cut
/// from; for clips loaded from disk it is relative to the clip itself.
#[derive(Debug, Clone, PartialEq)]
pub struct BinauralClip {
    pub left: Waveform,
    pub right: Waveform,
    pub onset_index: usize,
}

impl BinauralClip {
    pub fn new(left: Waveform, right: Waveform, onset_index: usize) -> Result<Self, SignalError> {
        if left.len() != CLIP_LEN {
            return Err(SignalError::BadClipLength {
                expected: CLIP_LEN,
                got: left.len(),
            });
        }
        if right.len() != CLIP_LEN || left.sample_rate != right.sample_rate {
            return Err(SignalError::ChannelMismatch);
        }
        Ok(Self {
            left,
            right,
            onset_index,
        })
    }
}

/// Two-channel magnitude spectrogram, shape `[2, SPEC_BINS, SPEC_FRAMES]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Array3<f32>,
    pub fft_size: usize,
    pub window_size: usize,
}

/// Normalized square depth image: values in [0, 1], invalid pixels exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub values: Array2<f64>,
    pub resolution: usize,
    pub max_range_m: f64,
}

/// Square grayscale image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub values: Array2<f64>,
    pub resolution: usize,
}

/// Number of samples in the canonical probe chirp.
pub fn chirp_len() -> usize {
    (CHIRP_DURATION * SAMPLE_RATE).round() as usize
}

/// The canonical probe: 20 Hz – 20 kHz linear sweep over 3 ms at 44.1 kHz.
pub fn probe_chirp() -> Waveform {
    synthesize_chirp(CHIRP_F_START, CHIRP_F_END, CHIRP_DURATION, SAMPLE_RATE)
        .expect("canonical chirp parameters are valid")
}

/// Synthesizes a linear frequency sweep
/// `s(t) = sin(2π (f_start t + (f_end − f_start) t² / (2 d)))` of peak
/// amplitude 1 and `round(duration × sample_rate)` samples.
pub fn synthesize_chirp(
    f_start: f64,
    f_end: f64,
    duration: f64,
    sample_rate: f64,
) -> Result<Waveform, SignalError> {
    if !(f_start > 0.0 && f_start < f_end && f_end <= sample_rate / 2.0) {
        return Err(SignalError::BadChirpBand);
    }
    if duration <= 0.0 {
        return Err(SignalError::BadChirpDuration);
    }
    let n = (duration * sample_rate).round() as usize;
    let sweep = (f_end - f_start) / (2.0 * duration);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate;
            let phase = std::f64::consts::TAU * (f_start * t + sweep * t * t);
            phase.sin() as f32
        })
        .collect();
    Ok(Waveform::new(samples, sample_rate))
}

/// Locates the chirp in a recording by cross-correlating the channel mean
/// with the template.
///
/// The correlation is normalized by total recording and template energy, so
/// a recording of pure noise scores near zero and is rejected (threshold
/// 0.3) while any actually-present chirp dominates the normalizer.
pub fn locate_chirp_onset(
    recording: &StereoRecording,
    chirp: &Waveform,
) -> Result<usize, SignalError> {
    let signal = recording.mean_channel();
    let template: Vec<f64> = chirp.samples.iter().map(|&c| c as f64).collect();
    if signal.len() < template.len() || template.is_empty() {
        return Err(SignalError::RecordingTooShort);
    }
    let sig_norm = signal.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tpl_norm = template.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = sig_norm * tpl_norm;
    if denom == 0.0 {
        return Err(SignalError::NoChirpFound(0.0));
    }

    let mut best_lag = 0usize;
    let mut best = f64::NEG_INFINITY;
    for lag in 0..=(signal.len() - template.len()) {
        let mut acc = 0.0;
        for (i, &c) in template.iter().enumerate() {
            acc += signal[lag + i] * c;
        }
        if acc > best {
            best = acc;
            best_lag = lag;
        }
    }
    let score = best / denom;
    if score < 0.3 {
        return Err(SignalError::NoChirpFound(score));
    }
    Ok(best_lag)
}

/// Cuts the fixed-length window `[onset, onset + CLIP_LEN)` from a recording.
pub fn extract_window(
    recording: &StereoRecording,
    onset: usize,
) -> Result<BinauralClip, SignalError> {
    let end = onset + CLIP_LEN;
    if end > recording.len() {
        return Err(SignalError::WindowOutOfRange {
            start: onset,
            end,
            len: recording.len(),
        });
    }
    let sr = recording.left.sample_rate;
    BinauralClip::new(
        Waveform::new(recording.left.samples[onset..end].to_vec(), sr),
        Waveform::new(recording.right.samples[onset..end].to_vec(), sr),
        onset,
    )
}

/// Whether a window starting at `onset + delta` stays inside the recording
/// and keeps the full chirp (starting at `onset`) inside the window.
fn jitter_valid(recording_len: usize, onset: usize, delta: i64) -> bool {
    let start = onset as i64 + delta;
    if start < 0 || start + CLIP_LEN as i64 > recording_len as i64 {
        return false;
    }
    let chirp_end = (onset + chirp_len()) as i64;
    start <= onset as i64 && chirp_end <= start + CLIP_LEN as i64
}

/// Extracts a window whose position is jittered by up to ±30% of its length.
///
/// The shift is drawn uniformly from [-960, 960] and redrawn while it would
/// cut the chirp or run off the recording, so accepted shifts stay uniform
/// over the feasible range. `onset_index` of the result is the chirp start
/// in the recording, unchanged by the jitter.
pub fn jitter_window<R: Rng + ?Sized>(
    recording: &StereoRecording,
    onset: usize,
    rng: &mut R,
) -> Result<BinauralClip, SignalError> {
    let mut delta = 0i64;
    for _ in 0..64 {
        let d = rng.random_range(-JITTER_MAX..=JITTER_MAX);
        if jitter_valid(recording.len(), onset, d) {
            delta = d;
            break;
        }
    }
    let start = (onset as i64 + delta) as usize;
    let mut clip = extract_window(recording, start)?;
    clip.onset_index = onset;
    Ok(clip)
}

/// Jitter augmentation for clips already cut to [`CLIP_LEN`] (the stored
/// dataset form): shifts the content by the drawn window offset, zero-filling
/// the vacated samples, and keeps the full chirp inside.
///
/// Equivalent to [`jitter_window`] on a virtual recording whose pre-chirp
/// region is silent.
pub fn jitter_clip<R: Rng + ?Sized>(clip: &BinauralClip, rng: &mut R) -> BinauralClip {
    let onset = clip.onset_index.min(CLIP_LEN - 1);
    let valid = |d: i64| -> bool {
        // content shift is -d: window at onset+d puts the chirp at onset-d
        let pos = onset as i64 - d;
        pos >= 0 && pos + chirp_len() as i64 <= CLIP_LEN as i64 && d <= onset as i64
    };
    let mut delta = 0i64;
    for _ in 0..64 {
        let d = rng.random_range(-JITTER_MAX..=JITTER_MAX);
        if valid(d) {
            delta = d;
            break;
        }
    }
    let shift = -delta; // >= 0 shifts content right (window moved earlier)
    let apply = |src: &Waveform| {
        let mut out = vec![0.0f32; CLIP_LEN];
        if shift >= 0 {
            let s = shift as usize;
            out[s..].copy_from_slice(&src.samples[..CLIP_LEN - s]);
        } else {
            let s = (-shift) as usize;
            out[..CLIP_LEN - s].copy_from_slice(&src.samples[s..]);
        }
        Waveform::new(out, src.sample_rate)
    };
    BinauralClip {
        left: apply(&clip.left),
        right: apply(&clip.right),
        onset_index: (clip.onset_index as i64 + shift) as usize,
    }
}

fn reflect_index(i: i64, len: usize) -> usize {
    let len = len as i64;
    let mut i = i;
    // reflect without repeating the edge sample
    loop {
        if i < 0 {
            i = -i;
        } else if i >= len {
            i = 2 * len - 2 - i;
        } else {
            return i as usize;
        }
    }
}

/// Two-channel magnitude spectrogram: 512-point FFT of 64-sample Hann
/// frames hopped every 16 samples, frames centered with reflection padding.
/// Output shape is `[2, 257, 200]`.
pub fn compute_spectrogram(clip: &BinauralClip) -> Spectrogram {
    compute_spectrogram_with(clip, false)
}

/// [`compute_spectrogram`] with an optional `ln(1 + m)` magnitude compression.
pub fn compute_spectrogram_with(clip: &BinauralClip, log_magnitude: bool) -> Spectrogram {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(FFT_SIZE);
    let window: Vec<f64> = (0..STFT_WINDOW)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / STFT_WINDOW as f64).cos()))
        .collect();

    let mut out = Array3::<f32>::zeros((2, SPEC_BINS, SPEC_FRAMES));
    let offset = (FFT_SIZE - STFT_WINDOW) / 2;
    let mut buf = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
    for (ch, wave) in [&clip.left, &clip.right].into_iter().enumerate() {
        for frame in 0..SPEC_FRAMES {
            let center = (frame * STFT_HOP) as i64;
            buf.fill(Complex64::new(0.0, 0.0));
            for (i, &w) in window.iter().enumerate() {
                let idx = center - (STFT_WINDOW / 2) as i64 + i as i64;
                let s = wave.samples[reflect_index(idx, CLIP_LEN)] as f64;
                buf[offset + i] = Complex64::new(w * s, 0.0);
            }
            fft.process(&mut buf);
            for bin in 0..SPEC_BINS {
                let m = buf[bin].norm();
                let v = if log_magnitude { (1.0 + m).ln() } else { m };
                out[[ch, bin, frame]] = v as f32;
            }
        }
    }
    Spectrogram {
        magnitudes: out,
        fft_size: FFT_SIZE,
        window_size: STFT_WINDOW,
    }
}

/// Clips raw depths to [`MAX_RANGE_M`] and scales to [0, 1]; invalid pixels
/// become exactly 0. Negative valid depths are rejected.
pub fn normalize_depth(
    raw: &Array2<f64>,
    valid: &Array2<bool>,
) -> Result<DepthMap, SignalError> {
    assert_eq!(raw.dim(), valid.dim(), "depth and mask shapes differ");
    let mut values = Array2::zeros(raw.dim());
    for ((idx, &d), &ok) in raw.indexed_iter().zip(valid.iter()) {
        if ok {
            if d < 0.0 {
                return Err(SignalError::NegativeDepth(d));
            }
            values[idx] = d.min(MAX_RANGE_M) / MAX_RANGE_M;
        }
    }
    Ok(DepthMap {
        values,
        resolution: raw.dim().0,
        max_range_m: MAX_RANGE_M,
    })
}
