//! Desk-scale binaural echolocation: simulate chirp echoes in parametric 3D
//! rooms, preprocess the audio, and train encoder/generator networks that
//! predict depth maps (and grayscale images) from two-channel sound.
//!
//! The crate is organised around the data path:
//!
//! - [`scene`] / [`acoustics`] / [`render`] / [`raster`] — parametric rooms,
//!   image-source echo tracing, binaural rendering, and raycast ground truth.
//! - [`signal`] — chirp synthesis, onset location, windowing, jitter
//!   augmentation, spectrograms, depth normalization.
//! - [`dataset`] — flat-file sample storage with train/val/test splits.
//! - [`nn`] / [`models`] — a small CPU tensor stack and the audio encoders,
//!   image generators, and patch discriminator built on it.
//! - [`training`] — L1 regression and least-squares patch-adversarial
//!   training, plus the trivial baselines.
//! - [`eval`] — test-split metrics, the ablation grid, and figure export.

pub mod acoustics;
pub mod dataset;
pub mod eval;
pub mod figures;
pub mod geom;
pub mod models;
pub mod nn;
pub mod raster;
pub mod render;
pub mod scene;
pub mod signal;
pub mod training;

/// Audio sample rate in Hz used throughout the pipeline.
pub const SAMPLE_RATE: f64 = 44_100.0;
/// Fixed audio window length in samples (one chirp plus returning echoes).
pub const CLIP_LEN: usize = 3200;
/// Speed of sound in m/s (air at 20 °C).
pub const SPEED_OF_SOUND: f64 = 343.0;
/// Depth clipping range in meters; depths are stored as `min(d, 12) / 12`.
pub const MAX_RANGE_M: f64 = 12.0;
/// Microphone baseline in meters (ear-to-ear spacing).
pub const MIC_BASELINE: f64 = 0.235;
/// Chirp sweep start frequency in Hz.
pub const CHIRP_F_START: f64 = 20.0;
/// Chirp sweep end frequency in Hz.
pub const CHIRP_F_END: f64 = 20_000.0;
/// Chirp duration in seconds.
pub const CHIRP_DURATION: f64 = 0.003;
/// Maximum window jitter in samples (30% of the clip length).
pub const JITTER_MAX: i64 = 960;
