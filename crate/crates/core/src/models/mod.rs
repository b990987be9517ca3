//! The sound-to-vision networks: audio encoders, image generators, and the
//! patch discriminator, composed into a trainable encoder-generator model.

mod checkpoint;
mod discriminator;
mod encoders;
mod generators;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointData};
pub use discriminator::PatchDiscriminator;
pub use encoders::{
    waveform_time_trace, Fusion, SpectrogramEncoder, WaveformEncoder, LEAKY_SLOPE,
    SPECTROGRAM_CHANNELS, WAVEFORM_LAYERS,
};
pub use generators::{DirectGenerator, UNetGenerator, DIRECT_ROWS};

use crate::nn::{ParamFn, ParamOwner, Scalar};
use crate::signal::{compute_spectrogram_with, BinauralClip, Waveform, SPEC_BINS, SPEC_FRAMES};
use crate::{CLIP_LEN, SAMPLE_RATE};
use ndarray::{Array2, Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad input shape: expected {expected}, got {got}")]
    BadInputShape { expected: String, got: String },
    #[error("input kind does not match the configured encoder")]
    InputKindMismatch,
    #[error("unsupported resolution {0} (expected 16, 32, 64, or 128)")]
    BadResolution(usize),
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Audio representation and fusion choice for the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    WaveformEarly,
    WaveformLate { shared: bool },
    /// Spectrogram encoder pooled to `latent_f` frequency bands (1 or 10).
    Spectrogram { latent_f: usize },
}

impl EncoderKind {
    pub fn label(self) -> String {
        match self {
            EncoderKind::WaveformEarly => "waveform_early".into(),
            EncoderKind::WaveformLate { shared: false } => "waveform_late".into(),
            EncoderKind::WaveformLate { shared: true } => "waveform_late_shared".into(),
            EncoderKind::Spectrogram { latent_f } => format!("spectrogram_f{latent_f}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self, ModelError> {
        match s {
            "waveform_early" => Ok(EncoderKind::WaveformEarly),
            "waveform_late" => Ok(EncoderKind::WaveformLate { shared: false }),
            "waveform_late_shared" => Ok(EncoderKind::WaveformLate { shared: true }),
            "spectrogram_f1" => Ok(EncoderKind::Spectrogram { latent_f: 1 }),
            "spectrogram_f10" => Ok(EncoderKind::Spectrogram { latent_f: 10 }),
            other => Err(ModelError::BadConfig(format!("unknown encoder `{other}`"))),
        }
    }

    /// Metrics column: which audio representation feeds the model.
    pub fn representation(self) -> &'static str {
        match self {
            EncoderKind::Spectrogram { .. } => "spectrogram",
            _ => "waveform",
        }
    }

    /// Metrics column: fusion for waveforms, latent shape for spectrograms.
    pub fn fusion_label(self) -> &'static str {
        match self {
            EncoderKind::WaveformEarly => "early",
            EncoderKind::WaveformLate { .. } => "late",
            EncoderKind::Spectrogram { latent_f: 1 } => "f1",
            EncoderKind::Spectrogram { .. } => "f10",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    UNet,
    Direct,
}

impl GeneratorKind {
    pub fn label(self) -> &'static str {
        match self {
            GeneratorKind::UNet => "unet",
            GeneratorKind::Direct => "direct",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ModelError> {
        match s {
            "unet" => Ok(GeneratorKind::UNet),
            "direct" => Ok(GeneratorKind::Direct),
            other => Err(ModelError::BadConfig(format!("unknown generator `{other}`"))),
        }
    }
}

/// Everything needed to rebuild a model skeleton.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub generator: GeneratorKind,
    pub resolution: usize,
    pub log_spectrogram: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !matches!(self.resolution, 16 | 32 | 64 | 128) {
            return Err(ModelError::BadResolution(self.resolution));
        }
        if let EncoderKind::Spectrogram { latent_f } = self.encoder {
            if latent_f != 1 && latent_f != 10 {
                return Err(ModelError::BadConfig(format!(
                    "latent_f must be 1 or 10, got {latent_f}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("encoder".into(), self.encoder.label()),
            ("generator".into(), self.generator.label().into()),
            ("resolution".into(), self.resolution.to_string()),
            ("log_spectrogram".into(), self.log_spectrogram.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, ModelError> {
        let get = |k: &str| {
            pairs
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| ModelError::BadConfig(format!("missing `{k}`")))
        };
        let config = Self {
            encoder: EncoderKind::parse(get("encoder")?)?,
            generator: GeneratorKind::parse(get("generator")?)?,
            resolution: get("resolution")?
                .parse()
                .map_err(|_| ModelError::BadConfig("bad resolution".into()))?,
            log_spectrogram: get("log_spectrogram")?
                .parse()
                .map_err(|_| ModelError::BadConfig("bad log_spectrogram".into()))?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// A batch of encoder inputs in the representation the config asks for.
pub enum AudioBatch<T: Scalar> {
    /// `[n, 2, 3200]`
    Waveform(Array3<T>),
    /// `[n, 2, 257, 200]`
    Spectrogram(Array4<T>),
}

impl<T: Scalar> AudioBatch<T> {
    pub fn len(&self) -> usize {
        match self {
            AudioBatch::Waveform(a) => a.dim().0,
            AudioBatch::Spectrogram(a) => a.dim().0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds the encoder input batch for `config` from raw `[n, 2, 3200]` clips,
/// computing spectrograms on the fly when needed.
pub fn batch_from_clips<T: Scalar>(clips: &Array3<f32>, config: &ModelConfig) -> AudioBatch<T> {
    let (n, c, l) = clips.dim();
    assert_eq!((c, l), (2, CLIP_LEN), "clips must be [n, 2, 3200]");
    match config.encoder {
        EncoderKind::Spectrogram { .. } => {
            let specs: Vec<Array3<f32>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let sample = clips.index_axis(ndarray::Axis(0), i);
                    let left = Waveform::new(sample.row(0).to_vec(), SAMPLE_RATE);
                    let right = Waveform::new(sample.row(1).to_vec(), SAMPLE_RATE);
                    let clip = BinauralClip::new(left, right, 0).expect("clip length checked");
                    compute_spectrogram_with(&clip, config.log_spectrogram).magnitudes
                })
                .collect();
            let mut out = Array4::zeros((n, 2, SPEC_BINS, SPEC_FRAMES));
            for (i, spec) in specs.into_iter().enumerate() {
                for ((ch, f, t), &v) in spec.indexed_iter() {
                    out[[i, ch, f, t]] = T::from_f64(v as f64);
                }
            }
            AudioBatch::Spectrogram(out)
        }
        _ => AudioBatch::Waveform(clips.mapv(|v| T::from_f64(v as f64))),
    }
}

enum Enc<T: Scalar> {
    Wave(WaveformEncoder<T>),
    Spec(SpectrogramEncoder<T>),
}

enum Gen<T: Scalar> {
    UNet(UNetGenerator<T>),
    Direct(DirectGenerator<T>),
}

/// Encoder plus generator: maps an audio batch to `[n, 1, r, r]` images.
pub struct SoundToImage<T: Scalar> {
    pub config: ModelConfig,
    enc: Enc<T>,
    gen: Gen<T>,
}

impl<T: Scalar> SoundToImage<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (enc, width) = match config.encoder {
            EncoderKind::WaveformEarly => {
                let e = WaveformEncoder::new(Fusion::Early, &mut rng);
                let w = e.latent_width();
                (Enc::Wave(e), w)
            }
            EncoderKind::WaveformLate { shared } => {
                let e = WaveformEncoder::new(Fusion::Late { shared }, &mut rng);
                let w = e.latent_width();
                (Enc::Wave(e), w)
            }
            EncoderKind::Spectrogram { latent_f } => {
                let e = SpectrogramEncoder::new(latent_f, &mut rng);
                let w = e.latent_width();
                (Enc::Spec(e), w)
            }
        };
        let gen = match config.generator {
            GeneratorKind::UNet => {
                Gen::UNet(UNetGenerator::new(width, config.resolution, &mut rng))
            }
            GeneratorKind::Direct => {
                Gen::Direct(DirectGenerator::new(width, config.resolution, &mut rng))
            }
        };
        Ok(Self { config, enc, gen })
    }

    /// Full forward pass; `train` enables batch statistics and caching for
    /// a following [`Self::backward`].
    pub fn forward(&mut self, batch: &AudioBatch<T>, train: bool) -> Result<Array4<T>, ModelError> {
        let latent = match (&mut self.enc, batch) {
            (Enc::Wave(e), AudioBatch::Waveform(x)) => {
                let (_, c, l) = x.dim();
                if (c, l) != (2, CLIP_LEN) {
                    return Err(ModelError::BadInputShape {
                        expected: format!("[n, 2, {CLIP_LEN}]"),
                        got: format!("{:?}", x.dim()),
                    });
                }
                e.forward(x, train)
            }
            (Enc::Spec(e), AudioBatch::Spectrogram(x)) => {
                let (_, c, f, t) = x.dim();
                if (c, f, t) != (2, SPEC_BINS, SPEC_FRAMES) {
                    return Err(ModelError::BadInputShape {
                        expected: format!("[n, 2, {SPEC_BINS}, {SPEC_FRAMES}]"),
                        got: format!("{:?}", x.dim()),
                    });
                }
                e.forward(x, train)
            }
            _ => return Err(ModelError::InputKindMismatch),
        };
        Ok(match &mut self.gen {
            Gen::UNet(g) => g.forward(&latent, train),
            Gen::Direct(g) => g.forward(&latent, train),
        })
    }

    /// Backpropagates an image gradient through generator and encoder,
    /// accumulating parameter gradients.
    pub fn backward(&mut self, dimg: Array4<T>) {
        let dlatent = match &mut self.gen {
            Gen::UNet(g) => g.backward(dimg),
            Gen::Direct(g) => g.backward(dimg),
        };
        match &mut self.enc {
            Enc::Wave(e) => e.backward(&dlatent),
            Enc::Spec(e) => e.backward(&dlatent),
        }
    }

    /// Latent vector only (used by shape diagnostics).
    pub fn encode(&mut self, batch: &AudioBatch<T>) -> Result<Array2<T>, ModelError> {
        match (&mut self.enc, batch) {
            (Enc::Wave(e), AudioBatch::Waveform(x)) => Ok(e.forward(x, false)),
            (Enc::Spec(e), AudioBatch::Spectrogram(x)) => Ok(e.forward(x, false)),
            _ => Err(ModelError::InputKindMismatch),
        }
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        match &mut self.enc {
            Enc::Wave(e) => e.visit_buffers("enc", f),
            Enc::Spec(e) => e.visit_buffers("enc", f),
        }
        match &mut self.gen {
            Gen::UNet(g) => g.visit_buffers("gen", f),
            Gen::Direct(g) => g.visit_buffers("gen", f),
        }
    }
}

impl<T: Scalar> ParamOwner<T> for SoundToImage<T> {
    fn visit_params(&mut self, _prefix: &str, f: &mut ParamFn<T>) {
        match &mut self.enc {
            Enc::Wave(e) => e.visit_params("enc", f),
            Enc::Spec(e) => e.visit_params("enc", f),
        }
        match &mut self.gen {
            Gen::UNet(g) => g.visit_params("gen", f),
            Gen::Direct(g) => g.visit_params("gen", f),
        }
    }
}

/// All encoder/generator combinations of the ablation grid, in table order.
pub fn ablation_grid(resolution: usize) -> Vec<ModelConfig> {
    let encoders = [
        EncoderKind::WaveformEarly,
        EncoderKind::WaveformLate { shared: false },
        EncoderKind::Spectrogram { latent_f: 1 },
        EncoderKind::Spectrogram { latent_f: 10 },
    ];
    let mut out = Vec::new();
    for enc in encoders {
        for gen in [GeneratorKind::UNet, GeneratorKind::Direct] {
            out.push(ModelConfig {
                encoder: enc,
                generator: gen,
                resolution,
                log_spectrogram: false,
            });
        }
    }
    out
}
