//! Audio encoders: an 8-layer temporal conv stack over raw waveforms (with
//! early or late channel fusion) and a 2-D conv stack over spectrograms.

use crate::nn::{
    AdaptiveAvgPool, BatchNorm, Conv1d, Conv2d, LeakyRelu, ParamFn, ParamOwner, Scalar,
};
use crate::signal::{SPEC_BINS, SPEC_FRAMES};
use crate::CLIP_LEN;
use ndarray::{concatenate, Array2, Array3, Array4, Axis, Ix3};
use rand::Rng;

/// `(filters, kernel, stride, padding)` for the eight temporal conv layers.
pub const WAVEFORM_LAYERS: [(usize, usize, usize, usize); 8] = [
    (32, 228, 2, 114),
    (64, 128, 3, 64),
    (128, 64, 3, 32),
    (256, 32, 3, 16),
    (256, 16, 3, 8),
    (512, 8, 3, 4),
    (512, 4, 3, 2),
    (1024, 3, 3, 1),
];

/// Leaky-ReLU slope used throughout the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

/// One-sided padding for a layer: even kernels drop one pad sample on the
/// right so each stride tiles the signal into exactly `ceil(len / stride)`
/// steps.
fn pads(k: usize, p: usize) -> (usize, usize) {
    if k % 2 == 0 {
        (p, p - 1)
    } else {
        (p, p)
    }
}

/// Per-layer output lengths of the waveform stack for a given input length.
pub fn waveform_time_trace(input_len: usize) -> Vec<usize> {
    let mut l = input_len;
    WAVEFORM_LAYERS
        .iter()
        .map(|&(_, k, s, p)| {
            let (lo, hi) = pads(k, p);
            l = crate::nn::conv_out_len(l, k, s, lo, hi);
            l
        })
        .collect()
}

/// Convolution layers 1..=7 of the waveform stack (shared by both fusion
/// modes), each followed by batch norm and leaky ReLU.
struct Tower<T: Scalar> {
    convs: Vec<Conv1d<T>>,
    bns: Vec<BatchNorm<T>>,
    acts: Vec<LeakyRelu<T, Ix3>>,
}

impl<T: Scalar> Tower<T> {
    fn new<R: Rng + ?Sized>(c_in: usize, rng: &mut R) -> Self {
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut acts = Vec::new();
        let mut prev = c_in;
        for &(filters, k, s, p) in &WAVEFORM_LAYERS[..7] {
            let (lo, hi) = pads(k, p);
            convs.push(Conv1d::new(prev, filters, k, s, lo, hi, rng));
            bns.push(BatchNorm::new(filters));
            acts.push(LeakyRelu::new(LEAKY_SLOPE));
            prev = filters;
        }
        Self { convs, bns, acts }
    }

    fn forward(&mut self, mut h: Array3<T>, train: bool) -> Array3<T> {
        for i in 0..self.convs.len() {
            h = self.convs[i].forward(&h, train);
            h = self.bns[i].forward3(&h, train);
            h = self.acts[i].forward(h, train);
        }
        h
    }

    fn backward(&mut self, mut dh: Array3<T>, need_dx: bool) -> Option<Array3<T>> {
        for i in (0..self.convs.len()).rev() {
            dh = self.acts[i].backward(dh);
            dh = self.bns[i].backward3(&dh);
            if i == 0 && !need_dx {
                self.convs[i].backward_no_dx(&dh);
                return None;
            }
            dh = self.convs[i].backward(&dh);
        }
        Some(dh)
    }

    fn visit(&mut self, prefix: &str, f: &mut ParamFn<T>) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_params(&format!("{prefix}.conv{}", i + 1), f);
        }
        for (i, bn) in self.bns.iter_mut().enumerate() {
            bn.visit_params(&format!("{prefix}.bn{}", i + 1), f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        for (i, bn) in self.bns.iter_mut().enumerate() {
            bn.visit_buffers(&format!("{prefix}.bn{}", i + 1), f);
        }
    }
}

/// How the two ears are combined in the waveform encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    /// Two-channel input to a single stack.
    Early,
    /// One stack per ear (optionally weight-shared), concatenated before the
    /// final conv layer.
    Late { shared: bool },
}

/// Raw-waveform encoder producing a 1024-wide latent vector.
pub struct WaveformEncoder<T: Scalar> {
    fusion: Fusion,
    towers: Vec<Tower<T>>,
    conv8: Conv1d<T>,
    cache_n: usize,
}

impl<T: Scalar> WaveformEncoder<T> {
    pub fn new<R: Rng + ?Sized>(fusion: Fusion, rng: &mut R) -> Self {
        let (filters, k, s, p) = WAVEFORM_LAYERS[7];
        let (lo, hi) = pads(k, p);
        let (towers, conv8_in) = match fusion {
            Fusion::Early => (vec![Tower::new(2, rng)], 512),
            Fusion::Late { shared: true } => (vec![Tower::new(1, rng)], 1024),
            Fusion::Late { shared: false } => {
                (vec![Tower::new(1, rng), Tower::new(1, rng)], 1024)
            }
        };
        Self {
            fusion,
            towers,
            conv8: Conv1d::new(conv8_in, filters, k, s, lo, hi, rng),
            cache_n: 0,
        }
    }

    pub fn latent_width(&self) -> usize {
        1024
    }

    /// Encodes `[n, 2, 3200]` into `[n, 1024]`.
    pub fn forward(&mut self, x: &Array3<T>, train: bool) -> Array2<T> {
        let (n, c, l) = x.dim();
        assert_eq!((c, l), (2, CLIP_LEN), "waveform batch must be [n, 2, 3200]");
        self.cache_n = n;
        let merged = match self.fusion {
            Fusion::Early => self.towers[0].forward(x.clone(), train),
            Fusion::Late { shared: true } => {
                // run both ears through the one tower as a doubled batch
                let stacked = x
                    .view()
                    .into_shape_with_order((2 * n, 1, l))
                    .unwrap()
                    .to_owned();
                let out = self.towers[0].forward(stacked, train);
                let (_, ch, lt) = out.dim();
                out.into_shape_with_order((n, 2 * ch, lt)).unwrap()
            }
            Fusion::Late { shared: false } => {
                let left = x.slice(ndarray::s![.., 0..1, ..]).to_owned();
                let right = x.slice(ndarray::s![.., 1..2, ..]).to_owned();
                let hl = self.towers[0].forward(left, train);
                let hr = self.towers[1].forward(right, train);
                concatenate(Axis(1), &[hl.view(), hr.view()]).unwrap()
            }
        };
        let out = self.conv8.forward(&merged, train);
        let (_, ch, lt) = out.dim();
        assert_eq!((ch, lt), (1024, 1), "conv8 must collapse time to one step");
        // average over the residual time axis (a single step here)
        let scale = T::one() / T::from_f64(lt as f64);
        out.sum_axis(Axis(2)).mapv(|v| v * scale)
    }

    pub fn backward(&mut self, dlatent: &Array2<T>) {
        let n = self.cache_n;
        let d8 = dlatent
            .view()
            .into_shape_with_order((n, 1024, 1))
            .unwrap()
            .to_owned();
        let dmerged = self.conv8.backward(&d8);
        match self.fusion {
            Fusion::Early => {
                self.towers[0].backward(dmerged, false);
            }
            Fusion::Late { shared: true } => {
                let (_, ch2, lt) = dmerged.dim();
                let stacked = dmerged
                    .into_shape_with_order((2 * n, ch2 / 2, lt))
                    .unwrap();
                self.towers[0].backward(stacked, false);
            }
            Fusion::Late { shared: false } => {
                let half = dmerged.dim().1 / 2;
                let dl = dmerged.slice(ndarray::s![.., ..half, ..]).to_owned();
                let dr = dmerged.slice(ndarray::s![.., half.., ..]).to_owned();
                self.towers[0].backward(dl, false);
                self.towers[1].backward(dr, false);
            }
        }
    }
}

impl<T: Scalar> ParamOwner<T> for WaveformEncoder<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<T>) {
        for (i, t) in self.towers.iter_mut().enumerate() {
            t.visit(&format!("{prefix}.tower{i}"), f);
        }
        self.conv8.visit_params(&format!("{prefix}.conv8"), f);
    }
}

impl<T: Scalar> WaveformEncoder<T> {
    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        for (i, t) in self.towers.iter_mut().enumerate() {
            t.visit_buffers(&format!("{prefix}.tower{i}"), f);
        }
    }
}

/// Channel progression of the spectrogram encoder (mirrors the waveform
/// stack); every layer halves time, the first four also halve frequency.
pub const SPECTROGRAM_CHANNELS: [usize; 8] = [32, 64, 128, 256, 256, 512, 512, 1024];

/// Spectrogram encoder producing a `[n, f * 1024]` latent (`f` final
/// frequency bands, 1 or 10).
pub struct SpectrogramEncoder<T: Scalar> {
    convs: Vec<Conv2d<T>>,
    bns: Vec<BatchNorm<T>>,
    acts: Vec<LeakyRelu<T, ndarray::Ix4>>,
    pool: AdaptiveAvgPool<T>,
    latent_f: usize,
    cache_dim: Option<(usize, usize, usize)>, // n, freq, time before pool
}

impl<T: Scalar> SpectrogramEncoder<T> {
    pub fn new<R: Rng + ?Sized>(latent_f: usize, rng: &mut R) -> Self {
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut acts = Vec::new();
        let mut prev = 2;
        for (i, &ch) in SPECTROGRAM_CHANNELS.iter().enumerate() {
            let sf = if i < 4 { 2 } else { 1 };
            convs.push(Conv2d::new(prev, ch, (3, 3), (sf, 2), (1, 1), rng));
            if i < 7 {
                bns.push(BatchNorm::new(ch));
                acts.push(LeakyRelu::new(LEAKY_SLOPE));
            }
            prev = ch;
        }
        Self {
            convs,
            bns,
            acts,
            pool: AdaptiveAvgPool::new(latent_f, 1),
            latent_f,
            cache_dim: None,
        }
    }

    pub fn latent_width(&self) -> usize {
        self.latent_f * 1024
    }

    /// Encodes `[n, 2, 257, 200]` into `[n, latent_f * 1024]`.
    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array2<T> {
        let (n, c, fb, tf) = x.dim();
        assert_eq!(
            (c, fb, tf),
            (2, SPEC_BINS, SPEC_FRAMES),
            "spectrogram batch must be [n, 2, 257, 200]"
        );
        let mut h = x.clone();
        for i in 0..8 {
            h = self.convs[i].forward(&h, train);
            if i < 7 {
                h = self.bns[i].forward4(&h, train);
                h = self.acts[i].forward(h, train);
            }
        }
        let (_, ch, freq, time) = h.dim();
        assert_eq!(time, 1, "time axis must collapse to one step");
        self.cache_dim = Some((n, freq, time));
        let pooled = self.pool.forward(&h, train); // [n, 1024, latent_f, 1]
        // order the latent as f-major blocks of 1024 channels
        let perm = pooled.permuted_axes([0, 2, 1, 3]);
        let owned = perm.as_standard_layout().to_owned();
        let _ = ch;
        owned
            .into_shape_with_order((n, self.latent_f * 1024))
            .unwrap()
    }

    pub fn backward(&mut self, dlatent: &Array2<T>) {
        let (n, _freq, _time) = self.cache_dim.take().expect("backward without forward");
        let d = dlatent
            .view()
            .into_shape_with_order((n, self.latent_f, 1024, 1))
            .unwrap();
        let d = d.permuted_axes([0, 2, 1, 3]); // [n, 1024, latent_f, 1]
        let mut dh = self.pool.backward(&d.as_standard_layout().to_owned());
        for i in (0..8).rev() {
            if i < 7 {
                dh = self.acts[i].backward(dh);
                dh = self.bns[i].backward4(&dh);
            }
            if i == 0 {
                self.convs[i].backward_no_dx(&dh);
            } else {
                dh = self.convs[i].backward(&dh);
            }
        }
    }
}

impl<T: Scalar> ParamOwner<T> for SpectrogramEncoder<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<T>) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_params(&format!("{prefix}.conv{}", i + 1), f);
        }
        for (i, bn) in self.bns.iter_mut().enumerate() {
            bn.visit_params(&format!("{prefix}.bn{}", i + 1), f);
        }
    }
}

impl<T: Scalar> SpectrogramEncoder<T> {
    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        for (i, bn) in self.bns.iter_mut().enumerate() {
            bn.visit_buffers(&format!("{prefix}.bn{}", i + 1), f);
        }
    }
}
