//! Patch discriminator: a short stack of stride-2 convolutions whose output
//! grid scores overlapping patches of the input image.

use super::encoders::LEAKY_SLOPE;
use crate::nn::{receptive_field, BatchNorm, Conv2d, LeakyRelu, ParamFn, ParamOwner, Scalar};
use ndarray::{Array4, Ix4};
use rand::Rng;

/// Feature widths of the non-final conv layers per input resolution; the
/// depth shrinks with the image so each patch stays near a third of it.
fn feature_plan(resolution: usize) -> &'static [usize] {
    match resolution {
        128 => &[64, 128, 256],
        64 => &[64, 128],
        32 => &[64],
        16 => &[64],
        _ => panic!("unsupported resolution {resolution}"),
    }
}

/// Real-valued patch score grid producer for one image resolution.
///
/// All layers are 4×4 stride-2 pad-1 convolutions; the middle layers carry
/// batch norm, every non-final layer a leaky ReLU, and the last layer maps
/// to a single raw score channel.
pub struct PatchDiscriminator<T: Scalar> {
    convs: Vec<Conv2d<T>>,
    bns: Vec<Option<BatchNorm<T>>>,
    acts: Vec<LeakyRelu<T, Ix4>>,
    final_conv: Conv2d<T>,
    resolution: usize,
}

impl<T: Scalar> PatchDiscriminator<T> {
    pub fn new<R: Rng + ?Sized>(resolution: usize, rng: &mut R) -> Self {
        let plan = feature_plan(resolution);
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut acts = Vec::new();
        let mut prev = 1;
        for (i, &ch) in plan.iter().enumerate() {
            convs.push(Conv2d::new(prev, ch, (4, 4), (2, 2), (1, 1), rng));
            bns.push((i > 0).then(|| BatchNorm::new(ch)));
            acts.push(LeakyRelu::new(LEAKY_SLOPE));
            prev = ch;
        }
        Self {
            convs,
            bns,
            acts,
            final_conv: Conv2d::new(prev, 1, (4, 4), (2, 2), (1, 1), rng),
            resolution,
        }
    }

    /// Side length of the score grid for this resolution.
    pub fn grid_size(&self) -> usize {
        self.resolution >> (self.convs.len() + 1)
    }

    /// Pixels of input seen by one score cell.
    pub fn receptive_field(&self) -> usize {
        let layers: Vec<(usize, usize)> = (0..=self.convs.len()).map(|_| (4, 2)).collect();
        receptive_field(&layers)
    }

    /// Scores `[n, 1, r, r]` images into `[n, 1, g, g]` patch grids.
    pub fn forward(&mut self, img: &Array4<T>, train: bool) -> Array4<T> {
        let (_, c, h, w) = img.dim();
        assert_eq!(
            (c, h, w),
            (1, self.resolution, self.resolution),
            "discriminator input must be [n, 1, {r}, {r}]",
            r = self.resolution
        );
        let mut h = img.clone();
        for i in 0..self.convs.len() {
            h = self.convs[i].forward(&h, train);
            if let Some(bn) = &mut self.bns[i] {
                h = bn.forward4(&h, train);
            }
            h = self.acts[i].forward(h, train);
        }
        self.final_conv.forward(&h, train)
    }

    /// Propagates score gradients back to the input image (needed when the
    /// generator learns through this network).
    pub fn backward(&mut self, dscores: &Array4<T>) -> Array4<T> {
        let mut dh = self.final_conv.backward(dscores);
        for i in (0..self.convs.len()).rev() {
            dh = self.acts[i].backward(dh);
            if let Some(bn) = &mut self.bns[i] {
                dh = bn.backward4(&dh);
            }
            dh = self.convs[i].backward(&dh);
        }
        dh
    }
}

impl<T: Scalar> ParamOwner<T> for PatchDiscriminator<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<T>) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_params(&format!("{prefix}.conv{}", i + 1), f);
            if let Some(bn) = &mut self.bns[i] {
                bn.visit_params(&format!("{prefix}.bn{}", i + 1), f);
            }
        }
        self.final_conv
            .visit_params(&format!("{prefix}.conv{}", self.convs.len() + 1), f);
    }
}

impl<T: Scalar> PatchDiscriminator<T> {
    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        for (i, bn) in self.bns.iter_mut().enumerate() {
            if let Some(bn) = bn {
                bn.visit_buffers(&format!("{prefix}.bn{}", i + 1), f);
            }
        }
    }
}
