#![allow(dead_code)]

//! Shared test oracles, independent of the library's tracing internals.

use echo2depth_core::geom::Vec3;
use echo2depth_core::nn::{ParamFn, ParamOwner};
use echo2depth_core::scene::RoomScene;
use echo2depth_core::signal::Waveform;

/// Mirrors a point across an axis-aligned wall plane.
fn mirror(p: Vec3, axis: usize, plane: f64) -> Vec3 {
    let mut out = p;
    out.set_axis(axis, 2.0 * plane - p.axis(axis));
    out
}

/// Brute-force image-source enumeration for an empty rectangular room:
/// expands every wall sequence of length `<= max_order` without immediate
/// repeats, then deduplicates identical image positions (keeping the lowest
/// order). Completely independent of the lattice construction in the crate.
pub fn brute_force_images(room: Vec3, emitter: Vec3, max_order: u32) -> Vec<(Vec3, u32)> {
    let walls: Vec<(usize, f64)> = vec![
        (0, 0.0),
        (0, room.x),
        (1, 0.0),
        (1, room.y),
        (2, 0.0),
        (2, room.z),
    ];
    let mut found: Vec<(Vec3, u32)> = vec![(emitter, 0)];
    let mut frontier: Vec<(Vec3, Option<usize>)> = vec![(emitter, None)];
    for order in 1..=max_order {
        let mut next = Vec::new();
        for (pos, last) in &frontier {
            for (wi, &(axis, plane)) in walls.iter().enumerate() {
                if *last == Some(wi) {
                    continue;
                }
                let img = mirror(*pos, axis, plane);
                found.push((img, order));
                next.push((img, Some(wi)));
            }
        }
        frontier = next;
    }
    // dedup by quantized position, keeping the lowest order
    let mut map: std::collections::BTreeMap<(i64, i64, i64), (Vec3, u32)> =
        std::collections::BTreeMap::new();
    for (p, order) in found {
        let key = (
            (p.x * 1e9).round() as i64,
            (p.y * 1e9).round() as i64,
            (p.z * 1e9).round() as i64,
        );
        map.entry(key)
            .and_modify(|(_, o)| *o = (*o).min(order))
            .or_insert((p, order));
    }
    map.into_values().collect()
}

/// Sorted path lengths from every brute-force image to every receiver.
pub fn brute_force_path_lengths(scene: &RoomScene, max_order: u32) -> Vec<f64> {
    let images = brute_force_images(scene.room_size, scene.emitter_pose, max_order);
    let mut lengths = Vec::new();
    for recv in scene.receiver_positions() {
        for (img, _) in &images {
            lengths.push(img.distance(recv));
        }
    }
    lengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lengths
}

/// Index of the peak of the cross-correlation of `signal` with `template`.
pub fn matched_filter_peak(signal: &Waveform, template: &Waveform) -> usize {
    let sig: Vec<f64> = signal.samples.iter().map(|&v| v as f64).collect();
    let tpl: Vec<f64> = template.samples.iter().map(|&v| v as f64).collect();
    let mut best = (0usize, f64::NEG_INFINITY);
    for lag in 0..=(sig.len().saturating_sub(tpl.len())) {
        let mut acc = 0.0;
        for (i, &c) in tpl.iter().enumerate() {
            acc += c * sig[lag + i];
        }
        if acc > best.1 {
            best = (lag, acc);
        }
    }
    best.0
}

/// Flattens every parameter of a model in visit order.
pub fn gather_params<M: ParamOwner<f64>>(model: &mut M) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit_params("", &mut |_, v, _| out.extend_from_slice(v));
    out
}

/// Flattens every gradient of a model in visit order.
pub fn gather_grads<M: ParamOwner<f64>>(model: &mut M) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit_params("", &mut |_, _, g| out.extend_from_slice(g));
    out
}

/// Adds `delta` to the parameter at flat index `target` (visit order).
pub fn perturb_param<M: ParamOwner<f64>>(model: &mut M, target: usize, delta: f64) {
    let mut offset = 0usize;
    let f: &mut ParamFn<f64> = &mut |_name: &str, v: &mut [f64], _g: &mut [f64]| {
        if target >= offset && target < offset + v.len() {
            v[target - offset] += delta;
        }
        offset += v.len();
    };
    model.visit_params("", f);
}

/// Relative L2 distance between two gradient vectors.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-12)
}

// --- miniature networks for finite-difference gradient checks ---------

use echo2depth_core::nn::{
    BatchNorm, Conv1d, Conv2d, ConvTranspose2d, LeakyRelu, Linear, Sigmoid,
};
use ndarray::{Array3, Array4, Ix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Re-draws weights at a larger scale (and biases off zero) so no
/// pre-activation sits within a finite-difference step of a rectifier kink.
fn reinit<M: ParamOwner<f64>>(model: &mut M, rng: &mut ChaCha8Rng) {
    model.visit_params("", &mut |name, v, _| {
        if !name.contains("bn") {
            let std = if name.ends_with(".b") { 0.1 } else { 0.5 };
            echo2depth_core::nn::init_normal(v, std, rng);
        }
    });
}

/// Two temporal conv layers collapsing a 2×64 clip to a latent of 4, then a
/// linear head reshaped through two transposed convs to a 4×4 image.
pub struct MiniGenerator {
    conv1: Conv1d<f64>,
    bn1: BatchNorm<f64>,
    act1: LeakyRelu<f64, ndarray::Ix3>,
    conv2: Conv1d<f64>,
    lin: Linear<f64>,
    up1: ConvTranspose2d<f64>,
    act2: LeakyRelu<f64, Ix4>,
    up2: ConvTranspose2d<f64>,
    sig: Sigmoid<f64, Ix4>,
    cache_len: usize,
}

impl MiniGenerator {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self {
            conv1: Conv1d::new(2, 3, 5, 2, 2, 2, &mut rng),
            bn1: BatchNorm::new(3),
            act1: LeakyRelu::new(0.2),
            conv2: Conv1d::new(3, 4, 3, 4, 1, 1, &mut rng),
            lin: Linear::new(4 * 8, 4, &mut rng),
            up1: ConvTranspose2d::new(4, 2, 2, 2, 0, &mut rng),
            act2: LeakyRelu::new(0.2),
            up2: ConvTranspose2d::new(2, 1, 2, 2, 0, &mut rng),
            sig: Sigmoid::new(),
            cache_len: 0,
        };
        reinit(&mut net, &mut rng);
        net
    }

    pub fn forward(&mut self, x: &Array3<f64>, train: bool) -> Array4<f64> {
        let n = x.dim().0;
        let h = self.conv1.forward(x, train); // [n, 3, 32]
        let h = self.bn1.forward3(&h, train);
        let h = self.act1.forward(h, train);
        let h = self.conv2.forward(&h, train); // [n, 4, 8]
        self.cache_len = h.dim().2;
        let flat = h.into_shape_with_order((n, 4 * 8)).unwrap();
        let z = self.lin.forward(&flat, train); // [n, 4]
        let grid = z.into_shape_with_order((n, 4, 1, 1)).unwrap();
        let u = self.up1.forward(&grid, train); // [n, 2, 2, 2]
        let u = self.act2.forward(u, train);
        let u = self.up2.forward(&u, train); // [n, 1, 4, 4]
        self.sig.forward(u, train)
    }

    pub fn backward(&mut self, dimg: Array4<f64>) {
        let d = self.sig.backward(dimg);
        let d = self.up2.backward(&d);
        let d = self.act2.backward(d);
        let d = self.up1.backward(&d);
        let n = d.dim().0;
        let dz = d.into_shape_with_order((n, 4)).unwrap();
        let dflat = self.lin.backward(&dz);
        let dh = dflat
            .into_shape_with_order((n, 4, self.cache_len))
            .unwrap();
        let dh = self.conv2.backward(&dh);
        let dh = self.act1.backward(dh);
        let dh = self.bn1.backward3(&dh);
        self.conv1.backward_no_dx(&dh);
    }
}

impl ParamOwner<f64> for MiniGenerator {
    fn visit_params(&mut self, _p: &str, f: &mut ParamFn<f64>) {
        self.conv1.visit_params("conv1", f);
        self.bn1.visit_params("bn1", f);
        self.conv2.visit_params("conv2", f);
        self.lin.visit_params("lin", f);
        self.up1.visit_params("up1", f);
        self.up2.visit_params("up2", f);
    }
}

/// Two-layer patch scorer over 4×4 images, scores on a 2×2 grid.
pub struct MiniDiscriminator {
    conv1: Conv2d<f64>,
    act1: LeakyRelu<f64, Ix4>,
    conv2: Conv2d<f64>,
}

impl MiniDiscriminator {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self {
            conv1: Conv2d::new(1, 3, (3, 3), (1, 1), (1, 1), &mut rng),
            act1: LeakyRelu::new(0.2),
            conv2: Conv2d::new(3, 1, (3, 3), (2, 2), (1, 1), &mut rng),
        };
        reinit(&mut net, &mut rng);
        net
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let h = self.conv1.forward(x, train);
        let h = self.act1.forward(h, train);
        self.conv2.forward(&h, train)
    }

    pub fn backward(&mut self, dscores: &Array4<f64>) -> Array4<f64> {
        let d = self.conv2.backward(dscores);
        let d = self.act1.backward(d);
        self.conv1.backward(&d)
    }
}

impl ParamOwner<f64> for MiniDiscriminator {
    fn visit_params(&mut self, _p: &str, f: &mut ParamFn<f64>) {
        self.conv1.visit_params("d.conv1", f);
        self.conv2.visit_params("d.conv2", f);
    }
}

