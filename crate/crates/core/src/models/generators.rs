//! Image generators: a skip-connected encoder-decoder over the reshaped
//! latent, and a direct transposed-conv upsampling stack.

use super::encoders::LEAKY_SLOPE;
use crate::nn::{
    BatchNorm, Conv2d, ConvTranspose2d, LeakyRelu, Linear, MaxPool2d, ParamFn, ParamOwner, Relu,
    Scalar, Sigmoid,
};
use ndarray::{concatenate, Array2, Array4, Axis, Ix2, Ix4};
use rand::Rng;

/// Two fully connected layers mapping a `f * 1024` latent down to the 1024
/// values the generators reshape spatially.
pub struct FcHead<T: Scalar> {
    lin1: Linear<T>,
    act: LeakyRelu<T, Ix2>,
    lin2: Linear<T>,
}

impl<T: Scalar> FcHead<T> {
    fn new<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        Self {
            lin1: Linear::new(width, 1024, rng),
            act: LeakyRelu::new(LEAKY_SLOPE),
            lin2: Linear::new(1024, 1024, rng),
        }
    }

    fn forward(&mut self, z: &Array2<T>, train: bool) -> Array2<T> {
        let h = self.lin1.forward(z, train);
        let h = self.act.forward(h, train);
        self.lin2.forward(&h, train)
    }

    fn backward(&mut self, dz: &Array2<T>) -> Array2<T> {
        let dh = self.lin2.backward(dz);
        let dh = self.act.backward(dh);
        self.lin1.backward(&dh)
    }

    fn visit(&mut self, prefix: &str, f: &mut ParamFn<T>) {
        self.lin1.visit_params(&format!("{prefix}.fc1"), f);
        self.lin2.visit_params(&format!("{prefix}.fc2"), f);
    }
}

/// Two 3×3 convolutions, each with batch norm and ReLU.
struct DoubleConv<T: Scalar> {
    c1: Conv2d<T>,
    b1: BatchNorm<T>,
    r1: Relu<T, Ix4>,
    c2: Conv2d<T>,
    b2: BatchNorm<T>,
    r2: Relu<T, Ix4>,
}

impl<T: Scalar> DoubleConv<T> {
    fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Self {
            c1: Conv2d::new(c_in, c_out, (3, 3), (1, 1), (1, 1), rng),
            b1: BatchNorm::new(c_out),
            r1: Relu::new(),
            c2: Conv2d::new(c_out, c_out, (3, 3), (1, 1), (1, 1), rng),
            b2: BatchNorm::new(c_out),
            r2: Relu::new(),
        }
    }

    fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let h = self.c1.forward(x, train);
        let h = self.b1.forward4(&h, train);
        let h = self.r1.forward(h, train);
        let h = self.c2.forward(&h, train);
        let h = self.b2.forward4(&h, train);
        self.r2.forward(h, train)
    }

    fn backward(&mut self, dy: Array4<T>) -> Array4<T> {
        let d = self.r2.backward(dy);
        let d = self.b2.backward4(&d);
        let d = self.c2.backward(&d);
        let d = self.r1.backward(d);
        let d = self.b1.backward4(&d);
        self.c1.backward(&d)
    }

    fn visit(&mut self, prefix: &str, f: &mut ParamFn<T>) {
        self.c1.visit_params(&format!("{prefix}.c1"), f);
        self.b1.visit_params(&format!("{prefix}.b1"), f);
        self.c2.visit_params(&format!("{prefix}.c2"), f);
        self.b2.visit_params(&format!("{prefix}.b2"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.b1.visit_buffers(&format!("{prefix}.b1"), f);
        self.b2.visit_buffers(&format!("{prefix}.b2"), f);
    }
}

struct UpBlock<T: Scalar> {
    deconv: ConvTranspose2d<T>,
    bn: BatchNorm<T>,
    relu: Relu<T, Ix4>,
    dc: DoubleConv<T>,
    /// Index of the encoder feature concatenated at this resolution.
    skip: Option<usize>,
    skip_channels: usize,
}

/// Encoder-decoder generator over the latent reshaped to 32×32, with skip
/// connections at 8, 16, and 32 pixels and a sigmoid head.
pub struct UNetGenerator<T: Scalar> {
    fc: Option<FcHead<T>>,
    enc: Vec<DoubleConv<T>>,
    pools: Vec<MaxPool2d<T>>,
    ups: Vec<UpBlock<T>>,
    head: Conv2d<T>,
    sig: Sigmoid<T, Ix4>,
    target_res: usize,
    skips: Vec<Array4<T>>,
}

/// Encoder channel plan for the three down blocks.
const UNET_DOWN: [(usize, usize); 3] = [(1, 32), (32, 64), (64, 128)];

impl<T: Scalar> UNetGenerator<T> {
    pub fn new<R: Rng + ?Sized>(latent_width: usize, target_res: usize, rng: &mut R) -> Self {
        assert!(
            matches!(target_res, 16 | 32 | 64 | 128),
            "unsupported resolution {target_res}"
        );
        let fc = (latent_width != 1024).then(|| FcHead::new(latent_width, rng));
        let enc: Vec<DoubleConv<T>> = UNET_DOWN
            .iter()
            .map(|&(ci, co)| DoubleConv::new(ci, co, rng))
            .collect();
        let pools = (0..3).map(|_| MaxPool2d::new()).collect();

        // up plan from the 4×4 bottleneck: (in, up_out, skip idx, dc_out)
        let plan: [(usize, usize, Option<usize>, usize); 5] = [
            (128, 128, Some(2), 128),
            (128, 64, Some(1), 64),
            (64, 32, Some(0), 32),
            (32, 16, None, 16),
            (16, 8, None, 8),
        ];
        let n_ups = match target_res {
            16 => 2,
            32 => 3,
            64 => 4,
            _ => 5,
        };
        let mut ups = Vec::new();
        for &(cin, up_out, skip, dc_out) in &plan[..n_ups] {
            let skip_channels = skip.map_or(0, |i| UNET_DOWN[i].1);
            ups.push(UpBlock {
                deconv: ConvTranspose2d::new(cin, up_out, 4, 2, 1, rng),
                bn: BatchNorm::new(up_out),
                relu: Relu::new(),
                dc: DoubleConv::new(up_out + skip_channels, dc_out, rng),
                skip,
                skip_channels,
            });
        }
        let head_in = plan[n_ups - 1].3;
        Self {
            fc,
            enc,
            pools,
            ups,
            head: Conv2d::new(head_in, 1, (1, 1), (1, 1), (0, 0), rng),
            sig: Sigmoid::new(),
            target_res,
            skips: Vec::new(),
        }
    }

    pub fn forward(&mut self, latent: &Array2<T>, train: bool) -> Array4<T> {
        let n = latent.dim().0;
        let z = match &mut self.fc {
            Some(fc) => fc.forward(latent, train),
            None => latent.clone(),
        };
        assert_eq!(z.dim().1, 1024, "latent must reshape to 32x32");
        let mut h = z.into_shape_with_order((n, 1, 32, 32)).unwrap();
        self.skips.clear();
        for i in 0..3 {
            let f = self.enc[i].forward(&h, train);
            h = self.pools[i].forward(&f, train);
            self.skips.push(f);
        }
        for up in self.ups.iter_mut() {
            let u = up.deconv.forward(&h, train);
            let u = up.bn.forward4(&u, train);
            let u = up.relu.forward(u, train);
            let cat = match up.skip {
                Some(i) => concatenate(Axis(1), &[u.view(), self.skips[i].view()]).unwrap(),
                None => u,
            };
            h = up.dc.forward(&cat, train);
        }
        debug_assert_eq!(h.dim().2, self.target_res);
        let y = self.head.forward(&h, train);
        self.sig.forward(y, train)
    }

    pub fn backward(&mut self, dimg: Array4<T>) -> Array2<T> {
        let d = self.sig.backward(dimg);
        let mut dh = self.head.backward(&d);
        let mut dskips: Vec<Option<Array4<T>>> = vec![None, None, None];
        for up in self.ups.iter_mut().rev() {
            let dcat = up.dc.backward(dh);
            let du = match up.skip {
                Some(i) => {
                    let ch = dcat.dim().1 - up.skip_channels;
                    let du = dcat.slice(ndarray::s![.., ..ch, .., ..]).to_owned();
                    let ds = dcat.slice(ndarray::s![.., ch.., .., ..]).to_owned();
                    dskips[i] = Some(ds);
                    du
                }
                None => dcat,
            };
            let du = up.relu.backward(du);
            let du = up.bn.backward4(&du);
            dh = up.deconv.backward(&du);
        }
        for i in (0..3).rev() {
            let mut df = self.pools[i].backward(&dh);
            if let Some(ds) = dskips[i].take() {
                df += &ds;
            }
            dh = self.enc[i].backward(df);
        }
        let n = dh.dim().0;
        let dz = dh.into_shape_with_order((n, 1024)).unwrap();
        match &mut self.fc {
            Some(fc) => fc.backward(&dz),
            None => dz,
        }
    }
}

impl<T: Scalar> ParamOwner<T> for UNetGenerator<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<T>) {
        if let Some(fc) = &mut self.fc {
            fc.visit(prefix, f);
        }
        for (i, dc) in self.enc.iter_mut().enumerate() {
            dc.visit(&format!("{prefix}.down{i}"), f);
        }
        for (i, up) in self.ups.iter_mut().enumerate() {
            up.deconv.visit_params(&format!("{prefix}.up{i}.deconv"), f);
            up.bn.visit_params(&format!("{prefix}.up{i}.bn"), f);
            up.dc.visit(&format!("{prefix}.up{i}.dc"), f);
        }
        self.head.visit_params(&format!("{prefix}.head"), f);
    }
}

impl<T: Scalar> UNetGenerator<T> {
    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        for (i, dc) in self.enc.iter_mut().enumerate() {
            dc.visit_buffers(&format!("{prefix}.down{i}"), f);
        }
        for (i, up) in self.ups.iter_mut().enumerate() {
            up.bn.visit_buffers(&format!("{prefix}.up{i}.bn"), f);
            up.dc.visit_buffers(&format!("{prefix}.up{i}.dc"), f);
        }
    }
}

/// `(filters, kernel, stride, padding, resulting resolution)` rows of the
/// direct upsampling stack for a 128×128 output.
pub const DIRECT_ROWS: [(usize, usize, usize, usize, usize); 6] = [
    (512, 4, 1, 0, 4),
    (512, 4, 2, 1, 8),
    (256, 4, 2, 1, 16),
    (128, 4, 2, 1, 32),
    (128, 4, 2, 1, 64),
    (64, 4, 2, 1, 128),
];

/// Transposed-conv stack from the `1×1×1024` latent straight to the target
/// resolution; smaller targets truncate the stack at the matching row.
pub struct DirectGenerator<T: Scalar> {
    fc: Option<FcHead<T>>,
    ups: Vec<(ConvTranspose2d<T>, BatchNorm<T>, LeakyRelu<T, Ix4>)>,
    head: Conv2d<T>,
    sig: Sigmoid<T, Ix4>,
    target_res: usize,
}

impl<T: Scalar> DirectGenerator<T> {
    pub fn new<R: Rng + ?Sized>(latent_width: usize, target_res: usize, rng: &mut R) -> Self {
        assert!(
            matches!(target_res, 16 | 32 | 64 | 128),
            "unsupported resolution {target_res}"
        );
        let fc = (latent_width != 1024).then(|| FcHead::new(latent_width, rng));
        let mut ups = Vec::new();
        let mut prev = 1024;
        let mut head_in = 1024;
        for &(filters, k, s, p, res) in &DIRECT_ROWS {
            ups.push((
                ConvTranspose2d::new(prev, filters, k, s, p, rng),
                BatchNorm::new(filters),
                LeakyRelu::new(LEAKY_SLOPE),
            ));
            prev = filters;
            head_in = filters;
            if res == target_res {
                break;
            }
        }
        Self {
            fc,
            ups,
            head: Conv2d::new(head_in, 1, (1, 1), (1, 1), (0, 0), rng),
            sig: Sigmoid::new(),
            target_res,
        }
    }

    pub fn forward(&mut self, latent: &Array2<T>, train: bool) -> Array4<T> {
        let n = latent.dim().0;
        let z = match &mut self.fc {
            Some(fc) => fc.forward(latent, train),
            None => latent.clone(),
        };
        assert_eq!(z.dim().1, 1024, "latent must reshape to 1x1x1024");
        let mut h = z.into_shape_with_order((n, 1024, 1, 1)).unwrap();
        for (deconv, bn, act) in self.ups.iter_mut() {
            h = deconv.forward(&h, train);
            h = bn.forward4(&h, train);
            h = act.forward(h, train);
        }
        debug_assert_eq!(h.dim().2, self.target_res);
        let y = self.head.forward(&h, train);
        self.sig.forward(y, train)
    }

    pub fn backward(&mut self, dimg: Array4<T>) -> Array2<T> {
        let d = self.sig.backward(dimg);
        let mut dh = self.head.backward(&d);
        for (deconv, bn, act) in self.ups.iter_mut().rev() {
            let du = act.backward(dh);
            let du = bn.backward4(&du);
            dh = deconv.backward(&du);
        }
        let n = dh.dim().0;
        let dz = dh.into_shape_with_order((n, 1024)).unwrap();
        match &mut self.fc {
            Some(fc) => fc.backward(&dz),
            None => dz,
        }
    }
}

impl<T: Scalar> ParamOwner<T> for DirectGenerator<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<T>) {
        if let Some(fc) = &mut self.fc {
            fc.visit(prefix, f);
        }
        for (i, (deconv, bn, _)) in self.ups.iter_mut().enumerate() {
            deconv.visit_params(&format!("{prefix}.up{}", i + 1), f);
            bn.visit_params(&format!("{prefix}.up{}.bn", i + 1), f);
        }
        self.head.visit_params(&format!("{prefix}.final"), f);
    }
}

impl<T: Scalar> DirectGenerator<T> {
    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        for (i, (_, bn, _)) in self.ups.iter_mut().enumerate() {
            bn.visit_buffers(&format!("{prefix}.up{}.bn", i + 1), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn latent(n: usize, w: usize) -> Array2<f32> {
        let mut z = Array2::zeros((n, w));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        crate::nn::init_normal(z.as_slice_mut().unwrap(), 1.0, &mut rng);
        z
    }

    #[test]
    fn unet_outputs_all_resolutions_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for res in [16, 32, 64, 128] {
            let mut gen = UNetGenerator::<f32>::new(1024, res, &mut rng);
            let y = gen.forward(&latent(2, 1024), false);
            assert_eq!(y.dim(), (2, 1, res, res));
            assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn unet_inserts_fc_head_for_wide_latent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut gen = UNetGenerator::<f32>::new(10 * 1024, 16, &mut rng);
        assert!(gen.fc.is_some());
        let y = gen.forward(&latent(1, 10 * 1024), false);
        assert_eq!(y.dim(), (1, 1, 16, 16));
        let mut names = Vec::new();
        gen.visit_params("g", &mut |name, _, _| names.push(name.to_string()));
        let fcs = names.iter().filter(|n| n.contains(".fc")).count();
        assert_eq!(fcs, 4, "two fc layers, each with weight and bias");
    }

    // Table-style resolution walk: 4, 8, 16, 32, 64, 128
    #[test]
    fn direct_truncates_at_target_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (res, ups) in [(16usize, 3usize), (32, 4), (64, 5), (128, 6)] {
            let gen = DirectGenerator::<f32>::new(1024, res, &mut rng);
            assert_eq!(gen.ups.len(), ups);
        }
        let mut gen = DirectGenerator::<f32>::new(1024, 128, &mut rng);
        let y = gen.forward(&latent(1, 1024), false);
        assert_eq!(y.dim(), (1, 1, 128, 128));
        assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    // Up1 maps 1024 -> 512 with a 4x4 kernel: 1024*512*16 weights + 512 biases
    #[test]
    fn direct_up1_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut gen = DirectGenerator::<f32>::new(1024, 16, &mut rng);
        let mut count = 0usize;
        gen.visit_params("g", &mut |name, v, _| {
            if name.starts_with("g.up1") && !name.contains("bn") {
                count += v.len();
            }
        });
        assert_eq!(count, 1024 * 512 * 4 * 4 + 512);
    }

    #[test]
    fn reshape_preserves_latent_values() {
        let z = latent(1, 1024);
        let grid = z.clone().into_shape_with_order((1, 1, 32, 32)).unwrap();
        let back = grid.into_shape_with_order((1, 1024)).unwrap();
        assert_eq!(z, back);
    }
}
