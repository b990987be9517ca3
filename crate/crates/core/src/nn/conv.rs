//! Convolution layers implemented as im2col + GEMM.
//!
//! Forward and input-gradient passes parallelize over the batch; weight
//! gradients parallelize over output-channel blocks while accumulating
//! samples in index order, keeping results independent of thread count.

use super::{conv_out_len, init_normal, ParamFn, ParamOwner, Scalar};
use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, Axis};
use rand::Rng;

const WGRAD_BLOCKS: usize = 4;

/// 1-D convolution over `[n, c_in, l]` with per-side padding.
pub struct Conv1d<T: Scalar> {
    w: Array2<T>, // [c_out, c_in * k]
    b: Array1<T>,
    dw: Array2<T>,
    db: Array1<T>,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad_lo: usize,
    pad_hi: usize,
    cache_x: Option<Array3<T>>,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad_lo: usize,
        pad_hi: usize,
        rng: &mut R,
    ) -> Self {
        let mut w = Array2::zeros((c_out, c_in * k));
        init_normal(w.as_slice_mut().unwrap(), 0.02, rng);
        Self {
            w,
            b: Array1::zeros(c_out),
            dw: Array2::zeros((c_out, c_in * k)),
            db: Array1::zeros(c_out),
            c_in,
            c_out,
            k,
            stride,
            pad_lo,
            pad_hi,
            cache_x: None,
        }
    }

    pub fn out_len(&self, l: usize) -> usize {
        conv_out_len(l, self.k, self.stride, self.pad_lo, self.pad_hi)
    }

    fn im2col(&self, x: &ArrayView2<T>, l_out: usize) -> Array2<T> {
        let mut cols = Array2::zeros((self.c_in * self.k, l_out));
        self.im2col_into(x, &mut cols.view_mut());
        cols
    }

    fn im2col_into(&self, x: &ArrayView2<T>, cols: &mut ndarray::ArrayViewMut2<T>) {
        let l = x.dim().1;
        let l_out = cols.dim().1;
        for c in 0..self.c_in {
            for ki in 0..self.k {
                let row = c * self.k + ki;
                // output positions whose tap stays inside the signal
                let o_lo = self.pad_lo.saturating_sub(ki).div_ceil(self.stride);
                for o in o_lo..l_out {
                    let idx = o * self.stride + ki;
                    if idx < self.pad_lo {
                        continue;
                    }
                    let idx = idx - self.pad_lo;
                    if idx >= l {
                        break;
                    }
                    cols[[row, o]] = x[[c, idx]];
                }
            }
        }
    }

    fn col2im(&self, dcols: &Array2<T>, l: usize) -> Array2<T> {
        let mut dx = Array2::zeros((self.c_in, l));
        let l_out = dcols.dim().1;
        for c in 0..self.c_in {
            for ki in 0..self.k {
                let row = c * self.k + ki;
                for o in 0..l_out {
                    let idx = o * self.stride + ki;
                    if idx < self.pad_lo {
                        continue;
                    }
                    let idx = idx - self.pad_lo;
                    if idx >= l {
                        break;
                    }
                    dx[[c, idx]] += dcols[[row, o]];
                }
            }
        }
        dx
    }

    pub fn forward(&mut self, x: &Array3<T>, train: bool) -> Array3<T> {
        let (n, c_in, l) = x.dim();
        assert_eq!(c_in, self.c_in, "conv1d input channels");
        let l_out = self.out_len(l);
        let mut y = Array3::zeros((n, self.c_out, l_out));
        y.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(x.axis_iter(Axis(0)).into_par_iter())
            .for_each(|(mut y_n, x_n)| {
                let cols = self.im2col(&x_n, l_out);
                let out = self.w.dot(&cols);
                y_n.assign(&out);
                for (mut row, &bias) in y_n.outer_iter_mut().zip(self.b.iter()) {
                    row.mapv_inplace(|v| v + bias);
                }
            });
        if train {
            self.cache_x = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Array3<T>) -> Array3<T> {
        self.backward_impl(dy, true).expect("dx requested")
    }

    /// Backward pass for a first layer: parameter gradients only.
    pub fn backward_no_dx(&mut self, dy: &Array3<T>) {
        self.backward_impl(dy, false);
    }

    fn backward_impl(&mut self, dy: &Array3<T>, need_dx: bool) -> Option<Array3<T>> {
        let x = self.cache_x.take().expect("conv1d backward without forward");
        let (n, _, l) = x.dim();
        let l_out = dy.dim().2;

        // batch-concatenated column matrix: one wide GEMM per weight-grad
        // block beats many skinny per-sample GEMMs
        let mut cols_cat = Array2::zeros((self.c_in * self.k, n * l_out));
        cols_cat
            .axis_chunks_iter_mut(Axis(1), l_out)
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut block)| {
                self.im2col_into(&x.index_axis(Axis(0), i), &mut block);
            });
        let dy_cat = {
            let mut cat = Array2::zeros((self.c_out, n * l_out));
            cat.axis_chunks_iter_mut(Axis(1), l_out)
                .into_par_iter()
                .enumerate()
                .for_each(|(i, mut block)| block.assign(&dy.index_axis(Axis(0), i)));
            cat
        };

        let dx = need_dx.then(|| {
            let mut dx = Array3::zeros(x.dim());
            dx.axis_iter_mut(Axis(0))
                .into_par_iter()
                .zip(dy.axis_iter(Axis(0)).into_par_iter())
                .for_each(|(mut dx_n, dy_n)| {
                    let dcols = self.w.t().dot(&dy_n);
                    dx_n.assign(&self.col2im(&dcols, l));
                });
            dx
        });

        self.db += &dy_cat.sum_axis(Axis(1));
        accumulate_wgrad(&mut self.dw, |co_range, dwb| {
            let dy_rows = dy_cat.slice(ndarray::s![co_range, ..]);
            T::gemm(T::one(), &dy_rows, &cols_cat.t(), T::one(), dwb);
        });
        dx
    }
}

impl<T: Scalar> ParamOwner<T> for Conv1d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<T>) {
        f(
            &format!("{prefix}.w"),
            self.w.as_slice_mut().unwrap(),
            self.dw.as_slice_mut().unwrap(),
        );
        f(
            &format!("{prefix}.b"),
            self.b.as_slice_mut().unwrap(),
            self.db.as_slice_mut().unwrap(),
        );
    }
}

/// Splits the weight-gradient matrix into row blocks and runs `body` on each
/// in parallel. Each output element still accumulates samples in order.
fn accumulate_wgrad<T: Scalar>(
    dw: &mut Array2<T>,
    body: impl Fn(std::ops::Range<usize>, &mut ndarray::ArrayViewMut2<T>) + Sync,
) {
    let rows = dw.dim().0;
    let chunk = rows.div_ceil(WGRAD_BLOCKS).max(1);
    dw.axis_chunks_iter_mut(Axis(0), chunk)
        .into_par_iter()
        .enumerate()
        .for_each(|(bi, mut block)| {
            let lo = bi * chunk;
            let hi = lo + block.dim().0;
            body(lo..hi, &mut block.view_mut());
        });
}

/// 2-D convolution over `[n, c_in, h, w]` with symmetric padding.
pub struct Conv2d<T: Scalar> {
    w: Array2<T>, // [c_out, c_in * kh * kw]
    b: Array1<T>,
    dw: Array2<T>,
    db: Array1<T>,
    c_in: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    cache_x: Option<Array4<T>>,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        (kh, kw): (usize, usize),
        (sh, sw): (usize, usize),
        (ph, pw): (usize, usize),
        rng: &mut R,
    ) -> Self {
        let mut w = Array2::zeros((c_out, c_in * kh * kw));
        init_normal(w.as_slice_mut().unwrap(), 0.02, rng);
        Self {
            w,
            b: Array1::zeros(c_out),
            dw: Array2::zeros((c_out, c_in * kh * kw)),
            db: Array1::zeros(c_out),
            c_in,
            c_out,
            kh,
            kw,
            sh,
            sw,
            ph,
            pw,
            cache_x: None,
        }
    }

    pub fn out_dim(&self, (h, w): (usize, usize)) -> (usize, usize) {
        (
            conv_out_len(h, self.kh, self.sh, self.ph, self.ph),
            conv_out_len(w, self.kw, self.sw, self.pw, self.pw),
        )
    }

    fn im2col(&self, x: &ndarray::ArrayView3<T>, (ho, wo): (usize, usize)) -> Array2<T> {
        let mut cols = Array2::zeros((self.c_in * self.kh * self.kw, ho * wo));
        self.im2col_into(x, (ho, wo), &mut cols.view_mut());
        cols
    }

    fn im2col_into(
        &self,
        x: &ndarray::ArrayView3<T>,
        (ho, wo): (usize, usize),
        cols: &mut ndarray::ArrayViewMut2<T>,
    ) {
        let (_, h, w) = x.dim();
        for c in 0..self.c_in {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for oh in 0..ho {
                        let ih = (oh * self.sh + ki) as isize - self.ph as isize;
                        if ih < 0 || ih as usize >= h {
                            continue;
                        }
                        for ow in 0..wo {
                            let iw = (ow * self.sw + kj) as isize - self.pw as isize;
                            if iw < 0 || iw as usize >= w {
                                continue;
                            }
                            cols[[row, oh * wo + ow]] = x[[c, ih as usize, iw as usize]];
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, dcols: &Array2<T>, (h, w): (usize, usize), (ho, wo): (usize, usize)) -> Array3<T> {
        let mut dx = Array3::zeros((self.c_in, h, w));
        for c in 0..self.c_in {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for oh in 0..ho {
                        let ih = (oh * self.sh + ki) as isize - self.ph as isize;
                        if ih < 0 || ih as usize >= h {
                            continue;
                        }
                        for ow in 0..wo {
                            let iw = (ow * self.sw + kj) as isize - self.pw as isize;
                            if iw < 0 || iw as usize >= w {
                                continue;
                            }
                            dx[[c, ih as usize, iw as usize]] += dcols[[row, oh * wo + ow]];
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let (n, c_in, h, w) = x.dim();
        assert_eq!(c_in, self.c_in, "conv2d input channels");
        let (ho, wo) = self.out_dim((h, w));
        let mut y = Array4::zeros((n, self.c_out, ho, wo));
        y.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(x.axis_iter(Axis(0)).into_par_iter())
            .for_each(|(mut y_n, x_n)| {
                let cols = self.im2col(&x_n, (ho, wo));
                let out = self.w.dot(&cols);
                for co in 0..self.c_out {
                    let bias = self.b[co];
                    for oh in 0..ho {
                        for ow in 0..wo {
                            y_n[[co, oh, ow]] = out[[co, oh * wo + ow]] + bias;
                        }
                    }
                }
            });
        if train {
            self.cache_x = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        self.backward_impl(dy, true).expect("dx requested")
    }

    /// Backward pass for a first layer: parameter gradients only.
    pub fn backward_no_dx(&mut self, dy: &Array4<T>) {
        self.backward_impl(dy, false);
    }

    fn backward_impl(&mut self, dy: &Array4<T>, need_dx: bool) -> Option<Array4<T>> {
        let x = self.cache_x.take().expect("conv2d backward without forward");
        let (n, _, h, w) = x.dim();
        let (_, _, ho, wo) = dy.dim();

        let mut cols_cat = Array2::zeros((self.c_in * self.kh * self.kw, n * ho * wo));
        cols_cat
            .axis_chunks_iter_mut(Axis(1), ho * wo)
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut block)| {
                self.im2col_into(&x.index_axis(Axis(0), i), (ho, wo), &mut block);
            });
        // flatten dy per sample to [c_out, ho*wo]
        let dy_flat: Vec<ArrayView2<T>> = (0..n)
            .map(|i| {
                dy.index_axis(Axis(0), i)
                    .into_shape_with_order((self.c_out, ho * wo))
                    .unwrap()
            })
            .collect();
        let dy_cat = {
            let mut cat = Array2::zeros((self.c_out, n * ho * wo));
            cat.axis_chunks_iter_mut(Axis(1), ho * wo)
                .into_par_iter()
                .enumerate()
                .for_each(|(i, mut block)| block.assign(&dy_flat[i]));
            cat
        };

        let dx = need_dx.then(|| {
            let mut dx = Array4::zeros(x.dim());
            dx.axis_iter_mut(Axis(0))
                .into_par_iter()
                .enumerate()
                .for_each(|(i, mut dx_n)| {
                    let dcols = self.w.t().dot(&dy_flat[i]);
                    dx_n.assign(&self.col2im(&dcols, (h, w), (ho, wo)));
                });
            dx
        });

        self.db += &dy_cat.sum_axis(Axis(1));
        accumulate_wgrad(&mut self.dw, |co_range, dwb| {
            let dy_rows = dy_cat.slice(ndarray::s![co_range, ..]);
            T::gemm(T::one(), &dy_rows, &cols_cat.t(), T::one(), dwb);
        });
        dx
    }
}

impl<T: Scalar> ParamOwner<T> for Conv2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<T>) {
        f(
            &format!("{prefix}.w"),
            self.w.as_slice_mut().unwrap(),
            self.dw.as_slice_mut().unwrap(),
        );
        f(
            &format!("{prefix}.b"),
            self.b.as_slice_mut().unwrap(),
            self.db.as_slice_mut().unwrap(),
        );
    }
}

/// Transposed 2-D convolution (square kernel/stride/padding), the upsampling
/// counterpart of [`Conv2d`].
pub struct ConvTranspose2d<T: Scalar> {
    w: Array2<T>, // [c_in, c_out * k * k]
    b: Array1<T>,
    dw: Array2<T>,
    db: Array1<T>,
    c_in: usize,
    c_out: usize,
    k: usize,
    s: usize,
    p: usize,
    cache_x: Option<Array4<T>>,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        k: usize,
        s: usize,
        p: usize,
        rng: &mut R,
    ) -> Self {
        let mut w = Array2::zeros((c_in, c_out * k * k));
        init_normal(w.as_slice_mut().unwrap(), 0.02, rng);
        Self {
            w,
            b: Array1::zeros(c_out),
            dw: Array2::zeros((c_in, c_out * k * k)),
            db: Array1::zeros(c_out),
            c_in,
            c_out,
            k,
            s,
            p,
            cache_x: None,
        }
    }

    pub fn out_dim(&self, (h, w): (usize, usize)) -> (usize, usize) {
        (
            (h - 1) * self.s + self.k - 2 * self.p,
            (w - 1) * self.s + self.k - 2 * self.p,
        )
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let (n, c_in, hi, wi) = x.dim();
        assert_eq!(c_in, self.c_in, "conv_transpose2d input channels");
        let (ho, wo) = self.out_dim((hi, wi));
        let mut y = Array4::zeros((n, self.c_out, ho, wo));
        y.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(x.axis_iter(Axis(0)).into_par_iter())
            .for_each(|(mut y_n, x_n)| {
                let x_flat = x_n.into_shape_with_order((c_in, hi * wi)).unwrap();
                let cols = self.w.t().dot(&x_flat); // [c_out*k*k, hi*wi]
                for co in 0..self.c_out {
                    for ki in 0..self.k {
                        for kj in 0..self.k {
                            let row = (co * self.k + ki) * self.k + kj;
                            for i in 0..hi {
                                let oh = (i * self.s + ki) as isize - self.p as isize;
                                if oh < 0 || oh as usize >= ho {
                                    continue;
                                }
                                for j in 0..wi {
                                    let ow = (j * self.s + kj) as isize - self.p as isize;
                                    if ow < 0 || ow as usize >= wo {
                                        continue;
                                    }
                                    y_n[[co, oh as usize, ow as usize]] +=
                                        cols[[row, i * wi + j]];
                                }
                            }
                        }
                    }
                }
                for co in 0..self.c_out {
                    let bias = self.b[co];
                    y_n.index_axis_mut(Axis(0), co).mapv_inplace(|v| v + bias);
                }
            });
        if train {
            self.cache_x = Some(x.clone());
        }
        y
    }

    /// Gathers `dy` into column form: the adjoint of the forward scatter.
    fn gather_dcols_into(
        &self,
        dy: &ndarray::ArrayView3<T>,
        (hi, wi): (usize, usize),
        dcols: &mut ndarray::ArrayViewMut2<T>,
    ) {
        let (_, ho, wo) = dy.dim();
        for co in 0..self.c_out {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (co * self.k + ki) * self.k + kj;
                    for i in 0..hi {
                        let oh = (i * self.s + ki) as isize - self.p as isize;
                        if oh < 0 || oh as usize >= ho {
                            continue;
                        }
                        for j in 0..wi {
                            let ow = (j * self.s + kj) as isize - self.p as isize;
                            if ow < 0 || ow as usize >= wo {
                                continue;
                            }
                            dcols[[row, i * wi + j]] = dy[[co, oh as usize, ow as usize]];
                        }
                    }
                }
            }
        }
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let x = self
            .cache_x
            .take()
            .expect("conv_transpose2d backward without forward");
        let (n, _, hi, wi) = x.dim();

        let kk = self.c_out * self.k * self.k;
        let mut dcols_cat = Array2::zeros((kk, n * hi * wi));
        dcols_cat
            .axis_chunks_iter_mut(Axis(1), hi * wi)
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut block)| {
                self.gather_dcols_into(&dy.index_axis(Axis(0), i), (hi, wi), &mut block);
            });
        let mut x_cat = Array2::zeros((self.c_in, n * hi * wi));
        x_cat
            .axis_chunks_iter_mut(Axis(1), hi * wi)
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut block)| {
                let x_n = x.index_axis(Axis(0), i);
                block.assign(&x_n.into_shape_with_order((self.c_in, hi * wi)).unwrap());
            });

        let mut dx = Array4::zeros(x.dim());
        dx.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut dx_n)| {
                let dcols_n = dcols_cat.slice(ndarray::s![.., i * hi * wi..(i + 1) * hi * wi]);
                let flat = self.w.dot(&dcols_n); // [c_in, hi*wi]
                let shaped = flat.into_shape_with_order((self.c_in, hi, wi)).unwrap();
                dx_n.assign(&shaped);
            });

        for i in 0..n {
            let dy_n = dy.index_axis(Axis(0), i);
            let flat = dy_n
                .into_shape_with_order((self.c_out, dy.dim().2 * dy.dim().3))
                .unwrap();
            self.db += &flat.sum_axis(Axis(1));
        }
        accumulate_wgrad(&mut self.dw, |ci_range, dwb| {
            let x_rows = x_cat.slice(ndarray::s![ci_range, ..]);
            T::gemm(T::one(), &x_rows, &dcols_cat.t(), T::one(), dwb);
        });
        dx
    }
}

impl<T: Scalar> ParamOwner<T> for ConvTranspose2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<T>) {
        f(
            &format!("{prefix}.w"),
            self.w.as_slice_mut().unwrap(),
            self.dw.as_slice_mut().unwrap(),
        );
        f(
            &format!("{prefix}.b"),
            self.b.as_slice_mut().unwrap(),
            self.db.as_slice_mut().unwrap(),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    // hand-computed 1-D convolution: kernel [1, 2], stride 1, no padding
    #[test]
    fn conv1d_matches_hand_computation() {
        let mut conv = Conv1d::<f64>::new(1, 1, 2, 1, 0, 0, &mut rng());
        conv.w.as_slice_mut().unwrap().copy_from_slice(&[1.0, 2.0]);
        conv.b[0] = 0.5;
        let x = Array::from_shape_vec((1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv.forward(&x, false);
        // y[o] = x[o] + 2 x[o+1] + 0.5
        assert_eq!(
            y.index_axis(Axis(0), 0).index_axis(Axis(0), 0),
            arr1(&[5.5, 8.5, 11.5])
        );
    }

    #[test]
    fn conv1d_strided_padded_lengths() {
        let mut conv = Conv1d::<f64>::new(2, 3, 228, 2, 114, 113, &mut rng());
        let x = Array3::zeros((2, 2, 3200));
        let y = conv.forward(&x, false);
        assert_eq!(y.dim(), (2, 3, 1600));
    }

    // gradient of sum(conv(x)) w.r.t. x equals sum of kernel taps at interior
    #[test]
    fn conv1d_backward_matches_finite_difference() {
        let mut conv = Conv1d::<f64>::new(2, 3, 5, 2, 2, 2, &mut rng());
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let mut x = Array3::zeros((2, 2, 16));
        init_normal(x.as_slice_mut().unwrap(), 1.0, &mut r);
        let y = conv.forward(&x, true);
        let dy = Array3::from_elem(y.dim(), 1.0);
        let dx = conv.backward(&dy);
        // check a few input coordinates by central differences
        for &(n, c, i) in &[(0usize, 0usize, 0usize), (1, 1, 7), (0, 1, 15)] {
            let h = 1e-6;
            let mut conv2 = Conv1d::<f64>::new(2, 3, 5, 2, 2, 2, &mut rng());
            conv2.w.assign(&conv.w);
            conv2.b.assign(&conv.b);
            let mut xp = x.clone();
            xp[[n, c, i]] += h;
            let mut xm = x.clone();
            xm[[n, c, i]] -= h;
            let fp: f64 = conv2.forward(&xp, false).sum();
            let fm: f64 = conv2.forward(&xm, false).sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!((dx[[n, c, i]] - fd).abs() < 1e-6, "at {n},{c},{i}");
        }
    }

    #[test]
    fn conv2d_shapes_for_stride2_k4() {
        let mut conv = Conv2d::<f64>::new(3, 8, (4, 4), (2, 2), (1, 1), &mut rng());
        let x = Array4::zeros((1, 3, 128, 128));
        let y = conv.forward(&x, false);
        assert_eq!(y.dim(), (1, 8, 64, 64));
    }

    // transposed conv k4 s2 p1 doubles spatial size; k4 s1 p0 from 1x1 gives 4x4
    #[test]
    fn conv_transpose_output_sizes() {
        let mut up1 = ConvTranspose2d::<f64>::new(4, 2, 4, 1, 0, &mut rng());
        let y = up1.forward(&Array4::zeros((1, 4, 1, 1)), false);
        assert_eq!(y.dim(), (1, 2, 4, 4));
        let mut up2 = ConvTranspose2d::<f64>::new(2, 2, 4, 2, 1, &mut rng());
        let y = up2.forward(&y, false);
        assert_eq!(y.dim(), (1, 2, 8, 8));
    }

    // conv_transpose must be the adjoint of conv with the same kernel:
    // <conv(x), y> == <x, conv_t(y)>
    #[test]
    fn transpose_is_adjoint_of_conv() {
        let mut r = rng();
        let mut conv = Conv2d::<f64>::new(2, 3, (4, 4), (2, 2), (1, 1), &mut r);
        let mut convt = ConvTranspose2d::<f64>::new(3, 2, 4, 2, 1, &mut r);
        // share the kernel: conv w is [c_out, c_in*k*k]; convt w is [c_in, c_out*k*k]
        for co in 0..3 {
            for ci in 0..2 {
                for ki in 0..4 {
                    for kj in 0..4 {
                        let v = conv.w[[co, (ci * 4 + ki) * 4 + kj]];
                        convt.w[[co, (ci * 4 + ki) * 4 + kj]] = v;
                    }
                }
            }
        }
        // convt maps c_in=3 -> c_out=2 with w [3, 2*16]
        let mut x = Array4::zeros((1, 2, 8, 8));
        let mut y = Array4::zeros((1, 3, 4, 4));
        let mut rr = ChaCha8Rng::seed_from_u64(3);
        init_normal(x.as_slice_mut().unwrap(), 1.0, &mut rr);
        init_normal(y.as_slice_mut().unwrap(), 1.0, &mut rr);
        conv.b.fill(0.0);
        convt.b.fill(0.0);
        let cx = conv.forward(&x, false);
        let cty = convt.forward(&y, false);
        let lhs: f64 = (&cx * &y).sum();
        let rhs: f64 = (&x * &cty).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn grads_accumulate_across_backward_calls() {
        let mut conv = Conv1d::<f64>::new(1, 1, 3, 1, 1, 1, &mut rng());
        let x = Array3::from_elem((1, 1, 8), 1.0);
        let y = conv.forward(&x, true);
        let dy = Array3::from_elem(y.dim(), 1.0);
        conv.backward(&dy);
        let mut first = Array2::zeros((0, 0));
        conv.visit_params("c", &mut |name, _, g| {
            if name == "c.w" {
                first = Array2::from_shape_vec((1, 3), g.to_vec()).unwrap();
            }
        });
        conv.forward(&x, true);
        conv.backward(&dy);
        conv.visit_params("c", &mut |name, _, g| {
            if name == "c.w" {
                for (a, b) in first.iter().zip(g.iter()) {
                    assert!((2.0 * a - b).abs() < 1e-12);
                }
            }
        });
    }
}
