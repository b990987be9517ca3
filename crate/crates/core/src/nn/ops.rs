//! Pointwise activations, pooling, and the fully connected layer.

use super::{init_normal, ParamFn, ParamOwner, Scalar};
use ndarray::{Array, Array1, Array2, Array4, Axis, Dimension};
use rand::Rng;

/// Leaky rectifier; `slope` scales negative inputs.
pub struct LeakyRelu<T: Scalar, D: Dimension> {
    slope: T,
    mask: Option<Array<bool, D>>,
}

impl<T: Scalar, D: Dimension> LeakyRelu<T, D> {
    pub fn new(slope: f64) -> Self {
        Self {
            slope: T::from_f64(slope),
            mask: None,
        }
    }

    pub fn forward(&mut self, mut x: Array<T, D>, train: bool) -> Array<T, D> {
        if train {
            self.mask = Some(x.mapv(|v| v > T::zero()));
        }
        let s = self.slope;
        x.mapv_inplace(|v| if v > T::zero() { v } else { s * v });
        x
    }

    pub fn backward(&mut self, mut dy: Array<T, D>) -> Array<T, D> {
        let mask = self.mask.take().expect("activation backward without forward");
        let s = self.slope;
        ndarray::Zip::from(&mut dy).and(&mask).for_each(|d, &pos| {
            if !pos {
                *d = *d * s;
            }
        });
        dy
    }
}

/// Plain rectifier.
pub struct Relu<T: Scalar, D: Dimension>(LeakyRelu<T, D>);

impl<T: Scalar, D: Dimension> Relu<T, D> {
    pub fn new() -> Self {
        Self(LeakyRelu::new(0.0))
    }

    pub fn forward(&mut self, x: Array<T, D>, train: bool) -> Array<T, D> {
        self.0.forward(x, train)
    }

    pub fn backward(&mut self, dy: Array<T, D>) -> Array<T, D> {
        self.0.backward(dy)
    }
}

impl<T: Scalar, D: Dimension> Default for Relu<T, D> {
    fn default() -> Self {
        Self::new()
    }
}

/// Logistic squashing to (0, 1).
pub struct Sigmoid<T: Scalar, D: Dimension> {
    out: Option<Array<T, D>>,
}

impl<T: Scalar, D: Dimension> Sigmoid<T, D> {
    pub fn new() -> Self {
        Self { out: None }
    }

    pub fn forward(&mut self, mut x: Array<T, D>, train: bool) -> Array<T, D> {
        x.mapv_inplace(|v| T::one() / (T::one() + (-v).exp()));
        if train {
            self.out = Some(x.clone());
        }
        x
    }

    pub fn backward(&mut self, mut dy: Array<T, D>) -> Array<T, D> {
        let y = self.out.take().expect("sigmoid backward without forward");
        ndarray::Zip::from(&mut dy).and(&y).for_each(|d, &yv| {
            *d = *d * yv * (T::one() - yv);
        });
        dy
    }
}

impl<T: Scalar, D: Dimension> Default for Sigmoid<T, D> {
    fn default() -> Self {
        Self::new()
    }
}

/// Fully connected layer on `[n, in]`.
pub struct Linear<T: Scalar> {
    w: Array2<T>, // [out, in]
    b: Array1<T>,
    dw: Array2<T>,
    db: Array1<T>,
    cache_x: Option<Array2<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let mut w = Array2::zeros((d_out, d_in));
        init_normal(w.as_slice_mut().unwrap(), 0.02, rng);
        Self {
            w,
            b: Array1::zeros(d_out),
            dw: Array2::zeros((d_out, d_in)),
            db: Array1::zeros(d_out),
            cache_x: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<T>, train: bool) -> Array2<T> {
        assert_eq!(x.dim().1, self.w.dim().1, "linear input width");
        let mut y = x.dot(&self.w.t());
        for mut row in y.outer_iter_mut() {
            row += &self.b;
        }
        if train {
            self.cache_x = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Array2<T>) -> Array2<T> {
        let x = self.cache_x.take().expect("linear backward without forward");
        T::gemm(
            T::one(),
            &dy.t(),
            &x.view(),
            T::one(),
            &mut self.dw.view_mut(),
        );
        self.db += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }
}

impl<T: Scalar> ParamOwner<T> for Linear<T> {
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

/// 2×2 max pooling with stride 2; ties keep the first maximum.
pub struct MaxPool2d<T: Scalar> {
    argmax: Option<Array4<u8>>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> MaxPool2d<T> {
    pub fn new() -> Self {
        Self {
            argmax: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "maxpool needs even sizes");
        let (ho, wo) = (h / 2, w / 2);
        let mut y = Array4::zeros((n, c, ho, wo));
        let mut arg = Array4::zeros((n, c, ho, wo));
        for ni in 0..n {
            for ci in 0..c {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut best = x[[ni, ci, oh * 2, ow * 2]];
                        let mut which = 0u8;
                        for (t, (di, dj)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                            let v = x[[ni, ci, oh * 2 + di, ow * 2 + dj]];
                            if v > best {
                                best = v;
                                which = t as u8;
                            }
                        }
                        y[[ni, ci, oh, ow]] = best;
                        arg[[ni, ci, oh, ow]] = which;
                    }
                }
            }
        }
        if train {
            self.argmax = Some(arg);
        }
        y
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let arg = self.argmax.take().expect("maxpool backward without forward");
        let (n, c, ho, wo) = dy.dim();
        let mut dx = Array4::zeros((n, c, ho * 2, wo * 2));
        for ni in 0..n {
            for ci in 0..c {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let which = arg[[ni, ci, oh, ow]] as usize;
                        let (di, dj) = (which / 2, which % 2);
                        dx[[ni, ci, oh * 2 + di, ow * 2 + dj]] = dy[[ni, ci, oh, ow]];
                    }
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Default for MaxPool2d<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adaptive average pooling on `[n, c, h, w]` to a target `(h, w)`, with the
/// overlapping-bin edge rule of the usual adaptive pooling.
pub struct AdaptiveAvgPool<T: Scalar> {
    out_h: usize,
    out_w: usize,
    cache_dim: Option<(usize, usize, usize, usize)>,
    _marker: std::marker::PhantomData<T>,
}

fn bin(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

impl<T: Scalar> AdaptiveAvgPool<T> {
    pub fn new(out_h: usize, out_w: usize) -> Self {
        Self {
            out_h,
            out_w,
            cache_dim: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        let mut y = Array4::zeros((n, c, self.out_h, self.out_w));
        for ni in 0..n {
            for ci in 0..c {
                for oh in 0..self.out_h {
                    let (h0, h1) = bin(oh, h, self.out_h);
                    for ow in 0..self.out_w {
                        let (w0, w1) = bin(ow, w, self.out_w);
                        let mut acc = T::zero();
                        for i in h0..h1 {
                            for j in w0..w1 {
                                acc += x[[ni, ci, i, j]];
                            }
                        }
                        y[[ni, ci, oh, ow]] =
                            acc / T::from_f64(((h1 - h0) * (w1 - w0)) as f64);
                    }
                }
            }
        }
        if train {
            self.cache_dim = Some((n, c, h, w));
        }
        y
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let (n, c, h, w) = self.cache_dim.take().expect("pool backward without forward");
        let mut dx = Array4::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                for oh in 0..self.out_h {
                    let (h0, h1) = bin(oh, h, self.out_h);
                    for ow in 0..self.out_w {
                        let (w0, w1) = bin(ow, w, self.out_w);
                        let share =
                            dy[[ni, ci, oh, ow]] / T::from_f64(((h1 - h0) * (w1 - w0)) as f64);
                        for i in h0..h1 {
                            for j in w0..w1 {
                                dx[[ni, ci, i, j]] += share;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}
