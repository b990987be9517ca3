//! Batch normalization over `[n, c, l]` (and `[n, c, h, w]` via reshape).

use super::{ParamFn, ParamOwner, Scalar};
use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array3, Array4, Axis};

/// Per-channel batch normalization with running statistics for eval mode.
pub struct BatchNorm<T: Scalar> {
    gamma: Array1<T>,
    beta: Array1<T>,
    dgamma: Array1<T>,
    dbeta: Array1<T>,
    running_mean: Array1<T>,
    running_var: Array1<T>,
    momentum: T,
    eps: T,
    cache: Option<(Array3<T>, Array1<T>)>, // (xhat, inv_std)
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            dgamma: Array1::zeros(channels),
            dbeta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: T::from_f64(0.1),
            eps: T::from_f64(1e-5),
            cache: None,
        }
    }

    pub fn forward3(&mut self, x: &Array3<T>, train: bool) -> Array3<T> {
        let (n, c, l) = x.dim();
        assert_eq!(c, self.gamma.len(), "batchnorm channels");
        let m = n * l;
        let mut y = Array3::zeros((n, c, l));
        if train {
            let mut xhat = Array3::zeros((n, c, l));
            let mut inv_std = Array1::zeros(c);
            let mut means = Array1::zeros(c);
            // per-channel statistics; channels are independent so this
            // parallelizes without changing any accumulation order
            ndarray::Zip::indexed(&mut means)
                .and(&mut inv_std)
                .par_for_each(|ch, mean_slot, inv_slot| {
                    let xc = x.index_axis(Axis(1), ch);
                    let mut sum = T::zero();
                    for &v in xc.iter() {
                        sum += v;
                    }
                    let mean = sum / T::from_f64(m as f64);
                    let mut var = T::zero();
                    for &v in xc.iter() {
                        let d = v - mean;
                        var += d * d;
                    }
                    let var = var / T::from_f64(m as f64);
                    *mean_slot = mean;
                    *inv_slot = T::one() / (var + self.eps).sqrt();
                });
            y.axis_iter_mut(Axis(1))
                .into_par_iter()
                .zip(xhat.axis_iter_mut(Axis(1)).into_par_iter())
                .enumerate()
                .for_each(|(ch, (mut y_c, mut xhat_c))| {
                    let xc = x.index_axis(Axis(1), ch);
                    let (mean, istd) = (means[ch], inv_std[ch]);
                    let (g, b) = (self.gamma[ch], self.beta[ch]);
                    ndarray::Zip::from(&mut y_c)
                        .and(&mut xhat_c)
                        .and(&xc)
                        .for_each(|yv, hv, &xv| {
                            let h = (xv - mean) * istd;
                            *hv = h;
                            *yv = g * h + b;
                        });
                });
            // running stats use the unbiased variance, as eval-mode consumers expect
            let one = T::one();
            let unbias = if m > 1 {
                T::from_f64(m as f64 / (m - 1) as f64)
            } else {
                one
            };
            for ch in 0..c {
                let var = one / (inv_std[ch] * inv_std[ch]) - self.eps;
                self.running_mean[ch] =
                    (one - self.momentum) * self.running_mean[ch] + self.momentum * means[ch];
                self.running_var[ch] =
                    (one - self.momentum) * self.running_var[ch] + self.momentum * var * unbias;
            }
            self.cache = Some((xhat, inv_std));
        } else {
            y.axis_iter_mut(Axis(1))
                .into_par_iter()
                .enumerate()
                .for_each(|(ch, mut y_c)| {
                    let xc = x.index_axis(Axis(1), ch);
                    let istd = T::one() / (self.running_var[ch] + self.eps).sqrt();
                    let (mean, g, b) = (self.running_mean[ch], self.gamma[ch], self.beta[ch]);
                    ndarray::Zip::from(&mut y_c).and(&xc).for_each(|yv, &xv| {
                        *yv = g * (xv - mean) * istd + b;
                    });
                });
        }
        y
    }

    pub fn backward3(&mut self, dy: &Array3<T>) -> Array3<T> {
        let (xhat, inv_std) = self.cache.take().expect("batchnorm backward without forward");
        let (n, c, l) = dy.dim();
        let m = T::from_f64((n * l) as f64);
        let mut dx = Array3::zeros((n, c, l));
        let mut dgamma = Array1::zeros(c);
        let mut dbeta = Array1::zeros(c);
        ndarray::Zip::indexed(&mut dgamma)
            .and(&mut dbeta)
            .par_for_each(|ch, dg_slot, db_slot| {
                let dy_c = dy.index_axis(Axis(1), ch);
                let xhat_c = xhat.index_axis(Axis(1), ch);
                let mut dg = T::zero();
                let mut db = T::zero();
                for (&d, &h) in dy_c.iter().zip(xhat_c.iter()) {
                    dg += d * h;
                    db += d;
                }
                *dg_slot = dg;
                *db_slot = db;
            });
        dx.axis_iter_mut(Axis(1))
            .into_par_iter()
            .enumerate()
            .for_each(|(ch, mut dx_c)| {
                let dy_c = dy.index_axis(Axis(1), ch);
                let xhat_c = xhat.index_axis(Axis(1), ch);
                let scale = self.gamma[ch] * inv_std[ch];
                let (sum_dy, sum_dyh) = (dbeta[ch], dgamma[ch]);
                ndarray::Zip::from(&mut dx_c)
                    .and(&dy_c)
                    .and(&xhat_c)
                    .for_each(|dxv, &dyv, &hv| {
                        *dxv = scale * (dyv - sum_dy / m - hv * sum_dyh / m);
                    });
            });
        self.dgamma += &dgamma;
        self.dbeta += &dbeta;
        dx
    }

    pub fn forward4(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        let flat = x
            .view()
            .into_shape_with_order((n, c, h * w))
            .expect("standard layout");
        let y = self.forward3(&flat.to_owned(), train);
        y.into_shape_with_order((n, c, h, w)).unwrap()
    }

    pub fn backward4(&mut self, dy: &Array4<T>) -> Array4<T> {
        let (n, c, h, w) = dy.dim();
        let flat = dy
            .view()
            .into_shape_with_order((n, c, h * w))
            .expect("standard layout");
        let dx = self.backward3(&flat.to_owned());
        dx.into_shape_with_order((n, c, h, w)).unwrap()
    }

    /// Running statistics, saved in checkpoints but not touched by the
    /// optimizer.
    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        f(
            &format!("{prefix}.running_mean"),
            self.running_mean.as_slice_mut().unwrap(),
        );
        f(
            &format!("{prefix}.running_var"),
            self.running_var.as_slice_mut().unwrap(),
        );
    }
}

impl<T: Scalar> ParamOwner<T> for BatchNorm<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<T>) {
        f(
            &format!("{prefix}.gamma"),
            self.gamma.as_slice_mut().unwrap(),
            self.dgamma.as_slice_mut().unwrap(),
        );
        f(
            &format!("{prefix}.beta"),
            self.beta.as_slice_mut().unwrap(),
            self.dbeta.as_slice_mut().unwrap(),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn train_mode_normalizes_each_channel() {
        let mut bn = BatchNorm::<f64>::new(2);
        let mut x = Array3::zeros((2, 2, 3));
        for (i, v) in x.iter_mut().enumerate() {
            *v = i as f64;
        }
        let y = bn.forward3(&x, true);
        for ch in 0..2 {
            let yc = y.index_axis(Axis(1), ch);
            let mean: f64 = yc.iter().sum::<f64>() / 6.0;
            let var: f64 = yc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_mode_is_deterministic_and_stat_free() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = Array3::from_shape_vec((1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        bn.forward3(&x, true);
        let rm_before = bn.running_mean.clone();
        let a = bn.forward3(&x, false);
        let b = bn.forward3(&x, false);
        assert_eq!(a, b);
        assert_eq!(bn.running_mean, rm_before);
    }
}
