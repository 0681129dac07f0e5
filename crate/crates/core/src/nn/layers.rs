//! Layers with hand-written backward passes.
//!
//! Convolutional activations are stored channel-major as a `C x (B * L)`
//! matrix: column `b * L + t` holds timestamp `t` of sample `b`. This keeps
//! batch normalization a per-row reduction and turns convolution into a
//! single matrix product over an im2col buffer.

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use super::Param;

/// Kaiming-uniform bound for ReLU networks.
fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn kaiming_fill<R: Rng + ?Sized>(param: &mut Param, fan_in: usize, rng: &mut R) {
    let bound = kaiming_bound(fan_in);
    for v in param.value.iter_mut() {
        *v = rng.gen_range(-bound..bound);
    }
}

/// 1-D convolution with "same" padding (`(k - 1) / 2` on the left, the rest
/// on the right).
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Param,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    cols: Option<Array2<f64>>,
    batch: usize,
    len: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let mut weight = Param::zeros(
            format!("{prefix}.weight"),
            vec![out_channels, in_channels, kernel],
        );
        kaiming_fill(&mut weight, in_channels * kernel, rng);
        Self {
            weight,
            bias: Param::zeros(format!("{prefix}.bias"), vec![out_channels]),
            in_channels,
            out_channels,
            kernel,
            cols: None,
            batch: 0,
            len: 0,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn pad_left(&self) -> usize {
        (self.kernel - 1) / 2
    }

    fn im2col(&self, x: ArrayView2<'_, f64>, batch: usize, len: usize) -> Array2<f64> {
        let k = self.kernel;
        let pad = self.pad_left() as isize;
        let mut cols = Array2::<f64>::zeros((self.in_channels * k, batch * len));
        for c in 0..self.in_channels {
            let row_in = x.row(c);
            let src = row_in.as_slice().expect("contiguous activations");
            for j in 0..k {
                let mut row_out = cols.row_mut(c * k + j);
                let dst = row_out.as_slice_mut().expect("contiguous im2col");
                let shift = j as isize - pad;
                for b in 0..batch {
                    let base = b * len;
                    let lo = (-shift).max(0) as usize;
                    let hi = (len as isize - shift).min(len as isize).max(0) as usize;
                    if lo >= hi {
                        continue;
                    }
                    let src_lo = (lo as isize + shift) as usize;
                    dst[base + lo..base + hi]
                        .copy_from_slice(&src[base + src_lo..base + src_lo + (hi - lo)]);
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f64>, batch: usize, len: usize) -> Array2<f64> {
        let k = self.kernel;
        let pad = self.pad_left() as isize;
        let mut dx = Array2::<f64>::zeros((self.in_channels, batch * len));
        for c in 0..self.in_channels {
            let mut row_out = dx.row_mut(c);
            let dst = row_out.as_slice_mut().expect("contiguous gradient");
            for j in 0..k {
                let row_in = dcols.row(c * k + j);
                let src = row_in.as_slice().expect("contiguous im2col gradient");
                let shift = j as isize - pad;
                for b in 0..batch {
                    let base = b * len;
                    let lo = (-shift).max(0) as usize;
                    let hi = (len as isize - shift).min(len as isize).max(0) as usize;
                    if lo >= hi {
                        continue;
                    }
                    let dst_lo = (lo as isize + shift) as usize;
                    for (d, s) in dst[base + dst_lo..base + dst_lo + (hi - lo)]
                        .iter_mut()
                        .zip(&src[base + lo..base + hi])
                    {
                        *d += s;
                    }
                }
            }
        }
        dx
    }

    /// `x` is `C_in x (B * L)`.
    pub fn forward(&mut self, x: ArrayView2<'_, f64>, batch: usize, len: usize) -> Array2<f64> {
        let cols = self.im2col(x, batch, len);
        let w = self.weight.matrix(self.out_channels, self.in_channels * self.kernel);
        let mut y = w.dot(&cols);
        for (mut row, &b) in y.axis_iter_mut(Axis(0)).zip(self.bias.value.iter()) {
            row += b;
        }
        self.cols = Some(cols);
        self.batch = batch;
        self.len = len;
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let cols = self.cols.take().expect("conv backward without forward");
        let rows = self.out_channels;
        let inner = self.in_channels * self.kernel;
        {
            let mut gw = ArrayViewMut2::from_shape((rows, inner), &mut self.weight.grad)
                .expect("weight gradient shape");
            ndarray::linalg::general_mat_mul(1.0, dy, &cols.t(), 1.0, &mut gw);
        }
        for (g, row) in self.bias.grad.iter_mut().zip(dy.axis_iter(Axis(0))) {
            *g += row.sum();
        }
        let w = self.weight.matrix(rows, inner);
        let dcols = w.t().dot(dy);
        self.col2im(&dcols, self.batch, self.len)
    }
}

/// Batch normalization over the `B * L` columns of each channel row.
/// Training mode normalizes with batch statistics and updates the running
/// averages; evaluation mode uses the running averages.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    train: bool,
}

impl BatchNorm1d {
    pub fn new(prefix: &str, channels: usize) -> Self {
        let mut gamma = Param::zeros(format!("{prefix}.gamma"), vec![channels]);
        gamma.value.iter_mut().for_each(|v| *v = 1.0);
        Self {
            gamma,
            beta: Param::zeros(format!("{prefix}.beta"), vec![channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.9,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        let n = x.ncols() as f64;
        let channels = x.nrows();
        let mut y = Array2::<f64>::zeros(x.raw_dim());
        let mut xhat = Array2::<f64>::zeros(x.raw_dim());
        let mut inv_std = Array1::<f64>::zeros(channels);
        for c in 0..channels {
            let row = x.row(c);
            let (mean, var) = if train {
                let mean = row.sum() / n;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let unbiased = if n > 1.0 { var * n / (n - 1.0) } else { var };
                self.running_mean[c] =
                    self.momentum * self.running_mean[c] + (1.0 - self.momentum) * mean;
                self.running_var[c] =
                    self.momentum * self.running_var[c] + (1.0 - self.momentum) * unbiased;
                (mean, var)
            } else {
                (self.running_mean[c], self.running_var[c])
            };
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[c] = istd;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for ((h, o), v) in xhat
                .row_mut(c)
                .iter_mut()
                .zip(y.row_mut(c).iter_mut())
                .zip(row.iter())
            {
                *h = (v - mean) * istd;
                *o = g * *h + b;
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            train,
        });
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let BnCache {
            xhat,
            inv_std,
            train,
        } = self.cache.take().expect("batchnorm backward without forward");
        let channels = dy.nrows();
        let n = dy.ncols() as f64;
        let mut dx = Array2::<f64>::zeros(dy.raw_dim());
        for c in 0..channels {
            let g = self.gamma.value[c];
            let dyr = dy.row(c);
            let xr = xhat.row(c);
            let sum_dy: f64 = dyr.sum();
            let sum_dy_xhat: f64 = dyr.iter().zip(xr.iter()).map(|(a, b)| a * b).sum();
            self.gamma.grad[c] += sum_dy_xhat;
            self.beta.grad[c] += sum_dy;
            let out = dx.row_mut(c);
            if train {
                let k = g * inv_std[c] / n;
                for ((d, &dv), &h) in out.into_iter().zip(dyr.iter()).zip(xr.iter()) {
                    *d = k * (n * dv - sum_dy - h * sum_dy_xhat);
                }
            } else {
                let k = g * inv_std[c];
                for (d, &dv) in out.into_iter().zip(dyr.iter()) {
                    *d = k * dv;
                }
            }
        }
        dx
    }
}

/// In-place ReLU that remembers its activation pattern.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Array2<bool>>,
}

impl Relu {
    pub fn forward(&mut self, mut x: Array2<f64>) -> Array2<f64> {
        let mask = x.map(|&v| v > 0.0);
        x.zip_mut_with(&mask, |v, &keep| {
            if !keep {
                *v = 0.0
            }
        });
        self.mask = Some(mask);
        x
    }

    pub fn backward(&mut self, mut dy: Array2<f64>) -> Array2<f64> {
        let mask = self.mask.take().expect("relu backward without forward");
        dy.zip_mut_with(&mask, |v, &keep| {
            if !keep {
                *v = 0.0
            }
        });
        dy
    }
}

/// Affine layer on row-major batches: `y = x W^T + b` with `x` of shape
/// `B x in`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    in_dim: usize,
    out_dim: usize,
    input: Option<Array2<f64>>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(prefix: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let mut weight = Param::zeros(format!("{prefix}.weight"), vec![out_dim, in_dim]);
        kaiming_fill(&mut weight, in_dim, rng);
        Self {
            weight,
            bias: Param::zeros(format!("{prefix}.bias"), vec![out_dim]),
            in_dim,
            out_dim,
            input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let w = self.weight.matrix(self.out_dim, self.in_dim);
        let mut y = x.dot(&w.t());
        for mut row in y.axis_iter_mut(Axis(0)) {
            row.iter_mut()
                .zip(self.bias.value.iter())
                .for_each(|(v, b)| *v += b);
        }
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let x = self.input.take().expect("linear backward without forward");
        {
            let mut gw = ArrayViewMut2::from_shape((self.out_dim, self.in_dim), &mut self.weight.grad)
                .expect("weight gradient shape");
            ndarray::linalg::general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut gw);
        }
        for (g, col) in self.bias.grad.iter_mut().zip(dy.axis_iter(Axis(1))) {
            *g += col.sum();
        }
        dy.dot(&self.weight.matrix(self.out_dim, self.in_dim))
    }
}

/// Mean over time of each `(channel, sample)` segment: `C x (B * L)` to
/// `B x C`.
pub fn global_avg_pool(x: &Array2<f64>, batch: usize, len: usize) -> Array2<f64> {
    let channels = x.nrows();
    let mut out = Array2::<f64>::zeros((batch, channels));
    for c in 0..channels {
        for b in 0..batch {
            out[[b, c]] = x.slice(s![c, b * len..(b + 1) * len]).sum() / len as f64;
        }
    }
    out
}

pub fn global_avg_pool_backward(dy: &Array2<f64>, len: usize) -> Array2<f64> {
    let (batch, channels) = dy.dim();
    let mut dx = Array2::<f64>::zeros((channels, batch * len));
    let scale = 1.0 / len as f64;
    for c in 0..channels {
        for b in 0..batch {
            dx.slice_mut(s![c, b * len..(b + 1) * len])
                .fill(dy[[b, c]] * scale);
        }
    }
    dx
}
