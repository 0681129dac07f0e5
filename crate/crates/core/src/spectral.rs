//! Real-input discrete Fourier transform on the half spectrum.
//!
//! Forward transforms are unnormalized, `X(m) = sum_n x(n) exp(-2 pi i m n / L)`,
//! and the inverse carries the `1/L` factor. Only the first `F = L/2 + 1`
//! components are stored; the remaining ones follow from conjugate symmetry
//! `X(L - m) = conj(X(m))` and are rebuilt on demand.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Number of stored frequency components for a real signal of length `len`.
pub fn num_components(len: usize) -> usize {
    len / 2 + 1
}

/// An `L x D` real-valued series with an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Array2<f64>,
    label: Option<usize>,
}

impl TimeSeries {
    pub fn new(values: Array2<f64>, label: Option<usize>) -> Result<Self> {
        let (len, channels) = values.dim();
        if len < 2 {
            return Err(Error::shape("time series length", ">= 2", len));
        }
        if channels < 1 {
            return Err(Error::shape("time series channels", ">= 1", channels));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "time series",
                index,
            });
        }
        Ok(Self { values, label })
    }

    /// Builds a single-channel series.
    pub fn univariate(values: &[f64], label: Option<usize>) -> Result<Self> {
        let arr = Array2::from_shape_vec((values.len(), 1), values.to_vec())
            .expect("column vector shape");
        Self::new(arr, label)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn set_label(&mut self, label: Option<usize>) {
        self.label = label;
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn channel(&self, d: usize) -> ArrayView1<'_, f64> {
        self.values.column(d)
    }
}

/// Half spectrum of a real series: `F x D` complex components.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: Array2<Complex64>,
    origin_length: usize,
}

impl Spectrum {
    /// Validates the component count against `origin_length` and that the
    /// DC (and, for even lengths, Nyquist) components are real.
    pub fn new(values: Array2<Complex64>, origin_length: usize) -> Result<Self> {
        if origin_length < 2 {
            return Err(Error::shape("spectrum origin length", ">= 2", origin_length));
        }
        let expected = num_components(origin_length);
        if values.nrows() != expected {
            return Err(Error::shape(
                "spectrum components",
                format!("{expected} for L={origin_length}"),
                values.nrows(),
            ));
        }
        if values.ncols() < 1 {
            return Err(Error::shape("spectrum channels", ">= 1", 0));
        }
        if let Some(index) = values
            .iter()
            .position(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::NonFinite {
                what: "spectrum",
                index,
            });
        }
        let scale = values.iter().fold(1.0f64, |acc, c| acc.max(c.norm()));
        let mut real_rows = vec![0];
        if origin_length % 2 == 0 {
            real_rows.push(expected - 1);
        }
        for row in real_rows {
            for c in values.row(row) {
                if c.im.abs() > 1e-9 * scale {
                    return Err(Error::InvalidArgument(format!(
                        "spectrum component {row} must be real, has imaginary part {}",
                        c.im
                    )));
                }
            }
        }
        Ok(Self {
            values,
            origin_length,
        })
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    /// Callers must keep DC (and Nyquist for even `L`) real.
    pub(crate) fn values_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.values
    }

    pub fn origin_length(&self) -> usize {
        self.origin_length
    }

    pub fn num_components(&self) -> usize {
        self.values.nrows()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    /// Multiplies every channel of component `m` by `weights[m]`.
    pub fn scaled(&self, weights: &[f64]) -> Result<Spectrum> {
        if weights.len() != self.num_components() {
            return Err(Error::shape(
                "spectral weights",
                self.num_components(),
                weights.len(),
            ));
        }
        let mut values = self.values.clone();
        for (mut row, &w) in values.axis_iter_mut(Axis(0)).zip(weights) {
            row.mapv_inplace(|c| c * w);
        }
        Ok(Spectrum {
            values,
            origin_length: self.origin_length,
        })
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|plans| {
        plans
            .borrow_mut()
            .entry((len, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// Full-length DFT of one real channel.
fn full_dft_channel(channel: ArrayView1<'_, f64>) -> Vec<Complex64> {
    let len = channel.len();
    let mut buf: Vec<Complex64> = channel.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan(len, false).process(&mut buf);
    buf
}

/// Half-spectrum DFT of every channel of `x`.
pub fn forward_rdft(x: &TimeSeries) -> Spectrum {
    forward_rdft_array(x.values()).expect("validated time series")
}

/// Same as [`forward_rdft`] on a raw `L x D` array.
pub fn forward_rdft_array(x: &Array2<f64>) -> Result<Spectrum> {
    let (len, channels) = x.dim();
    if len < 2 || channels < 1 {
        return Err(Error::shape("rdft input", "L >= 2, D >= 1", format!("{len}x{channels}")));
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "rdft input",
            index,
        });
    }
    let f = num_components(len);
    let mut out = Array2::<Complex64>::zeros((f, channels));
    for d in 0..channels {
        let full = full_dft_channel(x.column(d));
        for m in 0..f {
            out[[m, d]] = full[m];
        }
        out[[0, d]].im = 0.0;
        if len % 2 == 0 {
            out[[f - 1, d]].im = 0.0;
        }
    }
    Ok(Spectrum {
        values: out,
        origin_length: len,
    })
}

/// Rebuilds all `L` components from the half spectrum via
/// `X(L - m) = conj(X(m))`.
pub fn full_spectrum(spec: &Spectrum) -> Array2<Complex64> {
    extend_conjugate(spec, 1.0)
}

fn extend_conjugate(spec: &Spectrum, mirror_sign: f64) -> Array2<Complex64> {
    let len = spec.origin_length;
    let f = spec.num_components();
    let channels = spec.channels();
    let mut full = Array2::<Complex64>::zeros((len, channels));
    for d in 0..channels {
        for m in 0..f {
            full[[m, d]] = spec.values[[m, d]];
        }
        for m in f..len {
            full[[m, d]] = spec.values[[len - m, d]].conj() * mirror_sign;
        }
    }
    full
}

/// Real reconstruction with the `1/L` normalization.
pub fn inverse_rdft(spec: &Spectrum) -> TimeSeries {
    TimeSeries {
        values: inverse_rdft_array(spec, 1.0),
        label: None,
    }
}

/// Inverse transform with a configurable sign on the mirrored half. A sign
/// other than `+1` is wrong and only exists so the property suite can prove
/// it detects a broken inverse.
pub(crate) fn inverse_rdft_array(spec: &Spectrum, mirror_sign: f64) -> Array2<f64> {
    let len = spec.origin_length;
    let full = extend_conjugate(spec, mirror_sign);
    let inv = plan(len, true);
    let scale = 1.0 / len as f64;
    let mut out = Array2::<f64>::zeros((len, spec.channels()));
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for d in 0..spec.channels() {
        for (b, v) in buf.iter_mut().zip(full.column(d)) {
            *b = *v;
        }
        inv.process(&mut buf);
        for n in 0..len {
            out[[n, d]] = buf[n].re * scale;
        }
    }
    out
}

/// Multiplicity of stored component `m` in the full spectrum: 1 for DC and
/// (even `L`) Nyquist, 2 for every component that has a mirrored partner.
pub fn pair_weight(m: usize, len: usize) -> f64 {
    if m == 0 || (len % 2 == 0 && m == len / 2) {
        1.0
    } else {
        2.0
    }
}

/// Adjoint of the inverse transform restricted to real per-component gains.
///
/// For `y = inverse(w * X)` and an upstream gradient `g = dL/dy`, the gradient
/// with respect to the gain `w[m]` is `sum_d Re(X[m,d] * conj(A[m,d]))` where
/// `A` is the array returned here.
pub fn inverse_rdft_adjoint(upstream: &Array2<f64>) -> Result<Array2<Complex64>> {
    let spec = forward_rdft_array(upstream)?;
    let len = upstream.nrows();
    let mut adj = spec.values;
    for (m, mut row) in adj.axis_iter_mut(Axis(0)).enumerate() {
        let w = pair_weight(m, len) / len as f64;
        row.mapv_inplace(|c| c * w);
    }
    Ok(adj)
}

/// Per-component energy summed over channels. Components with a mirrored
/// partner are counted twice so the total equals
/// `(1/L) sum_{m=0}^{L-1} |X(m)|^2`, the time-domain energy.
pub fn energy_spectrum(spec: &Spectrum) -> Array1<f64> {
    let len = spec.origin_length;
    let inv_len = 1.0 / len as f64;
    Array1::from_iter(spec.values.axis_iter(Axis(0)).enumerate().map(|(m, row)| {
        pair_weight(m, len) * inv_len * row.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }))
}

/// Hermitian inner product `<u_m, u_q> = sum_n exp(2 pi i (m - q) n / L)`
/// of two Fourier basis vectors.
pub fn basis_inner_product(m: usize, q: usize, len: usize) -> Result<Complex64> {
    if len == 0 || m >= len || q >= len {
        return Err(Error::InvalidArgument(format!(
            "basis indices ({m}, {q}) out of range for L={len}"
        )));
    }
    let diff = m as f64 - q as f64;
    Ok((0..len)
        .map(|n| Complex64::from_polar(1.0, 2.0 * PI * diff * n as f64 / len as f64))
        .sum())
}

/// Circular convolution `(a * x)(n) = sum_k a(k) x((n - k) mod L)` per channel.
pub fn circular_convolve(kernel: &[f64], x: &TimeSeries) -> Result<TimeSeries> {
    let len = x.len();
    if kernel.len() != len {
        return Err(Error::shape("convolution kernel", len, kernel.len()));
    }
    let mut out = Array2::<f64>::zeros((len, x.channels()));
    for d in 0..x.channels() {
        let col = x.channel(d);
        for n in 0..len {
            let mut acc = 0.0;
            for (k, &a) in kernel.iter().enumerate() {
                acc += a * col[(n + len - k) % len];
            }
            out[[n, d]] = acc;
        }
    }
    TimeSeries::new(out, x.label())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let len = x.len();
        (0..len)
            .map(|m| {
                x.iter()
                    .enumerate()
                    .map(|(n, &v)| {
                        v * Complex64::from_polar(1.0, -2.0 * PI * (m * n) as f64 / len as f64)
                    })
                    .sum()
            })
            .collect()
    }

    fn random_series(rng: &mut ChaCha8Rng, len: usize, channels: usize) -> TimeSeries {
        let v = Array2::from_shape_fn((len, channels), |_| rng.gen_range(-1.0..1.0));
        TimeSeries::new(v, None).unwrap()
    }

    #[test]
    fn constant_signal_has_only_dc() {
        let x = TimeSeries::univariate(&[1.5; 8], None).unwrap();
        let spec = forward_rdft(&x);
        assert_eq!(spec.num_components(), 5);
        assert!((spec.values()[[0, 0]] - Complex64::new(12.0, 0.0)).norm() < 1e-12);
        for m in 1..5 {
            assert!(spec.values()[[m, 0]].norm() < 1e-12);
        }
    }

    #[test]
    fn cosine_lands_on_bin_one() {
        let x: Vec<f64> = (0..16)
            .map(|n| (2.0 * PI * n as f64 / 16.0).cos())
            .collect();
        let spec = forward_rdft(&TimeSeries::univariate(&x, None).unwrap());
        for m in 0..9 {
            let expected = if m == 1 { 8.0 } else { 0.0 };
            assert!((spec.values()[[m, 0]] - Complex64::new(expected, 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn matches_naive_dft_odd_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_series(&mut rng, 37, 3);
        let spec = forward_rdft(&x);
        assert_eq!(spec.num_components(), 19);
        for d in 0..3 {
            let col: Vec<f64> = x.channel(d).to_vec();
            let naive = naive_dft(&col);
            for m in 0..19 {
                assert!((spec.values()[[m, d]] - naive[m]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn inverse_of_dc_only_spectrum() {
        let mut v = Array2::<Complex64>::zeros((5, 1));
        v[[0, 0]] = Complex64::new(8.0 * 0.25, 0.0);
        let x = inverse_rdft(&Spectrum::new(v, 8).unwrap());
        for n in 0..8 {
            assert!((x.values()[[n, 0]] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn spectrum_rejects_bad_component_count() {
        let v = Array2::<Complex64>::zeros((4, 1));
        assert!(matches!(Spectrum::new(v, 8), Err(Error::Shape { .. })));
    }

    #[test]
    fn spectrum_rejects_complex_nyquist() {
        let mut v = Array2::<Complex64>::zeros((5, 1));
        v[[4, 0]] = Complex64::new(1.0, 0.5);
        assert!(Spectrum::new(v.clone(), 8).is_err());
        // for odd L the last component is not Nyquist and may be complex
        let mut w = Array2::<Complex64>::zeros((5, 1));
        w[[4, 0]] = Complex64::new(1.0, 0.5);
        assert!(Spectrum::new(w, 9).is_ok());
    }

    #[test]
    fn rejects_non_finite_input() {
        let v = Array2::from_shape_vec((3, 1), vec![1.0, f64::NAN, 0.0]).unwrap();
        assert!(matches!(
            TimeSeries::new(v.clone(), None),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(forward_rdft_array(&v).is_err());
    }

    #[test]
    fn impulse_energy_matches_time_domain() {
        let mut x = vec![0.0; 8];
        x[0] = 1.0;
        let e = energy_spectrum(&forward_rdft(&TimeSeries::univariate(&x, None).unwrap()));
        assert!((e.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_signal_has_zero_energy() {
        let e = energy_spectrum(&forward_rdft(
            &TimeSeries::univariate(&[0.0; 10], None).unwrap(),
        ));
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cosine_energy_is_concentrated() {
        let x: Vec<f64> = (0..64)
            .map(|n| (2.0 * PI * 2.0 * n as f64 / 64.0).cos())
            .collect();
        let e = energy_spectrum(&forward_rdft(&TimeSeries::univariate(&x, None).unwrap()));
        let time_energy: f64 = x.iter().map(|v| v * v).sum();
        assert!((e[2] - time_energy).abs() < 1e-9);
        for (m, &v) in e.iter().enumerate() {
            if m != 2 {
                assert!(v < 1e-12, "bin {m} has energy {v}");
            }
        }
    }

    #[test]
    fn basis_inner_products() {
        assert!((basis_inner_product(3, 3, 16).unwrap() - Complex64::new(16.0, 0.0)).norm() < 1e-12);
        assert!(basis_inner_product(1, 3, 16).unwrap().norm() < 1e-12);
        assert!((basis_inner_product(0, 0, 5).unwrap() - Complex64::new(5.0, 0.0)).norm() < 1e-12);
        assert!(basis_inner_product(5, 0, 5).is_err());
    }

    #[test]
    fn convolution_identity_and_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_series(&mut rng, 12, 2);
        let mut impulse = vec![0.0; 12];
        impulse[0] = 1.0;
        let y = circular_convolve(&impulse, &x).unwrap();
        assert!((y.values() - x.values()).iter().all(|v| v.abs() < 1e-15));

        let y = circular_convolve(&[1.0; 12], &x).unwrap();
        for d in 0..2 {
            let total: f64 = x.channel(d).sum();
            for n in 0..12 {
                assert!((y.values()[[n, d]] - total).abs() < 1e-12);
            }
        }
        assert!(circular_convolve(&[1.0; 11], &x).is_err());
    }

    #[test]
    fn convolution_theorem_full_spectra() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_series(&mut rng, 12, 1);
        let a: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = circular_convolve(&a, &x).unwrap();
        let fy = naive_dft(&y.channel(0).to_vec());
        let fa = naive_dft(&a);
        let fx = naive_dft(&x.channel(0).to_vec());
        for m in 0..12 {
            assert!((fy[m] - fa[m] * fx[m]).norm() < 1e-9);
        }
    }

    #[test]
    fn adjoint_matches_inner_product_identity() {
        // <inverse(w * X), g> must equal sum_m w[m] * Re(X[m] conj(A[m]))
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for len in [9usize, 16] {
            let x = random_series(&mut rng, len, 2);
            let g = Array2::from_shape_fn((len, 2), |_| rng.gen_range(-1.0..1.0));
            let spec = forward_rdft(&x);
            let w: Vec<f64> = (0..spec.num_components()).map(|_| rng.gen_range(0.0..2.0)).collect();
            let y = inverse_rdft(&spec.scaled(&w).unwrap());
            let lhs: f64 = (y.values() * &g).sum();
            let adj = inverse_rdft_adjoint(&g).unwrap();
            let mut rhs = 0.0;
            for m in 0..spec.num_components() {
                for d in 0..2 {
                    rhs += w[m] * (spec.values()[[m, d]] * adj[[m, d]].conj()).re;
                }
            }
            assert!((lhs - rhs).abs() < 1e-10, "L={len}: {lhs} vs {rhs}");
        }
    }
}
