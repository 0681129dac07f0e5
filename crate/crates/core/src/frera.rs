//! Learned frequency-domain view generator.
//!
//! A single importance vector `s` (one score per stored frequency component,
//! shared by all channels and samples) drives two independent edits of the
//! spectrum of an anchor:
//!
//! * a relaxed Bernoulli mask `w_crit` sampled with the Gumbel-sigmoid trick,
//!   which keeps the components the encoder depends on;
//! * a deterministic distortion `w_dist` that rescales the components scored
//!   below a data-driven threshold by `|s_i| / delta_s`.
//!
//! The view is `inverse((w_crit + w_dist) * forward(x))`. Gradients reach `s`
//! only through `w_crit`; `w_dist` is treated as a constant.

use ndarray::Array2;
use num_complex::Complex64;
use rand::distributions::Open01;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{self, Spectrum, TimeSeries};

/// Standard deviation of the initial scores.
pub const INIT_STD: f64 = 0.01;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (1.0 - p).ln()
}

/// Trainable per-component importance scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    scores: Vec<f64>,
}

impl ImportanceVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidArgument("importance vector is empty".into()));
        }
        if let Some(index) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "importance vector",
                index,
            });
        }
        Ok(Self { scores })
    }

    /// Draws i.i.d. `N(0, 0.01^2)` scores for series of length `len`.
    pub fn init<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let scores = (0..spectral::num_components(len))
            .map(|_| normal.sample(rng))
            .collect();
        Self { scores }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn scores_mut(&mut self) -> &mut [f64] {
        &mut self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Indices of the `k` largest scores, highest first.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }
}

/// Relaxed Bernoulli mask over frequency components.
#[derive(Debug, Clone, PartialEq)]
pub struct CritMask {
    weights: Vec<f64>,
    noise: Vec<f64>,
    tau_w: f64,
}

// Largest f64 strictly below 1.
const ONE_MINUS: f64 = 1.0 - f64::EPSILON / 2.0;

impl CritMask {
    /// A fixed mask with no associated noise, for inspection and tests.
    /// Its derivative is reported as zero.
    pub fn fixed(weights: Vec<f64>) -> Self {
        Self {
            noise: vec![f64::NAN; weights.len()],
            weights,
            tau_w: f64::INFINITY,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The uniform draws the mask was built from.
    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn tau_w(&self) -> f64 {
        self.tau_w
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `d w_i / d s_i = w_i (1 - w_i) / tau_w`.
    pub fn derivative(&self) -> Vec<f64> {
        self.weights
            .iter()
            .map(|&w| w * (1.0 - w) / self.tau_w)
            .collect()
    }

    /// Hard 0/1 version thresholded at 0.5, for inspection only.
    pub fn hardened(&self) -> Vec<f64> {
        self.weights
            .iter()
            .map(|&w| if w > 0.5 { 1.0 } else { 0.0 })
            .collect()
    }
}

fn check_tau_w(tau_w: f64) -> Result<()> {
    if !(tau_w > 0.0) || !tau_w.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "mask temperature must be positive and finite, got {tau_w}"
        )));
    }
    Ok(())
}

/// Gumbel-sigmoid sample written exactly as
/// `sigmoid((log eps - log(1 - eps) + log(sigmoid(s) / (1 - sigmoid(s)))) / tau_w)`.
pub fn gumbel_sigmoid_literal(score: f64, eps: f64, tau_w: f64) -> f64 {
    let p = sigmoid(score);
    sigmoid((eps.ln() - (1.0 - eps).ln() + (p / (1.0 - p)).ln()) / tau_w)
}

/// Simplified form using `log(sigmoid(s) / (1 - sigmoid(s))) = s`.
pub fn gumbel_sigmoid(score: f64, eps: f64, tau_w: f64) -> f64 {
    sigmoid((logit(eps) + score) / tau_w)
}

/// Builds the mask from given uniform draws `noise` (each in (0, 1)).
pub fn crit_mask_from_noise(s: &ImportanceVector, noise: &[f64], tau_w: f64) -> Result<CritMask> {
    check_tau_w(tau_w)?;
    if noise.len() != s.len() {
        return Err(Error::shape("mask noise", s.len(), noise.len()));
    }
    if let Some(i) = noise.iter().position(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "mask noise {} at index {i} is outside (0, 1)",
            noise[i]
        )));
    }
    let weights = s
        .scores()
        .iter()
        .zip(noise)
        .map(|(&score, &eps)| gumbel_sigmoid(score, eps, tau_w).clamp(f64::MIN_POSITIVE, ONE_MINUS))
        .collect();
    Ok(CritMask {
        weights,
        noise: noise.to_vec(),
        tau_w,
    })
}

/// Draws fresh uniform noise for every component and builds the mask.
pub fn sample_crit_mask<R: Rng + ?Sized>(
    s: &ImportanceVector,
    tau_w: f64,
    rng: &mut R,
) -> Result<CritMask> {
    check_tau_w(tau_w)?;
    let noise: Vec<f64> = (0..s.len()).map(|_| rng.sample(Open01)).collect();
    crit_mask_from_noise(s, &noise, tau_w)
}

/// Statistic of `s` that sets the unimportance threshold `min(0, stat(s))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    #[default]
    Mean,
    Median,
    MeanPlusStd,
}

impl ThresholdMode {
    pub fn statistic(self, values: &[f64]) -> f64 {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        match self {
            ThresholdMode::Mean => mean,
            ThresholdMode::Median => {
                let mut sorted = values.to_vec();
                sorted.sort_by(f64::total_cmp);
                let mid = sorted.len() / 2;
                if sorted.len() % 2 == 0 {
                    0.5 * (sorted[mid - 1] + sorted[mid])
                } else {
                    sorted[mid]
                }
            }
            ThresholdMode::MeanPlusStd => {
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                mean + var.sqrt()
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdMode::Mean => "mean",
            ThresholdMode::Median => "median",
            ThresholdMode::MeanPlusStd => "mean_plus_std",
        }
    }
}

impl std::str::FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(ThresholdMode::Mean),
            "median" => Ok(ThresholdMode::Median),
            "mean_plus_std" | "mean+std" => Ok(ThresholdMode::MeanPlusStd),
            other => Err(Error::InvalidArgument(format!(
                "unknown threshold mode '{other}' (expected mean, median or mean_plus_std)"
            ))),
        }
    }
}

/// Non-negative gains applied to the unimportant components. Constant with
/// respect to `s` for the purpose of differentiation.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionVector {
    weights: Vec<f64>,
    unimportant: Vec<usize>,
    threshold: f64,
    mode: ThresholdMode,
}

impl DistortionVector {
    pub fn zeros(len: usize, mode: ThresholdMode) -> Self {
        Self {
            weights: vec![0.0; len],
            unimportant: Vec::new(),
            threshold: 0.0,
            mode,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Indices in the unimportant set, ascending.
    pub fn unimportant(&self) -> &[usize] {
        &self.unimportant
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn mode(&self) -> ThresholdMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Threshold `t = min(0, stat(s))`, unimportant set `{i : s_i < t}`, and
/// gains `|s_i| / delta_s` on that set where `delta_s` is the mean of `|s_i|`
/// over the set. An empty set gives the zero vector.
pub fn compute_distortion(s: &ImportanceVector, mode: ThresholdMode) -> DistortionVector {
    let scores = s.scores();
    let threshold = mode.statistic(scores).min(0.0);
    let unimportant: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] < threshold).collect();
    let mut weights = vec![0.0; scores.len()];
    if !unimportant.is_empty() {
        let delta = unimportant.iter().map(|&i| scores[i].abs()).sum::<f64>()
            / unimportant.len() as f64;
        for &i in &unimportant {
            weights[i] = scores[i].abs() / delta;
        }
    }
    DistortionVector {
        weights,
        unimportant,
        threshold,
        mode,
    }
}

/// A view of an anchor series.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedView {
    pub values: Array2<f64>,
    /// Label of the anchor the view was generated from.
    pub source_label: Option<usize>,
}

impl AugmentedView {
    pub fn into_series(self) -> Result<TimeSeries> {
        TimeSeries::new(self.values, self.source_label)
    }
}

fn combined_gains(crit: &CritMask, dist: &DistortionVector, f: usize) -> Result<Vec<f64>> {
    if crit.len() != f {
        return Err(Error::shape("critical mask", f, crit.len()));
    }
    if dist.len() != f {
        return Err(Error::shape("distortion vector", f, dist.len()));
    }
    Ok(crit
        .weights()
        .iter()
        .zip(dist.weights())
        .map(|(a, b)| a + b)
        .collect())
}

/// `inverse((w_crit + w_dist) * forward(x))`, broadcast over channels.
pub fn augment(x: &TimeSeries, crit: &CritMask, dist: &DistortionVector) -> Result<AugmentedView> {
    let spec = spectral::forward_rdft(x);
    let values = augment_spectrum(&spec, crit, dist)?;
    Ok(AugmentedView {
        values,
        source_label: x.label(),
    })
}

/// Same as [`augment`] when the anchor spectrum is already available.
pub fn augment_spectrum(
    spec: &Spectrum,
    crit: &CritMask,
    dist: &DistortionVector,
) -> Result<Array2<f64>> {
    let gains = combined_gains(crit, dist, spec.num_components())?;
    Ok(spectral::inverse_rdft(&spec.scaled(&gains)?).into_values())
}

/// Gradient of a loss with respect to the per-component gains applied to
/// `spec`, given `upstream = dL/d(view)`.
pub fn gain_gradient(upstream: &Array2<f64>, spec: &Spectrum) -> Result<Vec<f64>> {
    let expected = (spec.origin_length(), spec.channels());
    if upstream.dim() != expected {
        return Err(Error::shape(
            "upstream gradient",
            format!("{}x{}", expected.0, expected.1),
            format!("{}x{}", upstream.nrows(), upstream.ncols()),
        ));
    }
    let adjoint = spectral::inverse_rdft_adjoint(upstream)?;
    Ok(spec
        .values()
        .outer_iter()
        .zip(adjoint.outer_iter())
        .map(|(xrow, arow)| {
            xrow.iter()
                .zip(arow.iter())
                .map(|(x, a): (&Complex64, &Complex64)| (x * a.conj()).re)
                .sum()
        })
        .collect())
}

/// Gradient of a loss with respect to `s` through the critical mask only.
/// The distortion vector contributes nothing.
pub fn augment_backward(
    upstream: &Array2<f64>,
    x: &TimeSeries,
    crit: &CritMask,
    dist: &DistortionVector,
) -> Result<Vec<f64>> {
    let spec = spectral::forward_rdft(x);
    combined_gains(crit, dist, spec.num_components())?;
    let gains = gain_gradient(upstream, &spec)?;
    Ok(mask_gradient_to_scores(&gains, crit))
}

/// Chains `dL/dw_crit` to `dL/ds` with the mask's sigmoid derivative.
pub fn mask_gradient_to_scores(grad_w: &[f64], crit: &CritMask) -> Vec<f64> {
    grad_w
        .iter()
        .zip(crit.derivative())
        .map(|(g, d)| g * d)
        .collect()
}

/// Real time-domain kernel whose circular convolution with a series equals
/// multiplying its spectrum by `gains`.
pub fn mask_kernel(gains: &[f64], len: usize) -> Result<Vec<f64>> {
    let spec = Spectrum::new(
        Array2::from_shape_fn((gains.len(), 1), |(m, _)| Complex64::new(gains[m], 0.0)),
        len,
    )?;
    Ok(spectral::inverse_rdft(&spec).into_values().column(0).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn iv(v: &[f64]) -> ImportanceVector {
        ImportanceVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_score_half_noise_gives_half() {
        for tau in [0.01, 0.1, 1.0, 5.0] {
            let m = crit_mask_from_noise(&iv(&[0.0]), &[0.5], tau).unwrap();
            assert_eq!(m.weights()[0], 0.5);
        }
    }

    #[test]
    fn saturated_sample_value() {
        let m = crit_mask_from_noise(&iv(&[2.0]), &[0.5], 0.1).unwrap();
        // sigmoid(20) = 1 / (1 + e^-20)
        let expected = 1.0 / (1.0 + (-20.0f64).exp());
        assert!((m.weights()[0] - expected).abs() < 1e-15);
        assert!((1.0 - m.weights()[0] - 2.061e-9).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_crit_mask(&iv(&[0.0, 1.0]), 0.0, &mut rng).is_err());
        assert!(sample_crit_mask(&iv(&[0.0, 1.0]), -0.1, &mut rng).is_err());
    }

    #[test]
    fn mask_stays_inside_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = iv(&[-30.0, -2.0, 0.0, 3.0, 40.0]);
        for _ in 0..2000 {
            let m = sample_crit_mask(&s, 0.01, &mut rng).unwrap();
            assert!(m.weights().iter().all(|&w| w > 0.0 && w < 1.0));
        }
    }

    #[test]
    fn literal_and_simplified_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let s: f64 = rng.gen_range(-6.0..6.0);
            let e: f64 = rng.sample(Open01);
            let tau = rng.gen_range(0.1..2.0);
            let a = gumbel_sigmoid_literal(s, e, tau);
            let b = gumbel_sigmoid(s, e, tau);
            assert!((a - b).abs() < 1e-12, "s={s} e={e} tau={tau}");
        }
    }

    #[test]
    fn distortion_worked_example() {
        let d = compute_distortion(&iv(&[1.0, -2.0, -4.0, 3.0]), ThresholdMode::Mean);
        assert_eq!(d.threshold(), -0.5);
        assert_eq!(d.unimportant(), &[1, 2]);
        assert_eq!(d.weights(), &[0.0, 2.0 / 3.0, 4.0 / 3.0, 0.0]);
    }

    #[test]
    fn distortion_empty_sets() {
        let d = compute_distortion(&iv(&[0.5, 1.0, 2.0]), ThresholdMode::Mean);
        assert!(d.unimportant().is_empty());
        assert!(d.weights().iter().all(|&w| w == 0.0));
        let d = compute_distortion(&iv(&[-1.0; 4]), ThresholdMode::Mean);
        assert!(d.unimportant().is_empty());
        assert!(d.weights().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn threshold_statistics() {
        let v = [1.0, -2.0, -4.0, 3.0, 0.0];
        assert_eq!(ThresholdMode::Mean.statistic(&v), -0.4);
        assert_eq!(ThresholdMode::Median.statistic(&v), 0.0);
        assert_eq!(ThresholdMode::Median.statistic(&v[..4]), -0.5);
        let std = (v.iter().map(|x| (x + 0.4f64).powi(2)).sum::<f64>() / 5.0).sqrt();
        assert!((ThresholdMode::MeanPlusStd.statistic(&v) - (-0.4 + std)).abs() < 1e-15);
        // median threshold: t = min(0, -0.5) on the 4-element example
        let d = compute_distortion(&iv(&v[..4]), ThresholdMode::Median);
        assert_eq!(d.unimportant(), &[1, 2]);
        assert_eq!("mean+std".parse::<ThresholdMode>().unwrap(), ThresholdMode::MeanPlusStd);
        assert!("max".parse::<ThresholdMode>().is_err());
    }

    fn cosine(len: usize, bin: usize) -> TimeSeries {
        let v: Vec<f64> = (0..len)
            .map(|n| (2.0 * PI * (bin * n) as f64 / len as f64).cos())
            .collect();
        TimeSeries::univariate(&v, Some(1)).unwrap()
    }

    #[test]
    fn identity_and_annihilation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = TimeSeries::new(
            Array2::from_shape_fn((20, 2), |_| rng.gen_range(-1.0..1.0)),
            None,
        )
        .unwrap();
        let f = 11;
        let zero = DistortionVector::zeros(f, ThresholdMode::Mean);
        let view = augment(&x, &CritMask::fixed(vec![1.0; f]), &zero).unwrap();
        assert!((&view.values - x.values()).iter().all(|v| v.abs() < 1e-9));
        let view = augment(&x, &CritMask::fixed(vec![0.0; f]), &zero).unwrap();
        assert!(view.values.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn single_bin_masks() {
        let x = cosine(32, 3);
        let zero = DistortionVector::zeros(17, ThresholdMode::Mean);
        let mut keep = vec![0.0; 17];
        keep[3] = 1.0;
        let view = augment(&x, &CritMask::fixed(keep), &zero).unwrap();
        assert!((&view.values - x.values()).iter().all(|v| v.abs() < 1e-9));
        assert_eq!(view.source_label, Some(1));
        let mut other = vec![0.0; 17];
        other[2] = 1.0;
        let view = augment(&x, &CritMask::fixed(other), &zero).unwrap();
        assert!(view.values.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = cosine(16, 1);
        let zero = DistortionVector::zeros(9, ThresholdMode::Mean);
        assert!(augment(&x, &CritMask::fixed(vec![1.0; 8]), &zero).is_err());
        let bad = DistortionVector::zeros(5, ThresholdMode::Mean);
        assert!(augment(&x, &CritMask::fixed(vec![1.0; 9]), &bad).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let x = cosine(16, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = ImportanceVector::init(16, &mut rng);
        let crit = sample_crit_mask(&s, 0.2, &mut rng).unwrap();
        let dist = compute_distortion(&s, ThresholdMode::Mean);
        let g = augment_backward(&Array2::zeros((16, 1)), &x, &crit, &dist).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn top_k_orders_by_score() {
        assert_eq!(iv(&[0.1, 3.0, -1.0, 2.0]).top_k(2), vec![1, 3]);
    }
}
