#![allow(dead_code)]

use std::f64::consts::PI;

use frera_core::frera::{self, CritMask, DistortionVector, ImportanceVector, ThresholdMode};
use frera_core::nn::{ModelState, Profile};
use frera_core::pipeline::{objective_step, Checkpoint, StepViews, TrainConfig};
use frera_core::spectral::TimeSeries;
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_series<R: Rng>(len: usize, channels: usize, rng: &mut R) -> TimeSeries {
    let v = Array2::from_shape_fn((len, channels), |_| rng.sample::<f64, _>(StandardNormal));
    TimeSeries::new(v, None).unwrap()
}

/// `X(m) = sum_n x(n) e^{-2 pi i m n / L}`, all `L` bins.
pub fn direct_dft(x: &[f64]) -> Vec<Complex64> {
    let len = x.len();
    (0..len)
        .map(|m| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (n, &v) in x.iter().enumerate() {
                let angle = -2.0 * PI * ((m * n) % len) as f64 / len as f64;
                acc += v * Complex64::new(angle.cos(), angle.sin());
            }
            acc
        })
        .collect()
}

/// `x(n) = (1/L) sum_m X(m) e^{2 pi i m n / L}`, real part.
pub fn direct_idft(spec: &[Complex64]) -> Vec<f64> {
    let len = spec.len();
    (0..len)
        .map(|n| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (m, &c) in spec.iter().enumerate() {
                let angle = 2.0 * PI * ((m * n) % len) as f64 / len as f64;
                acc += c * Complex64::new(angle.cos(), angle.sin());
            }
            acc.re / len as f64
        })
        .collect()
}

/// `y(n) = sum_k a(k) x((n - k) mod L)`.
pub fn direct_circular(a: &[f64], x: &[f64]) -> Vec<f64> {
    let len = x.len();
    (0..len)
        .map(|n| (0..len).map(|k| a[k] * x[(n + len - k) % len]).sum())
        .collect()
}

/// A small objective instance with frozen Gumbel noise and frozen distortion.
pub struct ObjectiveInstance {
    pub model: ModelState,
    pub anchors: Vec<TimeSeries>,
    pub scores: ImportanceVector,
    pub noise: Vec<Vec<f64>>,
    pub distortion: DistortionVector,
    pub tau: f64,
    pub tau_w: f64,
    pub lambda: f64,
}

impl ObjectiveInstance {
    pub fn new(seed: u64, batch: usize, len: usize, channels: usize) -> Self {
        let cfg = TrainConfig {
            profile: Profile::Small,
            seed,
            ..TrainConfig::default()
        };
        let ckpt = Checkpoint::fresh(cfg, len, channels).unwrap();
        let mut r = rng(seed ^ 0x5eed);
        let anchors = (0..batch).map(|_| random_series(len, channels, &mut r)).collect();
        let f = frera_core::spectral::num_components(len);
        let scores =
            ImportanceVector::new((0..f).map(|_| r.sample::<f64, _>(StandardNormal)).collect()).unwrap();
        let noise = (0..batch)
            .map(|_| (0..f).map(|_| r.gen_range(0.05..0.95)).collect())
            .collect();
        let distortion = frera::compute_distortion(&scores, ThresholdMode::Mean);
        Self {
            model: ckpt.model,
            anchors,
            scores,
            noise,
            distortion,
            tau: 0.2,
            tau_w: 0.5,
            lambda: 1.0,
        }
    }

    pub fn masks(&self, scores: &ImportanceVector) -> Vec<CritMask> {
        self.noise
            .iter()
            .map(|n| frera::crit_mask_from_noise(scores, n, self.tau_w).unwrap())
            .collect()
    }

    pub fn views(&self, scores: &ImportanceVector, distortion: &DistortionVector) -> StepViews {
        StepViews::Masked {
            masks: self.masks(scores),
            distortion: distortion.clone(),
            trainable: true,
        }
    }

    /// Total loss at the given model and scores, distortion held fixed.
    pub fn loss(&self, model: &ModelState, scores: &ImportanceVector, distortion: &DistortionVector) -> f64 {
        let mut m = model.clone();
        let anchors: Vec<&TimeSeries> = self.anchors.iter().collect();
        objective_step(&mut m, &anchors, &self.views(scores, distortion), self.tau, self.lambda)
            .unwrap()
            .loss
            .total
    }

    /// Analytic gradients: (model with accumulated grads, dL/ds).
    pub fn analytic(&self) -> (ModelState, Vec<f64>) {
        let mut m = self.model.clone();
        m.zero_grad();
        let anchors: Vec<&TimeSeries> = self.anchors.iter().collect();
        let out = objective_step(
            &mut m,
            &anchors,
            &self.views(&self.scores, &self.distortion),
            self.tau,
            self.lambda,
        )
        .unwrap();
        (m, out.grad_scores)
    }
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Relative errors of the analytic gradient against central differences for
/// encoder parameters, projector parameters and scores, checking at most
/// `per_tensor` coordinates of each parameter tensor.
pub fn gradient_errors(inst: &ObjectiveInstance, per_tensor: usize, h: f64) -> (f64, f64, f64) {
    let (grads, grad_s) = inst.analytic();
    let mut pick = rng(99);
    let (mut enc_a, mut enc_n, mut proj_a, mut proj_n) = (vec![], vec![], vec![], vec![]);
    let names: Vec<(String, usize)> = grads.params().iter().map(|p| (p.name.clone(), p.len())).collect();
    for (t, (name, n)) in names.iter().enumerate() {
        let coords: Vec<usize> = if *n <= per_tensor {
            (0..*n).collect()
        } else {
            (0..per_tensor).map(|_| pick.gen_range(0..*n)).collect()
        };
        for k in coords {
            let analytic = grads.params()[t].grad[k];
            let shifted = |delta: f64| {
                let mut m = inst.model.clone();
                m.params_mut()[t].value[k] += delta;
                inst.loss(&m, &inst.scores, &inst.distortion)
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            if name.starts_with("encoder") {
                enc_a.push(analytic);
                enc_n.push(numeric);
            } else {
                proj_a.push(analytic);
                proj_n.push(numeric);
            }
        }
    }
    let numeric_s: Vec<f64> = (0..inst.scores.len())
        .map(|i| {
            let shifted = |delta: f64| {
                let mut s = inst.scores.clone();
                s.scores_mut()[i] += delta;
                inst.loss(&inst.model, &s, &inst.distortion)
            };
            (shifted(h) - shifted(-h)) / (2.0 * h)
        })
        .collect();
    (
        relative_error(&enc_a, &enc_n),
        relative_error(&proj_a, &proj_n),
        relative_error(&grad_s, &numeric_s),
    )
}
