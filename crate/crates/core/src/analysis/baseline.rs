//! Predefined augmentations used as comparison points.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frera::AugmentedView;
use crate::spectral::{self, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineKind {
    /// Additive Gaussian noise with std `sigma` times the channel std.
    Jitter { sigma: f64 },
    /// Per-channel multiplication by `N(1, sigma^2)`.
    Scaling { sigma: f64 },
    /// Shuffles `segments` contiguous equal-length segments.
    Permutation { segments: usize },
    /// Keeps components `m < cutoff * F`.
    LowPass { cutoff: f64 },
    /// Zeroes components `m < cutoff * F`.
    HighPass { cutoff: f64 },
    /// Rotates every non-real component by one shared random angle.
    PhaseShift,
}

impl BaselineKind {
    pub const NAMES: [&'static str; 6] = [
        "jitter",
        "scaling",
        "permutation",
        "low_pass",
        "high_pass",
        "phase_shift",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Jitter { .. } => "jitter",
            BaselineKind::Scaling { .. } => "scaling",
            BaselineKind::Permutation { .. } => "permutation",
            BaselineKind::LowPass { .. } => "low_pass",
            BaselineKind::HighPass { .. } => "high_pass",
            BaselineKind::PhaseShift => "phase_shift",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match *self {
            BaselineKind::Jitter { sigma } | BaselineKind::Scaling { sigma }
                if !(sigma >= 0.0 && sigma.is_finite()) =>
            {
                bad(format!("{} sigma must be >= 0, got {sigma}", self.name()))
            }
            BaselineKind::Permutation { segments: 0 } => bad("permutation needs >= 1 segment".into()),
            BaselineKind::LowPass { cutoff } | BaselineKind::HighPass { cutoff }
                if !(0.0..=1.0).contains(&cutoff) =>
            {
                bad(format!("{} cutoff must be in [0, 1], got {cutoff}", self.name()))
            }
            _ => Ok(()),
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    /// Parses a kind name with default parameters.
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "jitter" => Ok(BaselineKind::Jitter { sigma: 0.8 }),
            "scaling" => Ok(BaselineKind::Scaling { sigma: 0.1 }),
            "permutation" => Ok(BaselineKind::Permutation { segments: 4 }),
            "low_pass" | "lowpass" => Ok(BaselineKind::LowPass { cutoff: 0.25 }),
            "high_pass" | "highpass" => Ok(BaselineKind::HighPass { cutoff: 0.25 }),
            "phase_shift" => Ok(BaselineKind::PhaseShift),
            other => Err(Error::InvalidArgument(format!(
                "unknown augmentation '{other}' (expected one of {})",
                BaselineKind::NAMES.join(", ")
            ))),
        }
    }
}

fn channel_std(x: &TimeSeries, d: usize) -> f64 {
    let col = x.channel(d);
    let n = col.len() as f64;
    let mean = col.sum() / n;
    (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn filter(x: &TimeSeries, keep: impl Fn(usize) -> bool) -> Array2<f64> {
    let spec = spectral::forward_rdft(x);
    let gains: Vec<f64> = (0..spec.num_components())
        .map(|m| if keep(m) { 1.0 } else { 0.0 })
        .collect();
    let scaled = spec.scaled(&gains).expect("gain count matches spectrum");
    spectral::inverse_rdft(&scaled).into_values()
}

/// Applies a predefined augmentation to one sample.
pub fn baseline_augment<R: Rng + ?Sized>(
    x: &TimeSeries,
    kind: &BaselineKind,
    rng: &mut R,
) -> Result<AugmentedView> {
    kind.validate()?;
    let len = x.len();
    let values = match *kind {
        BaselineKind::Jitter { sigma } => {
            let mut v = x.values().clone();
            for d in 0..x.channels() {
                let std = sigma * channel_std(x, d);
                if std > 0.0 {
                    let normal = Normal::new(0.0, std).expect("valid normal");
                    v.column_mut(d).mapv_inplace(|a| a + normal.sample(rng));
                }
            }
            v
        }
        BaselineKind::Scaling { sigma } => {
            let mut v = x.values().clone();
            let normal = Normal::new(1.0, sigma).expect("valid normal");
            for d in 0..x.channels() {
                let factor = normal.sample(rng);
                v.column_mut(d).mapv_inplace(|a| a * factor);
            }
            v
        }
        BaselineKind::Permutation { segments } => {
            let k = segments.min(len);
            let bounds: Vec<usize> = (0..=k).map(|i| i * len / k).collect();
            let mut order: Vec<usize> = (0..k).collect();
            order.shuffle(rng);
            let mut v = Array2::<f64>::zeros(x.values().raw_dim());
            let mut t = 0;
            for seg in order {
                for src in bounds[seg]..bounds[seg + 1] {
                    v.row_mut(t).assign(&x.values().row(src));
                    t += 1;
                }
            }
            v
        }
        BaselineKind::LowPass { cutoff } => {
            let limit = cutoff * spectral::num_components(len) as f64;
            filter(x, |m| (m as f64) < limit)
        }
        BaselineKind::HighPass { cutoff } => {
            let limit = cutoff * spectral::num_components(len) as f64;
            filter(x, |m| (m as f64) >= limit)
        }
        BaselineKind::PhaseShift => {
            let angle = rng.gen_range(-PI..PI);
            let rot = Complex64::from_polar(1.0, angle);
            let mut spec = spectral::forward_rdft(x);
            let f = spec.num_components();
            let last_real = if len % 2 == 0 { f - 1 } else { f };
            let values = spec.values_mut();
            for m in 1..last_real {
                values.row_mut(m).mapv_inplace(|c| c * rot);
            }
            spectral::inverse_rdft(&spec).into_values()
        }
    };
    Ok(AugmentedView {
        values,
        source_label: x.label(),
    })
}
