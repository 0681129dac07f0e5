//! Histogram plug-in mutual information between features and labels.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::Dataset;
use crate::spectral::{self, TimeSeries};

pub const DEFAULT_BINS: usize = 16;
/// Largest feature dimension accepted by [`mi_histogram`].
pub const MAX_DIM: usize = 8;
/// Minimum samples per bin.
pub const SAMPLES_PER_BIN: usize = 50;

/// Per-index MI values in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MICurve {
    pub values: Vec<f64>,
    pub bins: usize,
    pub samples: usize,
    /// First-order (Miller-Madow) estimate of the plug-in bias, the largest
    /// over all indices.
    pub bias_bound: f64,
}

impl MICurve {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_index_value_csv(path, &self.values)
    }
}

/// Writes `index,value` rows with a header.
pub fn write_index_value_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = String::from("index,value\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Result of one estimate together with its bias term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MIEstimate {
    pub value: f64,
    pub bias: f64,
}

fn bin_index(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
}

fn entropy_of_counts<'a>(counts: impl Iterator<Item = &'a usize>, n: f64) -> f64 {
    counts
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `MI(x; y) = H(y) - H(y | x)` from an equal-width histogram over every
/// dimension of `x` jointly with the label.
pub fn mi_histogram(x: ArrayView2<'_, f64>, labels: &[usize], bins: usize) -> Result<f64> {
    mi_histogram_detailed(x, labels, bins).map(|e| e.value)
}

pub fn mi_histogram_detailed(
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    bins: usize,
) -> Result<MIEstimate> {
    let (n, d) = x.dim();
    if n != labels.len() {
        return Err(Error::shape("labels", n, labels.len()));
    }
    if d == 0 || d > MAX_DIM {
        return Err(Error::InvalidArgument(format!(
            "feature dimension must be in 1..={MAX_DIM}, got {d}"
        )));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be >= 1".into()));
    }
    let required = SAMPLES_PER_BIN * bins;
    if n < required {
        return Err(Error::InvalidArgument(format!(
            "{n} samples is too few for {bins} bins; need at least {required}"
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "MI features",
            index: i,
        });
    }
    let ranges: Vec<(f64, f64)> = x
        .columns()
        .into_iter()
        .map(|c| {
            c.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
        })
        .collect();
    let cells: Vec<Vec<usize>> = x
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(&ranges)
                .map(|(&v, &(lo, hi))| bin_index(v, lo, hi, bins))
                .collect()
        })
        .collect();

    let mut joint: BTreeMap<(&[usize], usize), usize> = BTreeMap::new();
    let mut marginal_x: BTreeMap<&[usize], usize> = BTreeMap::new();
    let mut marginal_y: BTreeMap<usize, usize> = BTreeMap::new();
    for (cell, &y) in cells.iter().zip(labels) {
        *joint.entry((cell.as_slice(), y)).or_default() += 1;
        *marginal_x.entry(cell.as_slice()).or_default() += 1;
        *marginal_y.entry(y).or_default() += 1;
    }
    let nf = n as f64;
    let h_y = entropy_of_counts(marginal_y.values(), nf);
    let h_x = entropy_of_counts(marginal_x.values(), nf);
    let h_xy = entropy_of_counts(joint.values(), nf);
    let mi = (h_x + h_y - h_xy).max(0.0);
    let bias = (joint.len() as f64 - marginal_x.len() as f64 - marginal_y.len() as f64 + 1.0)
        .max(0.0)
        / (2.0 * nf);
    Ok(MIEstimate { value: mi, bias })
}

fn labels_of(dataset: &Dataset) -> Result<Vec<usize>> {
    dataset.require_labels()
}

/// MI between the view values at each timestamp (all channels jointly) and
/// the label. `view_fn` is called once per sample, in order.
pub fn mi_timestamp_curve<F>(dataset: &Dataset, bins: usize, mut view_fn: F) -> Result<MICurve>
where
    F: FnMut(&TimeSeries) -> Result<Array2<f64>>,
{
    let labels = labels_of(dataset)?;
    let (n, len, d) = (dataset.len(), dataset.length(), dataset.channels());
    let mut views = Vec::with_capacity(n);
    for s in dataset.samples() {
        let v = view_fn(s)?;
        if v.dim() != (len, d) {
            return Err(Error::shape(
                "view",
                format!("{len}x{d}"),
                format!("{}x{}", v.nrows(), v.ncols()),
            ));
        }
        views.push(v);
    }
    let mut values = Vec::with_capacity(len);
    let mut bias_bound: f64 = 0.0;
    let mut feat = Array2::<f64>::zeros((n, d));
    for t in 0..len {
        for (i, v) in views.iter().enumerate() {
            feat.row_mut(i).assign(&v.row(t));
        }
        let e = mi_histogram_detailed(feat.view(), &labels, bins)?;
        values.push(e.value);
        bias_bound = bias_bound.max(e.bias);
    }
    Ok(MICurve {
        values,
        bins,
        samples: n,
        bias_bound,
    })
}

/// Which representation of a frequency component enters the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyFeature {
    /// `|X(m)|` per channel.
    #[default]
    Magnitude,
    /// `(Re X(m), Im X(m))` per channel.
    Complex,
}

/// MI between each stored frequency component and the label.
pub fn mi_frequency_profile(
    dataset: &Dataset,
    bins: usize,
    feature: FrequencyFeature,
) -> Result<MICurve> {
    let labels = labels_of(dataset)?;
    let n = dataset.len();
    let d = dataset.channels();
    let spectra: Vec<_> = dataset.samples().iter().map(spectral::forward_rdft).collect();
    let f = spectral::num_components(dataset.length());
    let width = match feature {
        FrequencyFeature::Magnitude => d,
        FrequencyFeature::Complex => 2 * d,
    };
    let mut values = Vec::with_capacity(f);
    let mut bias_bound: f64 = 0.0;
    let mut feat = Array2::<f64>::zeros((n, width));
    for m in 0..f {
        for (i, spec) in spectra.iter().enumerate() {
            for c in 0..d {
                let z = spec.values()[[m, c]];
                match feature {
                    FrequencyFeature::Magnitude => feat[[i, c]] = z.norm(),
                    FrequencyFeature::Complex => {
                        feat[[i, 2 * c]] = z.re;
                        feat[[i, 2 * c + 1]] = z.im;
                    }
                }
            }
        }
        let e = mi_histogram_detailed(feat.view(), &labels, bins)?;
        values.push(e.value);
        bias_bound = bias_bound.max(e.bias);
    }
    Ok(MICurve {
        values,
        bins,
        samples: n,
        bias_bound,
    })
}

/// Mean per-component energy over a dataset.
pub fn mean_energy_profile(dataset: &Dataset) -> Vec<f64> {
    let f = spectral::num_components(dataset.length());
    let mut acc = vec![0.0; f];
    for s in dataset.samples() {
        let e = spectral::energy_spectrum(&spectral::forward_rdft(s));
        for (a, v) in acc.iter_mut().zip(e.iter()) {
            *a += v;
        }
    }
    let n = dataset.len().max(1) as f64;
    acc.iter().map(|v| v / n).collect()
}

/// Share of total energy held by the `k` most energetic components.
pub fn top_k_energy_fraction(profile: &[f64], k: usize) -> f64 {
    let total: f64 = profile.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut sorted = profile.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.iter().take(k).sum::<f64>() / total
}
