//! Synthetic datasets whose label lives in known frequency bins.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Dataset, Split};
use crate::spectral::{self, TimeSeries};

/// Frequency bins that identify one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBins {
    pub bins: Vec<usize>,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub length: usize,
    pub channels: usize,
    pub samples_per_class: usize,
    pub classes: Vec<ClassBins>,
    /// Bins carrying class-independent components.
    pub nuisance_bins: Vec<usize>,
    /// Nuisance amplitudes are drawn from `U(lo, hi)`.
    pub nuisance_amplitude: [f64; 2],
    /// Std of the additive white noise.
    pub noise_std: f64,
    /// Class-bin phases are drawn from `U(-phase_spread, phase_spread)`;
    /// `pi` makes them uniform, `0` locks them.
    #[serde(default = "full_circle")]
    pub phase_spread: f64,
}

fn full_circle() -> f64 {
    PI
}

impl SyntheticSpec {
    /// Three classes on bins {2,3}, {5,7}, {9,11} with four nuisance bins,
    /// `L = 64`, one channel and 300 samples per class.
    pub fn three_class() -> Self {
        let class = |bins: &[usize]| ClassBins {
            bins: bins.to_vec(),
            amplitude: 1.0,
        };
        Self {
            length: 64,
            channels: 1,
            samples_per_class: 300,
            classes: vec![class(&[2, 3]), class(&[5, 7]), class(&[9, 11])],
            nuisance_bins: vec![4, 13, 17, 21],
            nuisance_amplitude: [0.0, 0.5],
            noise_std: 0.3,
            phase_spread: PI,
        }
    }

    pub fn num_components(&self) -> usize {
        spectral::num_components(self.length)
    }

    /// Union of all class bins, sorted.
    pub fn class_bins(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.classes.iter().flat_map(|c| c.bins.clone()).collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.length < 2 || self.channels == 0 || self.samples_per_class == 0 {
            return bad("synthetic spec needs length >= 2, channels >= 1, samples >= 1".into());
        }
        if self.classes.is_empty() {
            return bad("synthetic spec has no classes".into());
        }
        let f = self.num_components();
        for (k, c) in self.classes.iter().enumerate() {
            if c.bins.is_empty() {
                return bad(format!("class {k} has no bins"));
            }
            if let Some(&b) = c.bins.iter().find(|&&b| b >= f) {
                return bad(format!("class {k} bin {b} is outside [0, {f})"));
            }
            let mut sorted = c.bins.clone();
            sorted.sort_unstable();
            for (j, other) in self.classes.iter().enumerate().take(k) {
                let mut o = other.bins.clone();
                o.sort_unstable();
                if o == sorted {
                    return bad(format!("classes {j} and {k} share the same bin set"));
                }
            }
        }
        if let Some(&b) = self.nuisance_bins.iter().find(|&&b| b >= f) {
            return bad(format!("nuisance bin {b} is outside [0, {f})"));
        }
        let [lo, hi] = self.nuisance_amplitude;
        if !(self.noise_std >= 0.0) || !(lo >= 0.0 && hi >= lo) {
            return bad("noise std must be >= 0 and nuisance amplitudes 0 <= lo <= hi".into());
        }
        if !(0.0..=PI).contains(&self.phase_spread) {
            return bad(format!("phase spread must be in [0, pi], got {}", self.phase_spread));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SyntheticSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }
}

fn add_cosine(values: &mut Array2<f64>, c: usize, bin: usize, amplitude: f64, phase: f64) {
    let len = values.nrows();
    for n in 0..len {
        values[[n, c]] += amplitude * (2.0 * PI * (bin * n) as f64 / len as f64 + phase).cos();
    }
}

/// Draws a balanced labeled dataset. Each channel of a class-`k` sample is
/// `sum_{m in bins(k)} a cos(2 pi m n / L + phi)` with independent phases
/// drawn from `U(-phase_spread, phase_spread)`, plus nuisance cosines with
/// `U(lo, hi)` amplitudes and uniform phases, plus white noise.
/// Sample order is shuffled.
pub fn generate_synthetic<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<Dataset> {
    spec.validate()?;
    let noise = Normal::new(0.0, spec.noise_std).expect("valid normal");
    let mut samples = Vec::with_capacity(spec.classes.len() * spec.samples_per_class);
    for (k, class) in spec.classes.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let mut v = Array2::<f64>::zeros((spec.length, spec.channels));
            for c in 0..spec.channels {
                for &bin in &class.bins {
                    let phase = if spec.phase_spread > 0.0 {
                        rng.gen_range(-spec.phase_spread..spec.phase_spread)
                    } else {
                        0.0
                    };
                    add_cosine(&mut v, c, bin, class.amplitude, phase);
                }
                for &bin in &spec.nuisance_bins {
                    let [lo, hi] = spec.nuisance_amplitude;
                    let a = lo + rng.gen_range(0.0..=1.0) * (hi - lo);
                    add_cosine(&mut v, c, bin, a, rng.gen_range(-PI..PI));
                }
                if spec.noise_std > 0.0 {
                    v.column_mut(c).mapv_inplace(|x| x + noise.sample(rng));
                }
            }
            samples.push(TimeSeries::new(v, Some(k))?);
        }
    }
    samples.shuffle(rng);
    Dataset::new(samples, spec.classes.len(), Split::Train)
}

/// Importance vector that scores class bins high and everything else low.
pub fn oracle_scores(spec: &SyntheticSpec, high: f64, low: f64) -> Vec<f64> {
    let bins = spec.class_bins();
    (0..spec.num_components())
        .map(|m| if bins.contains(&m) { high } else { low })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn balanced_and_concentrated() {
        let spec = SyntheticSpec::three_class();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = generate_synthetic(&spec, &mut rng).unwrap();
        assert_eq!(d.class_counts(), vec![300, 300, 300]);
        for s in d.samples().iter().take(30) {
            let k = s.label().unwrap();
            let e = spectral::energy_spectrum(&spectral::forward_rdft(s));
            let allowed: Vec<usize> = spec.classes[k]
                .bins
                .iter()
                .chain(&spec.nuisance_bins)
                .copied()
                .collect();
            let inside: f64 = allowed.iter().map(|&m| e[m]).sum();
            assert!(inside / e.sum() > 0.8, "class {k}: {}", inside / e.sum());
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut spec = SyntheticSpec::three_class();
        spec.classes[0].bins.push(40);
        assert!(spec.validate().is_err());
        let mut spec = SyntheticSpec::three_class();
        spec.classes[1].bins = vec![3, 2];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn locked_phases_repeat_the_class_template() {
        let spec = SyntheticSpec {
            phase_spread: 0.0,
            nuisance_bins: vec![],
            noise_std: 0.0,
            ..SyntheticSpec::three_class()
        };
        let d = generate_synthetic(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let first = |k: usize| d.samples().iter().find(|s| s.label() == Some(k)).unwrap();
        for s in d.samples() {
            assert_eq!(s.values(), first(s.label().unwrap()).values());
        }
    }

    #[test]
    fn json_roundtrip() {
        let spec = SyntheticSpec::three_class();
        let back: SyntheticSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }
}
